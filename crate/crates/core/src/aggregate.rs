//! Group sums by pairwise additive masking.
//!
//! Each participant encodes its value as a fixed-point integer mod 2^64 and
//! adds, for every other participant, a mask derived from the seed the two
//! share: `+s_ij` if its index is the smaller one, `-s_ij` otherwise. The
//! masks cancel in the sum, so the aggregator learns only the total. A
//! missing share leaves its masks uncancelled; there is no recovery.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Fractional bits of the fixed-point encoding.
pub const SCALE_BITS: u32 = 20;
pub const SCALE: f64 = (1u64 << SCALE_BITS) as f64;
/// Largest encodable magnitude.
pub const MAX_ABS_VALUE: f64 = (1u64 << 40) as f64;
/// Smallest group an aggregate may be computed over.
pub const K_MIN: usize = 3;

const MASK_DOMAIN: &[u8] = b"npds-pairmask-v1";
const SESSION_DOMAIN: &[u8] = b"npds-session-v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("value {value} outside the encodable range")]
    RangeExceeded { value: f64 },
    #[error("group of {n} is below the minimum of {K_MIN}")]
    MinimumGroupSize { n: usize },
    #[error("no share from participant {0}")]
    MissingShare(String),
    #[error("second share from participant {0}")]
    DuplicateShare(String),
    #[error("{0} is not a participant of this session")]
    UnknownParticipant(String),
    #[error("participant list hash does not match")]
    SessionMismatch,
    #[error("invalid session: {0}")]
    InvalidSession(String),
}

/// `round(x·2^20)` embedded mod 2^64 as two's complement.
pub fn encode_fixed(x: f64) -> Result<u64, AggregateError> {
    if !(x.abs() <= MAX_ABS_VALUE) {
        return Err(AggregateError::RangeExceeded { value: x });
    }
    Ok(((x * SCALE).round() as i64) as u64)
}

/// Inverse of [`encode_fixed`] for a sum of `n` encoded values. A result
/// outside what `n` in-range inputs could produce is reported as
/// [`AggregateError::RangeExceeded`], which is how an incomplete share set
/// usually shows up.
pub fn decode_fixed(v: u64, n: usize) -> Result<f64, AggregateError> {
    let signed = v as i64;
    let value = signed as f64 / SCALE;
    if value.abs() > n.max(1) as f64 * MAX_ABS_VALUE {
        return Err(AggregateError::RangeExceeded { value });
    }
    Ok(value)
}

/// `s_ij`: keyed hash of the canonical pair, identical for both parties.
pub fn derive_pairwise_mask(shared_seed: &[u8; 32], session_id: &str, i: u32, j: u32) -> u64 {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let mut h = Sha256::new();
    h.update(MASK_DOMAIN);
    h.update(shared_seed);
    h.update((session_id.len() as u64).to_le_bytes());
    h.update(session_id.as_bytes());
    h.update(lo.to_le_bytes());
    h.update(hi.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Commitment to a session and its ordered participant list; every party
/// checks it before releasing a share.
pub fn participants_hash(session_id: &str, participants: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(SESSION_DOMAIN);
    for part in std::iter::once(session_id).chain(participants.iter().map(String::as_str)) {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Created,
    Collecting,
    Done,
    Failed,
}

/// What every participant agrees on before contributing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub question_id: String,
    /// Numeric payload field to sum, e.g. `ratio`.
    pub field: String,
    /// Participant ids in index order.
    pub participants: Vec<String>,
}

impl SessionSpec {
    pub fn validate(&self) -> Result<(), AggregateError> {
        if self.session_id.is_empty() {
            return Err(AggregateError::InvalidSession("empty session id".into()));
        }
        if self.participants.len() < K_MIN {
            return Err(AggregateError::MinimumGroupSize { n: self.participants.len() });
        }
        let distinct: BTreeSet<&String> = self.participants.iter().collect();
        if distinct.len() != self.participants.len() {
            return Err(AggregateError::InvalidSession("participant listed twice".into()));
        }
        if self.participants.len() > u32::MAX as usize {
            return Err(AggregateError::InvalidSession("too many participants".into()));
        }
        Ok(())
    }

    pub fn participants_hash(&self) -> String {
        participants_hash(&self.session_id, &self.participants)
    }

    pub fn index_of(&self, participant: &str) -> Option<usize> {
        self.participants.iter().position(|p| p == participant)
    }
}

/// A participant's masked contribution. `value` travels as a decimal string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedShare {
    pub participant_id: String,
    #[serde(with = "decimal_u64")]
    pub value: u64,
}

mod decimal_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Builds participant `me`'s share of `value`. `seed_for(j)` returns the
/// seed shared with participant `j`; every other participant needs one.
pub fn mask_share(
    spec: &SessionSpec,
    me: usize,
    value: f64,
    mut seed_for: impl FnMut(usize) -> Option<[u8; 32]>,
) -> Result<MaskedShare, AggregateError> {
    spec.validate()?;
    let participant_id = spec
        .participants
        .get(me)
        .ok_or_else(|| AggregateError::UnknownParticipant(format!("index {me}")))?
        .clone();
    let mut acc = encode_fixed(value)?;
    for j in (0..spec.participants.len()).filter(|&j| j != me) {
        let seed = seed_for(j).ok_or_else(|| {
            AggregateError::InvalidSession(format!("no pairwise seed with {}", spec.participants[j]))
        })?;
        let mask = derive_pairwise_mask(&seed, &spec.session_id, me as u32, j as u32);
        acc = if me < j { acc.wrapping_add(mask) } else { acc.wrapping_sub(mask) };
    }
    Ok(MaskedShare { participant_id, value: acc })
}

/// Wrapping sum of share values.
pub fn sum_shares<'a>(shares: impl IntoIterator<Item = &'a MaskedShare>) -> u64 {
    shares.into_iter().fold(0u64, |acc, s| acc.wrapping_add(s.value))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub sum: f64,
    pub mean: f64,
    pub n: usize,
}

/// Unmasks the total from exactly one share per participant.
pub fn aggregate(spec: &SessionSpec, shares: &[MaskedShare]) -> Result<AggregateResult, AggregateError> {
    spec.validate()?;
    let mut by_participant: BTreeMap<&str, &MaskedShare> = BTreeMap::new();
    for share in shares {
        if spec.index_of(&share.participant_id).is_none() {
            return Err(AggregateError::UnknownParticipant(share.participant_id.clone()));
        }
        if by_participant.insert(&share.participant_id, share).is_some() {
            return Err(AggregateError::DuplicateShare(share.participant_id.clone()));
        }
    }
    if let Some(missing) = spec.participants.iter().find(|p| !by_participant.contains_key(p.as_str())) {
        return Err(AggregateError::MissingShare(missing.clone()));
    }
    let n = spec.participants.len();
    let sum = decode_fixed(sum_shares(by_participant.values().copied()), n)?;
    Ok(AggregateResult { sum, mean: sum / n as f64, n })
}

/// Aggregator-side bookkeeping for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationSession {
    spec: SessionSpec,
    state: SessionState,
    shares: BTreeMap<String, MaskedShare>,
    result: Option<AggregateResult>,
}

impl AggregationSession {
    pub fn new(spec: SessionSpec) -> Result<Self, AggregateError> {
        spec.validate()?;
        Ok(AggregationSession { spec, state: SessionState::Created, shares: BTreeMap::new(), result: None })
    }

    pub fn spec(&self) -> &SessionSpec {
        &self.spec
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn result(&self) -> Option<AggregateResult> {
        self.result
    }

    /// Marks the session as open for shares once every participant has
    /// acknowledged the participant hash.
    pub fn start_collecting(&mut self) {
        if self.state == SessionState::Created {
            self.state = SessionState::Collecting;
        }
    }

    pub fn add_share(&mut self, share: MaskedShare) -> Result<(), AggregateError> {
        if self.state != SessionState::Collecting {
            return Err(AggregateError::InvalidSession(format!("session is {:?}", self.state)));
        }
        if self.spec.index_of(&share.participant_id).is_none() {
            return Err(AggregateError::UnknownParticipant(share.participant_id));
        }
        if self.shares.contains_key(&share.participant_id) {
            return Err(AggregateError::DuplicateShare(share.participant_id));
        }
        self.shares.insert(share.participant_id.clone(), share);
        Ok(())
    }

    /// Closes the session. Any missing share fails it permanently.
    pub fn finish(&mut self) -> Result<AggregateResult, AggregateError> {
        let shares: Vec<MaskedShare> = self.shares.values().cloned().collect();
        match aggregate(&self.spec, &shares) {
            Ok(result) => {
                self.state = SessionState::Done;
                self.result = Some(result);
                Ok(result)
            }
            Err(e) => {
                self.state = SessionState::Failed;
                Err(e)
            }
        }
    }

    pub fn fail(&mut self) {
        self.state = SessionState::Failed;
    }
}
