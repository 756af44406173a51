//! Standardized nearest-neighbour identification over fingerprints.

use serde::{Deserialize, Serialize};

use super::features::{Fingerprint, FingerprintKind};
use super::DspError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityModel {
    kind: FingerprintKind,
    mean: Vec<f64>,
    std: Vec<f64>,
    /// (subject_id, standardized vector), sorted by subject id.
    entries: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub subject_id: String,
    pub distance: f64,
}

impl IdentityModel {
    pub fn kind(&self) -> FingerprintKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    fn standardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Builds a model from enrollment fingerprints. Each dimension is
/// standardized by the enrollment mean and population standard deviation;
/// constant dimensions keep unit scale.
pub fn enroll(subjects: &[(String, Fingerprint)]) -> Result<IdentityModel, DspError> {
    let distinct = {
        let mut ids: Vec<&str> = subjects.iter().map(|(id, _)| id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if distinct < 2 {
        return Err(DspError::EmptyModel { enrolled: distinct });
    }
    let kind = subjects[0].1.kind;
    let dim = subjects[0].1.vector.len();
    if dim == 0 || subjects.iter().any(|(_, fp)| fp.kind != kind || fp.vector.len() != dim) {
        return Err(DspError::KindMismatch);
    }
    let n = subjects.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| subjects.iter().map(|(_, fp)| fp.vector[d]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| {
            let var = subjects.iter().map(|(_, fp)| (fp.vector[d] - mean[d]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut model = IdentityModel { kind, mean, std, entries: Vec::with_capacity(subjects.len()) };
    model.entries = subjects
        .iter()
        .map(|(id, fp)| (id.clone(), model.standardize(&fp.vector)))
        .collect();
    model.entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(model)
}

/// Nearest enrolled subject by Euclidean distance in standardized space.
/// Ties go to the lexicographically smallest subject id.
pub fn identify(model: &IdentityModel, probe: &Fingerprint) -> Result<Identification, DspError> {
    if probe.kind != model.kind || probe.vector.len() != model.dimension() {
        return Err(DspError::KindMismatch);
    }
    let z = model.standardize(&probe.vector);
    let mut best: Option<(&str, f64)> = None;
    for (id, v) in &model.entries {
        let d = z.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        // entries are sorted, so strict < keeps the smallest id on ties
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    let (subject_id, distance) = best.ok_or(DspError::EmptyModel { enrolled: 0 })?;
    Ok(Identification { subject_id: subject_id.to_string(), distance })
}
