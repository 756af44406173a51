//! Places where the owner tends to get drowsy, from located drowsiness
//! answers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Answer, QuestionError};

pub const DROWSY_PLACES_DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceCluster {
    pub lat: f64,
    pub lon: f64,
    pub mean_ratio: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrowsyPlaces {
    pub clusters: Vec<PlaceCluster>,
}

/// Grid cell of a coordinate rounded to 3 decimal places (about 100 m).
fn cell(deg: f64) -> i64 {
    (deg * 1000.0).round() as i64
}

/// Clusters located drowsiness answers by rounded position and returns the
/// `k` clusters with the highest mean ratio. Answers without a location or a
/// numeric `ratio` are skipped.
pub fn compute_drowsy_places(answers: &[Answer], k: usize) -> Result<DrowsyPlaces, QuestionError> {
    let mut cells: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for answer in answers {
        let (Some(loc), Some(ratio)) = (answer.location, answer.payload.get("ratio").and_then(|r| r.as_f64())) else {
            continue;
        };
        let entry = cells.entry((cell(loc.lat), cell(loc.lon))).or_insert((0.0, 0));
        entry.0 += ratio;
        entry.1 += 1;
    }
    if cells.is_empty() {
        return Err(QuestionError::NoLocatedAnswers);
    }
    let mut clusters: Vec<PlaceCluster> = cells
        .into_iter()
        .map(|((lat, lon), (sum, n))| PlaceCluster {
            lat: lat as f64 / 1000.0,
            lon: lon as f64 / 1000.0,
            mean_ratio: sum / n as f64,
            n,
        })
        .collect();
    // stable sort keeps grid order among equal ratios
    clusters.sort_by(|a, b| b.mean_ratio.total_cmp(&a.mean_ratio));
    clusters.truncate(k);
    Ok(DrowsyPlaces { clusters })
}
