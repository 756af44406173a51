//! Yule–Walker AR estimation via the Levinson–Durbin recursion.

use serde::{Deserialize, Serialize};

/// `x[n] = Σ coefficients[i]·x[n-1-i] + e[n]`, `Var(e) = noise_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub coefficients: Vec<f64>,
    pub noise_variance: f64,
    /// Reflection (partial autocorrelation) coefficients, one per order.
    pub reflection: Vec<f64>,
}

/// Biased autocovariance `r[k] = (1/n) Σ (x[t]-m)(x[t+k]-m)`, k = 0..=max_lag.
pub(crate) fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|k| centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Fits AR(`order`) by solving the Yule–Walker equations on the biased sample
/// autocovariance. Returns `None` when the Toeplitz system is not positive
/// definite (a leading prediction error is non-positive), which happens for
/// constant input.
pub fn yule_walker(x: &[f64], order: usize) -> Option<ArModel> {
    if order == 0 || x.len() <= order {
        return None;
    }
    let r = autocovariance(x, order);
    let r0 = r[0];
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    if !(r0 > 1e-20 * (1.0 + mean * mean)) {
        return None;
    }
    let mut a: Vec<f64> = Vec::with_capacity(order);
    let mut reflection = Vec::with_capacity(order);
    let mut err = r0;
    for m in 1..=order {
        let acc = r[m] - a.iter().enumerate().map(|(i, ai)| ai * r[m - 1 - i]).sum::<f64>();
        let k = acc / err;
        let prev = a.clone();
        for i in 0..m - 1 {
            a[i] = prev[i] - k * prev[m - 2 - i];
        }
        a.push(k);
        reflection.push(k);
        err *= 1.0 - k * k;
        if !(err > r0 * 1e-14) {
            return None;
        }
    }
    Some(ArModel { coefficients: a, noise_variance: err, reflection })
}

/// Step-up recursion: AR coefficients from reflection coefficients. Any
/// `|k| < 1` yields a stable model, the inverse of what [`yule_walker`]
/// reports in `reflection`.
pub fn ar_from_reflection(reflection: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(reflection.len());
    for (m, &k) in reflection.iter().enumerate() {
        let prev = a.clone();
        for i in 0..m {
            a[i] = prev[i] - k * prev[m - 1 - i];
        }
        a.push(k);
    }
    a
}
