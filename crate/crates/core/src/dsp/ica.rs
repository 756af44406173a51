//! Symmetric FastICA with the `tanh` contrast.
//!
//! Data are centred and whitened through the eigendecomposition of their
//! covariance. The rotation `W` is then updated in parallel with
//! `W+ = E[g(WZ)Zᵀ] − diag(E[g'(WZ)])·W` followed by symmetric
//! decorrelation `W ← (WWᵀ)^{-1/2}W`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DspError;

pub const ICA_DEFAULT_MAX_ITERATIONS: usize = 500;
pub const ICA_DEFAULT_TOLERANCE: f64 = 1e-5;
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult {
    /// Maps centred observations to sources: `sources = unmixing · (X − mean)`.
    pub unmixing_matrix: DMatrix<f64>,
    /// k×n estimated sources, unit variance and mutually uncorrelated.
    pub sources: DMatrix<f64>,
    pub whitening_matrix: DMatrix<f64>,
    /// Per-channel mean removed before whitening.
    pub mean: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and each
/// eigenvector's largest-magnitude entry made positive.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let k = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()),
    ));
    &vectors * inv_sqrt * vectors.transpose() * w
}

/// Runs FastICA on a k×n matrix of observations (rows are channels).
///
/// Returns [`DspError::NotConverged`] carrying the partial result when the
/// iteration budget runs out.
pub fn fastica(
    signals: &DMatrix<f64>,
    max_iterations: usize,
    tolerance: f64,
    seed: u64,
) -> Result<IcaResult, DspError> {
    let (k, n) = signals.shape();
    if k < 2 {
        return Err(DspError::InvalidParameter(format!("ICA needs at least 2 channels, got {k}")));
    }
    if n < 10 * k {
        return Err(DspError::SignalTooShort { needed: 10 * k, got: n });
    }
    if !(tolerance > 0.0 && tolerance < 1.0) || max_iterations == 0 {
        return Err(DspError::InvalidParameter("tolerance must be in (0, 1) and iterations > 0".into()));
    }

    let mean: Vec<f64> = signals.row_iter().map(|r| r.sum() / n as f64).collect();
    let mut centered = signals.clone();
    for (i, m) in mean.iter().enumerate() {
        centered.row_mut(i).add_scalar_mut(-m);
    }
    let cov = &centered * centered.transpose() / n as f64;
    let (values, vectors) = sorted_eigen(cov);
    let largest = values[0];
    let smallest = values[k - 1];
    if !(largest > 0.0) || smallest < RANK_TOLERANCE * largest {
        return Err(DspError::RankDeficient { ratio: if largest > 0.0 { smallest / largest } else { 0.0 } });
    }
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, values.iter().map(|v| 1.0 / v.sqrt())));
    let whitening = scale * vectors.transpose();
    let z = &whitening * &centered;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let y = &w * &z;
        let g = y.map(f64::tanh);
        let g_prime_mean: Vec<f64> = g.row_iter().map(|r| r.iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64).collect();
        let mut w_new = &g * z.transpose() / n as f64;
        for i in 0..k {
            let row = w.row(i) * g_prime_mean[i];
            let updated = w_new.row(i) - row;
            w_new.set_row(i, &updated);
        }
        let w_new = symmetric_decorrelation(&w_new);
        let agreement = (&w_new * w.transpose()).diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        w = w_new;
        if agreement > 1.0 - tolerance {
            converged = true;
            break;
        }
    }

    let result = IcaResult {
        unmixing_matrix: &w * &whitening,
        sources: &w * &z,
        whitening_matrix: whitening,
        mean,
        iterations_used: iterations,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(DspError::NotConverged(Box::new(result)))
    }
}
