//! Evaluation metrics over joint positions and caller-supplied feature or
//! embedding vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Eigenvalues down to this are treated as rounding noise and clamped.
pub const EIGEN_CLAMP: f64 = -1e-8;
pub const DEFAULT_POOL_SIZE: usize = 32;

/// Mean per-joint position error in millimetres; inputs are in metres,
/// `frames x joints`.
pub fn mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(invalid(format!("mpjpe needs equal non-empty frame counts, got {} and {}", pred.len(), gt.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(invalid(format!("frame {t}: {} vs {} joints", p.len(), g.len())));
        }
        for (a, b) in p.iter().zip(g) {
            total += ((a - b) * 1000.0).norm();
        }
        count += p.len();
    }
    Ok(total / count as f64)
}

/// Sample mean and unbiased covariance of the rows.
pub fn gaussian_fit(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(invalid("a Gaussian fit needs at least two samples"));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(invalid("feature rows must share a positive dimension"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("features must be finite"));
    }
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_row_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_row_slice(r) - &mean;
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    cov.fill_upper_triangle_with_lower_triangle();
    Ok((mean, cov))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues, checked against the clamp tolerance and clamped at zero.
fn clamped_eigen(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut values = eig.eigenvalues.clone();
    for v in values.iter_mut() {
        if !v.is_finite() || *v < EIGEN_CLAMP {
            return Err(Error::Numerical(format!("{what} has eigenvalue {v:e} below the clamp tolerance")));
        }
        *v = v.max(0.0);
    }
    Ok((eig.eigenvectors, values))
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (vecs, vals) = clamped_eigen(m, what)?;
    let diag = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    Ok(&vecs * diag * vecs.transpose())
}

/// Fréchet distance between Gaussians `(mu_a, cov_a)` and `(mu_b, cov_b)`.
pub fn frechet_from_stats(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(invalid("Gaussian statistics have mismatched dimensions"));
    }
    let root_a = sqrt_psd(cov_a, "covariance A")?;
    let inner = &root_a * cov_b * &root_a;
    let (_, vals) = clamped_eigen(&inner, "product covariance")?;
    let trace_sqrt: f64 = vals.iter().map(|v| v.sqrt()).sum();
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_distance(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = gaussian_fit(set_a)?;
    let (mu_b, cov_b) = gaussian_fit(set_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(invalid("feature sets have different dimensions"));
    }
    frechet_from_stats(&mu_a, &cov_a, &mu_b, &cov_b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingPair {
    pub motion: Vec<f64>,
    pub text: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_pairs(batch: &[EmbeddingPair]) -> Result<usize> {
    let d = batch.first().ok_or_else(|| invalid("embedding batch is empty"))?.motion.len();
    for (i, p) in batch.iter().enumerate() {
        if p.motion.len() != d || p.text.len() != d {
            return Err(invalid(format!("pair {i} has mismatched embedding dimensions")));
        }
    }
    Ok(d)
}

/// Retrieval precision: for every item, its text is placed at a random
/// position among `pool_size - 1` random other texts; a hit is a top-`k`
/// rank by distance to the motion embedding. Ties keep pool order.
pub fn r_precision(batch: &[EmbeddingPair], k: usize, pool_size: usize, seed: u64) -> Result<f64> {
    check_pairs(batch)?;
    if pool_size < 1 || batch.len() < pool_size {
        return Err(invalid(format!("batch of {} is smaller than the pool of {pool_size}", batch.len())));
    }
    if k == 0 || k > pool_size {
        return Err(invalid(format!("k must be in 1..={pool_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for (i, pair) in batch.iter().enumerate() {
        let others = sample(&mut rng, batch.len() - 1, pool_size - 1);
        let mut pool: Vec<usize> = others.into_iter().map(|j| if j >= i { j + 1 } else { j }).collect();
        let slot = rng.random_range(0..pool_size);
        pool.insert(slot, i);
        let own = distance(&pair.motion, &pair.text);
        let ahead = pool[..slot]
            .iter()
            .filter(|&&j| distance(&pair.motion, &batch[j].text) <= own)
            .count()
            + pool[slot + 1..]
                .iter()
                .filter(|&&j| distance(&pair.motion, &batch[j].text) < own)
                .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.len() as f64)
}

/// Mean distance between paired motion and text embeddings.
pub fn mm_dist(batch: &[EmbeddingPair]) -> Result<f64> {
    check_pairs(batch)?;
    Ok(batch.iter().map(|p| distance(&p.motion, &p.text)).sum::<f64>() / batch.len() as f64)
}
