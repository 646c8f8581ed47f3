//! Fixed-length motion descriptors, the Fréchet distance between sets of
//! them, and seeded pairwise diversity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_arg, Error, Result};
use crate::motion::MotionSequence;

/// Covariance regularizer.
pub const FRECHET_EPS: f64 = 1e-6;

/// Temporal mean of every channel followed by its temporal standard
/// deviation.
pub fn pose_features(m: &MotionSequence) -> Vec<f64> {
    let width = m.joints() * m.channels();
    let n = m.frames() as f64;
    let mut mean = vec![0.0; width];
    for frame in m.data().chunks_exact(width) {
        for (acc, &v) in mean.iter_mut().zip(frame) {
            *acc += v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; width];
    for frame in m.data().chunks_exact(width) {
        for ((acc, &v), mu) in var.iter_mut().zip(frame).zip(&mean) {
            *acc += (v as f64 - mu).powi(2);
        }
    }
    mean.extend(var.into_iter().map(|v| (v / n).sqrt()));
    mean
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatureSet {
    dim: usize,
    items: Vec<Vec<f64>>,
}

impl PoseFeatureSet {
    pub fn new(items: Vec<Vec<f64>>) -> Result<Self> {
        let dim = items.first().map_or(0, Vec::len);
        if items.iter().any(|v| v.len() != dim) {
            return Err(invalid_arg!("feature vectors have differing lengths"));
        }
        if items.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid_arg!("feature vectors contain non-finite values"));
        }
        Ok(Self { dim, items })
    }

    pub fn from_motions<'a>(motions: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self> {
        Self::new(motions.into_iter().map(pose_features).collect())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    /// Sample mean and unbiased covariance.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.items.len();
        if n < 2 {
            return Err(Error::DistanceUndefined(format!("need at least 2 items, got {n}")));
        }
        let x = DMatrix::from_fn(n, self.dim, |i, j| self.items[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, self.dim, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        Ok((mean, cov))
    }
}

/// Square root of a symmetric positive semi-definite matrix, clamping
/// negative eigenvalues to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})` with both
/// covariances regularized by `FRECHET_EPS * I`.
pub fn frechet_pose_distance(a: &PoseFeatureSet, b: &PoseFeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DistanceUndefined(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (mu_a, mut s_a) = a.moments()?;
    let (mu_b, mut s_b) = b.moments()?;
    for i in 0..a.dim() {
        s_a[(i, i)] += FRECHET_EPS;
        s_b[(i, i)] += FRECHET_EPS;
    }
    // tr((S_a S_b)^{1/2}) = tr((R S_b R)^{1/2}) with R = S_a^{1/2}
    let r = sqrt_psd(&s_a);
    let inner = &r * &s_b * &r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = inner.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = (mu_a - mu_b).norm_squared() + s_a.trace() + s_b.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::DistanceUndefined("non-finite distance".into()));
    }
    Ok(d.max(0.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance over `n_pairs` index pairs drawn uniformly with
/// replacement.
pub fn diversity(set: &PoseFeatureSet, n_pairs: usize, seed: u64) -> Result<f64> {
    let n = set.len();
    if n < 2 {
        return Err(invalid_arg!("diversity needs at least 2 items, got {n}"));
    }
    if n_pairs == 0 {
        return Err(invalid_arg!("diversity needs at least one pair"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..n_pairs)
        .map(|_| {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            euclidean(&set.items[i], &set.items[j])
        })
        .sum();
    Ok(total / n_pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(n: usize, dim: usize, mean: f64, seed: u64) -> PoseFeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        PoseFeatureSet::new((0..n).map(|_| (0..dim).map(|_| d.sample(&mut rng)).collect()).collect()).unwrap()
    }

    #[test]
    fn identical_sets_are_at_zero() {
        let a = gaussian_set(50, 6, 0.0, 1);
        assert!(frechet_pose_distance(&a, &a).unwrap() <= 1e-8);
    }

    #[test]
    fn unit_shift_in_one_dimension() {
        let a = gaussian_set(20_000, 1, 0.0, 2);
        let b = gaussian_set(20_000, 1, 1.0, 3);
        let d = frechet_pose_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn shift_adds_squared_norm() {
        let a = gaussian_set(40, 4, 0.0, 4);
        let b = gaussian_set(40, 4, 0.0, 5);
        let delta = [0.3, -1.0, 0.5, 2.0];
        let shifted = PoseFeatureSet::new(
            b.items()
                .iter()
                .map(|v| v.iter().zip(&delta).map(|(x, d)| x + d).collect())
                .collect(),
        )
        .unwrap();
        // same covariance: compare against a copy of b shifted
        let base = frechet_pose_distance(&b, &b).unwrap();
        let moved = frechet_pose_distance(&b, &shifted).unwrap();
        let norm2: f64 = delta.iter().map(|d| d * d).sum();
        assert!((moved - base - norm2).abs() < 1e-8, "{moved} {norm2}");
        let ab = frechet_pose_distance(&a, &b).unwrap();
        let ba = frechet_pose_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn degenerate_sets() {
        let one = PoseFeatureSet::new(vec![vec![1.0, 2.0]]).unwrap();
        assert!(matches!(frechet_pose_distance(&one, &one), Err(Error::DistanceUndefined(_))));
        assert!(diversity(&one, 10, 0).is_err());
    }

    #[test]
    fn diversity_properties() {
        let same = PoseFeatureSet::new(vec![vec![1.0, 2.0]; 5]).unwrap();
        assert_eq!(diversity(&same, 300, 0).unwrap(), 0.0);
        let a = gaussian_set(30, 3, 0.0, 6);
        assert_eq!(diversity(&a, 300, 9).unwrap(), diversity(&a, 300, 9).unwrap());
        let mut doubled = a.items().to_vec();
        doubled.extend_from_slice(a.items());
        let doubled = PoseFeatureSet::new(doubled).unwrap();
        let mean = |s: &PoseFeatureSet| (0..200).map(|seed| diversity(s, 300, seed).unwrap()).sum::<f64>() / 200.0;
        let (m1, m2) = (mean(&a), mean(&doubled));
        assert!((m1 - m2).abs() / m1 < 0.02, "{m1} vs {m2}");
    }

    #[test]
    fn features_are_mean_then_std() {
        let m = MotionSequence::new(2, 1, 2, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(pose_features(&m), vec![1.0, 1.0, 1.0, 0.0]);
    }
}
