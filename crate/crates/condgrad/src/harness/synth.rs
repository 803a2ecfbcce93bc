//! Deterministic synthetic datasets with known separable structure.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::harness::Dataset;
use crate::linalg::Matrix;
use crate::network::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    GaussianBlobs,
    TwoSpirals,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian_blobs" => Ok(SyntheticKind::GaussianBlobs),
            "two_spirals" => Ok(SyntheticKind::TwoSpirals),
            other => Err(format!("unknown synthetic dataset '{other}'")),
        }
    }
}

/// Labeled 2-d dataset with an 80/20 train/test split by seeded shuffle and
/// z-score normalization from the train statistics.
///
/// `gaussian_blobs`: three unit-variance Gaussian clusters whose centers sit
/// 10 standard deviations apart — linearly separable by construction.
/// `two_spirals`: two interleaved spiral arms, not linearly separable.
pub fn synthetic_dataset(kind: SyntheticKind, n: usize, seed: u64) -> Dataset {
    assert!(n >= 10, "need at least 10 samples");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    match kind {
        SyntheticKind::GaussianBlobs => {
            // equilateral triangle with side 10, unit class covariance
            let r = 10.0 / 3.0f64.sqrt();
            let centers: Vec<[f64; 2]> = (0..3)
                .map(|k| {
                    let th = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                    [r * th.cos(), r * th.sin()]
                })
                .collect();
            for i in 0..n {
                let label = i % 3;
                let c = centers[label];
                points.push((
                    [c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)],
                    label,
                ));
            }
        }
        SyntheticKind::TwoSpirals => {
            for i in 0..n {
                let label = i % 2;
                let t = 0.5 + 3.0 * std::f64::consts::PI * ((i / 2) as f64 + 0.5)
                    / ((n / 2) as f64).max(1.0);
                let sign = if label == 0 { 1.0 } else { -1.0 };
                let radius = t / (3.0 * std::f64::consts::PI) * 4.0;
                points.push((
                    [
                        sign * radius * t.cos() + 0.1 * noise.sample(&mut rng),
                        sign * radius * t.sin() + 0.1 * noise.sample(&mut rng),
                    ],
                    label,
                ));
            }
        }
    }
    points.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).round() as usize;
    let (train_pts, test_pts) = points.split_at(n_train);

    // z-score from the train split only
    let mut mean = [0.0f64; 2];
    for (p, _) in train_pts {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean[0] /= n_train as f64;
    mean[1] /= n_train as f64;
    let mut var = [0.0f64; 2];
    for (p, _) in train_pts {
        var[0] += (p[0] - mean[0]).powi(2);
        var[1] += (p[1] - mean[1]).powi(2);
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| (v / n_train as f64).sqrt().max(1e-12))
        .collect();
    let normalization: Vec<(f64, f64)> = (0..2).map(|j| (mean[j], 1.0 / std[j])).collect();

    let to_batch = |pts: &[([f64; 2], usize)]| {
        let mut data = Vec::with_capacity(pts.len() * 2);
        let mut labels = Vec::with_capacity(pts.len());
        for (p, y) in pts {
            data.push((p[0] - mean[0]) / std[0]);
            data.push((p[1] - mean[1]) / std[1]);
            labels.push(*y);
        }
        Batch {
            inputs: Matrix::from_vec(pts.len(), 2, data),
            labels,
        }
    };
    Dataset {
        name: match kind {
            SyntheticKind::GaussianBlobs => "gaussian_blobs".to_string(),
            SyntheticKind::TwoSpirals => "two_spirals".to_string(),
        },
        train: to_batch(train_pts),
        test: to_batch(test_pts),
        normalization,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_dense;

    #[test]
    fn same_seed_same_data() {
        let a = synthetic_dataset(SyntheticKind::GaussianBlobs, 100, 7);
        let b = synthetic_dataset(SyntheticKind::GaussianBlobs, 100, 7);
        assert_eq!(a.train.inputs.data(), b.train.inputs.data());
        assert_eq!(a.train.labels, b.train.labels);
        assert_eq!(a.test.inputs.data(), b.test.inputs.data());
    }

    #[test]
    fn labels_are_balanced() {
        for kind in [SyntheticKind::GaussianBlobs, SyntheticKind::TwoSpirals] {
            let d = synthetic_dataset(kind, 120, 3);
            let k = if kind == SyntheticKind::GaussianBlobs { 3 } else { 2 };
            let mut counts = vec![0usize; k];
            for &y in d.train.labels.iter().chain(d.test.labels.iter()) {
                counts[y] += 1;
            }
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(max - min <= 1, "unbalanced labels: {counts:?}");
        }
    }

    #[test]
    fn split_sizes_are_80_20() {
        let d = synthetic_dataset(SyntheticKind::TwoSpirals, 100, 1);
        assert_eq!(d.train.len(), 80);
        assert_eq!(d.test.len(), 20);
    }

    /// Gaussian-discriminant classifier fit in closed form: class means and
    /// pooled covariance from the train split, nearest-mean decoding in the
    /// Mahalanobis metric.
    fn lda_train_error(batch: &Batch, classes: usize) -> f64 {
        let d = batch.inputs.cols();
        let mut means = vec![vec![0.0f64; d]; classes];
        let mut counts = vec![0usize; classes];
        for (i, &y) in batch.labels.iter().enumerate() {
            counts[y] += 1;
            for j in 0..d {
                means[y][j] += batch.inputs[(i, j)];
            }
        }
        for (m, &c) in means.iter_mut().zip(counts.iter()) {
            for x in m.iter_mut() {
                *x /= c as f64;
            }
        }
        let mut cov = Matrix::zeros(d, d);
        for (i, &y) in batch.labels.iter().enumerate() {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (batch.inputs[(i, a)] - means[y][a])
                        * (batch.inputs[(i, b)] - means[y][b]);
                }
            }
        }
        for x in cov.data_mut() {
            *x /= batch.len() as f64;
        }
        let mut wrong = 0usize;
        for (i, &y) in batch.labels.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (k, m) in means.iter().enumerate() {
                let diff: Vec<f64> = (0..d).map(|j| batch.inputs[(i, j)] - m[j]).collect();
                let sol = solve_dense(&cov, &diff).unwrap();
                let dist: f64 = diff.iter().zip(sol.iter()).map(|(a, b)| a * b).sum();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            if best.1 != y {
                wrong += 1;
            }
        }
        wrong as f64 / batch.len() as f64
    }

    #[test]
    fn blobs_are_linearly_separable_per_lda_oracle() {
        let d = synthetic_dataset(SyntheticKind::GaussianBlobs, 500, 11);
        let err = lda_train_error(&d.train, 3);
        assert!(err <= 0.01, "LDA train error {err} on 10σ-separated blobs");
    }
}
