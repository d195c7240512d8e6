use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repr::GaussianRepr;

pub const DEFAULT_DISTANCE_SAMPLES: usize = 1000;
/// Bandwidth used when the sample has zero spread.
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Sampled Euclidean distances `‖zˢ − zᵗ‖` between latent draws of each
/// pair, with the attribute vectors concatenated. Returns
/// `pairs.len() · n_samples` values.
pub fn positive_distance_distribution<R: Rng + ?Sized>(
    pairs: &[(&GaussianRepr, &GaussianRepr)],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len() * n_samples);
    for (s, t) in pairs {
        if s.mu.dim() != t.mu.dim() {
            return Err(Error::Dimension {
                expected: s.mu.len(),
                actual: t.mu.len(),
            });
        }
        let params: Vec<(f64, f64, f64, f64)> =
            s.mu.iter()
                .zip(&s.sigma)
                .zip(t.mu.iter().zip(&t.sigma))
                .map(|((&ms, &ss), (&mt, &st))| (ms, ss, mt, st))
                .collect();
        for _ in 0..n_samples {
            let mut acc = 0.0;
            for &(ms, ss, mt, st) in &params {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let diff = (ms + ss * a) - (mt + st * b);
                acc += diff * diff;
            }
            out.push(acc.sqrt());
        }
    }
    Ok(out)
}

/// Root of the expected squared distance between latent draws of a pair,
/// the scalar at which the positive-distance density is evaluated.
pub fn expected_latent_distance(s: &GaussianRepr, t: &GaussianRepr) -> f64 {
    s.mu.iter()
        .zip(&s.sigma)
        .zip(t.mu.iter().zip(&t.sigma))
        .map(|((&ms, &ss), (&mt, &st))| (ms - mt) * (ms - mt) + ss * ss + st * st)
        .sum::<f64>()
        .sqrt()
}

/// Univariate Gaussian-kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeDensity {
    points: Vec<f64>,
    bandwidth: f64,
}

/// Fits a KDE with Silverman's bandwidth `1.06 · std · n^(−1/5)`, or
/// [`MIN_BANDWIDTH`] when the sample has no spread.
pub fn fit_kde(points: Vec<f64>) -> Result<KdeDensity> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a density to no points".into()));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "density sample contains non-finite values".into(),
        ));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    let var = if points.len() > 1 {
        points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    let bandwidth = if h > 0.0 { h.max(MIN_BANDWIDTH) } else { MIN_BANDWIDTH };
    Ok(KdeDensity { points, bandwidth })
}

impl KdeDensity {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `(1 / n h) Σ φ((x − dᵢ) / h)`.
    pub fn evaluate(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * PI).sqrt() * h * self.points.len() as f64);
        self.points
            .iter()
            .map(|d| {
                let u = (x - d) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
            * norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phi(u: f64) -> f64 {
        (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
    }

    #[test]
    fn three_point_definition() {
        let kde = fit_kde(vec![0.0, 1.0, 3.0]).unwrap();
        let h = kde.bandwidth();
        let std =
            (((0.0f64 - 4.0 / 3.0).powi(2) + (1.0f64 - 4.0 / 3.0).powi(2) + (3.0f64 - 4.0 / 3.0).powi(2)) / 2.0).sqrt();
        assert!((h - 1.06 * std * 3f64.powf(-0.2)).abs() < 1e-12);
        let x = 0.7;
        let expected = (phi((x - 0.0) / h) + phi((x - 1.0) / h) + phi((x - 3.0) / h)) / (3.0 * h);
        assert!((kde.evaluate(x) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_uses_minimum_bandwidth() {
        let kde = fit_kde(vec![2.0; 5]).unwrap();
        assert_eq!(kde.bandwidth(), MIN_BANDWIDTH);
        assert!(kde.evaluate(2.0) > kde.evaluate(2.01));
    }

    #[test]
    fn integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<f64> = (0..300).map(|_| rng.random_range(0.5..2.0)).collect();
        let kde = fit_kde(pts.clone()).unwrap();
        let (lo, hi) = (0.5 - 10.0 * kde.bandwidth(), 2.0 + 10.0 * kde.bandwidth());
        let n = 20_000;
        let dx = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * kde.evaluate(lo + i as f64 * dx);
        }
        integral *= dx;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn mode_is_near_the_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<f64> = (0..100)
            .flat_map(|_| {
                let e: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
                [1.0 + e, 1.0 - e]
            })
            .collect();
        let kde = fit_kde(pts).unwrap();
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.001).collect();
        let argmax = grid
            .iter()
            .copied()
            .max_by(|a, b| kde.evaluate(*a).total_cmp(&kde.evaluate(*b)))
            .unwrap();
        assert!((argmax - 1.0).abs() <= kde.bandwidth(), "{argmax}");
    }

    fn repr(mu: f64, sigma: f64, m: usize, k: usize) -> GaussianRepr {
        GaussianRepr::new(Array2::from_elem((m, k), mu), Array2::from_elem((m, k), sigma)).unwrap()
    }

    #[test]
    fn degenerate_gaussians_give_mean_distance() {
        let s = repr(0.0, 1e-12, 2, 3);
        let t = repr(1.0, 1e-12, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = positive_distance_distribution(&[(&s, &t), (&s, &t)], 50, &mut rng).unwrap();
        assert_eq!(d.len(), 100);
        for x in d {
            assert!((x - 6f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_gaussians_concentrate_near_expected_norm() {
        // zˢ − zᵗ ~ N(0, 2σ² I) over 100 dimensions; compare with an
        // independent Monte-Carlo estimate of E‖·‖.
        let s = repr(0.3, 0.2, 1, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = positive_distance_distribution(&[(&s, &s)], 2000, &mut rng).unwrap();
        assert!(d.iter().all(|&x| x > 0.0));
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let mut oracle = ChaCha8Rng::seed_from_u64(99);
        let reference = (0..2000)
            .map(|_| {
                (0..100)
                    .map(|_| {
                        let e: f64 = oracle.sample(StandardNormal);
                        let v = e * 0.2 * 2f64.sqrt();
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / 2000.0;
        assert!((mean - reference).abs() < 0.01, "{mean} vs {reference}");
        assert!((expected_latent_distance(&s, &s) - 0.2 * 200f64.sqrt()).abs() < 1e-12);
    }
}
