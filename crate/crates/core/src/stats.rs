//! Small statistics helpers shared by the simulator and the analysis code.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Tail mass below which Poisson tables are truncated.
const TAIL: f64 = 1e-17;

/// Poisson probabilities `P(k)` for `k = 0..` until the tail is negligible.
pub fn poisson_pmf(mean: f64) -> Vec<f64> {
    debug_assert!(mean >= 0.0 && mean.is_finite());
    if mean == 0.0 {
        return vec![1.0];
    }
    let mut out = vec![(-mean).exp()];
    let mut cumulative = out[0];
    let mut k = 0usize;
    loop {
        k += 1;
        let next = out[k - 1] * mean / k as f64;
        out.push(next);
        cumulative += next;
        if k as f64 > mean && (next < TAIL || 1.0 - cumulative < TAIL) {
            break;
        }
    }
    out
}

/// Inverse-CDF sampler for a fixed Poisson mean. Built once per simulation,
/// so each draw costs one uniform and a short scan (the mean per read window
/// is well below one photon in practice).
#[derive(Debug, Clone)]
pub struct PoissonTable {
    cdf: Vec<f64>,
}

impl PoissonTable {
    pub fn new(mean: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = poisson_pmf(mean)
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = f64::INFINITY;
        }
        PoissonTable { cdf }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.invert(u)
    }

    #[inline]
    pub fn invert(&self, u: f64) -> u32 {
        let mut k = 0;
        while u >= self.cdf[k] {
            k += 1;
        }
        k as u32
    }
}

/// Two-sided Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// One-sigma coverage, matching the "value ± error" convention.
pub const ONE_SIGMA: f64 = 0.682_689_492_137_086;

pub fn z_for_level(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + 0.5 * level)
}

pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> Interval {
    if trials == 0 {
        return Interval {
            lower: 0.0,
            upper: 1.0,
        };
    }
    let z = z_for_level(level);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Interval {
        lower: if successes == 0 { 0.0 } else { (center - half).max(0.0) },
        upper: if successes == trials { 1.0 } else { (center + half).min(1.0) },
    }
}

/// Binomial standard error `sqrt(p(1-p)/n)`.
pub fn binomial_std_error(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Total variation distance between two probability vectors (missing tail
/// entries count as zero).
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pmf_sums_to_one() {
        for mean in [0.0, 0.0016, 0.028, 1.0, 7.0, 40.0] {
            let s: f64 = poisson_pmf(mean).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "{mean}: {s}");
        }
        assert!((poisson_pmf(7.0)[0] - (-7f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn table_sample_mean() {
        let table = PoissonTable::new(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let total: u64 = (0..n).map(|_| table.sample(&mut rng) as u64).sum();
        let mean = total as f64 / n as f64;
        // 5 sigma
        assert!((mean - 0.7).abs() < 5.0 * (0.7f64 / n as f64).sqrt(), "{mean}");
        assert_eq!(PoissonTable::new(0.0).invert(0.999_999), 0);
    }

    #[test]
    fn one_sigma_z() {
        assert!((z_for_level(ONE_SIGMA) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wilson_contains_estimate() {
        let iv = wilson_interval(191, 1000, ONE_SIGMA);
        assert!(iv.lower < 0.191 && 0.191 < iv.upper);
        let iv = wilson_interval(0, 50, ONE_SIGMA);
        assert_eq!(iv.lower, 0.0);
        assert!(iv.upper > 0.0);
    }

    #[test]
    fn tv_distance() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((total_variation(&[1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
