//! Two-sample and one-sample Kolmogorov-Smirnov statistics with asymptotic
//! critical values; the workhorse behind every "converges in distribution"
//! check in this crate.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// KS coefficient c(alpha) = sqrt(-ln(alpha/2) / 2).
fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub n1: usize,
    pub n2: usize,
    /// Asymptotic critical value at the 5% level.
    pub critical_5pct: f64,
    /// Asymptotic critical value at the 1% level.
    pub critical_1pct: f64,
}

impl KsOutcome {
    pub fn rejects_at_5pct(&self) -> bool {
        self.statistic > self.critical_5pct
    }

    pub fn rejects_at_1pct(&self) -> bool {
        self.statistic > self.critical_1pct
    }
}

/// Two-sample KS statistic: sup |F_a - F_b| over the pooled sample.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsOutcome> {
    const MIN: usize = 50;
    if a.len() < MIN {
        return Err(Error::SampleTooSmall {
            need: MIN,
            got: a.len(),
        });
    }
    if b.len() < MIN {
        return Err(Error::SampleTooSmall {
            need: MIN,
            got: b.len(),
        });
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);

    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut stat = 0.0f64;
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        stat = stat.max(diff);
    }

    let scale = ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    Ok(KsOutcome {
        statistic: stat,
        n1: n,
        n2: m,
        critical_5pct: ks_coefficient(0.05) * scale,
        critical_1pct: ks_coefficient(0.01) * scale,
    })
}

/// One-sample KS statistic against a given CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsOutcome> {
    const MIN: usize = 50;
    if sample.len() < MIN {
        return Err(Error::SampleTooSmall {
            need: MIN,
            got: sample.len(),
        });
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let mut stat = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        stat = stat.max((f - i as f64 / n as f64).abs());
        stat = stat.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(KsOutcome {
        statistic: stat,
        n1: n,
        n2: 0,
        critical_5pct: ks_coefficient(0.05) * scale,
        critical_1pct: ks_coefficient(0.01) * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_sample(n: usize, shift: f64, rng: &mut RngStream) -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + shift)
            .collect()
    }

    #[test]
    fn identical_samples_give_zero() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let out = ks_two_sample(&xs, &xs).unwrap();
        assert_eq!(out.statistic, 0.0);
    }

    #[test]
    fn null_calibration_at_one_percent() {
        // under the null the 1% test should reject about 1% of the time
        let mut rng = RngStream::new(20240101, 0);
        let reps = 300;
        let mut rejections = 0;
        for _ in 0..reps {
            let a = normal_sample(10_000, 0.0, &mut rng);
            let b = normal_sample(10_000, 0.0, &mut rng);
            if ks_two_sample(&a, &b).unwrap().rejects_at_1pct() {
                rejections += 1;
            }
        }
        // binomial(300, 0.01): mean 3, generous upper bound
        assert!(rejections <= 9, "rejections = {rejections}");
    }

    #[test]
    fn power_against_mean_shift() {
        let mut rng = RngStream::new(7, 0);
        let a = normal_sample(10_000, 0.0, &mut rng);
        let b = normal_sample(10_000, 0.5, &mut rng);
        assert!(ks_two_sample(&a, &b).unwrap().rejects_at_1pct());
    }

    #[test]
    fn small_sample_rejected() {
        let xs = vec![0.0; 10];
        assert!(ks_two_sample(&xs, &xs).is_err());
    }

    #[test]
    fn one_sample_against_uniform() {
        let mut rng = RngStream::new(99, 3);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let out = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(!out.rejects_at_1pct(), "stat = {}", out.statistic);
    }
}
