//! Streaming mean/variance accumulators with exact associative merging, so
//! ensemble estimates do not depend on how work was partitioned.

use serde::{Deserialize, Serialize};

/// Count / mean / M2 accumulator (Welford, with Chan's merge rule).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Accumulator::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Accumulator) -> Accumulator {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        Accumulator {
            count: self.count + other.count,
            mean: self.mean + delta * n2 / n,
            m2: self.m2 + other.m2 + delta * delta * n1 * n2 / n,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// A fixed-shape array of accumulators (vector or flattened-matrix targets).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VecAccumulator {
    accs: Vec<Accumulator>,
}

impl VecAccumulator {
    pub fn new(len: usize) -> Self {
        VecAccumulator {
            accs: vec![Accumulator::new(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.accs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accs.is_empty()
    }

    pub fn push(&mut self, xs: &[f64]) {
        debug_assert_eq!(xs.len(), self.accs.len());
        for (acc, &x) in self.accs.iter_mut().zip(xs) {
            acc.push(x);
        }
    }

    pub fn merge(&self, other: &VecAccumulator) -> VecAccumulator {
        debug_assert_eq!(self.accs.len(), other.accs.len());
        VecAccumulator {
            accs: self
                .accs
                .iter()
                .zip(&other.accs)
                .map(|(a, b)| a.merge(b))
                .collect(),
        }
    }

    pub fn entry(&self, i: usize) -> &Accumulator {
        &self.accs[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.accs.iter().map(Accumulator::mean).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.accs.iter().map(Accumulator::std_error).collect()
    }

    pub fn count(&self) -> u64 {
        self.accs.first().map(Accumulator::count).unwrap_or(0)
    }
}

/// An empirical estimate against a closed-form target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    /// Flattened estimate (a scalar, vector or row-major matrix).
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    pub sample_count: u64,
    /// Closed-form reference values, same shape as `estimate`.
    pub target: Vec<f64>,
    /// Identifier of the closed-form formula behind `target`.
    pub formula: String,
    /// Shape metadata: number of rows (1 for vectors/scalars).
    pub rows: usize,
    /// Set when the sample is too small for the standard errors to mean much.
    pub low_power: bool,
}

impl CorrelationEstimate {
    pub fn from_acc(acc: &VecAccumulator, target: Vec<f64>, formula: &str, rows: usize) -> Self {
        CorrelationEstimate {
            estimate: acc.means(),
            std_error: acc.std_errors(),
            sample_count: acc.count(),
            target,
            formula: formula.to_string(),
            rows,
            low_power: acc.count() < 100,
        }
    }

    /// True when every entry lies within `k` standard errors of its target.
    pub fn within(&self, k: f64) -> bool {
        self.estimate
            .iter()
            .zip(&self.target)
            .zip(&self.std_error)
            .all(|((e, t), se)| (e - t).abs() <= k * se)
    }

    /// Largest |estimate - target| / std_error over the entries.
    pub fn max_sigma_distance(&self) -> f64 {
        self.estimate
            .iter()
            .zip(&self.target)
            .zip(&self.std_error)
            .map(|((e, t), se)| (e - t).abs() / se)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0)
            .collect();
        let mut whole = Accumulator::new();
        for &x in &xs {
            whole.push(x);
        }
        for split in [1, 17, 500, 999] {
            let mut a = Accumulator::new();
            let mut b = Accumulator::new();
            for &x in &xs[..split] {
                a.push(x);
            }
            for &x in &xs[split..] {
                b.push(x);
            }
            let merged = a.merge(&b);
            assert_eq!(merged.count(), whole.count());
            assert!((merged.mean() - whole.mean()).abs() < 1e-12);
            assert!((merged.variance() - whole.variance()).abs() < 1e-12);
        }
    }

    #[test]
    fn std_error_scales() {
        let mut acc = Accumulator::new();
        for i in 0..10_000 {
            acc.push(if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        assert!((acc.mean()).abs() < 1e-12);
        assert!((acc.std_error() - 0.01).abs() < 1e-4);
    }
}
