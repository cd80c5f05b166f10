//! Histograms of durations, lengths and participation rates, and estimation
//! of the tail exponent β of the length law p_n ∝ n^{−(β+1)}, n ≥ 2.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::farmer::hurwitz_zeta;
use crate::regression::ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    /// n equal-width bins between min and max.
    Linear(usize),
    /// n bins equal in log width; values must be positive.
    Log(usize),
    /// One bin per distinct integer value.
    Integer,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("empty input")]
    Empty,
    #[error("bin count must be positive")]
    NoBins,
    #[error("log binning needs positive values, got {0}")]
    NonPositive(f64),
    #[error("integer binning needs integer values, got {0}")]
    NotInteger(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error("lengths must be at least 2, got {0}")]
    LengthTooSmall(usize),
    #[error("too few distinct lengths ({0} < 5)")]
    TooFewDistinct(usize),
    #[error("too few lengths with at least 5 observations ({0} < 3)")]
    TooFewBins(usize),
}

/// Normalised histogram; only non-empty bins are kept for integer binning.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn empirical_histogram(values: &[f64], binning: Binning) -> Result<Histogram, DistError> {
    if values.is_empty() {
        return Err(DistError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DistError::NonFinite);
    }
    let total = values.len() as f64;
    let (centers, counts) = match binning {
        Binning::Integer => {
            let mut map: BTreeMap<i64, usize> = BTreeMap::new();
            for &v in values {
                if v.fract() != 0.0 {
                    return Err(DistError::NotInteger(v));
                }
                *map.entry(v as i64).or_default() += 1;
            }
            map.into_iter().map(|(k, c)| (k as f64, c)).unzip()
        }
        Binning::Linear(n) | Binning::Log(n) => {
            if n == 0 {
                return Err(DistError::NoBins);
            }
            let log = matches!(binning, Binning::Log(_));
            if log {
                if let Some(&v) = values.iter().find(|v| **v <= 0.0) {
                    return Err(DistError::NonPositive(v));
                }
            }
            let map = |v: f64| if log { v.ln() } else { v };
            let unmap = |v: f64| if log { v.exp() } else { v };
            let lo = values.iter().copied().map(map).fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().map(map).fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (vec![values[0]], vec![values.len()])
            } else {
                let width = (hi - lo) / n as f64;
                let mut counts = vec![0usize; n];
                for &v in values {
                    let k = (((map(v) - lo) / width) as usize).min(n - 1);
                    counts[k] += 1;
                }
                let centers = (0..n)
                    .map(|k| unmap(lo + (k as f64 + 0.5) * width))
                    .collect();
                (centers, counts)
            }
        }
    };
    let frequencies = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(Histogram {
        centers,
        frequencies,
        counts,
    })
}

impl Histogram {
    /// `bin_center,frequency,count` rows.
    pub fn write_csv<W: Write>(&self, w: W, provenance: Option<&str>) -> io::Result<()> {
        let mut w = io::BufWriter::new(w);
        if let Some(p) = provenance {
            writeln!(w, "# {p}")?;
        }
        writeln!(w, "bin_center,frequency,count")?;
        for ((c, f), n) in self.centers.iter().zip(&self.frequencies).zip(&self.counts) {
            writeln!(w, "{c},{f},{n}")?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaMethod {
    LogLogRegression,
    Mle,
}

impl BetaMethod {
    pub const fn as_str(self) -> &'static str {
        match self {
            BetaMethod::LogLogRegression => "loglog_regression",
            BetaMethod::Mle => "mle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub beta: f64,
    pub std_error: f64,
    pub method: BetaMethod,
    pub samples: usize,
}

// Bins below this count are left out of the log-log regression.
const MIN_BIN_COUNT: usize = 5;
const MIN_DISTINCT: usize = 5;
const BETA_RANGE: (f64, f64) = (0.01, 20.0);

/// Estimates β from metaorder lengths (all ≥ 2).
///
/// `Mle` maximises the likelihood of the zeta law renormalised over n ≥ 2;
/// `LogLogRegression` fits log P̂(N = n) = c − (β+1) log n over lengths seen
/// at least 5 times.
pub fn estimate_beta(lengths: &[usize], method: BetaMethod) -> Result<BetaEstimate, DistError> {
    if lengths.is_empty() {
        return Err(DistError::Empty);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in lengths {
        if n < 2 {
            return Err(DistError::LengthTooSmall(n));
        }
        *counts.entry(n).or_default() += 1;
    }
    if counts.len() < MIN_DISTINCT {
        return Err(DistError::TooFewDistinct(counts.len()));
    }
    let k = lengths.len() as f64;
    let (beta, std_error) = match method {
        BetaMethod::Mle => {
            let sum_log: f64 = counts.iter().map(|(&n, &c)| c as f64 * (n as f64).ln()).sum();
            let log_norm = |s: f64| hurwitz_zeta(s, 2.0).expect("s > 1").ln();
            let neg_ll = |beta: f64| (beta + 1.0) * sum_log + k * log_norm(beta + 1.0);
            let beta = golden_section_min(neg_ll, BETA_RANGE.0, BETA_RANGE.1, 1e-10);
            let s = beta + 1.0;
            let h = 1e-4 * s.max(1.0);
            let d2 = (log_norm(s + h) - 2.0 * log_norm(s) + log_norm(s - h)) / (h * h);
            (beta, 1.0 / (k * d2).sqrt())
        }
        BetaMethod::LogLogRegression => {
            let (xs, ys): (Vec<f64>, Vec<f64>) = counts
                .iter()
                .filter(|(_, &c)| c >= MIN_BIN_COUNT)
                .map(|(&n, &c)| ((n as f64).ln(), (c as f64 / k).ln()))
                .unzip();
            if xs.len() < 3 {
                return Err(DistError::TooFewBins(xs.len()));
            }
            let fit = ols(&xs, &ys).expect("distinct lengths");
            (-fit.slope - 1.0, fit.slope_se)
        }
    };
    Ok(BetaEstimate {
        beta,
        std_error,
        method,
        samples: lengths.len(),
    })
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// `method,beta,std_error,samples` rows.
pub fn write_beta_report<W: Write>(
    w: W,
    estimates: &[BetaEstimate],
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(w, "method,beta,std_error,samples")?;
    for e in estimates {
        writeln!(
            w,
            "{},{},{},{}",
            e.method.as_str(),
            e.beta,
            e.std_error,
            e.samples
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_values_single_bin() {
        for b in [Binning::Linear(10), Binning::Log(10), Binning::Integer] {
            let h = empirical_histogram(&[3.0; 7], b).unwrap();
            assert_eq!(h.frequencies, vec![1.0]);
            assert_eq!(h.centers, vec![3.0]);
        }
    }

    #[test]
    fn histogram_errors() {
        assert_eq!(empirical_histogram(&[], Binning::Integer), Err(DistError::Empty));
        assert!(empirical_histogram(&[0.0, 1.0], Binning::Log(3)).is_err());
        assert!(empirical_histogram(&[1.5], Binning::Integer).is_err());
        assert!(empirical_histogram(&[1.0, 2.0], Binning::Linear(0)).is_err());
    }

    #[test]
    fn linear_bins() {
        let h = empirical_histogram(&[0.0, 1.0, 2.0, 3.0, 4.0], Binning::Linear(2)).unwrap();
        assert_eq!(h.centers, vec![1.0, 3.0]);
        assert_eq!(h.counts, vec![2, 3]);
    }

    // Exact truncated zeta frequencies rounded to counts, for deterministic
    // estimator checks.
    fn ideal_sample(beta: f64, total: f64, max_n: usize) -> Vec<usize> {
        let s = beta + 1.0;
        let norm: f64 = hurwitz_zeta(s, 2.0).unwrap();
        let mut out = Vec::new();
        for n in 2..=max_n {
            let c = (total * (n as f64).powf(-s) / norm).round() as usize;
            out.extend(std::iter::repeat_n(n, c));
        }
        out
    }

    #[test]
    fn both_methods_recover_beta_from_ideal_counts() {
        let sample = ideal_sample(1.5, 1e6, 100_000);
        let mle = estimate_beta(&sample, BetaMethod::Mle).unwrap();
        assert!((mle.beta - 1.5).abs() < 0.01, "{mle:?}");
        assert!(mle.std_error > 0.0 && mle.std_error < 0.01);
        let reg = estimate_beta(&sample, BetaMethod::LogLogRegression).unwrap();
        assert!((reg.beta - 1.5).abs() < 0.05, "{reg:?}");
    }

    #[test]
    fn degenerate_lengths() {
        for m in [BetaMethod::Mle, BetaMethod::LogLogRegression] {
            assert_eq!(estimate_beta(&[2; 50], m), Err(DistError::TooFewDistinct(1)));
        }
        assert!(estimate_beta(&[1, 2, 3], BetaMethod::Mle).is_err());
    }

    proptest! {
        #[test]
        fn frequencies_sum_to_one(values in prop::collection::vec(0.1f64..1e4, 1..200), n in 1usize..50) {
            for b in [Binning::Linear(n), Binning::Log(n)] {
                let h = empirical_histogram(&values, b).unwrap();
                prop_assert!((h.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
            }
        }

        #[test]
        fn duplication_invariance(counts in prop::collection::vec(5usize..60, 5..12)) {
            let sample: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat_n(i + 2, c))
                .collect();
            let doubled: Vec<usize> = sample.iter().chain(&sample).copied().collect();
            let a = estimate_beta(&sample, BetaMethod::LogLogRegression).unwrap();
            let b = estimate_beta(&doubled, BetaMethod::LogLogRegression).unwrap();
            prop_assert!((a.beta - b.beta).abs() < 1e-9);
            let a = estimate_beta(&sample, BetaMethod::Mle).unwrap();
            let b = estimate_beta(&doubled, BetaMethod::Mle).unwrap();
            prop_assert!((a.beta - b.beta).abs() < 1e-6);
        }
    }
}
