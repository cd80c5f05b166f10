//! Signed impact paths, bucketed impact curves, power-law fits, the
//! square-root analysis and the fair-pricing check.
//!
//! Returns are measured against the reference price P_{t0}: the last mid
//! strictly before the first execution, or the last trade before it when the
//! tape has no quotes, or the first execution price as a last resort.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingestion::MarketTapes;
use crate::regression::ols;
use crate::types::{
    CurveError, CurvePoint, ImpactCurve, Metaorder, MetaorderKey, Phase, Seam, TradeTape,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImpactError {
    #[error("reference price must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("no tape for metaorder {0}")]
    MissingTape(String),
    #[error("tape does not match metaorder {0}")]
    TapeMismatch(String),
    #[error("{points} points cannot fill {buckets} buckets")]
    TooFewPoints { points: usize, buckets: usize },
    #[error("bucket count must be positive")]
    NoBuckets,
    #[error("power-law fit needs strictly positive coordinates")]
    NonPositive,
    #[error("power-law fit needs at least 3 points, got {0}")]
    TooFewFitPoints(usize),
    #[error("all x values are equal")]
    DegenerateX,
    #[error("no metaorders")]
    Empty,
    #[error("need at least 10 metaorders, got {0}")]
    TooFewMetaorders(usize),
    #[error("metaorder {0} has no market volume")]
    NotEnriched(String),
    #[error("curve has no {0} points")]
    MissingPhase(&'static str),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// (p_t − p_t0)/p_t0.
pub fn return_proxy(p_t: f64, p_t0: f64) -> Result<f64, ImpactError> {
    if !(p_t0 > 0.0) {
        return Err(ImpactError::NonPositiveReference(p_t0));
    }
    Ok((p_t - p_t0) / p_t0)
}

/// Default number of relaxation samples per metaorder.
pub const RELAXATION_GRID: usize = 50;

/// Time of the j-th relaxation sample, j = 1..=m.
pub fn relaxation_time(metaorder: &Metaorder, j: usize, m: usize) -> crate::Timestamp {
    let t_ms = metaorder.duration_millis();
    let offset = (i128::from(t_ms) * j as i128 / m as i128) as i64;
    metaorder.end().plus_millis(offset)
}

/// A price read off the tape, and whether it is a mid (false) or a
/// last-trade stand-in (true).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapePrice {
    pub price: f64,
    pub proxy: bool,
}

/// Price prevailing at `at`: the mid when the tape has quotes, otherwise the
/// last trade.
pub fn price_at(tape: &TradeTape, at: crate::Timestamp) -> Option<TapePrice> {
    if tape.has_quotes() {
        if let Some(q) = tape.quote_at(at) {
            return Some(TapePrice {
                price: q.mid(),
                proxy: false,
            });
        }
    }
    tape.trade_at(at).map(|t| TapePrice {
        price: t.price.to_f64(),
        proxy: true,
    })
}

/// P_{t0} for `metaorder`.
pub fn reference_price(metaorder: &Metaorder, tape: &TradeTape) -> TapePrice {
    let t0 = metaorder.start();
    if let Some(q) = tape.quote_before(t0) {
        return TapePrice {
            price: q.mid(),
            proxy: false,
        };
    }
    if let Some(t) = tape.trade_before(t0) {
        return TapePrice {
            price: t.price.to_f64(),
            proxy: true,
        };
    }
    TapePrice {
        price: metaorder.executions()[0].price(),
        proxy: true,
    }
}

/// One metaorder's signed impact in rescaled time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactPath {
    pub key: MetaorderKey,
    pub length: usize,
    pub duration_s: f64,
    pub participation: Option<f64>,
    pub reference: f64,
    /// (cumulative quantity / Q, ε·return at the execution price).
    pub execution: Vec<(f64, f64)>,
    /// (1 + j/m, ε·return at the mid), j = 1..=m. Empty when truncated.
    pub relaxation: Vec<(f64, f64)>,
    /// Execution value at volume time 1 and the mid at t0 + T.
    pub seam: Option<Seam>,
    /// Some price came from last trades instead of mids.
    pub proxy: bool,
    /// The tape ends before t0 + 2T.
    pub truncated: bool,
}

impl ImpactPath {
    /// ε·𝓘 at the last execution.
    pub fn terminal_impact(&self) -> f64 {
        self.execution.last().map(|p| p.1).unwrap_or(0.0)
    }
}

fn check_tape(metaorder: &Metaorder, tape: &TradeTape) -> Result<(), ImpactError> {
    let key = metaorder.key();
    if tape.instrument_id() != &*key.instrument_id || tape.day() != key.day {
        return Err(ImpactError::TapeMismatch(key.to_string()));
    }
    Ok(())
}

/// Samples the execution phase at every merged fill and the relaxation
/// phase on `grid` equally spaced instants over (t0 + T, t0 + 2T].
pub fn signed_impact_path(
    metaorder: &Metaorder,
    tape: &TradeTape,
    grid: usize,
) -> Result<ImpactPath, ImpactError> {
    check_tape(metaorder, tape)?;
    let eps = metaorder.sign();
    let reference = reference_price(metaorder, tape);
    let p0 = reference.price;
    let q = metaorder.quantity() as f64;

    let mut cumulative = 0u64;
    let mut execution = Vec::with_capacity(metaorder.length());
    for e in metaorder.executions() {
        cumulative += e.quantity;
        execution.push((
            cumulative as f64 / q,
            eps * return_proxy(e.price(), p0)?,
        ));
    }

    let horizon = relaxation_time(metaorder, grid, grid);
    let truncated = tape.last_timestamp().is_none_or(|last| last < horizon);
    let mut proxy = reference.proxy;
    let mut relaxation = Vec::new();
    if !truncated {
        relaxation.reserve(grid);
        for j in 1..=grid {
            let at = relaxation_time(metaorder, j, grid);
            let Some(p) = price_at(tape, at) else { continue };
            proxy |= p.proxy;
            relaxation.push((1.0 + j as f64 / grid as f64, eps * return_proxy(p.price, p0)?));
        }
    }
    let seam = match (execution.last(), price_at(tape, metaorder.end())) {
        (Some(&(_, ex)), Some(p)) => Some(Seam {
            execution: ex,
            mid: eps * return_proxy(p.price, p0)?,
        }),
        _ => None,
    };

    Ok(ImpactPath {
        key: metaorder.key().clone(),
        length: metaorder.length(),
        duration_s: metaorder.duration_secs(),
        participation: metaorder.participation(),
        reference: p0,
        execution,
        relaxation,
        seam,
        proxy,
        truncated,
    })
}

/// Computes every metaorder's path in parallel. Metaorders without a usable
/// tape are returned as errors.
pub fn compute_paths(
    metaorders: &[Metaorder],
    tapes: &MarketTapes,
    grid: usize,
) -> (Vec<ImpactPath>, Vec<ImpactError>) {
    let results: Vec<Result<ImpactPath, ImpactError>> = metaorders
        .par_iter()
        .map(|m| {
            let key = m.key();
            let tape = tapes
                .get(&key.instrument_id, key.day)
                .ok_or_else(|| ImpactError::MissingTape(key.to_string()))?;
            signed_impact_path(m, tape, grid)
        })
        .collect();
    let mut paths = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(p) => paths.push(p),
            Err(e) => errors.push(e),
        }
    }
    (paths, errors)
}

/// A bucket of the sorted (x, y) cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub x: f64,
    pub y: f64,
    pub count: usize,
    /// Share of the bucket's points that carry a tag.
    pub tagged_share: f64,
}

/// Sorts tagged points by x (stably) and averages `n_buckets` contiguous
/// groups whose sizes differ by at most one.
pub fn bucket_tagged(
    mut points: Vec<(f64, f64, bool)>,
    n_buckets: usize,
) -> Result<Vec<Bucket>, ImpactError> {
    if n_buckets == 0 {
        return Err(ImpactError::NoBuckets);
    }
    if points.len() < n_buckets {
        return Err(ImpactError::TooFewPoints {
            points: points.len(),
            buckets: n_buckets,
        });
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let len = points.len();
    Ok((0..n_buckets)
        .map(|k| {
            let group = &points[k * len / n_buckets..(k + 1) * len / n_buckets];
            let n = group.len() as f64;
            Bucket {
                x: group.iter().map(|p| p.0).sum::<f64>() / n,
                y: group.iter().map(|p| p.1).sum::<f64>() / n,
                count: group.len(),
                tagged_share: group.iter().filter(|p| p.2).count() as f64 / n,
            }
        })
        .collect())
}

/// Bucketed means (x̄_k, ȳ_k), sorted by x̄.
pub fn bucket_average(
    xs: &[f64],
    ys: &[f64],
    n_buckets: usize,
) -> Result<Vec<(f64, f64)>, ImpactError> {
    assert_eq!(xs.len(), ys.len(), "xs and ys differ in length");
    let points = xs.iter().zip(ys).map(|(&x, &y)| (x, y, false)).collect();
    Ok(bucket_tagged(points, n_buckets)?
        .into_iter()
        .map(|b| (b.x, b.y))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub prefactor: f64,
    pub exponent: f64,
    /// RMS of log y − log(a x^b).
    pub residual: f64,
    pub point_count: usize,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.exponent)
    }

    fn with_log_residual(prefactor: f64, exponent: f64, points: &[(f64, f64)]) -> Self {
        let ss: f64 = points
            .iter()
            .map(|&(x, y)| {
                let r = y.ln() - prefactor.ln() - exponent * x.ln();
                r * r
            })
            .sum();
        PowerLawFit {
            prefactor,
            exponent,
            residual: (ss / points.len() as f64).sqrt(),
            point_count: points.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMethod {
    /// Least squares of log y on log x.
    #[default]
    LogOls,
    /// Least squares of y − a x^b, started from the log fit.
    Nls,
}

fn check_fit_points(points: &[(f64, f64)]) -> Result<(), ImpactError> {
    if points.len() < 3 {
        return Err(ImpactError::TooFewFitPoints(points.len()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(ImpactError::NonPositive);
    }
    Ok(())
}

/// Fits y = a·x^b by least squares in log space.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, ImpactError> {
    check_fit_points(points)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = ols(&xs, &ys).ok_or(ImpactError::DegenerateX)?;
    Ok(PowerLawFit {
        prefactor: fit.intercept.exp(),
        exponent: fit.slope,
        residual: fit.rms,
        point_count: points.len(),
    })
}

/// Fits y = a·x^b by Levenberg–Marquardt on the linear-scale residuals.
pub fn fit_power_law_nls(points: &[(f64, f64)]) -> Result<PowerLawFit, ImpactError> {
    let start = fit_power_law(points)?;
    // Parameters (ln a, b).
    let sse = |la: f64, b: f64| -> f64 {
        points
            .iter()
            .map(|&(x, y)| {
                let r = y - (la + b * x.ln()).exp();
                r * r
            })
            .sum()
    };
    let (mut la, mut b) = (start.prefactor.ln(), start.exponent);
    let mut lambda = 1e-3;
    let mut current = sse(la, b);
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for &(x, y) in points {
            let f = (la + b * x.ln()).exp();
            let j = [f, f * x.ln()];
            let r = y - f;
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let a00 = jtj[0][0] * (1.0 + lambda);
        let a11 = jtj[1][1] * (1.0 + lambda);
        let det = a00 * a11 - jtj[0][1] * jtj[1][0];
        if det.abs() < f64::MIN_POSITIVE {
            break;
        }
        let d0 = (a11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let d1 = (a00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let trial = sse(la + d0, b + d1);
        if trial < current {
            la += d0;
            b += d1;
            let improvement = current - trial;
            current = trial;
            lambda = (lambda / 10.0).max(1e-12);
            if improvement <= 1e-15 * current.max(1e-300) {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    Ok(PowerLawFit::with_log_residual(la.exp(), b, points))
}

pub fn fit_power_law_with(
    points: &[(f64, f64)],
    method: FitMethod,
) -> Result<PowerLawFit, ImpactError> {
    match method {
        FitMethod::LogOls => fit_power_law(points),
        FitMethod::Nls => fit_power_law_nls(points),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicsOptions {
    pub execution_buckets: usize,
    pub relaxation_buckets: usize,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            execution_buckets: 100,
            relaxation_buckets: RELAXATION_GRID,
        }
    }
}

// The final execution bucket is flagged above this share of two-fill points.
const SHORT_SHARE_LIMIT: f64 = 0.5;

/// Pools all paths and buckets the execution and relaxation phases
/// separately. Truncated paths contribute execution points only.
pub fn impact_dynamics(
    paths: &[ImpactPath],
    options: &DynamicsOptions,
) -> Result<ImpactCurve, ImpactError> {
    if paths.is_empty() {
        return Err(ImpactError::Empty);
    }
    let execution: Vec<(f64, f64, bool)> = paths
        .iter()
        .flat_map(|p| p.execution.iter().map(move |&(x, y)| (x, y, p.length == 2)))
        .collect();
    let relaxation: Vec<(f64, f64, bool)> = paths
        .iter()
        .filter(|p| !p.truncated)
        .flat_map(|p| p.relaxation.iter().map(|&(x, y)| (x, y, false)))
        .collect();

    let exec_buckets = bucket_tagged(execution, options.execution_buckets)?;
    let last = exec_buckets.len() - 1;
    let mut points: Vec<CurvePoint> = exec_buckets
        .iter()
        .enumerate()
        .map(|(k, b)| CurvePoint {
            rescaled_time: b.x,
            mean_signed_impact: b.y,
            count: b.count,
            phase: Phase::Execution,
            flagged: k == last && b.tagged_share > SHORT_SHARE_LIMIT,
        })
        .collect();
    if !relaxation.is_empty() {
        for b in bucket_tagged(relaxation, options.relaxation_buckets)? {
            points.push(CurvePoint {
                rescaled_time: b.x,
                mean_signed_impact: b.y,
                count: b.count,
                phase: Phase::Relaxation,
                flagged: false,
            });
        }
    }

    let seams: Vec<Seam> = paths.iter().filter_map(|p| p.seam).collect();
    let seam = (!seams.is_empty()).then(|| {
        let n = seams.len() as f64;
        Seam {
            execution: seams.iter().map(|s| s.execution).sum::<f64>() / n,
            mid: seams.iter().map(|s| s.mid).sum::<f64>() / n,
        }
    });
    Ok(ImpactCurve::new(points)?
        .with_seam(seam)
        .with_proxy(paths.iter().any(|p| p.proxy)))
}

/// Mean signed impact of the last execution bucket, or of the one before it
/// when the last is flagged.
pub fn temporary_impact(curve: &ImpactCurve) -> Result<f64, ImpactError> {
    let exec: Vec<&CurvePoint> = curve.phase(Phase::Execution).collect();
    let Some(last) = exec.last() else {
        return Err(ImpactError::MissingPhase("execution"));
    };
    if last.flagged && exec.len() > 1 {
        Ok(exec[exec.len() - 2].mean_signed_impact)
    } else {
        Ok(last.mean_signed_impact)
    }
}

/// Mean signed impact of the last relaxation bucket.
pub fn permanent_impact(curve: &ImpactCurve) -> Result<f64, ImpactError> {
    curve
        .phase(Phase::Relaxation)
        .last()
        .map(|p| p.mean_signed_impact)
        .ok_or(ImpactError::MissingPhase("relaxation"))
}

/// One metaorder in the square-root scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtPoint {
    pub key: MetaorderKey,
    pub participation: f64,
    pub impact: f64,
    pub duration_s: f64,
}

/// Mean and spread of the impact-to-fit ratio within one duration bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationBucket {
    pub duration_s: f64,
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtLawReport {
    pub points: Vec<SqrtPoint>,
    /// 𝓘 = a·(Q/V)^δ, fitted on participation-bucket means.
    pub fit: PowerLawFit,
    /// Exponent of the duration-bucket mean of 𝓘/(a·(Q/V)^δ) against T.
    pub duration_coefficient: f64,
    pub duration_coefficient_se: f64,
    pub duration_buckets: Vec<DurationBucket>,
}

pub const SQRT_BUCKETS: usize = 20;

/// Fits the participation law and the residual duration dependence.
pub fn square_root_analysis(
    paths: &[ImpactPath],
    n_buckets: usize,
    method: FitMethod,
) -> Result<SqrtLawReport, ImpactError> {
    if paths.len() < 10 {
        return Err(ImpactError::TooFewMetaorders(paths.len()));
    }
    let points: Vec<SqrtPoint> = paths
        .iter()
        .map(|p| {
            Ok(SqrtPoint {
                key: p.key.clone(),
                participation: p
                    .participation
                    .ok_or_else(|| ImpactError::NotEnriched(p.key.to_string()))?,
                impact: p.terminal_impact(),
                duration_s: p.duration_s,
            })
        })
        .collect::<Result<_, ImpactError>>()?;

    let xs: Vec<f64> = points.iter().map(|p| p.participation).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.impact).collect();
    let fit = fit_power_law_with(&bucket_average(&xs, &ys, n_buckets)?, method)?;

    let ratios: Vec<(f64, f64, bool)> = points
        .iter()
        .map(|p| (p.duration_s, p.impact / fit.eval(p.participation), false))
        .collect();
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let len = sorted.len();
    let duration_buckets: Vec<DurationBucket> = (0..n_buckets)
        .map(|k| {
            let group = &sorted[k * len / n_buckets..(k + 1) * len / n_buckets];
            let n = group.len() as f64;
            let mean = group.iter().map(|p| p.1).sum::<f64>() / n;
            let var = group.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n;
            DurationBucket {
                duration_s: group.iter().map(|p| p.0).sum::<f64>() / n,
                ratio_mean: mean,
                ratio_std: var.sqrt(),
                count: group.len(),
            }
        })
        .collect();
    let bucket_points: Vec<(f64, f64)> = duration_buckets
        .iter()
        .map(|b| (b.duration_s, b.ratio_mean))
        .collect();
    check_fit_points(&bucket_points)?;
    let lx: Vec<f64> = bucket_points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = bucket_points.iter().map(|p| p.1.ln()).collect();
    let dfit = ols(&lx, &ly).ok_or(ImpactError::DegenerateX)?;

    Ok(SqrtLawReport {
        points,
        fit,
        duration_coefficient: dfit.slope,
        duration_coefficient_se: dfit.slope_se,
        duration_buckets,
    })
}

/// Σ Q_i·P_i / Q over merged executions, from exact notionals.
pub fn vwap(metaorder: &Metaorder) -> f64 {
    metaorder.notional() as f64 / metaorder.quantity() as f64 / crate::price::PRICE_SCALE as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairPricingPoint {
    pub key: MetaorderKey,
    pub r_vwap: f64,
    pub r_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairPricingReport {
    pub points: Vec<FairPricingPoint>,
    /// Regression of 1 + R_{t0+2T} on 1 + R_VWAP.
    pub slope: f64,
    pub intercept: f64,
    /// RMS perpendicular distance to the identity line.
    pub rms_distance: f64,
    /// Largest |R_{t0+2T} − R_VWAP|.
    pub max_deviation: f64,
    /// Metaorders without a price at t0 + 2T.
    pub excluded: usize,
}

/// (R_VWAP, R_{t0+2T}) for one metaorder, or `None` when the tape ends
/// before t0 + 2T.
pub fn fair_pricing_point(
    metaorder: &Metaorder,
    tape: &TradeTape,
) -> Result<Option<FairPricingPoint>, ImpactError> {
    check_tape(metaorder, tape)?;
    let end = metaorder.end().plus_millis(metaorder.duration_millis());
    if tape.last_timestamp().is_none_or(|last| last < end) {
        return Ok(None);
    }
    let Some(final_price) = price_at(tape, end) else {
        return Ok(None);
    };
    let p0 = reference_price(metaorder, tape).price;
    Ok(Some(FairPricingPoint {
        key: metaorder.key().clone(),
        r_vwap: return_proxy(vwap(metaorder), p0)?,
        r_final: return_proxy(final_price.price, p0)?,
    }))
}

pub fn fair_pricing_check(
    metaorders: &[Metaorder],
    tapes: &MarketTapes,
) -> Result<FairPricingReport, ImpactError> {
    if metaorders.is_empty() {
        return Err(ImpactError::Empty);
    }
    let results: Vec<Result<Option<FairPricingPoint>, ImpactError>> = metaorders
        .par_iter()
        .map(|m| {
            let key = m.key();
            match tapes.get(&key.instrument_id, key.day) {
                Some(tape) => fair_pricing_point(m, tape),
                None => Ok(None),
            }
        })
        .collect();
    let mut points = Vec::with_capacity(results.len());
    let mut excluded = 0;
    for r in results {
        match r? {
            Some(p) => points.push(p),
            None => excluded += 1,
        }
    }
    if points.is_empty() {
        return Err(ImpactError::Empty);
    }
    let xs: Vec<f64> = points.iter().map(|p| 1.0 + p.r_vwap).collect();
    let ys: Vec<f64> = points.iter().map(|p| 1.0 + p.r_final).collect();
    let (slope, intercept) = match ols(&xs, &ys) {
        Some(f) => (f.slope, f.intercept),
        None => (f64::NAN, f64::NAN),
    };
    let n = points.len() as f64;
    let rms_distance = (points
        .iter()
        .map(|p| (p.r_final - p.r_vwap).powi(2) / 2.0)
        .sum::<f64>()
        / n)
        .sqrt();
    let max_deviation = points
        .iter()
        .map(|p| (p.r_final - p.r_vwap).abs())
        .fold(0.0, f64::max);
    Ok(FairPricingReport {
        points,
        slope,
        intercept,
        rms_distance,
        max_deviation,
        excluded,
    })
}

fn preamble<W: Write>(w: &mut W, provenance: Option<&str>) -> io::Result<()> {
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    Ok(())
}

/// `phase,rescaled_time,mean_signed_impact,count,flagged` rows for the
/// chosen phases. The seam goes in a comment line.
pub fn write_curve_csv<W: Write>(
    w: W,
    curve: &ImpactCurve,
    phases: &[Phase],
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    preamble(&mut w, provenance)?;
    if let Some(s) = curve.seam() {
        writeln!(w, "# seam execution={} mid={}", s.execution, s.mid)?;
    }
    if curve.is_proxy() {
        writeln!(w, "# proxy: some prices are last trades, not mids")?;
    }
    writeln!(w, "phase,rescaled_time,mean_signed_impact,count,flagged")?;
    for p in curve.points().iter().filter(|p| phases.contains(&p.phase)) {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.phase.as_str(),
            p.rescaled_time,
            p.mean_signed_impact,
            p.count,
            p.flagged
        )?;
    }
    w.flush()
}

/// `name,prefactor,exponent,residual,point_count` rows.
pub fn write_fits_csv<W: Write>(
    w: W,
    fits: &[(&str, PowerLawFit)],
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    preamble(&mut w, provenance)?;
    writeln!(w, "name,prefactor,exponent,residual,point_count")?;
    for (name, f) in fits {
        writeln!(
            w,
            "{name},{},{},{},{}",
            f.prefactor, f.exponent, f.residual, f.point_count
        )?;
    }
    w.flush()
}

/// `statistic,value` rows.
pub fn write_statistics_csv<W: Write>(
    w: W,
    rows: &[(&str, f64)],
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    preamble(&mut w, provenance)?;
    writeln!(w, "statistic,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()
}

/// `agent_id,instrument_id,day,sign,participation,signed_impact,duration_s`.
pub fn write_sqrt_scatter_csv<W: Write>(
    w: W,
    report: &SqrtLawReport,
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    preamble(&mut w, provenance)?;
    writeln!(
        w,
        "agent_id,instrument_id,day,sign,participation,signed_impact,duration_s"
    )?;
    for p in &report.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.key.agent_id,
            p.key.instrument_id,
            p.key.day,
            p.key.side.sign(),
            p.participation,
            p.impact,
            p.duration_s
        )?;
    }
    w.flush()
}

/// `duration_s,ratio_mean,ratio_std,count`.
pub fn write_duration_buckets_csv<W: Write>(
    w: W,
    report: &SqrtLawReport,
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    preamble(&mut w, provenance)?;
    writeln!(w, "duration_s,ratio_mean,ratio_std,count")?;
    for b in &report.duration_buckets {
        writeln!(
            w,
            "{},{},{},{}",
            b.duration_s, b.ratio_mean, b.ratio_std, b.count
        )?;
    }
    w.flush()
}

/// `agent_id,instrument_id,day,sign,one_plus_r_vwap,one_plus_r_final`.
pub fn write_fair_pricing_csv<W: Write>(
    w: W,
    report: &FairPricingReport,
    provenance: Option<&str>,
) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    preamble(&mut w, provenance)?;
    writeln!(
        w,
        "agent_id,instrument_id,day,sign,one_plus_r_vwap,one_plus_r_final"
    )?;
    for p in &report.points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.key.agent_id,
            p.key.instrument_id,
            p.key.day,
            p.key.side.sign(),
            1.0 + p.r_vwap,
            1.0 + p.r_final
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Timestamp;
    use crate::farmer::{FarmerParams, ImpactSchedule};
    use crate::price::Price;
    use crate::types::{Execution, Quote, Side, Trade};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::sync::Arc;

    const T0: i64 = 1_583_136_000_000;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 2).unwrap()
    }

    fn key(side: Side) -> MetaorderKey {
        MetaorderKey {
            agent_id: Arc::from("A"),
            instrument_id: Arc::from("X"),
            side,
            day: day(),
        }
    }

    fn px(v: f64) -> Price {
        Price::from_f64(v).unwrap()
    }

    // A metaorder with one fill per second at `prices`, and a tape holding a
    // pre-trade quote, a quote at every fill and a flat relaxation at `after`.
    fn scenario(side: Side, prices: &[f64], x0: f64, after: f64) -> (Metaorder, TradeTape) {
        let execs: Vec<Execution> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| Execution::new(Timestamp(T0 + 1000 * i as i64), px(p), 10))
            .collect();
        let m = Metaorder::new(key(side), execs.clone()).unwrap();
        let half = 0.005;
        let mut quotes = vec![Quote {
            timestamp: Timestamp(T0 - 1000),
            bid: px(x0 - half),
            ask: px(x0 + half),
        }];
        let mut trades = Vec::new();
        for e in &execs {
            trades.push(Trade {
                timestamp: e.timestamp,
                price: e.rounded_price(),
                quantity: e.quantity,
            });
            quotes.push(Quote {
                timestamp: e.timestamp,
                bid: px(e.price() - half),
                ask: px(e.price() + half),
            });
        }
        let end = m.end().plus_millis(m.duration_millis());
        quotes.push(Quote {
            timestamp: m.end().plus_millis(1),
            bid: px(after - half),
            ask: px(after + half),
        });
        trades.push(Trade {
            timestamp: end,
            price: px(after),
            quantity: 1,
        });
        let tape = TradeTape::new("X", day(), trades, Some(quotes)).unwrap();
        (m, tape)
    }

    #[test]
    fn return_proxy_examples() {
        assert_eq!(return_proxy(101.0, 100.0).unwrap(), 0.01);
        assert_eq!(return_proxy(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(return_proxy(99.0, 100.0).unwrap(), -0.01);
        assert!(return_proxy(1.0, 0.0).is_err());
    }

    #[test]
    fn constant_market_is_flat() {
        let (m, tape) = scenario(Side::Buy, &[100.0; 5], 100.0, 100.0);
        let p = signed_impact_path(&m, &tape, RELAXATION_GRID).unwrap();
        assert!(p.execution.iter().chain(&p.relaxation).all(|&(_, y)| y == 0.0));
        assert_eq!(p.relaxation.len(), RELAXATION_GRID);
        assert!(!p.proxy && !p.truncated);
        assert_eq!(p.execution.last().unwrap().0, 1.0);
        assert_eq!(p.relaxation.last().unwrap().0, 2.0);
    }

    #[test]
    fn buy_on_rising_prices_is_nondecreasing() {
        let (m, tape) = scenario(Side::Buy, &[100.1, 100.2, 100.25, 100.4], 100.0, 100.2);
        let p = signed_impact_path(&m, &tape, RELAXATION_GRID).unwrap();
        for w in p.execution.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert!((p.relaxation.last().unwrap().1 - 0.002).abs() < 1e-12);
    }

    #[test]
    fn mirrored_sell_gives_same_signed_path() {
        let up = [100.1, 100.3, 100.35];
        let down: Vec<f64> = up.iter().map(|p| 200.0 - p).collect();
        let (mb, tb) = scenario(Side::Buy, &up, 100.0, 100.2);
        let (ms, ts) = scenario(Side::Sell, &down, 100.0, 99.8);
        let pb = signed_impact_path(&mb, &tb, 10).unwrap();
        let ps = signed_impact_path(&ms, &ts, 10).unwrap();
        for (a, b) in pb.execution.iter().zip(&ps.execution).chain(pb.relaxation.iter().zip(&ps.relaxation)) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_and_proxy_flags() {
        let (m, tape) = scenario(Side::Buy, &[100.0, 100.1], 100.0, 100.0);
        let short = TradeTape::new(
            "X",
            day(),
            tape.trades()[..2].to_vec(),
            None,
        )
        .unwrap();
        let p = signed_impact_path(&m, &short, 10).unwrap();
        assert!(p.truncated && p.proxy);
        assert!(p.relaxation.is_empty());
        let no_quotes = TradeTape::new("X", day(), tape.trades().to_vec(), None).unwrap();
        let p = signed_impact_path(&m, &no_quotes, 10).unwrap();
        assert!(p.proxy && !p.truncated);
    }

    #[test]
    fn bucket_examples() {
        let b = bucket_average(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0], 2).unwrap();
        assert_eq!(b, vec![(1.5, 15.0), (3.5, 35.0)]);
        let b = bucket_average(&[3.0, 1.0, 2.0], &[30.0, 10.0, 20.0], 3).unwrap();
        assert_eq!(b, vec![(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]);
        assert!(bucket_average(&[1.0], &[1.0], 2).is_err());
    }

    #[test]
    fn power_law_examples() {
        let pts: Vec<(f64, f64)> = (1..20).map(|i| (i as f64, 2.0 * (i as f64).sqrt())).collect();
        for f in [fit_power_law(&pts).unwrap(), fit_power_law_nls(&pts).unwrap()] {
            assert!((f.prefactor - 2.0).abs() < 1e-9);
            assert!((f.exponent - 0.5).abs() < 1e-9);
            assert!(f.residual < 1e-9);
        }
        let flat = [(1.0, 2.0), (2.0, 8.0), (3.0, 4.0), (4.0, 4.0)];
        let f = fit_power_law(&[(1.0, 4.0), (2.0, 4.0), (3.0, 4.0)]).unwrap();
        assert!(f.exponent.abs() < 1e-12 && (f.prefactor - 4.0).abs() < 1e-12);
        assert!(fit_power_law(&flat).is_ok());
        assert!(fit_power_law(&[(1.0, 1.0), (0.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn exact_curve_exponent() {
        let s = ImpactSchedule::new(FarmerParams::new(1.5, 1000).unwrap()).unwrap();
        let pts: Vec<(f64, f64)> = (10..=1000).map(|t| (t as f64, s.immediate(t).unwrap())).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.exponent - 0.5).abs() < 0.05, "{f:?}");
    }

    fn exact_path(n: usize, s: &ImpactSchedule) -> ImpactPath {
        let peak = s.immediate(n).unwrap();
        ImpactPath {
            key: key(Side::Buy),
            length: n,
            duration_s: n as f64,
            participation: Some(0.1),
            reference: 100.0,
            execution: (1..=n)
                .map(|t| (t as f64 / n as f64, s.immediate(t).unwrap()))
                .collect(),
            relaxation: (1..=10)
                .map(|j| (1.0 + j as f64 / 10.0, s.permanent(n).unwrap()))
                .collect(),
            seam: Some(Seam {
                execution: peak,
                mid: peak,
            }),
            proxy: false,
            truncated: false,
        }
    }

    #[test]
    fn temporary_and_permanent_on_exact_curve() {
        let s = ImpactSchedule::new(FarmerParams::new(1.5, 100).unwrap()).unwrap();
        let path = exact_path(100, &s);
        let opts = DynamicsOptions {
            execution_buckets: 100,
            relaxation_buckets: 10,
        };
        let curve = impact_dynamics(std::slice::from_ref(&path), &opts).unwrap();
        assert_eq!(temporary_impact(&curve).unwrap(), s.immediate(100).unwrap());
        assert_eq!(permanent_impact(&curve).unwrap(), s.permanent(100).unwrap());
        // Identical paths pool to the single path.
        let many = vec![path.clone(); 7];
        let pooled = impact_dynamics(&many, &opts).unwrap();
        for (a, b) in pooled.points().iter().zip(curve.points()) {
            assert!((a.rescaled_time - b.rescaled_time).abs() < 1e-12);
            assert!((a.mean_signed_impact - b.mean_signed_impact).abs() < 1e-12);
            assert_eq!(a.count, 7 * b.count);
        }
    }

    #[test]
    fn short_terminal_bucket_is_skipped() {
        let s = ImpactSchedule::new(FarmerParams::new(1.5, 10).unwrap()).unwrap();
        let mut paths = vec![exact_path(10, &s)];
        for _ in 0..5 {
            let mut p = exact_path(2, &s);
            p.execution[1].1 = 99.0;
            paths.push(p);
        }
        let opts = DynamicsOptions {
            execution_buckets: 3,
            relaxation_buckets: 10,
        };
        let curve = impact_dynamics(&paths, &opts).unwrap();
        let exec: Vec<_> = curve.phase(Phase::Execution).collect();
        assert!(exec[2].flagged);
        assert_eq!(temporary_impact(&curve).unwrap(), exec[1].mean_signed_impact);
    }

    #[test]
    fn flat_and_zero_curves() {
        let pts = |y: f64| {
            vec![
                CurvePoint {
                    rescaled_time: 1.0,
                    mean_signed_impact: y,
                    count: 3,
                    phase: Phase::Execution,
                    flagged: false,
                },
                CurvePoint {
                    rescaled_time: 2.0,
                    mean_signed_impact: y,
                    count: 3,
                    phase: Phase::Relaxation,
                    flagged: false,
                },
            ]
        };
        let zero = ImpactCurve::new(pts(0.0)).unwrap();
        assert_eq!(temporary_impact(&zero).unwrap(), 0.0);
        let same = ImpactCurve::new(pts(0.3)).unwrap();
        assert_eq!(permanent_impact(&same).unwrap() / temporary_impact(&same).unwrap(), 1.0);
        assert!(permanent_impact(&ImpactCurve::default()).is_err());
    }

    #[test]
    fn vwap_examples() {
        let m = Metaorder::new(
            key(Side::Buy),
            vec![
                Execution::new(Timestamp(T0), px(10.0), 100),
                Execution::new(Timestamp(T0 + 1000), px(10.3), 50),
            ],
        )
        .unwrap();
        assert_eq!(vwap(&m), 10.1);
        let (flat, _) = scenario(Side::Buy, &[42.5; 4], 42.5, 42.5);
        assert_eq!(vwap(&flat), 42.5);
    }

    #[test]
    fn fair_pricing_on_hand_built_tape() {
        // VWAP 100.2; final mid 100.2 → on the line.
        let (m, tape) = scenario(Side::Buy, &[100.1, 100.2, 100.3], 100.0, 100.2);
        let p = fair_pricing_point(&m, &tape).unwrap().unwrap();
        assert!((p.r_vwap - p.r_final).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bucket_means_conserve_totals(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..300),
            k in 1usize..40,
        ) {
            prop_assume!(k <= pts.len());
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let tagged = pts.iter().map(|&(x, y)| (x, y, false)).collect();
            let b = bucket_tagged(tagged, k).unwrap();
            let n = pts.len() as f64;
            let mx: f64 = b.iter().map(|b| b.x * b.count as f64).sum::<f64>() / n;
            let my: f64 = b.iter().map(|b| b.y * b.count as f64).sum::<f64>() / n;
            prop_assert!((mx - xs.iter().sum::<f64>() / n).abs() < 1e-9);
            prop_assert!((my - ys.iter().sum::<f64>() / n).abs() < 1e-9);
            for w in b.windows(2) {
                prop_assert!(w[0].x <= w[1].x);
                prop_assert!(w[0].count.abs_diff(w[1].count) <= 1);
            }
        }

        #[test]
        fn bucketing_ignores_input_order(
            pts in prop::collection::vec((0u32..1000, -100.0f64..100.0), 2..100),
            k in 1usize..10,
        ) {
            prop_assume!(k <= pts.len());
            // Distinct x so the sort is unambiguous.
            let mut uniq = pts.clone();
            uniq.sort_by_key(|p| p.0);
            uniq.dedup_by_key(|p| p.0);
            prop_assume!(k <= uniq.len());
            let xs: Vec<f64> = uniq.iter().map(|p| p.0 as f64).collect();
            let ys: Vec<f64> = uniq.iter().map(|p| p.1).collect();
            let rx: Vec<f64> = xs.iter().rev().copied().collect();
            let ry: Vec<f64> = ys.iter().rev().copied().collect();
            prop_assert_eq!(bucket_average(&xs, &ys, k).unwrap(), bucket_average(&rx, &ry, k).unwrap());
        }

        #[test]
        fn larger_paths_give_larger_curves(
            ys in prop::collection::vec(-1.0f64..1.0, 20),
            bump in prop::collection::vec(0.0f64..1.0, 20),
            k in 1usize..20,
        ) {
            let xs: Vec<f64> = (0..20).map(|i| (i % 7) as f64).collect();
            let higher: Vec<f64> = ys.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let lo = bucket_average(&xs, &ys, k).unwrap();
            let hi = bucket_average(&xs, &higher, k).unwrap();
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(b.1 >= a.1 - 1e-12);
            }
        }

        #[test]
        fn power_law_recovered(a in 0.01f64..100.0, b in -2.0f64..2.0) {
            let pts: Vec<(f64, f64)> = (1..30).map(|i| {
                let x = i as f64 * 0.37;
                (x, a * x.powf(b))
            }).collect();
            let f = fit_power_law(&pts).unwrap();
            prop_assert!(((f.prefactor - a) / a).abs() < 1e-6);
            prop_assert!((f.exponent - b).abs() < 1e-6);
        }
    }
}
