//! A synthetic market whose prices follow the impact model exactly, plus
//! noise. It writes the same order-log and tape formats the pipeline reads,
//! and a sidecar with every metaorder's true parameters.
//!
//! Each metaorder i gets its own agent `A{i:07}`, instrument `SYN{i%50}`
//! and day `start_day + i/50`, so no two metaorders share a tape.
//!
//! Prices, for ε = ±1 and amplitude A:
//!
//! - before t0: mid X₀,
//! - at fill t: S_t = X₀·(1 + ε·(A·𝓘_t/𝓘_N + W_t)), W a Gaussian random walk
//!   with step σ_η (no 𝓘_N division in raw mode),
//! - after the last fill the mid decays geometrically from S_N to
//!   X_N = X₀·(1 + ε·(A·I_N/𝓘_N + W_N)), reaching it after `decay_steps`
//!   steps of the relaxation grid, and stays there through t0 + 2T.

use std::io::{self, Write};
use std::sync::Arc;

use chrono::{Days, NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::{Timestamp, TradingCalendar};
use crate::farmer::{hurwitz_zeta, FarmerError, FarmerParams, ImpactSchedule, LengthSupport};
use crate::ingestion::{
    write_fill_rows, write_market_tape, write_order_log, write_tape_rows, IngestError, TapeRecord,
};
use crate::price::Price;
use crate::types::{Fill, OrderClass, Side};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid generator setting: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] FarmerError),
    #[error("sampled length {n} exceeds horizon {horizon}")]
    HorizonOverflow { n: usize, horizon: usize },
    #[error("price out of range")]
    PriceRange,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// How impact units become returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amplitude {
    /// return = scale·𝓘_t.
    Raw { scale: f64 },
    /// return = scale·(Q/V)^δ·(T/T_ref)^γ·𝓘_t/𝓘_N, so the peak impact follows
    /// a planted participation and duration law.
    PeakNormalized {
        scale: f64,
        delta: f64,
        gamma: f64,
        t_ref_s: f64,
    },
}

impl Default for Amplitude {
    fn default() -> Self {
        Amplitude::PeakNormalized {
            scale: 1e-2,
            delta: 0.5,
            gamma: 0.0,
            t_ref_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LotSizes {
    /// Every child order has the same size.
    Equal(u64),
    /// Sizes are 1 + ⌊Exp(mean)⌋.
    Exponential { mean: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub beta: f64,
    pub count: usize,
    /// σ_η, return units per fill.
    pub noise: f64,
    /// Mean of the exponential part of the gap between fills (ms); every
    /// gap also has a fixed 1000 ms so fills fall in distinct seconds.
    pub mean_gap_ms: f64,
    pub decay_steps: usize,
    pub decay_rate: f64,
    pub buy_probability: f64,
    pub base_price: f64,
    pub seed: u64,
    /// Tape volume over the metaorder's lifetime is Q times a log-uniform
    /// multiplier in this range.
    pub volume_multiplier: (f64, f64),
    pub horizon: usize,
    pub amplitude: Amplitude,
    pub lots: LotSizes,
    pub relaxation_grid: usize,
    pub support: LengthSupport,
    pub r0_plus: f64,
    pub r1_plus: f64,
    pub start_day: NaiveDate,
    pub calendar: TradingCalendar,
}

pub const INSTRUMENTS: usize = 50;
const PRE_TRADE_MS: i64 = 1000;
const MIN_GAP_MS: i64 = 1000;
const HALF_SPREAD: f64 = 0.005;

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            beta: 1.5,
            count: 1000,
            noise: 2e-4,
            mean_gap_ms: 2000.0,
            decay_steps: 20,
            decay_rate: 0.8,
            buy_probability: 0.5,
            base_price: 100.0,
            seed: 7,
            volume_multiplier: (3.0, 30.0),
            horizon: 1000,
            amplitude: Amplitude::default(),
            lots: LotSizes::Exponential { mean: 100.0 },
            relaxation_grid: crate::impact::RELAXATION_GRID,
            support: LengthSupport::FromTwo,
            r0_plus: 1.0,
            r1_plus: 1.0,
            start_day: NaiveDate::from_ymd_opt(2020, 3, 2).expect("valid date"),
            calendar: TradingCalendar::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::Config(m.to_string()));
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be non-negative");
        }
        if !(self.mean_gap_ms > 0.0) {
            return bad("mean gap must be positive");
        }
        if self.decay_steps == 0 {
            return bad("decay steps must be positive");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return bad("decay rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.buy_probability) {
            return bad("buy probability must lie in [0, 1]");
        }
        if !(self.base_price > 0.0) {
            return bad("base price must be positive");
        }
        let (lo, hi) = self.volume_multiplier;
        if !(lo >= 1.0 && hi >= lo) {
            return bad("volume multiplier range must satisfy 1 <= lo <= hi");
        }
        if self.relaxation_grid == 0 {
            return bad("relaxation grid must be positive");
        }
        match self.lots {
            LotSizes::Equal(0) => return bad("lot size must be positive"),
            LotSizes::Exponential { mean } if !(mean > 0.0) => {
                return bad("lot mean must be positive")
            }
            _ => {}
        }
        let scale_ok = match self.amplitude {
            Amplitude::Raw { scale } => scale > 0.0,
            Amplitude::PeakNormalized { scale, t_ref_s, .. } => scale > 0.0 && t_ref_s > 0.0,
        };
        if !scale_ok {
            return bad("amplitude scale must be positive");
        }
        self.farmer_params()?;
        Ok(())
    }

    pub fn farmer_params(&self) -> Result<FarmerParams, SyntheticError> {
        let p = FarmerParams::new(self.beta, self.horizon)?
            .with_support(self.support)
            .with_increments(self.r0_plus, self.r1_plus);
        p.validate()?;
        Ok(p)
    }

    /// Applies one `key=value` setting, as found in config files.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SyntheticError> {
        let err = || SyntheticError::Config(format!("bad value {value:?} for {key}"));
        let f = || value.parse::<f64>().map_err(|_| err());
        let u = || value.parse::<usize>().map_err(|_| err());
        match key {
            "beta" => self.beta = f()?,
            "count" => self.count = u()?,
            "noise" => self.noise = f()?,
            "mean_gap_ms" => self.mean_gap_ms = f()?,
            "decay_steps" => self.decay_steps = u()?,
            "decay_rate" => self.decay_rate = f()?,
            "buy_probability" => self.buy_probability = f()?,
            "base_price" => self.base_price = f()?,
            "seed" => self.seed = value.parse().map_err(|_| err())?,
            "volume_multiplier_min" => self.volume_multiplier.0 = f()?,
            "volume_multiplier_max" => self.volume_multiplier.1 = f()?,
            "horizon" => self.horizon = u()?,
            "relaxation_grid" => self.relaxation_grid = u()?,
            "r0_plus" => self.r0_plus = f()?,
            "r1_plus" => self.r1_plus = f()?,
            "start_day" => self.start_day = value.parse().map_err(|_| err())?,
            "timezone" => {
                self.calendar = TradingCalendar::from_name(value).ok_or_else(err)?;
            }
            "support" => {
                self.support = match value {
                    "from_one" => LengthSupport::FromOne,
                    "from_two" => LengthSupport::FromTwo,
                    _ => return Err(err()),
                }
            }
            "lots" => {
                self.lots = match value.split_once(':') {
                    Some(("equal", n)) => LotSizes::Equal(n.parse().map_err(|_| err())?),
                    Some(("exponential", m)) => LotSizes::Exponential {
                        mean: m.parse().map_err(|_| err())?,
                    },
                    _ => return Err(err()),
                }
            }
            "amplitude" => {
                self.amplitude = match value {
                    "raw" => Amplitude::Raw {
                        scale: self.amplitude_scale(),
                    },
                    "peak_normalized" => Amplitude::PeakNormalized {
                        scale: self.amplitude_scale(),
                        delta: 0.5,
                        gamma: 0.0,
                        t_ref_s: 60.0,
                    },
                    _ => return Err(err()),
                }
            }
            "scale" => match &mut self.amplitude {
                Amplitude::Raw { scale } | Amplitude::PeakNormalized { scale, .. } => {
                    *scale = f()?
                }
            },
            "delta" | "gamma" | "t_ref_s" => match &mut self.amplitude {
                Amplitude::PeakNormalized {
                    delta,
                    gamma,
                    t_ref_s,
                    ..
                } => {
                    let v = f()?;
                    match key {
                        "delta" => *delta = v,
                        "gamma" => *gamma = v,
                        _ => *t_ref_s = v,
                    }
                }
                Amplitude::Raw { .. } => {
                    return Err(SyntheticError::Config(format!(
                        "{key} needs amplitude=peak_normalized"
                    )))
                }
            },
            _ => return Err(SyntheticError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn amplitude_scale(&self) -> f64 {
        match self.amplitude {
            Amplitude::Raw { scale } | Amplitude::PeakNormalized { scale, .. } => scale,
        }
    }
}

// Lengths below this are drawn from a table; above it by bisection on the
// Hurwitz tail.
const TABLE_LIMIT: usize = 10_000;

/// Inverse-CDF sampler for p_n ∝ n^{−(β+1)} on 2 ≤ n ≤ max (or unbounded).
#[derive(Debug, Clone)]
pub struct LengthSampler {
    s: f64,
    max: Option<usize>,
    // Cumulative unnormalised mass Σ_{k=2}^{n} k^{−s}, for n = 2..=table end.
    cumulative: Vec<f64>,
    // Mass beyond `max`: ζ(s, max+1), or 0 when unbounded.
    cut: f64,
    total: f64,
}

impl LengthSampler {
    pub fn new(beta: f64, max: Option<usize>) -> Result<Self, SyntheticError> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(SyntheticError::Model(FarmerError::InvalidBeta(beta)));
        }
        if let Some(m) = max {
            if m < 2 {
                return Err(SyntheticError::Model(FarmerError::HorizonTooSmall(m)));
            }
        }
        let s = 1.0 + beta;
        let end = max.unwrap_or(usize::MAX).min(TABLE_LIMIT);
        let mut acc = 0.0;
        let cumulative = (2..=end)
            .map(|n| {
                acc += (n as f64).powf(-s);
                acc
            })
            .collect();
        let cut = match max {
            Some(m) => hurwitz_zeta(s, m as f64 + 1.0)?,
            None => 0.0,
        };
        let total = hurwitz_zeta(s, 2.0)? - cut;
        Ok(LengthSampler {
            s,
            max,
            cumulative,
            cut,
            total,
        })
    }

    /// P(N = n) under the truncated law.
    pub fn probability(&self, n: usize) -> f64 {
        if n < 2 || self.max.is_some_and(|m| n > m) {
            return 0.0;
        }
        (n as f64).powf(-self.s) / self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let target = rng.gen::<f64>() * self.total;
        let idx = self.cumulative.partition_point(|&c| c < target);
        if idx < self.cumulative.len() {
            return idx + 2;
        }
        // Survival beyond the table: find the smallest n with
        // ζ(s, 2) − ζ(s, n + 1) ≥ target, i.e. ζ(s, n + 1) − cut ≤ total − target.
        let remaining = self.total - target;
        let survival = |n: usize| hurwitz_zeta(self.s, n as f64 + 1.0).expect("s > 1") - self.cut;
        let mut lo = self.cumulative.len() + 1;
        let mut hi = match self.max {
            Some(m) => m,
            None => {
                let mut h = lo.max(2) * 2;
                while survival(h) > remaining && h < usize::MAX / 4 {
                    h *= 2;
                }
                h
            }
        };
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if survival(mid) <= remaining {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }
}

/// One draw of N ≥ 2 from the zeta law with no upper cut.
pub fn sample_metaorder_length<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> Result<usize, SyntheticError> {
    Ok(LengthSampler::new(beta, None)?.sample(rng))
}

/// True parameters of one generated metaorder.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub agent_id: Arc<str>,
    pub instrument_id: Arc<str>,
    pub day: NaiveDate,
    pub side: Side,
    pub n: usize,
    pub q: u64,
    pub v: u64,
    pub t0: Timestamp,
    pub duration_ms: i64,
    pub beta: f64,
    pub amplitude: f64,
    pub x0: f64,
}

impl GroundTruth {
    pub fn participation(&self) -> f64 {
        self.q as f64 / self.v as f64
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedMetaorder {
    pub truth: GroundTruth,
    pub fills: Vec<Fill>,
    /// Time-sorted tape lines for this metaorder's instrument and day.
    pub tape: Vec<TapeRecord>,
    /// Noise-free signed impact at each fill, in volume time.
    pub exact_execution: Vec<(f64, f64)>,
    /// Noise-free signed impact on the relaxation grid.
    pub exact_relaxation: Vec<(f64, f64)>,
}

/// Everything shared by the metaorders of one corpus.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    schedule: ImpactSchedule,
    sampler: LengthSampler,
}

fn price(v: f64) -> Result<Price, SyntheticError> {
    Price::from_f64(v)
        .filter(|p| p.is_positive())
        .ok_or(SyntheticError::PriceRange)
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self, SyntheticError> {
        config.validate()?;
        let schedule = ImpactSchedule::new(config.farmer_params()?)?;
        let sampler = LengthSampler::new(config.beta, Some(config.horizon))?;
        Ok(Generator {
            config,
            schedule,
            sampler,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn schedule(&self) -> &ImpactSchedule {
        &self.schedule
    }

    pub fn sampler(&self) -> &LengthSampler {
        &self.sampler
    }

    /// The RNG stream of metaorder `index`.
    pub fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Simulates metaorder `index` with its own RNG stream.
    pub fn simulate(&self, index: usize) -> Result<SimulatedMetaorder, SyntheticError> {
        let mut rng = self.rng(index);
        let side = if rng.gen::<f64>() < self.config.buy_probability {
            Side::Buy
        } else {
            Side::Sell
        };
        self.simulate_with(index, side, &mut rng)
    }

    /// Simulates metaorder `index` with a fixed side.
    pub fn simulate_with<R: Rng + ?Sized>(
        &self,
        index: usize,
        side: Side,
        rng: &mut R,
    ) -> Result<SimulatedMetaorder, SyntheticError> {
        let c = &self.config;
        let n = self.sampler.sample(rng);
        if n > c.horizon {
            return Err(SyntheticError::HorizonOverflow {
                n,
                horizon: c.horizon,
            });
        }

        let lots: Vec<u64> = match c.lots {
            LotSizes::Equal(q) => vec![q; n],
            LotSizes::Exponential { mean } => {
                let exp = Exp::new(1.0 / mean).expect("positive mean");
                (0..n).map(|_| 1 + exp.sample(rng).floor() as u64).collect()
            }
        };
        let gap = Exp::new(1.0 / c.mean_gap_ms).expect("positive mean gap");
        let day = c
            .start_day
            .checked_add_days(Days::new((index / INSTRUMENTS) as u64))
            .ok_or_else(|| SyntheticError::Config("day out of range".into()))?;
        let t0 = c
            .calendar
            .instant(day, NaiveTime::from_hms_opt(9, 0, 0).expect("valid time"))
            .ok_or_else(|| SyntheticError::Config("09:00 does not exist on day".into()))?;
        let mut times = Vec::with_capacity(n);
        let mut t = t0;
        for i in 0..n {
            if i > 0 {
                t = t.plus_millis(MIN_GAP_MS + gap.sample(rng).floor() as i64);
            }
            times.push(t);
        }
        let duration_ms = times[n - 1].millis() - t0.millis();

        let q: u64 = lots.iter().sum();
        let (lo, hi) = c.volume_multiplier;
        let multiplier = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let v = ((q as f64 * multiplier).round() as u64).max(q);

        let peak = self.schedule.immediate(n)?;
        let (amplitude, per_unit) = match c.amplitude {
            Amplitude::Raw { scale } => (scale * peak, scale),
            Amplitude::PeakNormalized {
                scale,
                delta,
                gamma,
                t_ref_s,
            } => {
                let a = scale
                    * (q as f64 / v as f64).powf(delta)
                    * (duration_ms as f64 / 1000.0 / t_ref_s).powf(gamma);
                (a, a / peak)
            }
        };

        let eps = f64::from(side.sign());
        let x0 = c.base_price;
        let noise = Normal::new(0.0, c.noise).expect("finite noise");
        let mut walk = 0.0;
        let mut exec_prices = Vec::with_capacity(n);
        let mut exact_execution = Vec::with_capacity(n);
        let mut cumulative = 0u64;
        for (i, &lot) in lots.iter().enumerate() {
            if c.noise > 0.0 {
                walk += noise.sample(rng);
            }
            let imp = per_unit * self.schedule.immediate(i + 1)?;
            exec_prices.push(price(x0 * (1.0 + eps * (imp + walk)))?);
            cumulative += lot;
            exact_execution.push((cumulative as f64 / q as f64, imp));
        }
        let final_imp = per_unit * self.schedule.permanent(n)?;
        let peak_return = per_unit * peak + walk;
        let final_return = final_imp + walk;

        let agent_id: Arc<str> = Arc::from(format!("A{index:07}"));
        let instrument_id: Arc<str> = Arc::from(format!("SYN{}", index % INSTRUMENTS));
        let venue: Arc<str> = Arc::from("XPAR");
        let fills: Vec<Fill> = (0..n)
            .map(|i| Fill {
                timestamp: times[i],
                day,
                agent_id: agent_id.clone(),
                instrument_id: instrument_id.clone(),
                venue_id: venue.clone(),
                side,
                price: exec_prices[i],
                quantity: lots[i],
                order_class: OrderClass::AggressiveLimit,
            })
            .collect();

        let quote = |mid: f64| -> Result<(Price, Price), SyntheticError> {
            Ok((price(mid - HALF_SPREAD)?, price(mid + HALF_SPREAD)?))
        };
        let mut tape = Vec::with_capacity(3 * n + c.decay_steps + 2);
        tape.push(TapeRecord {
            timestamp: t0.plus_millis(-PRE_TRADE_MS),
            instrument_id: instrument_id.clone(),
            trade: None,
            quote: Some(quote(x0)?),
        });
        let background = v - q;
        let slots = (n - 1) as u64;
        for i in 0..n {
            tape.push(TapeRecord {
                timestamp: times[i],
                instrument_id: instrument_id.clone(),
                trade: Some((exec_prices[i], lots[i])),
                quote: Some(quote(exec_prices[i].to_f64())?),
            });
            if i + 1 < n {
                let share = background / slots + u64::from((i as u64) < background % slots);
                if share > 0 {
                    tape.push(TapeRecord {
                        timestamp: times[i].plus_millis(1),
                        instrument_id: instrument_id.clone(),
                        trade: Some((exec_prices[i], share)),
                        quote: None,
                    });
                }
            }
        }

        let m = c.relaxation_grid;
        let k = c.decay_steps.min(m);
        let rho_k = c.decay_rate.powi(k as i32);
        let decay = |j: usize| -> f64 {
            if j >= k {
                0.0
            } else {
                (c.decay_rate.powi(j as i32) - rho_k) / (1.0 - rho_k)
            }
        };
        let relax_time =
            |j: usize| times[n - 1].plus_millis((i128::from(duration_ms) * j as i128 / m as i128) as i64);
        let mut last_written = times[n - 1];
        for j in (1..=k).chain(std::iter::once(m)) {
            let at = relax_time(j);
            if at <= last_written {
                continue;
            }
            let r = final_return + (peak_return - final_return) * decay(j);
            tape.push(TapeRecord {
                timestamp: at,
                instrument_id: instrument_id.clone(),
                trade: None,
                quote: Some(quote(x0 * (1.0 + eps * r))?),
            });
            last_written = at;
        }
        tape.sort_by_key(|r| r.timestamp);

        let exact_relaxation = (1..=m)
            .map(|j| {
                let r = final_imp + (per_unit * peak - final_imp) * decay(j);
                (1.0 + j as f64 / m as f64, r)
            })
            .collect();

        Ok(SimulatedMetaorder {
            truth: GroundTruth {
                agent_id,
                instrument_id,
                day,
                side,
                n,
                q,
                v,
                t0,
                duration_ms,
                beta: c.beta,
                amplitude,
                x0,
            },
            fills,
            tape,
            exact_execution,
            exact_relaxation,
        })
    }
}

/// Simulates one metaorder of metaorder index 0 under `config`.
pub fn simulate_metaorder(config: &GeneratorConfig) -> Result<SimulatedMetaorder, SyntheticError> {
    Generator::new(config.clone())?.simulate(0)
}

pub const SIDECAR_COLUMNS: [&str; 12] = [
    "agent_id",
    "instrument_id",
    "day",
    "sign",
    "n",
    "q",
    "v",
    "t0_ms",
    "duration_ms",
    "beta",
    "amplitude",
    "x0",
];

fn write_sidecar_rows<W: Write>(w: &mut W, batch: &[SimulatedMetaorder]) -> io::Result<()> {
    for s in batch {
        let t = &s.truth;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            t.agent_id,
            t.instrument_id,
            t.day,
            t.side.sign(),
            t.n,
            t.q,
            t.v,
            t.t0,
            t.duration_ms,
            t.beta,
            t.amplitude,
            t.x0
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusSummary {
    pub metaorders: usize,
    pub fills: usize,
    pub tape_lines: usize,
}

const BATCH: usize = 4096;

/// Simulates `config.count` metaorders in parallel and writes the order log,
/// the six-column tape and the ground-truth sidecar sequentially.
/// `visit` sees every simulated metaorder in index order.
pub fn generate_corpus_with<O: Write, T: Write, S: Write>(
    config: &GeneratorConfig,
    orders: O,
    tape: T,
    sidecar: S,
    provenance: Option<&str>,
    mut visit: impl FnMut(&SimulatedMetaorder),
) -> Result<CorpusSummary, SyntheticError> {
    let generator = Generator::new(config.clone())?;
    let mut orders = io::BufWriter::new(orders);
    let mut tape = io::BufWriter::new(tape);
    let mut sidecar = io::BufWriter::new(sidecar);
    write_order_log(&mut orders, std::iter::empty(), provenance)?;
    write_market_tape(&mut tape, std::iter::empty(), true, provenance)?;
    if let Some(p) = provenance {
        writeln!(sidecar, "# {p}")?;
    }
    writeln!(sidecar, "{}", SIDECAR_COLUMNS.join(","))?;

    let mut summary = CorpusSummary::default();
    let mut start = 0;
    while start < config.count {
        let end = (start + BATCH).min(config.count);
        let batch: Vec<SimulatedMetaorder> = (start..end)
            .into_par_iter()
            .map(|i| generator.simulate(i))
            .collect::<Result<_, _>>()?;
        for s in &batch {
            write_fill_rows(&mut orders, &s.fills)?;
            write_tape_rows(&mut tape, &s.tape, true)?;
            summary.fills += s.fills.len();
            summary.tape_lines += s.tape.len();
            visit(s);
        }
        write_sidecar_rows(&mut sidecar, &batch)?;
        summary.metaorders += batch.len();
        start = end;
    }
    orders.flush()?;
    tape.flush()?;
    sidecar.flush()?;
    Ok(summary)
}

pub fn generate_corpus<O: Write, T: Write, S: Write>(
    config: &GeneratorConfig,
    orders: O,
    tape: T,
    sidecar: S,
    provenance: Option<&str>,
) -> Result<CorpusSummary, SyntheticError> {
    generate_corpus_with(config, orders, tape, sidecar, provenance, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::signed_impact_path;
    use crate::ingestion::{parse_market_tape, parse_order_log};
    use crate::reconstruction::{enrich_with_market_volume, reconstruct_metaorders};

    fn noiseless() -> GeneratorConfig {
        GeneratorConfig {
            noise: 0.0,
            count: 20,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn sampler_never_below_two_and_respects_cap() {
        let s = LengthSampler::new(1.5, Some(50)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let n = s.sample(&mut rng);
            assert!((2..=50).contains(&n));
        }
        let total: f64 = (2..=50).map(|n| s.probability(n)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_sampler_reaches_tail() {
        let s = LengthSampler::new(0.5, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let big = (0..20_000).map(|_| s.sample(&mut rng)).max().unwrap();
        assert!(big > TABLE_LIMIT, "{big}");
        // The tail search lands on the exact inverse CDF.
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let n = sample_metaorder_length(1.5, &mut r).unwrap();
        assert!(n >= 2);
    }

    #[test]
    fn noiseless_path_matches_model() {
        let cfg = noiseless();
        let g = Generator::new(cfg).unwrap();
        for i in 0..20 {
            let sim = g.simulate(i).unwrap();
            let m = reconstruct_metaorders(&sim.fills).remove(0);
            let records = sim.tape.clone();
            let mut buf = Vec::new();
            write_market_tape(&mut buf, &records, true, None).unwrap();
            let tapes = parse_market_tape(buf.as_slice(), &TradingCalendar::default()).unwrap();
            let tape = tapes.get(&sim.truth.instrument_id, sim.truth.day).unwrap();
            let m = enrich_with_market_volume(m, tape).unwrap();
            assert_eq!(m.market_volume(), Some(sim.truth.v));
            let path = signed_impact_path(&m, tape, g.config().relaxation_grid).unwrap();
            assert!(!path.proxy && !path.truncated);
            for (a, b) in path.execution.iter().zip(&sim.exact_execution) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-9, "{a:?} {b:?}");
            }
            for (a, b) in path.relaxation.iter().zip(&sim.exact_relaxation) {
                assert!((a.0 - b.0).abs() < 1e-12);
                assert!((a.1 - b.1).abs() < 1e-9, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn buy_and_sell_mirror() {
        let g = Generator::new(GeneratorConfig::default()).unwrap();
        let b = g.simulate_with(3, Side::Buy, &mut g.rng(3)).unwrap();
        let s = g.simulate_with(3, Side::Sell, &mut g.rng(3)).unwrap();
        let to_path = |sim: &SimulatedMetaorder| {
            let m = reconstruct_metaorders(&sim.fills).remove(0);
            let tapes = {
                let mut buf = Vec::new();
                write_market_tape(&mut buf, &sim.tape, true, None).unwrap();
                parse_market_tape(buf.as_slice(), &TradingCalendar::default()).unwrap()
            };
            let tape = tapes.get(&sim.truth.instrument_id, sim.truth.day).unwrap();
            signed_impact_path(&m, tape, 50).unwrap()
        };
        let (pb, ps) = (to_path(&b), to_path(&s));
        for (x, y) in pb
            .execution
            .iter()
            .zip(&ps.execution)
            .chain(pb.relaxation.iter().zip(&ps.relaxation))
        {
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_is_deterministic_and_parses() {
        let cfg = GeneratorConfig {
            count: 300,
            ..GeneratorConfig::default()
        };
        let run = || {
            let (mut o, mut t, mut s) = (Vec::new(), Vec::new(), Vec::new());
            generate_corpus(&cfg, &mut o, &mut t, &mut s, Some("metaimpact simulate test")).unwrap();
            (o, t, s)
        };
        let a = run();
        assert_eq!(a, run());
        let log = parse_order_log(a.0.as_slice(), &cfg.calendar).unwrap();
        assert!(log.rejections.is_empty());
        let tapes = parse_market_tape(a.1.as_slice(), &cfg.calendar).unwrap();
        assert!(tapes.rejections.is_empty());
        assert_eq!(tapes.len(), 300);
        let ms = reconstruct_metaorders(&log.fills);
        assert_eq!(ms.len(), 300);
        let sidecar = String::from_utf8(a.2).unwrap();
        assert_eq!(sidecar.lines().count(), 302);
    }

    #[test]
    fn config_keys() {
        let mut c = GeneratorConfig::default();
        c.set("beta", "1.2").unwrap();
        c.set("lots", "equal:100").unwrap();
        c.set("gamma", "0.2").unwrap();
        assert_eq!(c.beta, 1.2);
        assert_eq!(c.lots, LotSizes::Equal(100));
        assert!(matches!(c.amplitude, Amplitude::PeakNormalized { gamma, .. } if gamma == 0.2));
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("beta", "x").is_err());
        c.set("buy_probability", "2").unwrap();
        assert!(c.validate().is_err());
    }
}
