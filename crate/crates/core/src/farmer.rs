//! The fair-pricing impact model: metaorder lengths follow a zeta law,
//! a market maker prices each child order so that prices are a martingale,
//! and the parent pays on average the price it leaves behind.
//!
//! Everything is deterministic and evaluated in closed form from the
//! Hurwitz zeta function ζ(s, a) = Σ_{k≥0} (k + a)^{−s}.
//!
//! Notation used below, with s = 1 + β:
//!
//! - 𝒫_t = ζ(s, t+1)/ζ(s, t), the probability that a metaorder which reached
//!   length t continues,
//! - R_t⁺ / R_t⁻, the price increment when the metaorder continues / the
//!   reversion when it stops after t orders,
//! - 𝓘_t = S_t − X₀, the immediate impact while executing,
//! - I_N = 𝓘_N − R_N⁻, the permanent impact after completion.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FarmerError {
    #[error("zeta diverges for s = {0} (need s > 1)")]
    Divergent(f64),
    #[error("zeta offset a = {0} must be positive")]
    InvalidOffset(f64),
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("horizon must be at least 2, got {0}")]
    HorizonTooSmall(usize),
    #[error("increments R0+ and R1+ must be positive and finite")]
    InvalidIncrement,
    #[error("t = {t} outside 1..={horizon}")]
    OutOfRange { t: usize, horizon: usize },
    #[error("recursive and closed-form R+ disagree at t = {t} (relative error {relative:e})")]
    ClosedFormMismatch { t: usize, relative: f64 },
}

// B_2, B_4, ..., B_24.
const BERNOULLI: [f64; 12] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
];

// Direct summation runs until the offset reaches this value.
const EM_START: f64 = 20.0;

/// Hurwitz zeta ζ(s, a) for s > 1, a > 0.
///
/// Sums terms directly until the offset reaches 20, then closes with the
/// Euler–Maclaurin tail. Relative accuracy is close to machine precision.
pub fn hurwitz_zeta(s: f64, a: f64) -> Result<f64, FarmerError> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(FarmerError::Divergent(s));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(FarmerError::InvalidOffset(a));
    }
    let n_direct = if a < EM_START {
        (EM_START - a).ceil() as usize
    } else {
        0
    };
    let b = a + n_direct as f64;

    let mut tail = b.powf(1.0 - s) / (s - 1.0) + 0.5 * b.powf(-s);
    // (s)_{2j−1} b^{−s−2j+1} / (2j)!, starting at j = 1.
    let mut factor = s * b.powf(-s - 1.0) / 2.0;
    let mut correction = 0.0;
    for (j, &b2j) in BERNOULLI.iter().enumerate() {
        let term = b2j * factor;
        correction += term;
        if term.abs() < 1e-18 * tail.abs() {
            break;
        }
        let k = 2.0 * (j as f64 + 1.0);
        factor *= (s + k - 1.0) * (s + k) / ((k + 1.0) * (k + 2.0) * b * b);
    }
    tail += correction;

    let mut sum = tail;
    for k in (0..n_direct).rev() {
        sum += (a + k as f64).powf(-s);
    }
    Ok(sum)
}

/// 1 − 𝒫_t = t^{−(1+β)}/ζ(1+β, t), evaluated without cancellation.
pub fn stop_prob(t: usize, beta: f64) -> f64 {
    let s = 1.0 + beta;
    let tf = t as f64;
    tf.powf(-s) / hurwitz_zeta(s, tf).expect("s > 1, t >= 1")
}

/// 𝒫_t = ζ(1+β, t+1)/ζ(1+β, t).
pub fn continuation_prob(t: usize, beta: f64) -> f64 {
    1.0 - stop_prob(t, beta)
}

/// Large-t approximation (1 + 1/t)^{−β}, for diagnostics.
pub fn continuation_prob_asymptotic(t: usize, beta: f64) -> f64 {
    (1.0 + 1.0 / t as f64).powf(-beta)
}

/// Which lengths the zeta law puts mass on.
///
/// `FromTwo` conditions the law on N ≥ 2 (𝒫_1 = 1), matching the data the
/// pipeline sees. With it the solution satisfies the fair-pricing condition
/// for every N ≥ 2. `FromOne` keeps mass on N = 1 (𝒫_1 = ζ(s,2)/ζ(s)); the
/// increments are the same formulas with products starting at 𝒫_1, and
/// fair pricing then fails at every N (N·π_N = 2·π_2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthSupport {
    FromOne,
    #[default]
    FromTwo,
}

impl LengthSupport {
    pub const fn min_length(self) -> usize {
        match self {
            LengthSupport::FromOne => 1,
            LengthSupport::FromTwo => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarmerParams {
    pub beta: f64,
    /// Largest length M covered by the schedule.
    pub horizon: usize,
    pub r0_plus: f64,
    pub r1_plus: f64,
    pub support: LengthSupport,
}

impl FarmerParams {
    /// β and M with R₀⁺ = R₁⁺ = 1 and the N ≥ 2 support.
    pub fn new(beta: f64, horizon: usize) -> Result<Self, FarmerError> {
        let p = FarmerParams {
            beta,
            horizon,
            r0_plus: 1.0,
            r1_plus: 1.0,
            support: LengthSupport::FromTwo,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_support(mut self, support: LengthSupport) -> Self {
        self.support = support;
        self
    }

    pub fn with_increments(mut self, r0_plus: f64, r1_plus: f64) -> Self {
        self.r0_plus = r0_plus;
        self.r1_plus = r1_plus;
        self
    }

    pub fn validate(&self) -> Result<(), FarmerError> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(FarmerError::InvalidBeta(self.beta));
        }
        if self.horizon < 2 {
            return Err(FarmerError::HorizonTooSmall(self.horizon));
        }
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !ok(self.r0_plus) || !ok(self.r1_plus) {
            return Err(FarmerError::InvalidIncrement);
        }
        Ok(())
    }
}

/// Every quantity of the model for t = 1..=M, precomputed once.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactSchedule {
    params: FarmerParams,
    // Index t, entry 0 unused.
    stop: Vec<f64>,
    r_plus: Vec<f64>,
    r_minus: Vec<f64>,
    closed_form: Vec<f64>,
    immediate: Vec<f64>,
}

impl ImpactSchedule {
    /// Builds the schedule by the recursive solution and checks it against
    /// the closed form R_t⁺ = t^{−(2+β)} ζ(s, n₀)/(ζ(s,t) ζ(s,t+1)) R₁⁺.
    pub fn new(params: FarmerParams) -> Result<Self, FarmerError> {
        params.validate()?;
        let m = params.horizon;
        let beta = params.beta;
        let s = 1.0 + beta;
        let zeta: Vec<f64> = (0..=m + 1)
            .map(|t| {
                if t == 0 {
                    f64::NAN
                } else {
                    hurwitz_zeta(s, t as f64).expect("validated")
                }
            })
            .collect();
        let mut stop = vec![f64::NAN; m + 1];
        for t in 1..=m {
            stop[t] = (t as f64).powf(-s) / zeta[t];
        }
        if params.support == LengthSupport::FromTwo {
            stop[1] = 0.0;
        }

        let n0 = params.support.min_length();
        let mut r_plus = vec![f64::NAN; m + 1];
        let mut r_minus = vec![f64::NAN; m + 1];
        let mut closed_form = vec![f64::NAN; m + 1];
        r_plus[1] = params.r1_plus;
        closed_form[1] = params.r1_plus;
        r_minus[1] = match params.support {
            LengthSupport::FromOne => (1.0 - stop[1]) * params.r1_plus / stop[1],
            LengthSupport::FromTwo => 0.0,
        };

        // ln(𝒫_{n0} ⋯ 𝒫_{t−1})
        let mut log_prod = 0.0;
        for t in 2..=m {
            if t > n0 {
                log_prod += (-stop[t - 1]).ln_1p();
            }
            let tf = t as f64;
            let cont = 1.0 - stop[t];
            r_minus[t] = (-log_prod).exp() * params.r1_plus / tf;
            r_plus[t] = r_minus[t] * stop[t] / cont;
            closed_form[t] =
                tf.powf(-(2.0 + beta)) * zeta[n0] / (zeta[t] * zeta[t + 1]) * params.r1_plus;
            let relative = ((r_plus[t] - closed_form[t]) / closed_form[t]).abs();
            if !(relative <= 1e-10) {
                return Err(FarmerError::ClosedFormMismatch { t, relative });
            }
        }

        let mut immediate = vec![f64::NAN; m + 1];
        immediate[1] = params.r0_plus;
        for t in 2..=m {
            immediate[t] = immediate[t - 1] + r_plus[t - 1];
        }

        Ok(ImpactSchedule {
            params,
            stop,
            r_plus,
            r_minus,
            closed_form,
            immediate,
        })
    }

    pub fn params(&self) -> &FarmerParams {
        &self.params
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn check(&self, t: usize) -> Result<(), FarmerError> {
        if t == 0 || t > self.params.horizon {
            Err(FarmerError::OutOfRange {
                t,
                horizon: self.params.horizon,
            })
        } else {
            Ok(())
        }
    }

    /// 𝒫_t (1 at t = 1 under the N ≥ 2 support).
    pub fn continuation(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok(1.0 - self.stop[t])
    }

    pub fn stop(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok(self.stop[t])
    }

    pub fn r_plus(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok(self.r_plus[t])
    }

    /// R_t⁺ from the closed form.
    pub fn r_plus_closed_form(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok(self.closed_form[t])
    }

    pub fn r_minus(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok(self.r_minus[t])
    }

    /// 𝓘_t.
    pub fn immediate(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok(self.immediate[t])
    }

    /// 𝓘_1..=𝓘_n.
    pub fn immediate_path(&self, n: usize) -> Result<&[f64], FarmerError> {
        self.check(n)?;
        Ok(&self.immediate[1..=n])
    }

    /// I_N = 𝓘_N − R_N⁻.
    pub fn permanent(&self, n: usize) -> Result<f64, FarmerError> {
        self.check(n)?;
        Ok(self.immediate[n] - self.r_minus[n])
    }

    /// I_N/𝓘_N.
    pub fn ratio(&self, n: usize) -> Result<f64, FarmerError> {
        Ok(self.permanent(n)? / self.immediate(n)?)
    }

    /// 𝒫_t R_t⁺ − (1 − 𝒫_t) R_t⁻.
    pub fn martingale_residual(&self, t: usize) -> Result<f64, FarmerError> {
        self.check(t)?;
        Ok((1.0 - self.stop[t]) * self.r_plus[t] - self.stop[t] * self.r_minus[t])
    }

    /// π_N = (1/N) Σ_{t=1}^N S_t − X_N with X₀ = 0.
    pub fn fair_pricing_residual(&self, n: usize) -> Result<f64, FarmerError> {
        self.check(n)?;
        let mean = self.immediate[1..=n].iter().sum::<f64>() / n as f64;
        Ok(mean - self.permanent(n)?)
    }

    /// Relaxed price after a metaorder of length N stops, relative to X₀.
    pub fn relaxed(&self, n: usize) -> Result<f64, FarmerError> {
        self.permanent(n)
    }
}

/// Computes the increment schedule for `params`.
pub fn impact_increments(params: FarmerParams) -> Result<ImpactSchedule, FarmerError> {
    ImpactSchedule::new(params)
}

/// 𝓘_t, building a schedule up to t.
pub fn immediate_impact(params: FarmerParams, t: usize) -> Result<f64, FarmerError> {
    if t == 0 || t > params.horizon {
        return Err(FarmerError::OutOfRange {
            t,
            horizon: params.horizon,
        });
    }
    let p = FarmerParams {
        horizon: t.max(2),
        ..params
    };
    ImpactSchedule::new(p)?.immediate(t)
}

/// I_N for 2 ≤ N ≤ M.
pub fn permanent_impact_value(params: FarmerParams, n: usize) -> Result<f64, FarmerError> {
    if n < 2 || n > params.horizon {
        return Err(FarmerError::OutOfRange {
            t: n,
            horizon: params.horizon,
        });
    }
    ImpactSchedule::new(FarmerParams { horizon: n, ..params })?.permanent(n)
}

/// I_N/𝓘_N for 2 ≤ N ≤ M. Tends to 1/β.
pub fn impact_ratio(params: FarmerParams, n: usize) -> Result<f64, FarmerError> {
    if n < 2 || n > params.horizon {
        return Err(FarmerError::OutOfRange {
            t: n,
            horizon: params.horizon,
        });
    }
    ImpactSchedule::new(FarmerParams { horizon: n, ..params })?.ratio(n)
}

/// E[I_N/𝓘_N] when N follows the zeta law truncated to [2, M].
pub fn expected_ratio(schedule: &ImpactSchedule) -> f64 {
    let s = 1.0 + schedule.params.beta;
    let (mut num, mut den) = (0.0, 0.0);
    for n in 2..=schedule.horizon() {
        let w = (n as f64).powf(-s);
        num += w * schedule.ratio(n).expect("in range");
        den += w;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // ζ(s, a) by brute force: Σ_{k<K} (a+k)^{−s} summed smallest first, plus
    // the midpoint integral ∫_{a+K−1/2}^∞ x^{−s} dx for the tail.
    fn zeta_oracle(s: f64, a: f64) -> f64 {
        let k_max = 200_000usize;
        let mut sum = (a + k_max as f64 - 0.5).powf(1.0 - s) / (s - 1.0);
        for k in (0..k_max).rev() {
            sum += (a + k as f64).powf(-s);
        }
        sum
    }

    #[test]
    fn zeta_matches_brute_force() {
        assert!((hurwitz_zeta(2.5, 1.0).unwrap() - 1.341487257250917).abs() < 1e-14);
        assert!((hurwitz_zeta(2.5, 2.0).unwrap() - 0.341487257250917).abs() < 1e-14);
        for &(s, a) in &[(2.5, 1.0), (1.8, 1.0), (2.0, 3.5), (2.8, 7.0), (2.5, 40.0)] {
            let z = hurwitz_zeta(s, a).unwrap();
            let o = zeta_oracle(s, a);
            assert!(((z - o) / o).abs() < 1e-12, "s={s} a={a}: {z} vs {o}");
        }
        // ζ(2) = π²/6.
        let z2 = hurwitz_zeta(2.0, 1.0).unwrap();
        assert!((z2 - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zeta_rejects_divergent() {
        assert!(hurwitz_zeta(1.0, 1.0).is_err());
        assert!(hurwitz_zeta(0.5, 1.0).is_err());
        assert!(hurwitz_zeta(2.0, 0.0).is_err());
    }

    #[test]
    fn continuation_probabilities() {
        assert!((continuation_prob(1, 1.5) - 0.25455870371).abs() < 1e-10);
        assert!((continuation_prob(2, 1.5) - 0.48233296691).abs() < 1e-10);
        let exact = continuation_prob(100, 1.5);
        assert!((exact - continuation_prob_asymptotic(100, 1.5)).abs() < 1e-3);
        for t in 1..200 {
            assert!(continuation_prob(t, 1.5) < continuation_prob(t + 1, 1.5));
        }
    }

    #[test]
    fn literal_support_reproduces_hand_values() {
        let p = FarmerParams::new(1.5, 1000)
            .unwrap()
            .with_support(LengthSupport::FromOne);
        let s = ImpactSchedule::new(p).unwrap();
        assert!((s.r_plus(2).unwrap() - 2.1081).abs() < 5e-4);
        assert!((s.r_minus(2).unwrap() - 1.9642).abs() < 5e-4);
        // R_t⁺ t^{2−β} settles near 3.0 R₁⁺ quickly.
        let limit = s.r_plus(1000).unwrap() * 1000f64.powf(0.5);
        assert!((limit - 3.0).abs() < 0.05);
        let early = s.r_plus(4).unwrap() * 4f64.powf(0.5);
        assert!(((early - limit) / limit).abs() < 0.03);
    }

    #[test]
    fn literal_support_breaks_fair_pricing_exactly_like_n_pi_n_constant() {
        let p = FarmerParams::new(1.5, 200)
            .unwrap()
            .with_support(LengthSupport::FromOne);
        let s = ImpactSchedule::new(p).unwrap();
        let pi2 = s.fair_pricing_residual(2).unwrap();
        assert!((pi2 - 1.4642).abs() < 1e-3);
        for n in 2..=200 {
            let npi = n as f64 * s.fair_pricing_residual(n).unwrap();
            assert!((npi - 2.0 * pi2).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn conditioned_support_hand_values() {
        let s = ImpactSchedule::new(FarmerParams::new(1.5, 100).unwrap()).unwrap();
        assert_eq!(s.continuation(1).unwrap(), 1.0);
        assert!((s.r_minus(2).unwrap() - 0.5).abs() < 1e-15);
        assert!((s.r_plus(2).unwrap() - 0.5366).abs() < 1e-4);
        assert_eq!(s.immediate(2).unwrap(), 2.0);
        assert!((s.ratio(2).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn exactness_properties() {
        for &beta in &[0.8, 1.0, 1.5, 1.8] {
            let s = ImpactSchedule::new(FarmerParams::new(beta, 1000).unwrap()).unwrap();
            for t in 2..=1000 {
                assert!(s.martingale_residual(t).unwrap().abs() < 1e-12);
                assert!(s.fair_pricing_residual(t).unwrap().abs() < 1e-10);
                let i = s.immediate(t).unwrap();
                assert!(i > s.immediate(t - 1).unwrap());
                let r = s.ratio(t).unwrap();
                assert!(r > 0.0 && r < 1.0);
            }
        }
    }

    #[test]
    fn ratio_tends_to_inverse_beta() {
        let s = ImpactSchedule::new(FarmerParams::new(1.5, 10_000).unwrap()).unwrap();
        let d2 = (s.ratio(100).unwrap() - 2.0 / 3.0).abs();
        let d4 = (s.ratio(10_000).unwrap() - 2.0 / 3.0).abs();
        assert!(d4 < d2);
        assert!(d4 < 0.01);
        for n in 3..=10_000 {
            assert!(s.ratio(n).unwrap() < s.ratio(n - 1).unwrap());
        }
    }

    #[test]
    fn log_growth_at_beta_one() {
        let s = ImpactSchedule::new(FarmerParams::new(1.0, 10_000).unwrap()).unwrap();
        let slope =
            (s.immediate(10_000).unwrap() - s.immediate(1000).unwrap()) / (10_001f64 / 1001.0).ln();
        let earlier =
            (s.immediate(1000).unwrap() - s.immediate(100).unwrap()) / (1001f64 / 101.0).ln();
        assert!(((slope - earlier) / slope).abs() < 0.01);
    }

    #[test]
    fn wrappers_and_ranges() {
        let p = FarmerParams::new(1.5, 100).unwrap();
        assert_eq!(immediate_impact(p, 2).unwrap(), 2.0);
        let s = ImpactSchedule::new(p).unwrap();
        assert_eq!(permanent_impact_value(p, 50).unwrap(), s.permanent(50).unwrap());
        assert_eq!(impact_ratio(p, 100).unwrap(), s.ratio(100).unwrap());
        assert!(impact_ratio(p, 101).is_err());
        assert!(permanent_impact_value(p, 1).is_err());
        assert!(immediate_impact(p, 0).is_err());
        assert!(FarmerParams::new(0.0, 10).is_err());
        assert!(FarmerParams::new(1.5, 1).is_err());
    }

    #[test]
    fn expected_ratio_oracle() {
        let s = ImpactSchedule::new(FarmerParams::new(1.5, 1000).unwrap()).unwrap();
        let e = expected_ratio(&s);
        assert!((e - 0.731).abs() < 2e-3, "{e}");
    }

    proptest! {
        #[test]
        fn zeta_recurrence(s in 1.05f64..8.0, a in 1.0f64..500.0) {
            let lhs = hurwitz_zeta(s, a).unwrap() - hurwitz_zeta(s, a + 1.0).unwrap();
            let rhs = a.powf(-s);
            prop_assert!(((lhs - rhs) / rhs).abs() < 1e-9 || (lhs - rhs).abs() < 1e-13);
        }

        #[test]
        fn fair_pricing_any_params(beta in 0.3f64..3.0, r0 in 0.1f64..5.0, r1 in 0.1f64..5.0) {
            let p = FarmerParams::new(beta, 200).unwrap().with_increments(r0, r1);
            let s = ImpactSchedule::new(p).unwrap();
            for n in 2..=200 {
                prop_assert!(s.fair_pricing_residual(n).unwrap().abs() < 1e-10 * s.immediate(n).unwrap().max(1.0));
                prop_assert!(s.martingale_residual(n).unwrap().abs() < 1e-12 * s.r_minus(n).unwrap().max(1.0));
            }
        }
    }
}
