//! Learning-rate schedules.
//!
//! Every schedule here is a pure function of a [`ScheduleSpec`] and a real
//! schedule time `t ∈ [0, T0]`. The k-decay families (polynomial, cosine,
//! exponential) are a base decay plus the additive term
//!
//! ```text
//! term(k, t) = (eta0 - eta_e) * ((t / T0)^k - t / T0)
//! ```
//!
//! which vanishes at both ends of the horizon and everywhere when `k = 1`.
//! The baselines (step decay, SGDR, CLR, HTD) ignore `k`.
//!
//! Raw formulas can leave `[eta_e, eta0]` (the cosine family at `k = 2`
//! goes negative near `t = 0.75 T0`), so evaluation clamps to that band
//! unless `clamp` is switched off.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ETA0: f64 = 0.1;
pub const DEFAULT_ETA_E: f64 = 0.001;
pub const DEFAULT_K: f64 = 1.5;
pub const DEFAULT_HTD_LOWER: f64 = -6.0;
pub const DEFAULT_HTD_UPPER: f64 = 3.0;

/// The `(eta0, eta_e, T0, k)` tuple shared by every schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KDecayParams {
    pub eta0: f64,
    pub eta_e: f64,
    pub t0: f64,
    pub k: f64,
}

impl KDecayParams {
    pub fn new(eta0: f64, eta_e: f64, t0: f64, k: f64) -> Result<Self> {
        let p = Self { eta0, eta_e, t0, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta0", self.eta0),
            ("eta_e", self.eta_e),
            ("t0", self.t0),
            ("k", self.k),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, format!("must be finite, got {v}")));
            }
        }
        if self.eta_e < 0.0 {
            return Err(Error::param(
                "eta_e",
                format!("must be >= 0, got {}", self.eta_e),
            ));
        }
        if self.eta0 <= self.eta_e {
            return Err(Error::param(
                "eta0",
                format!(
                    "must exceed eta_e, got eta0={} eta_e={}",
                    self.eta0, self.eta_e
                ),
            ));
        }
        if self.t0 <= 0.0 {
            return Err(Error::param("t0", format!("must be > 0, got {}", self.t0)));
        }
        if self.k < 1.0 {
            return Err(Error::param("k", format!("must be >= 1, got {}", self.k)));
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        self.eta0 - self.eta_e
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < 0.0 || t > self.t0 {
            return Err(Error::domain(format!(
                "t must lie in [0, {}], got {t}",
                self.t0
            )));
        }
        Ok(())
    }
}

/// Schedule family with its family-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `(eta0 - eta_e)(1 - t/T0)^n + eta_e + term`
    #[serde(rename = "pol")]
    PolynomialKDecay { n: f64 },
    /// `½(eta0 - eta_e)(1 + cos(πt/T0)) + eta_e + term`
    #[serde(rename = "cos")]
    CosineKDecay,
    /// `(eta0 - eta_e)exp(-t/T0) + term`; note there is no `+ eta_e`.
    #[serde(rename = "exp")]
    ExpKDecay,
    #[serde(rename = "step")]
    StepDecay { milestones: Vec<f64>, gamma: f64 },
    #[serde(rename = "sgdr")]
    Sgdr { period0: f64, period_mult: f64 },
    #[serde(rename = "clr")]
    Clr { half_cycle: f64 },
    #[serde(rename = "htd")]
    Htd { lower: f64, upper: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::PolynomialKDecay { .. } => "pol",
            Family::CosineKDecay => "cos",
            Family::ExpKDecay => "exp",
            Family::StepDecay { .. } => "step",
            Family::Sgdr { .. } => "sgdr",
            Family::Clr { .. } => "clr",
            Family::Htd { .. } => "htd",
        }
    }

    /// True for the families that carry the k-decay term.
    pub fn is_kdecay(&self) -> bool {
        matches!(
            self,
            Family::PolynomialKDecay { .. } | Family::CosineKDecay | Family::ExpKDecay
        )
    }
}

fn default_clamp() -> bool {
    true
}

/// A complete learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(flatten)]
    pub params: KDecayParams,
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

impl ScheduleSpec {
    /// Builds a clamped schedule after validating every invariant.
    pub fn new(family: Family, params: KDecayParams) -> Result<Self> {
        let spec = Self {
            family,
            params,
            clamp: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    /// Same schedule with a different decay order.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        let mut spec = self.clone();
        spec.params.k = k;
        spec.validate()?;
        Ok(spec)
    }

    /// Same schedule over a different horizon.
    pub fn with_horizon(&self, t0: f64) -> Result<Self> {
        let mut spec = self.clone();
        spec.params.t0 = t0;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let t0 = self.params.t0;
        match &self.family {
            Family::PolynomialKDecay { n } => {
                if !(n.is_finite() && *n > 0.0) {
                    return Err(Error::param("n", format!("must be > 0, got {n}")));
                }
            }
            Family::CosineKDecay | Family::ExpKDecay => {}
            Family::StepDecay { milestones, gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::param(
                        "gamma",
                        format!("must lie in (0, 1), got {gamma}"),
                    ));
                }
                for m in milestones {
                    if !(m.is_finite() && *m > 0.0 && *m < t0) {
                        return Err(Error::param(
                            "milestones",
                            format!("{m} lies outside (0, {t0})"),
                        ));
                    }
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::param("milestones", "must be strictly ascending"));
                }
            }
            Family::Sgdr {
                period0,
                period_mult,
            } => {
                if !(period0.is_finite() && *period0 > 0.0) {
                    return Err(Error::param(
                        "period0",
                        format!("must be > 0, got {period0}"),
                    ));
                }
                if !(period_mult.is_finite() && *period_mult >= 1.0) {
                    return Err(Error::param(
                        "period_mult",
                        format!("must be >= 1, got {period_mult}"),
                    ));
                }
            }
            Family::Clr { half_cycle } => {
                if !(half_cycle.is_finite() && *half_cycle > 0.0) {
                    return Err(Error::param(
                        "half_cycle",
                        format!("must be > 0, got {half_cycle}"),
                    ));
                }
            }
            Family::Htd { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    let name = if lower.is_finite() { "upper" } else { "lower" };
                    return Err(Error::param(
                        name,
                        format!("htd bounds need lower < upper, got lower={lower} upper={upper}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Learning rate at `t`, clamped to `[eta_e, eta0]` when `clamp` is set.
    pub fn lr(&self, t: f64) -> Result<f64> {
        let raw = self.raw_lr(t)?;
        Ok(self.clamp_lr(raw))
    }

    /// The unclamped formula value at `t`.
    pub fn raw_lr(&self, t: f64) -> Result<f64> {
        if let Family::PolynomialKDecay { n } = self.family {
            if let Some(coefficients) = integer_polynomial(n, self.params.k) {
                self.validate()?;
                self.params.check_time(t)?;
                let s = t / self.params.t0;
                let poly = coefficients.iter().rev().fold(0.0, |acc, &c| acc * s + c);
                return Ok(self.params.span() * poly + self.params.eta_e);
            }
        }
        let base = self.base_lr(t)?;
        if self.family.is_kdecay() {
            Ok(base + kdecay_term(&self.params, t)?)
        } else {
            Ok(base)
        }
    }

    /// The family's formula without the k-decay term.
    pub fn base_lr(&self, t: f64) -> Result<f64> {
        self.validate()?;
        let p = &self.params;
        p.check_time(t)?;
        let s = t / p.t0;
        let v = match &self.family {
            Family::PolynomialKDecay { n } => p.span() * (1.0 - s).powf(*n) + p.eta_e,
            Family::CosineKDecay => 0.5 * p.span() * (1.0 + (PI * s).cos()) + p.eta_e,
            Family::ExpKDecay => p.span() * (-s).exp(),
            Family::StepDecay { milestones, gamma } => {
                let passed = milestones.iter().filter(|&&m| m <= t).count();
                p.eta0 * gamma.powi(passed as i32)
            }
            Family::Sgdr {
                period0,
                period_mult,
            } => {
                // A period owns its right endpoint, so the value at the end
                // of a period is eta_e and the restart happens just after.
                let mut start = 0.0;
                let mut len = *period0;
                while t > start + len {
                    start += len;
                    len *= period_mult;
                }
                let phase = (t - start) / len;
                p.eta_e + 0.5 * p.span() * (1.0 + (PI * phase).cos())
            }
            Family::Clr { half_cycle } => {
                let phase = (t / half_cycle) % 2.0;
                let tri = if phase <= 1.0 { phase } else { 2.0 - phase };
                p.eta_e + p.span() * tri
            }
            Family::Htd { lower, upper } => {
                p.eta_e + 0.5 * p.span() * (1.0 - (lower + (upper - lower) * s).tanh())
            }
        };
        Ok(v)
    }

    /// Applies this schedule's clamp setting to a raw value.
    pub fn clamp_lr(&self, raw: f64) -> f64 {
        if self.clamp {
            raw.max(self.params.eta_e).min(self.params.eta0)
        } else {
            raw
        }
    }
}

/// Largest degree evaluated through exact monomial coefficients; beyond it
/// cancellation in the expanded form would cost more than 1e-13.
const MAX_EXPANDED_DEGREE: f64 = 8.0;

/// Monomial coefficients (lowest degree first) of `(1-s)^n + s^k - s` when
/// `n` and `k` are small integers. These are exact integers, so evaluating
/// them by Horner's rule makes algebraically equal schedules, such as
/// n=1,k=2 and n=2,k=1, agree bit for bit.
fn integer_polynomial(n: f64, k: f64) -> Option<Vec<f64>> {
    let degree = |x: f64| {
        (x.fract() == 0.0 && (1.0..=MAX_EXPANDED_DEGREE).contains(&x)).then_some(x as usize)
    };
    let (n, k) = (degree(n)?, degree(k)?);
    let mut c = vec![0.0; n.max(k) + 1];
    let mut binomial = 1.0;
    for (j, cj) in c.iter_mut().enumerate().take(n + 1) {
        *cj = if j % 2 == 0 { binomial } else { -binomial };
        binomial = binomial * (n - j) as f64 / (j + 1) as f64;
    }
    c[k] += 1.0;
    c[1] -= 1.0;
    Some(c)
}

/// The k-decay additive term `(eta0 - eta_e)((t/T0)^k - t/T0)`.
pub fn kdecay_term(p: &KDecayParams, t: f64) -> Result<f64> {
    p.validate()?;
    p.check_time(t)?;
    let s = t / p.t0;
    Ok(p.span() * (s.powf(p.k) - s))
}

fn expect_family(spec: &ScheduleSpec, ok: bool, want: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "expected a {want} schedule, got family {}",
            spec.family.name()
        )))
    }
}

pub fn lr_polynomial_kdecay(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    expect_family(
        spec,
        matches!(spec.family, Family::PolynomialKDecay { .. }),
        "pol",
    )?;
    spec.lr(t)
}

pub fn lr_cosine_kdecay(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    expect_family(spec, matches!(spec.family, Family::CosineKDecay), "cos")?;
    spec.lr(t)
}

pub fn lr_exp_kdecay(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    expect_family(spec, matches!(spec.family, Family::ExpKDecay), "exp")?;
    spec.lr(t)
}

/// Step decay, SGDR, CLR or HTD at `t`.
pub fn lr_baseline(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    expect_family(spec, !spec.family.is_kdecay(), "baseline")?;
    spec.lr(t)
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn integer_order(k: f64) -> Result<u32> {
    if !k.is_finite() || k < 1.0 || k.fract() != 0.0 || k > f64::from(u32::MAX) {
        return Err(Error::domain(format!(
            "order k must be a positive integer, got {k}"
        )));
    }
    Ok(k as u32)
}

/// `base(t) + alpha0 * t^k / k!`: the schedule obtained by adding a constant
/// `alpha0` to the k-th derivative of `base` and integrating back with zero
/// integration constants. Only defined for integer `k`.
pub fn derivative_increment_schedule(
    base: &ScheduleSpec,
    k: f64,
    alpha0: f64,
    t: f64,
) -> Result<f64> {
    let order = integer_order(k)?;
    if !alpha0.is_finite() {
        return Err(Error::domain(format!(
            "alpha0 must be finite, got {alpha0}"
        )));
    }
    let raw = base.raw_lr(t)? + alpha0 * t.powi(order as i32) / factorial(order);
    Ok(base.clamp_lr(raw))
}

/// k-th derivative of `(eta0 - eta_e)(1 - t/T0)^n + eta_e`, which is the
/// constant `(eta0 - eta_e) k! (-1/T0)^k` exactly when `n = k`.
pub fn polynomial_kth_derivative(eta0: f64, eta_e: f64, t0: f64, n: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("derivative order k must be >= 1"));
    }
    KDecayParams::new(eta0, eta_e, t0, f64::from(k))?;
    if n != f64::from(k) {
        return Err(Error::Unsupported(format!(
            "k-th derivative is time-constant only when n = k, got n={n} k={k}"
        )));
    }
    Ok((eta0 - eta_e) * factorial(k) * (-1.0 / t0).powi(k as i32))
}

/// One point of a sampled schedule curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub t: f64,
    pub lr: f64,
}

/// `num_points` evenly spaced samples over `[0, T0]`, both ends included.
pub fn sample_curve(spec: &ScheduleSpec, num_points: usize) -> Result<Vec<CurveSample>> {
    if num_points < 2 {
        return Err(Error::domain(format!(
            "num_points must be >= 2, got {num_points}"
        )));
    }
    spec.validate()?;
    let t0 = spec.params.t0;
    let last = num_points - 1;
    (0..num_points)
        .map(|i| {
            let t = if i == last {
                t0
            } else {
                t0 * i as f64 / last as f64
            };
            Ok(CurveSample { t, lr: spec.lr(t)? })
        })
        .collect()
}
