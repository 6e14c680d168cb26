//! Self-test suite run by `kdecay check`.
//!
//! Each property compares the library against an oracle written here:
//! closed-form base schedules, finite differences, and the analytic
//! derivative constant. A [`Fault`] can be injected to confirm the suite
//! notices the two most likely implementation slips.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::harness::{forward_backward, Activation, Gradients, MlpModel};
use crate::schedule::{
    kdecay_term, polynomial_kth_derivative, Family, KDecayParams, ScheduleSpec, DEFAULT_HTD_LOWER,
    DEFAULT_HTD_UPPER,
};

const ETA0: f64 = 0.1;
const ETA_E: f64 = 0.001;
const T0: f64 = 100.0;
const EXACT_TOL: f64 = 1e-12;
const FD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const GRAD_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the k-decay term everywhere it is used.
    FlipTermSign,
    /// Reports zero gradient for every parameter of the given layer.
    ZeroLayerGradient(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The implementation under test, optionally with a fault injected.
#[derive(Debug, Clone, Copy)]
struct Subject {
    fault: Fault,
}

impl Subject {
    fn term(&self, p: &KDecayParams, t: f64) -> Result<f64> {
        let v = kdecay_term(p, t)?;
        Ok(if self.fault == Fault::FlipTermSign {
            -v
        } else {
            v
        })
    }

    fn raw_lr(&self, spec: &ScheduleSpec, t: f64) -> Result<f64> {
        if self.fault == Fault::FlipTermSign && spec.family.is_kdecay() {
            Ok(spec.base_lr(t)? + self.term(&spec.params, t)?)
        } else {
            spec.raw_lr(t)
        }
    }

    fn lr(&self, spec: &ScheduleSpec, t: f64) -> Result<f64> {
        Ok(spec.clamp_lr(self.raw_lr(spec, t)?))
    }

    fn gradients(&self, model: &MlpModel, x: &[f64], y: &[usize]) -> Result<Gradients> {
        let (_, mut g) = forward_backward(model, x, y)?;
        if let Fault::ZeroLayerGradient(layer) = self.fault {
            if let Some(l) = g.layers.get_mut(layer) {
                l.weights.fill(0.0);
                l.biases.fill(0.0);
            }
        }
        Ok(g)
    }
}

fn spec(family: Family, k: f64, clamp: bool) -> ScheduleSpec {
    ScheduleSpec::new(
        family,
        KDecayParams::new(ETA0, ETA_E, T0, k).expect("valid params"),
    )
    .expect("valid spec")
    .with_clamp(clamp)
}

fn grid(points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |i| T0 * i as f64 / (points - 1) as f64)
}

/// Base schedules written out independently of the evaluators.
fn oracle_base(family: &Family, t: f64) -> f64 {
    let s = t / T0;
    match family {
        Family::PolynomialKDecay { n } => (ETA0 - ETA_E) * (1.0 - s).powf(*n) + ETA_E,
        Family::CosineKDecay => ETA_E + (ETA0 - ETA_E) * 0.5 * (1.0 + (s * PI).cos()),
        Family::ExpKDecay => (ETA0 - ETA_E) * (-s).exp(),
        _ => unreachable!("oracle covers k-decay families only"),
    }
}

/// Order-`k` central difference with step `h`.
pub fn central_difference(f: impl Fn(f64) -> f64, t: f64, h: f64, order: u32) -> f64 {
    let mut binom = 1.0;
    let mut acc = 0.0;
    for i in 0..=order {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(t + (order as f64 / 2.0 - i as f64) * h);
        binom = binom * (order - i) as f64 / (i + 1) as f64;
    }
    acc / h.powi(order as i32)
}

fn outcome(name: &'static str, failures: Vec<String>, checked: usize) -> PropertyOutcome {
    PropertyOutcome {
        name,
        passed: failures.is_empty(),
        detail: match failures.first() {
            None => format!("{checked} checks"),
            Some(first) => format!(
                "{} of {checked} checks failed; first: {first}",
                failures.len()
            ),
        },
    }
}

fn guard(name: &'static str, body: impl FnOnce() -> Result<PropertyOutcome>) -> PropertyOutcome {
    body().unwrap_or_else(|e| PropertyOutcome {
        name,
        passed: false,
        detail: format!("error: {e}"),
    })
}

pub fn endpoint_exactness(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("endpoint_exactness", || {
        let mut failures = Vec::new();
        let mut checked = 0;
        let families = [
            Family::PolynomialKDecay { n: 0.5 },
            Family::PolynomialKDecay { n: 1.0 },
            Family::PolynomialKDecay { n: 2.0 },
            Family::CosineKDecay,
        ];
        for family in &families {
            for k in [1.0, 1.5, 2.0, 3.0, 5.0, 7.5, 10.0] {
                let sp = spec(family.clone(), k, false);
                for (t, want) in [(0.0, ETA0), (T0, ETA_E)] {
                    checked += 1;
                    let got = s.lr(&sp, t)?;
                    if (got - want).abs() > EXACT_TOL {
                        failures.push(format!("{} k={k} t={t}: {got} != {want}", family.name()));
                    }
                }
            }
        }
        Ok(outcome("endpoint_exactness", failures, checked))
    })
}

pub fn k1_reduction(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("k1_reduction", || {
        let mut failures = Vec::new();
        let mut checked = 0;
        let families = [
            Family::PolynomialKDecay { n: 0.5 },
            Family::PolynomialKDecay { n: 1.0 },
            Family::PolynomialKDecay { n: 2.0 },
            Family::CosineKDecay,
            Family::ExpKDecay,
        ];
        for family in &families {
            let sp = spec(family.clone(), 1.0, false);
            let mut worst: f64 = 0.0;
            for t in grid(1001) {
                worst = worst.max((s.lr(&sp, t)? - oracle_base(family, t)).abs());
            }
            checked += 1;
            if worst > EXACT_TOL {
                failures.push(format!("{}: sup error {worst:e}", family.name()));
            }
        }
        Ok(outcome("k1_reduction", failures, checked))
    })
}

pub fn term_sign(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("term_sign", || {
        let mut failures = Vec::new();
        let mut checked = 0;
        for k in [1.0, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0] {
            let p = KDecayParams::new(ETA0, ETA_E, T0, k)?;
            for t in grid(1001) {
                checked += 1;
                let v = s.term(&p, t)?;
                let ok = if t == 0.0 || t == T0 || k == 1.0 {
                    v == 0.0
                } else {
                    v < 0.0
                };
                if !ok {
                    failures.push(format!("k={k} t={t}: term {v}"));
                }
            }
        }
        Ok(outcome("term_sign", failures, checked))
    })
}

pub fn polynomial_identity(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("polynomial_identity", || {
        let a = spec(Family::PolynomialKDecay { n: 1.0 }, 2.0, false);
        let b = spec(Family::PolynomialKDecay { n: 2.0 }, 1.0, false);
        let mut failures = Vec::new();
        for t in grid(1001) {
            let (x, y) = (s.lr(&a, t)?, s.lr(&b, t)?);
            if (x - y).abs() > EXACT_TOL {
                failures.push(format!("t={t}: {x} vs {y}"));
            }
        }
        Ok(outcome("polynomial_identity", failures, 1001))
    })
}

pub fn derivative_constancy(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("derivative_constancy", || {
        let mut failures = Vec::new();
        let mut checked = 0;
        // At n = k the base is a degree-k polynomial, so the order-k central
        // difference has no truncation error; a coarse step keeps roundoff
        // (amplified by 1/h^k) negligible.
        let h = T0 / 100.0;
        for k in 1..=3u32 {
            let sp = spec(Family::PolynomialKDecay { n: f64::from(k) }, 1.0, false);
            let want = polynomial_kth_derivative(ETA0, ETA_E, T0, f64::from(k), k)?;
            // stay clear of the ends so every stencil point is inside [0, T0]
            for frac in [0.1, 0.25, 0.5, 0.75, 0.9] {
                checked += 1;
                let t = frac * T0;
                let got = central_difference(|x| s.raw_lr(&sp, x).unwrap_or(f64::NAN), t, h, k);
                let rel = ((got - want) / want).abs();
                if rel.is_nan() || rel > FD_REL_TOL {
                    failures.push(format!("k={k} t={t}: fd {got:e} vs {want:e} (rel {rel:e})"));
                }
            }
        }
        Ok(outcome("derivative_constancy", failures, checked))
    })
}

pub fn restricted_monotonicity(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("restricted_monotonicity", || {
        let mut failures = Vec::new();
        let mut checked = 0;
        for k in [1.0, 1.25, 1.5, 1.75, 2.0] {
            let sp = spec(Family::PolynomialKDecay { n: 1.0 }, k, false);
            let mut prev = s.lr(&sp, 0.0)?;
            for t in grid(10_001).skip(1) {
                checked += 1;
                let v = s.lr(&sp, t)?;
                if v > prev + 1e-15 {
                    failures.push(format!("k={k} t={t}: rises from {prev} to {v}"));
                }
                prev = v;
            }
        }
        Ok(outcome("restricted_monotonicity", failures, checked))
    })
}

pub fn clamp_guarantee(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("clamp_guarantee", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut failures = Vec::new();
        let n = 100_000;
        for _ in 0..n {
            let k = rng.random_range(1.0..=5.0);
            let family = match rng.random_range(0..7) {
                0 => Family::PolynomialKDecay {
                    n: rng.random_range(0.5..=3.0),
                },
                1 => Family::CosineKDecay,
                2 => Family::ExpKDecay,
                3 => Family::StepDecay {
                    milestones: vec![30.0, 60.0, 90.0],
                    gamma: 0.1,
                },
                4 => Family::Sgdr {
                    period0: 20.0,
                    period_mult: 2.0,
                },
                5 => Family::Clr { half_cycle: 12.5 },
                _ => Family::Htd {
                    lower: DEFAULT_HTD_LOWER,
                    upper: DEFAULT_HTD_UPPER,
                },
            };
            let sp = spec(family, k, true);
            let t = rng.random_range(0.0..=T0);
            let v = s.lr(&sp, t)?;
            if !(ETA_E..=ETA0).contains(&v) {
                failures.push(format!("{} k={k} t={t}: {v}", sp.family.name()));
            }
        }
        // the guard has to matter: without it the cosine family dips below eta_e
        let raw = s.lr(&spec(Family::CosineKDecay, 2.0, false), 0.75 * T0)?;
        if raw >= ETA_E {
            failures.push(format!(
                "expected a raw dip below eta_e for cos k=2 at 0.75 T0, got {raw}"
            ));
        }
        Ok(outcome("clamp_guarantee", failures, n + 1))
    })
}

/// Finite-difference check of every parameter of three small networks.
pub fn gradient_check(fault: Fault) -> PropertyOutcome {
    let s = Subject { fault };
    guard("gradient_check", || {
        let archs: [(&[usize], Activation); 3] = [
            (&[2, 5, 3], Activation::Tanh),
            (&[3, 6, 4, 2], Activation::Tanh),
            (&[4, 8, 3], Activation::Relu),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut failures = Vec::new();
        let mut checked = 0;
        for (arch_id, (dims, act)) in archs.iter().enumerate() {
            let mut model = MlpModel::new(dims, *act, 100 + arch_id as u64)?;
            // nonzero biases so relu units are not all on one side of the kink
            for at in model.param_indices() {
                let v = model.get(at) + rng.random_range(-0.3..0.3);
                model.set(at, v);
            }
            let batch = 6;
            let x: Vec<f64> = (0..batch * dims[0])
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            let y: Vec<usize> = (0..batch).map(|i| i % dims[dims.len() - 1]).collect();
            let analytic = s.gradients(&model, &x, &y)?;
            for at in model.param_indices() {
                checked += 1;
                let w = model.get(at);
                let mut probe = model.clone();
                probe.set(at, w + GRAD_STEP);
                let up = probe.loss(&x, &y)?;
                probe.set(at, w - GRAD_STEP);
                let down = probe.loss(&x, &y)?;
                let numeric = (up - down) / (2.0 * GRAD_STEP);
                let a = analytic.get(at);
                let diff = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR);
                if diff > FD_REL_TOL * scale {
                    failures.push(format!(
                        "arch {arch_id} {at:?}: analytic {a:e} vs numeric {numeric:e}"
                    ));
                }
            }
        }
        Ok(outcome("gradient_check", failures, checked))
    })
}

/// Runs every property in a fixed order.
pub fn run_checks(fault: Fault) -> Vec<PropertyOutcome> {
    vec![
        endpoint_exactness(fault),
        k1_reduction(fault),
        term_sign(fault),
        polynomial_identity(fault),
        derivative_constancy(fault),
        restricted_monotonicity(fault),
        clamp_guarantee(fault),
        gradient_check(fault),
    ]
}
