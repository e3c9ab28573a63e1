//! Parameter estimation: flip rate from per-cycle detection curves, and
//! effective model calibration from summary statistics.

use serde::{Deserialize, Serialize};

use super::predict::{predict_single_read, PredictedStats};
use super::report::ClassifierConfig;
use crate::optim::{levenberg_marquardt, LeastSquaresOptions};
use crate::stats::Interval;
use crate::trajectory::{DetectionCurve, ShotModel};
use crate::{Error, Result};

/// Maximum-likelihood fit of `p_k = a (1-f)^(k-1) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipFit {
    pub flip: f64,
    pub amplitude: f64,
    pub background: f64,
    /// Profile-likelihood interval (`2 ΔlnL = 1`).
    pub interval: Interval,
    pub log_likelihood: f64,
    /// The curve does not decay; `flip` was pinned at zero.
    pub pinned_at_zero: bool,
}

const MIN_POINTS: usize = 50;
const P_EPS: f64 = 1e-12;

struct Curve {
    n: f64,
    d: Vec<f64>,
}

impl Curve {
    fn log_likelihood(&self, f: f64, a: f64, b: f64) -> f64 {
        let mut ll = 0.0;
        let mut g = 1.0;
        for &d in &self.d {
            let p = (a * g + b).clamp(P_EPS, 1.0 - P_EPS);
            ll += d * p.ln() + (self.n - d) * (1.0 - p).ln();
            g *= 1.0 - f;
        }
        ll
    }

    /// Maximizes over `(a, b)` at fixed `f` by damped Newton steps; the
    /// likelihood is concave in `(a, b)`.
    fn profile(&self, f: f64) -> (f64, f64, f64) {
        let decay: Vec<f64> = std::iter::successors(Some(1.0), |g| Some(g * (1.0 - f)))
            .take(self.d.len())
            .collect();
        let phat: Vec<f64> = self.d.iter().map(|d| d / self.n).collect();
        // Least-squares start.
        let m = decay.len() as f64;
        let (sg, sp) = (decay.iter().sum::<f64>(), phat.iter().sum::<f64>());
        let sgg: f64 = decay.iter().map(|g| g * g).sum();
        let sgp: f64 = decay.iter().zip(&phat).map(|(g, p)| g * p).sum();
        let det = m * sgg - sg * sg;
        let (mut a, mut b) = if det.abs() > 1e-12 * m * sgg {
            ((m * sgp - sg * sp) / det, (sgg * sp - sg * sgp) / det)
        } else {
            (0.0, sp / m)
        };
        let feasible = |a: f64, b: f64| {
            decay
                .iter()
                .all(|g| (P_EPS..1.0 - P_EPS).contains(&(a * g + b)))
        };
        if !feasible(a, b) {
            a = 0.0;
            b = (sp / m).clamp(1e-9, 1.0 - 1e-9);
        }
        let mut ll = self.log_likelihood(f, a, b);
        for _ in 0..100 {
            let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (g, &d) in decay.iter().zip(&self.d) {
                let p = a * g + b;
                let s = d / p - (self.n - d) / (1.0 - p);
                let c = -d / (p * p) - (self.n - d) / ((1.0 - p) * (1.0 - p));
                ga += s * g;
                gb += s;
                haa += c * g * g;
                hab += c * g;
                hbb += c;
            }
            let det = haa * hbb - hab * hab;
            if det.abs() < 1e-300 {
                break;
            }
            let da = -(hbb * ga - hab * gb) / det;
            let db = -(haa * gb - hab * ga) / det;
            let mut t = 1.0;
            let mut improved = false;
            while t > 1e-10 {
                let (na, nb) = (a + t * da, b + t * db);
                if feasible(na, nb) {
                    let nll = self.log_likelihood(f, na, nb);
                    if nll >= ll {
                        improved = nll - ll > 1e-10;
                        a = na;
                        b = nb;
                        ll = nll;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (ll, a, b)
    }
}

/// Golden-section maximization of `g` on `[lo, hi]`.
fn golden_max(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    while hi - lo > tol {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + r * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - r * (hi - lo);
            g1 = g(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Bisection for the point in `[inside, outside]` where `g` crosses `level`,
/// with `g(inside) > level >= g(outside)`.
fn crossing(g: impl Fn(f64) -> f64, mut inside: f64, mut outside: f64, level: f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if g(mid) > level {
            inside = mid;
        } else {
            outside = mid;
        }
        if (outside - inside).abs() < 1e-12 * inside.abs().max(1e-15) {
            break;
        }
    }
    0.5 * (inside + outside)
}

pub fn fit_flip_rate(curve: &DetectionCurve) -> Result<FlipFit> {
    if curve.detections.len() < MIN_POINTS {
        return Err(Error::param(
            "curve",
            format!(
                "need at least {MIN_POINTS} cycle points, got {}",
                curve.detections.len()
            ),
        ));
    }
    if curve.shots == 0 {
        return Err(Error::param("curve", "no shots"));
    }
    let c = Curve {
        n: curve.shots as f64,
        d: curve.detections.iter().map(|&d| d as f64).collect(),
    };
    // Work in u = ln f; scan a coarse grid, then refine around the best cell.
    let profile_u = |u: f64| c.profile(u.exp()).0;
    let (u_lo, u_hi) = (1e-8f64.ln(), 0.5f64.ln());
    let steps = 60;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| u_lo + (u_hi - u_lo) * i as f64 / steps as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&u| profile_u(u)).collect();
    let best = (0..values.len())
        .max_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("non-empty grid");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(steps)];
    let u_star = golden_max(profile_u, lo, hi, 1e-7);
    let (ll_star, _, _) = c.profile(u_star.exp());
    let (ll_zero, a0, b0) = c.profile(0.0);

    // A likelihood gain below 1e-6 means the curve carries no decay.
    let pinned = best == 0 || ll_star - ll_zero <= 1e-6;
    if pinned {
        let level = ll_zero - 0.5;
        let profile_f = |f: f64| c.profile(f).0;
        let mut outside = 1e-6;
        while profile_f(outside) > level && outside < 0.5 {
            outside *= 2.0;
        }
        let upper = crossing(profile_f, 0.0, outside.min(0.5), level);
        return Ok(FlipFit {
            flip: 0.0,
            amplitude: a0,
            background: b0,
            interval: Interval { lower: 0.0, upper },
            log_likelihood: ll_zero,
            pinned_at_zero: true,
        });
    }

    let f_star = u_star.exp();
    let (ll, a, b) = c.profile(f_star);
    let level = ll - 0.5;
    let profile_f = |f: f64| c.profile(f).0;
    let lower = if ll_zero > level {
        0.0
    } else {
        crossing(profile_f, f_star, 0.0, level)
    };
    let mut outside = f_star * 2.0;
    while profile_f(outside) > level && outside < 1.0 {
        outside = (outside * 2.0).min(1.0);
    }
    let upper = crossing(profile_f, f_star, outside, level);
    Ok(FlipFit {
        flip: f_star,
        amplitude: a,
        background: b,
        interval: Interval { lower, upper },
        log_likelihood: ll,
        pinned_at_zero: false,
    })
}

/// Summary statistics an effective model is calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTargets {
    pub mean_bright: f64,
    pub mean_dark: f64,
    pub raw_misread_bright: f64,
    pub raw_misread_dark: f64,
    #[serde(default)]
    pub conditional_misread_bright: Option<f64>,
    #[serde(default)]
    pub conditional_misread_dark: Option<f64>,
}

impl FitTargets {
    /// Measured single-read statistics of the reference device.
    pub fn reference() -> Self {
        FitTargets {
            mean_bright: 6.24,
            mean_dark: 0.40,
            raw_misread_bright: 0.191,
            raw_misread_dark: 0.048,
            conditional_misread_bright: Some(0.028),
            conditional_misread_dark: Some(0.009),
        }
    }

    pub fn from_prediction(p: &PredictedStats, conditional: bool) -> Self {
        FitTargets {
            mean_bright: p.mean_bright,
            mean_dark: p.mean_dark,
            raw_misread_bright: p.raw_misread_bright,
            raw_misread_dark: p.raw_misread_dark,
            conditional_misread_bright: conditional.then_some(p.conditional_misread_bright),
            conditional_misread_dark: conditional.then_some(p.conditional_misread_dark),
        }
    }

    /// `(name, target, model value, variance of one shot)`.
    fn pairs(&self, p: &PredictedStats) -> Vec<(&'static str, f64, f64, f64)> {
        // Poisson-like spread for means, binomial for rates.
        let rate = |t: f64| t * (1.0 - t);
        let mut out = vec![
            ("mean_bright", self.mean_bright, p.mean_bright, self.mean_bright),
            ("mean_dark", self.mean_dark, p.mean_dark, self.mean_dark),
            (
                "raw_misread_bright",
                self.raw_misread_bright,
                p.raw_misread_bright,
                rate(self.raw_misread_bright),
            ),
            (
                "raw_misread_dark",
                self.raw_misread_dark,
                p.raw_misread_dark,
                rate(self.raw_misread_dark),
            ),
        ];
        if let Some(t) = self.conditional_misread_bright {
            out.push(("conditional_misread_bright", t, p.conditional_misread_bright, rate(t)));
        }
        if let Some(t) = self.conditional_misread_dark {
            out.push(("conditional_misread_dark", t, p.conditional_misread_dark, rate(t)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParameter {
    LambdaBright,
    LambdaDark,
    FlipBd,
    FlipDb,
    NuclearInitError,
    ChargeError,
}

impl FitParameter {
    fn get(self, m: &ShotModel) -> f64 {
        match self {
            FitParameter::LambdaBright => m.lambda_bright,
            FitParameter::LambdaDark => m.lambda_dark,
            FitParameter::FlipBd => m.flip_bd,
            FitParameter::FlipDb => m.flip_db,
            FitParameter::NuclearInitError => m.nuclear_init_error,
            FitParameter::ChargeError => m.charge_error,
        }
    }

    fn set(self, m: &mut ShotModel, v: f64) {
        match self {
            FitParameter::LambdaBright => m.lambda_bright = v,
            FitParameter::LambdaDark => m.lambda_dark = v,
            FitParameter::FlipBd => m.flip_bd = v,
            FitParameter::FlipDb => m.flip_db = v,
            FitParameter::NuclearInitError => m.nuclear_init_error = v,
            FitParameter::ChargeError => m.charge_error = v,
        }
    }

    fn is_rate(self) -> bool {
        matches!(self, FitParameter::LambdaBright | FitParameter::LambdaDark)
    }

    fn encode(self, v: f64) -> f64 {
        if self.is_rate() {
            v.max(1e-9).ln()
        } else {
            let p = v.clamp(1e-6, 0.5);
            (p / (1.0 - p)).ln()
        }
    }

    fn decode(self, x: f64) -> f64 {
        if self.is_rate() {
            x.exp()
        } else {
            1.0 / (1.0 + (-x).exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub start: ShotModel,
    pub free: Vec<FitParameter>,
    pub cycles: u32,
    pub classifier: ClassifierConfig,
    /// Shots behind each target; sets the statistical weight of each one.
    pub reference_shots: u64,
    /// Largest accepted |model - target| / target over all statistics.
    pub max_relative_error: f64,
}

impl Default for FitOptions {
    /// Frees the background, the preparation errors, the bright rate and the
    /// dark-to-bright flip rate. The bright-to-dark flip rate stays at the
    /// start value since it is measured separately from the decay curve.
    fn default() -> Self {
        let free = vec![
            FitParameter::ChargeError,
            FitParameter::NuclearInitError,
            FitParameter::LambdaDark,
            FitParameter::LambdaBright,
            FitParameter::FlipDb,
        ];
        FitOptions {
            start: ShotModel::nominal(),
            free,
            cycles: 250,
            classifier: ClassifierConfig::default(),
            reference_shots: 10_000,
            max_relative_error: 0.06,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: ShotModel,
    pub predicted: PredictedStats,
    /// Chi-square at `reference_shots`.
    pub residual: f64,
    pub worst_statistic: String,
    pub worst_relative_error: f64,
    pub evaluations: usize,
}

/// Relative-error denominator floor, so zero targets stay finite.
const TARGET_FLOOR: f64 = 1e-3;

fn relative_errors(targets: &FitTargets, p: &PredictedStats) -> Vec<(&'static str, f64)> {
    targets
        .pairs(p)
        .into_iter()
        .map(|(name, t, v, _)| (name, (v - t) / t.abs().max(TARGET_FLOOR)))
        .collect()
}

/// Residuals in units of the statistical error of a target measured on
/// `shots` shots per preparation.
fn scaled_residuals(targets: &FitTargets, p: &PredictedStats, shots: f64) -> Vec<f64> {
    targets
        .pairs(p)
        .into_iter()
        .map(|(_, t, v, var)| (v - t) * (shots / var.max(TARGET_FLOOR)).sqrt())
        .collect()
}

/// Least-squares calibration of an effective model to summary statistics.
pub fn fit_shot_model(targets: &FitTargets, options: &FitOptions) -> Result<ModelFit> {
    if options.free.is_empty() {
        return Err(Error::param("free", "no parameters to fit"));
    }
    options.start.validate()?;
    options.classifier.validate(options.cycles)?;
    let build = |x: &[f64]| {
        let mut m = options.start;
        for (p, &xi) in options.free.iter().zip(x) {
            p.set(&mut m, p.decode(xi));
        }
        m
    };
    let evaluations = std::cell::Cell::new(0usize);
    let size = targets.pairs(&PredictedStats::default()).len();
    let residuals = |x: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        match predict_single_read(&build(x), options.cycles, &options.classifier) {
            Ok(p) => scaled_residuals(targets, &p, options.reference_shots as f64),
            Err(_) => vec![1e6; size],
        }
    };
    let x0: Vec<f64> = options
        .free
        .iter()
        .map(|p| p.encode(p.get(&options.start)))
        .collect();
    let m = levenberg_marquardt(residuals, &x0, LeastSquaresOptions::default());
    let (x, best) = (m.x, 2.0 * m.value);
    let model = build(&x);
    let predicted = predict_single_read(&model, options.cycles, &options.classifier)?;
    let errors = relative_errors(targets, &predicted);
    let (worst_name, worst) = errors
        .iter()
        .copied()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("at least four statistics");
    if !(worst.abs() <= options.max_relative_error) {
        return Err(Error::FitResidual {
            statistic: worst_name.to_string(),
            relative_error: worst.abs(),
        });
    }
    Ok(ModelFit {
        model,
        predicted,
        residual: best,
        worst_statistic: worst_name.to_string(),
        worst_relative_error: worst.abs(),
        evaluations: evaluations.get(),
    })
}
