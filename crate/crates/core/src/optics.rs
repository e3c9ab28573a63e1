//! Rate-equation model of the optical cycle.
//!
//! The six optical levels collapse to five populations because the `±`
//! partners of each doublet behave identically under the lasers used here:
//!
//! ```text
//!   e12 ──isc_e12──┐        ┌──isc_e32── e32
//!    │  ▲          ▼        ▼          ▲  │
//! d_a1 p_a1        m (metastable)     p_a2 d_a2
//!    ▼  │          │        │          │  ▼
//!   g12 ◄─m_to_g12─┘        └─m_to_g32─► g32
//! ```
//!
//! Lasers are incoherent pump rates acting symmetrically (absorption and
//! stimulated emission). Rates are in MHz (1/µs), times in µs.

use serde::{Deserialize, Serialize};

use crate::model::{Electron, PhysicalParams, RegisterState};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::{Error, Result};

/// Integration step used when callers do not pick one: 0.1 ns.
pub const DEFAULT_STEP_US: f64 = 1e-4;

/// Upper bound on any fitted rate (MHz).
pub const MAX_FIT_RATE: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub g12: f64,
    pub g32: f64,
    pub e12: f64,
    pub e32: f64,
    pub m: f64,
}

impl Populations {
    pub fn in_g32() -> Self {
        Populations {
            g32: 1.0,
            ..Self::zero()
        }
    }

    pub fn in_g12() -> Self {
        Populations {
            g12: 1.0,
            ..Self::zero()
        }
    }

    fn zero() -> Self {
        Populations {
            g12: 0.0,
            g32: 0.0,
            e12: 0.0,
            e32: 0.0,
            m: 0.0,
        }
    }

    pub fn from_electron(electron: Electron) -> Self {
        match electron {
            Electron::PlusThreeHalves | Electron::MinusThreeHalves => Self::in_g32(),
            Electron::PlusHalf | Electron::MinusHalf => Self::in_g12(),
            Electron::Shelved => Populations {
                m: 1.0,
                ..Self::zero()
            },
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.g12, self.g32, self.e12, self.e32, self.m]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Populations {
            g12: a[0],
            g32: a[1],
            e12: a[2],
            e32: a[3],
            m: a[4],
        }
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Population that has left the `±3/2` cycling pair.
    pub fn pumped_out_of_three_halves(&self) -> f64 {
        1.0 - self.g32 - self.e32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalRates {
    pub pump_a1: f64,
    pub pump_a2: f64,
    pub decay_a1: f64,
    pub decay_a2: f64,
    pub isc_e12: f64,
    pub isc_e32: f64,
    pub m_to_g12: f64,
    pub m_to_g32: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalModel {
    /// Starting populations for [`propagate`].
    pub populations: Populations,
    pub rates: OpticalRates,
    pub collection_efficiency: f64,
}

impl Default for OpticalModel {
    /// Calibrated model: A2 readout laser on, ISC and collection fitted so
    /// that 1.5 µs of A2 light pumps ≥ 98.5 % out of `±3/2` while yielding
    /// 0.028 detected photons.
    fn default() -> Self {
        OpticalModel {
            populations: Populations::in_g32(),
            rates: OpticalRates {
                pump_a2: 51.799_53,
                isc_e32: 13.985_20,
                ..Self::unfitted_rates(&PhysicalParams::default())
            },
            collection_efficiency: 0.003_772_161,
        }
    }
}

impl OpticalModel {
    /// Decays from the optical lifetimes, A2 laser on at a nominal rate and
    /// unfitted ISC/metastable rates. The metastable pool returns mostly to
    /// `±1/2` (90 %) with a ~100 ns lifetime.
    pub fn unfitted(params: &PhysicalParams) -> Self {
        OpticalModel {
            populations: Populations::in_g32(),
            rates: Self::unfitted_rates(params),
            collection_efficiency: 0.003,
        }
    }

    fn unfitted_rates(params: &PhysicalParams) -> OpticalRates {
        OpticalRates {
            pump_a1: 0.0,
            pump_a2: 20.0,
            decay_a1: 1e3 / params.lifetime_a1,
            decay_a2: 1e3 / params.lifetime_a2,
            isc_e12: 10.0,
            isc_e32: 10.0,
            m_to_g12: 9.0,
            m_to_g32: 1.0,
        }
    }

    pub fn with_start(mut self, populations: Populations) -> Self {
        self.populations = populations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rates;
        for (name, v) in [
            ("pump_a1", r.pump_a1),
            ("pump_a2", r.pump_a2),
            ("decay_a1", r.decay_a1),
            ("decay_a2", r.decay_a2),
            ("isc_e12", r.isc_e12),
            ("isc_e32", r.isc_e32),
            ("m_to_g12", r.m_to_g12),
            ("m_to_g32", r.m_to_g32),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("rate must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.collection_efficiency) {
            return Err(Error::param(
                "collection_efficiency",
                format!("must lie in [0, 1], got {}", self.collection_efficiency),
            ));
        }
        let p = self.populations.as_array();
        if p.iter().any(|&x| x < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param(
                "populations",
                "populations must be non-negative and sum to 1",
            ));
        }
        Ok(())
    }

    /// Time derivative of `[g12, g32, e12, e32, m, emitted]`, where the last
    /// slot accumulates spontaneous emissions (not a population).
    fn derivative(&self, y: &[f64; 6]) -> [f64; 6] {
        let r = &self.rates;
        let [g12, g32, e12, e32, m, _] = *y;
        let up12 = r.pump_a1 * (g12 - e12);
        let up32 = r.pump_a2 * (g32 - e32);
        let spont12 = r.decay_a1 * e12;
        let spont32 = r.decay_a2 * e32;
        let isc12 = r.isc_e12 * e12;
        let isc32 = r.isc_e32 * e32;
        let back12 = r.m_to_g12 * m;
        let back32 = r.m_to_g32 * m;
        [
            -up12 + spont12 + back12,
            -up32 + spont32 + back32,
            up12 - spont12 - isc12,
            up32 - spont32 - isc32,
            isc12 + isc32 - back12 - back32,
            spont12 + spont32,
        ]
    }

    fn emission_rate(&self, p: &Populations) -> f64 {
        self.rates.decay_a2 * p.e32 + self.rates.decay_a1 * p.e12
    }
}

/// Time trace of a propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpCurve {
    pub time_us: Vec<f64>,
    pub populations: Vec<Populations>,
    /// Population outside the `±3/2` cycling pair.
    pub target_population: Vec<f64>,
    /// Detected photon rate (MHz) = collection efficiency × spontaneous rate.
    pub detected_rate: Vec<f64>,
    /// Expected detected photons accumulated up to each time point.
    pub detected_photons: Vec<f64>,
}

impl PumpCurve {
    pub fn last(&self) -> Option<&Populations> {
        self.populations.last()
    }

    /// Value of the target population at the sample closest to `t_us`.
    pub fn target_at(&self, t_us: f64) -> Option<f64> {
        self.nearest(t_us).map(|i| self.target_population[i])
    }

    pub fn photons_at(&self, t_us: f64) -> Option<f64> {
        self.nearest(t_us).map(|i| self.detected_photons[i])
    }

    fn nearest(&self, t_us: f64) -> Option<usize> {
        (0..self.time_us.len())
            .min_by(|&a, &b| {
                (self.time_us[a] - t_us)
                    .abs()
                    .total_cmp(&(self.time_us[b] - t_us).abs())
            })
    }

    /// CSV with header `time_us,pop_g12,pop_g32,pop_e12,pop_e32,pop_m,detected_rate`,
    /// writing every `stride`-th sample (and always the last one).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, stride: usize) -> std::io::Result<()> {
        writeln!(w, "time_us,pop_g12,pop_g32,pop_e12,pop_e32,pop_m,detected_rate")?;
        let stride = stride.max(1);
        let n = self.time_us.len();
        for i in (0..n).filter(|i| i % stride == 0 || *i == n - 1) {
            let p = &self.populations[i];
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.time_us[i], p.g12, p.g32, p.e12, p.e32, p.m, self.detected_rate[i]
            )?;
        }
        Ok(())
    }
}

/// Integrates the rate equations with fixed-step RK4 from the model's
/// starting populations.
pub fn propagate(model: &OpticalModel, duration_us: f64, step_us: f64) -> Result<PumpCurve> {
    model.validate()?;
    if !(step_us > 0.0 && step_us.is_finite()) {
        return Err(Error::param("step", format!("must be > 0, got {step_us}")));
    }
    if !(duration_us >= step_us) {
        return Err(Error::param(
            "duration",
            format!("duration {duration_us} us shorter than step {step_us} us"),
        ));
    }
    let steps = (duration_us / step_us).round() as usize;
    let h = duration_us / steps as f64;

    let mut curve = PumpCurve {
        time_us: Vec::with_capacity(steps + 1),
        populations: Vec::with_capacity(steps + 1),
        target_population: Vec::with_capacity(steps + 1),
        detected_rate: Vec::with_capacity(steps + 1),
        detected_photons: Vec::with_capacity(steps + 1),
    };
    let p0 = model.populations.as_array();
    let mut y = [p0[0], p0[1], p0[2], p0[3], p0[4], 0.0];
    let eta = model.collection_efficiency;
    let record = |i: usize, y: &[f64; 6], curve: &mut PumpCurve| {
        let p = Populations::from_array([y[0], y[1], y[2], y[3], y[4]]);
        curve.time_us.push(i as f64 * h);
        curve.target_population.push(p.pumped_out_of_three_halves());
        curve.detected_rate.push(eta * model.emission_rate(&p));
        curve.detected_photons.push(eta * y[5]);
        curve.populations.push(p);
    };
    record(0, &y, &mut curve);

    let axpy = |a: &[f64; 6], k: &[f64; 6], s: f64| -> [f64; 6] {
        std::array::from_fn(|j| a[j] + s * k[j])
    };
    for i in 1..=steps {
        let k1 = model.derivative(&y);
        let k2 = model.derivative(&axpy(&y, &k1, 0.5 * h));
        let k3 = model.derivative(&axpy(&y, &k2, 0.5 * h));
        let k4 = model.derivative(&axpy(&y, &k3, h));
        for j in 0..6 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let excursion = y[..5]
            .iter()
            .map(|&v| (-v).max(v - 1.0).max(0.0))
            .fold(0.0, f64::max);
        if excursion > 1e-6 || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::StepTooLarge {
                step_us: h,
                excursion: if excursion.is_finite() {
                    excursion
                } else {
                    f64::INFINITY
                },
            });
        }
        record(i, &y, &mut curve);
    }
    Ok(curve)
}

/// Expected detected photons in one laser window, starting from the electron
/// state of `start`. An optically inactive defect emits nothing.
pub fn expected_cycle_photons(
    model: &OpticalModel,
    laser_window_us: f64,
    start: &RegisterState,
) -> Result<f64> {
    if !(laser_window_us > 0.0) {
        return Err(Error::param(
            "laser_window",
            format!("must be > 0, got {laser_window_us}"),
        ));
    }
    if !start.charge_ok {
        return Ok(0.0);
    }
    let m = model.with_start(Populations::from_electron(start.electron));
    let step = DEFAULT_STEP_US.min(laser_window_us);
    let curve = propagate(&m, laser_window_us, step)?;
    Ok(*curve.detected_photons.last().expect("non-empty curve"))
}

/// A requirement on the propagated curve used by [`fit_pump_rates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PumpConstraint {
    /// Population pumped out of `±3/2` at `time_us` must be at least `value`.
    PumpFidelityAtLeast { time_us: f64, value: f64 },
    /// Detected photons over `window_us` starting in `±3/2` must equal
    /// `value` within `tolerance` (absolute).
    CyclePhotons {
        window_us: f64,
        value: f64,
        tolerance: f64,
    },
}

impl PumpConstraint {
    fn horizon(&self) -> f64 {
        match *self {
            PumpConstraint::PumpFidelityAtLeast { time_us, .. } => time_us,
            PumpConstraint::CyclePhotons { window_us, .. } => window_us,
        }
    }
}

/// The calibration used for the shipped default model.
pub fn default_constraints() -> Vec<PumpConstraint> {
    vec![
        PumpConstraint::PumpFidelityAtLeast {
            time_us: 1.5,
            value: 0.985,
        },
        PumpConstraint::CyclePhotons {
            window_us: 1.5,
            value: 0.028,
            tolerance: 2e-4,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpFit {
    pub model: OpticalModel,
    /// Sum of squared constraint violations at the returned model.
    pub residual: f64,
    pub iterations: usize,
}

/// Margin kept above inequality targets so that a re-propagation with a
/// different step still satisfies them.
const INEQUALITY_MARGIN: f64 = 5e-4;

fn violations(curve: &PumpCurve, constraints: &[PumpConstraint], margin: f64) -> f64 {
    constraints
        .iter()
        .map(|c| match *c {
            PumpConstraint::PumpFidelityAtLeast { time_us, value } => {
                let got = curve.target_at(time_us).unwrap_or(0.0);
                let short = (value + margin).min(1.0) - got;
                if short > 0.0 {
                    (short / (1.0 - value).max(1e-3)).powi(2)
                } else {
                    0.0
                }
            }
            PumpConstraint::CyclePhotons { window_us, value, .. } => {
                let got = curve.photons_at(window_us).unwrap_or(0.0);
                ((got - value) / value.max(1e-6)).powi(2)
            }
        })
        .sum()
}

fn satisfied(curve: &PumpCurve, constraints: &[PumpConstraint]) -> bool {
    constraints.iter().all(|c| match *c {
        PumpConstraint::PumpFidelityAtLeast { time_us, value } => {
            curve.target_at(time_us).unwrap_or(0.0) >= value
        }
        PumpConstraint::CyclePhotons {
            window_us,
            value,
            tolerance,
        } => (curve.photons_at(window_us).unwrap_or(0.0) - value).abs() <= tolerance,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fits the A2 pump rate, the `e32` intersystem-crossing rate and (when a
/// photon constraint is present) the collection efficiency, starting from
/// `start`. Derivative-free, from a fixed simplex, so deterministic.
pub fn fit_pump_rates(start: &OpticalModel, constraints: &[PumpConstraint]) -> Result<PumpFit> {
    start.validate()?;
    let horizon = constraints
        .iter()
        .map(PumpConstraint::horizon)
        .fold(DEFAULT_STEP_US, f64::max);
    let base = start.with_start(Populations::in_g32());
    let run = |m: &OpticalModel| propagate(m, horizon, DEFAULT_STEP_US.min(horizon));

    let initial = run(&base)?;
    if satisfied(&initial, constraints) {
        return Ok(PumpFit {
            model: base,
            residual: 0.0,
            iterations: 0,
        });
    }
    for c in constraints {
        if let PumpConstraint::PumpFidelityAtLeast { value, .. } = *c {
            if value >= 1.0 {
                return Err(Error::param(
                    "constraints",
                    "pump fidelity target must be below 1",
                ));
            }
        }
    }

    let fit_collection = constraints
        .iter()
        .any(|c| matches!(c, PumpConstraint::CyclePhotons { .. }));
    let clamp_rate = |r: f64| r.clamp(1e-6, MAX_FIT_RATE * (1.0 - 1e-9));
    let decode = |x: &[f64]| -> OpticalModel {
        let mut m = base;
        m.rates.pump_a2 = MAX_FIT_RATE * sigmoid(x[0]);
        m.rates.isc_e32 = MAX_FIT_RATE * sigmoid(x[1]);
        if fit_collection {
            m.collection_efficiency = sigmoid(x[2]);
        }
        m
    };
    let mut x0 = vec![
        logit(clamp_rate(base.rates.pump_a2) / MAX_FIT_RATE),
        logit(clamp_rate(base.rates.isc_e32) / MAX_FIT_RATE),
    ];
    if fit_collection {
        x0.push(logit(base.collection_efficiency.clamp(1e-9, 1.0 - 1e-9)));
    }
    let steps = vec![0.5; x0.len()];

    let objective = |x: &[f64]| match run(&decode(x)) {
        Ok(curve) => violations(&curve, constraints, INEQUALITY_MARGIN),
        Err(_) => f64::INFINITY,
    };
    let opts = NelderMeadOptions {
        max_iterations: 400,
        f_tolerance: 1e-14,
        x_tolerance: 1e-7,
    };
    let min = nelder_mead(objective, &x0, &steps, opts);
    let model = decode(&min.x);
    let curve = run(&model)?;
    if !satisfied(&curve, constraints) {
        return Err(Error::NoConvergence {
            iterations: min.iterations,
            residual: violations(&curve, constraints, 0.0),
        });
    }
    Ok(PumpFit {
        model,
        residual: violations(&curve, constraints, 0.0),
        iterations: min.iterations,
    })
}
