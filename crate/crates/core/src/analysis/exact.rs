//! Exact photon-count distributions of the effective shot model.
//!
//! Dynamic programming over (cycle, nuclear state): each state carries the
//! joint distribution of the per-channel totals so far. A cycle applies the
//! flip transition, then convolves every read window with its Poisson
//! kernel. The result is a mixture over initialization and charge errors.

use crate::model::Nuclear;
use crate::stats::poisson_pmf;
use crate::trajectory::{ShotMode, ShotModel};
use crate::{Error, Result};

/// Distribution over `(total_read1, total_read2)`; `dims.1 == 1` for
/// single-read protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    dims: (usize, usize),
    mass: Vec<f64>,
}

impl JointPmf {
    fn zeros(dims: (usize, usize)) -> Self {
        JointPmf {
            dims,
            mass: vec![0.0; dims.0 * dims.1],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn get(&self, read1: usize, read2: usize) -> f64 {
        if read1 < self.dims.0 && read2 < self.dims.1 {
            self.mass[read1 * self.dims.1 + read2]
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn marginal_read1(&self) -> Vec<f64> {
        self.mass.chunks(self.dims.1).map(|row| row.iter().sum()).collect()
    }

    pub fn marginal_read2(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.1];
        for row in self.mass.chunks(self.dims.1) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m;
            }
        }
        out
    }

    fn axpy(&mut self, weight: f64, other: &JointPmf) {
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += weight * b;
        }
    }
}

/// Single-read totals split by the herald outcome in the first `k` cycles.
/// Both parts are joint probabilities, so `zero + nonzero` is the full PMF.
#[derive(Debug, Clone, PartialEq)]
pub struct HeraldedPmf {
    pub herald_cycles: u32,
    /// `P(no photon in cycles 1..=k, total = n)`.
    pub zero: Vec<f64>,
    /// `P(at least one photon in cycles 1..=k, total = n)`.
    pub nonzero: Vec<f64>,
}

impl HeraldedPmf {
    pub fn zero_mass(&self) -> f64 {
        self.zero.iter().sum()
    }

    pub fn nonzero_mass(&self) -> f64 {
        self.nonzero.iter().sum()
    }

    pub fn combined(&self) -> Vec<f64> {
        self.zero.iter().zip(&self.nonzero).map(|(a, b)| a + b).collect()
    }
}

/// Read windows of one cycle, as `(channel, nuclear state that makes it bright)`.
fn slots(dual: bool) -> Vec<(usize, Nuclear)> {
    if dual {
        vec![(0, Nuclear::Up), (1, Nuclear::Down)]
    } else {
        vec![(0, Nuclear::Up)]
    }
}

struct Kernels {
    bright: Vec<f64>,
    dark: Vec<f64>,
}

fn check_effective(model: &ShotModel, cycles: u32) -> Result<()> {
    model.validate()?;
    if !matches!(model.mode, ShotMode::Effective) {
        return Err(Error::Unsupported(
            "exact distributions are only available for the effective model".into(),
        ));
    }
    if cycles == 0 {
        return Err(Error::param("cycles", "must be >= 1"));
    }
    Ok(())
}

/// Support size per channel such that the truncated tail is below 1e-17.
fn support(model: &ShotModel, cycles: u32) -> usize {
    let mean = cycles as f64 * model.lambda_bright.max(model.lambda_dark);
    poisson_pmf(mean).len() + 1
}

/// Convolves `grid` along one channel axis with `kernel`, in place.
fn convolve(grid: &mut [f64], dims: (usize, usize), channel: usize, kernel: &[f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.resize(grid.len(), 0.0);
    let (n1, n2) = dims;
    for i in 0..n1 {
        for j in 0..n2 {
            let m = grid[i * n2 + j];
            if m == 0.0 {
                continue;
            }
            for (k, &p) in kernel.iter().enumerate() {
                let (ti, tj) = if channel == 0 { (i + k, j) } else { (i, j + k) };
                if ti >= n1 || tj >= n2 {
                    break;
                }
                scratch[ti * n2 + tj] += m * p;
            }
        }
    }
    grid.copy_from_slice(scratch);
}

/// Runs the DP for a fixed starting nuclear state and charge outcome.
/// Returns the joint PMF, split at `herald` (zero part, nonzero part) if given.
#[allow(clippy::too_many_arguments)]
fn run_component(
    model: &ShotModel,
    cycles: u32,
    dual: bool,
    start: Nuclear,
    charge_ok: bool,
    herald: Option<u32>,
    dims: (usize, usize),
    kernels: &Kernels,
) -> (JointPmf, Option<JointPmf>) {
    let slots = slots(dual);
    let mut scratch = Vec::new();
    // Each branch holds (P[up], P[down]) grids.
    let mut branches: Vec<[JointPmf; 2]> = vec![[JointPmf::zeros(dims), JointPmf::zeros(dims)]];
    let idx = |s: Nuclear| usize::from(s == Nuclear::Down);
    branches[0][idx(start)].mass[0] = 1.0;

    for cycle in 0..cycles {
        if herald == Some(cycle) {
            split_herald(&mut branches, dims);
        }
        for [up, dn] in branches.iter_mut() {
            if model.flip_bd > 0.0 || model.flip_db > 0.0 {
                for (u, d) in up.mass.iter_mut().zip(dn.mass.iter_mut()) {
                    let (pu, pd) = (*u, *d);
                    *u = pu * (1.0 - model.flip_bd) + pd * model.flip_db;
                    *d = pd * (1.0 - model.flip_db) + pu * model.flip_bd;
                }
            }
            for (state, grid) in [(Nuclear::Up, &mut *up), (Nuclear::Down, &mut *dn)] {
                for &(channel, addresses) in &slots {
                    let kernel = if charge_ok && addresses == state {
                        &kernels.bright
                    } else {
                        &kernels.dark
                    };
                    convolve(&mut grid.mass, dims, channel, kernel, &mut scratch);
                }
            }
        }
    }
    if herald == Some(cycles) {
        split_herald(&mut branches, dims);
    }
    let mut merged: Vec<JointPmf> = branches
        .into_iter()
        .map(|[mut up, dn]| {
            up.axpy(1.0, &dn);
            up
        })
        .collect();
    let second = (merged.len() == 2).then(|| merged.pop().expect("two branches"));
    (merged.pop().expect("one branch"), second)
}

/// Splits the single pre-herald branch into (no read1 photon yet, some photon).
fn split_herald(branches: &mut Vec<[JointPmf; 2]>, dims: (usize, usize)) {
    debug_assert_eq!(branches.len(), 1);
    let [up, dn] = branches.pop().expect("one branch");
    let split = |g: JointPmf| {
        let mut zero = JointPmf::zeros(dims);
        let mut rest = g;
        zero.mass[..dims.1].copy_from_slice(&rest.mass[..dims.1]);
        rest.mass[..dims.1].iter_mut().for_each(|m| *m = 0.0);
        (zero, rest)
    };
    let (uz, ur) = split(up);
    let (dz, dr) = split(dn);
    branches.push([uz, dz]);
    branches.push([ur, dr]);
}

fn mixture(
    model: &ShotModel,
    cycles: u32,
    dual: bool,
    prepared: Nuclear,
    herald: Option<u32>,
) -> (JointPmf, Option<JointPmf>) {
    let n = support(model, cycles);
    let dims = if dual { (n, n) } else { (n, 1) };
    let kernels = Kernels {
        bright: poisson_pmf(model.lambda_bright),
        dark: poisson_pmf(model.lambda_dark),
    };
    let ok = 1.0 - model.charge_error;
    let components = [
        (prepared, true, ok * (1.0 - model.nuclear_init_error)),
        (prepared.flipped(), true, ok * model.nuclear_init_error),
        (prepared, false, model.charge_error),
    ];
    let mut first = JointPmf::zeros(dims);
    let mut second = herald.map(|_| JointPmf::zeros(dims));
    for (start, charge_ok, weight) in components {
        if weight == 0.0 {
            continue;
        }
        let (a, b) = run_component(model, cycles, dual, start, charge_ok, herald, dims, &kernels);
        first.axpy(weight, &a);
        if let (Some(acc), Some(b)) = (second.as_mut(), b) {
            acc.axpy(weight, &b);
        }
    }
    (first, second)
}

fn trim(mut v: Vec<f64>) -> Vec<f64> {
    while v.len() > 1 && *v.last().expect("non-empty") < 1e-300 {
        v.pop();
    }
    v
}

/// Exact distribution of the single-read total after `cycles` cycles.
pub fn exact_count_pmf(model: &ShotModel, cycles: u32, prepared: Nuclear) -> Result<Vec<f64>> {
    check_effective(model, cycles)?;
    let (pmf, _) = mixture(model, cycles, false, prepared, None);
    Ok(trim(pmf.marginal_read1()))
}

/// Exact single-read distribution split by whether any photon arrived in
/// the first `herald_cycles` cycles.
pub fn exact_heralded_pmf(
    model: &ShotModel,
    cycles: u32,
    prepared: Nuclear,
    herald_cycles: u32,
) -> Result<HeraldedPmf> {
    check_effective(model, cycles)?;
    if herald_cycles > cycles {
        return Err(Error::param(
            "herald_cycles",
            format!("must not exceed the cycle count {cycles}, got {herald_cycles}"),
        ));
    }
    let (zero, nonzero) = mixture(model, cycles, false, prepared, Some(herald_cycles));
    let nonzero = nonzero.expect("herald split requested");
    let (mut zero, mut nonzero) = (zero.marginal_read1(), nonzero.marginal_read1());
    let len = trim(zero.clone()).len().max(trim(nonzero.clone()).len());
    zero.truncate(len);
    nonzero.truncate(len);
    Ok(HeraldedPmf {
        herald_cycles,
        zero,
        nonzero,
    })
}

/// Exact joint distribution of the two read totals of a dual-step readout.
pub fn exact_joint_pmf(model: &ShotModel, cycles: u32, prepared: Nuclear) -> Result<JointPmf> {
    check_effective(model, cycles)?;
    Ok(mixture(model, cycles, true, prepared, None).0)
}

pub fn pmf_mean(pmf: &[f64]) -> f64 {
    pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_model_is_poisson() {
        let pmf = exact_count_pmf(&ShotModel::ideal(0.028), 250, Nuclear::Up).unwrap();
        let poisson = poisson_pmf(7.0);
        for (a, b) in pmf.iter().zip(&poisson) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((pmf[0] - 9.118_819_655_545_162e-4).abs() < 1e-12);
    }

    #[test]
    fn sums_to_one() {
        for prepared in [Nuclear::Up, Nuclear::Down] {
            let pmf = exact_count_pmf(&ShotModel::nominal(), 250, prepared).unwrap();
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    /// Geometric survival: with only ↑→↓ flips, the expected number of bright
    /// windows is sum_{k=1..n} (1-f)^k.
    #[test]
    fn bright_mean_matches_geometric_survival() {
        let model = ShotModel {
            flip_db: 0.0,
            ..ShotModel::ideal(0.028)
        };
        let model = ShotModel { flip_bd: 7.7e-4, ..model };
        let f: f64 = 7.7e-4;
        let expected = 0.028 * (1.0 - f) * (1.0 - (1.0 - f).powi(250)) / f;
        let mean = pmf_mean(&exact_count_pmf(&model, 250, Nuclear::Up).unwrap());
        assert!((mean - expected).abs() < 1e-9, "{mean} vs {expected}");
    }

    #[test]
    fn mixture_weights() {
        // Without flips or photons in the dark state, P(total = 0) is the
        // dark-start weight plus the bright-start weight times e^-7.
        let model = ShotModel {
            nuclear_init_error: 0.1,
            charge_error: 0.2,
            ..ShotModel::ideal(0.028)
        };
        let pmf = exact_count_pmf(&model, 250, Nuclear::Up).unwrap();
        let expected = 0.2 + 0.8 * 0.1 + 0.8 * 0.9 * (-7.0f64).exp();
        assert!((pmf[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn herald_split_is_consistent() {
        let model = ShotModel::default();
        let full = exact_count_pmf(&model, 250, Nuclear::Up).unwrap();
        let h = exact_heralded_pmf(&model, 250, Nuclear::Up, 120).unwrap();
        let combined = h.combined();
        for (k, p) in full.iter().enumerate() {
            assert!((p - combined.get(k).copied().unwrap_or(0.0)).abs() < 1e-12);
        }
        // No photon in the first k cycles implies none at all when k = cycles.
        let all = exact_heralded_pmf(&model, 250, Nuclear::Up, 250).unwrap();
        assert!(all.zero[1..].iter().all(|&p| p == 0.0));
        assert!((all.zero[0] - full[0]).abs() < 1e-15);
        let none = exact_heralded_pmf(&model, 250, Nuclear::Up, 0).unwrap();
        assert_eq!(none.nonzero_mass(), 0.0);
    }

    #[test]
    fn joint_marginals() {
        let model = ShotModel::default();
        let joint = exact_joint_pmf(&model, 250, Nuclear::Up).unwrap();
        assert!((joint.total() - 1.0).abs() < 1e-9);
        // read1 sees the same dynamics as a single read; read2 is its mirror
        // under an inverted preparation with swapped flip rates.
        let single = exact_count_pmf(&model, 250, Nuclear::Up).unwrap();
        for (a, b) in joint.marginal_read1().iter().zip(&single) {
            assert!((a - b).abs() < 1e-12);
        }
        let mirror = ShotModel {
            flip_bd: model.flip_db,
            flip_db: model.flip_bd,
            ..model
        };
        let mirrored = exact_count_pmf(&mirror, 250, Nuclear::Down).unwrap();
        for (a, b) in joint.marginal_read2().iter().zip(&mirrored) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_microscopic_and_bad_herald() {
        let model = ShotModel {
            mode: ShotMode::Microscopic(crate::trajectory::MicroscopicParams {
                photons_per_window: 0.03,
                pump_fidelity: 0.99,
                pi_pulse_fidelity: 0.97,
            }),
            ..ShotModel::default()
        };
        assert!(matches!(
            exact_count_pmf(&model, 250, Nuclear::Up),
            Err(Error::Unsupported(_))
        ));
        assert!(exact_heralded_pmf(&ShotModel::default(), 100, Nuclear::Up, 120).is_err());
    }
}
