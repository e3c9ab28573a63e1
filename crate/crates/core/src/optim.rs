//! Small local optimizers: Nelder–Mead simplex and Levenberg–Marquardt.
//!
//! Used by the calibration fits. Callers map bounded parameters onto an
//! unconstrained space (log / logit) before handing them over.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Spread of objective values across the simplex.
    pub f_tolerance: f64,
    /// Largest coordinate distance from the best vertex.
    pub x_tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iterations: 2000,
            f_tolerance: 1e-12,
            x_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from a simplex built around `x0` by offsetting each
/// coordinate by the matching entry of `steps`. Deterministic.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len(), "one step per coordinate");
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.f_tolerance && size <= opts.x_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-alpha, &simplex[n].0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-gamma, &simplex[n].0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let contracted = if fr < simplex[n].1 {
            along(-rho, &simplex[n].0)
        } else {
            along(rho, &simplex[n].0)
        };
        let fc = eval(&contracted);
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = anchor
                .iter()
                .zip(&vertex.0)
                .map(|(a, v)| a + sigma * (v - a))
                .collect();
            let v = eval(&x);
            *vertex = (x, v);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LeastSquaresOptions {
    pub max_iterations: usize,
    /// Stop once a step changes the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Forward-difference step, relative to `max(1, |x_i|)`.
    pub fd_step: f64,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        LeastSquaresOptions {
            max_iterations: 200,
            cost_tolerance: 1e-14,
            fd_step: 1e-6,
        }
    }
}

/// Levenberg–Marquardt on `½‖r(x)‖²` with a forward-difference Jacobian.
/// `value` of the result is the final `½‖r‖²`.
pub fn levenberg_marquardt<F>(mut r: F, x0: &[f64], opts: LeastSquaresOptions) -> Minimum
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let cost = |v: &[f64]| {
        let c = 0.5 * v.iter().map(|e| e * e).sum::<f64>();
        if c.is_nan() {
            f64::INFINITY
        } else {
            c
        }
    };
    let mut x = x0.to_vec();
    let mut res = r(&x);
    let mut c = cost(&res);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations && c.is_finite() {
        iterations += 1;
        let m = res.len();
        let mut jac = vec![vec![0.0; n]; m];
        for j in 0..n {
            let h = opts.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let rp = r(&xp);
            for i in 0..m {
                jac[i][j] = (rp[i] - res[i]) / h;
            }
        }
        let mut a = vec![vec![0.0; n]; n];
        let mut g = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                g[j] += jac[i][j] * res[i];
                for k in 0..n {
                    a[j][k] += jac[i][j] * jac[i][k];
                }
            }
        }
        let mut accepted = false;
        while mu < 1e12 {
            let mut damped = a.clone();
            for j in 0..n {
                damped[j][j] += mu * a[j][j].max(1e-12);
            }
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let Some(step) = solve(damped, rhs) else {
                mu *= 4.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            let trial_res = r(&trial);
            let trial_cost = cost(&trial_res);
            if trial_cost < c {
                let gain = (c - trial_cost) / c.max(f64::MIN_POSITIVE);
                x = trial;
                res = trial_res;
                c = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if gain < opts.cost_tolerance {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    Minimum {
        x,
        value: c,
        iterations,
        converged,
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, &p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(
            f,
            &[-1.2, 1.0],
            &[0.5, 0.5],
            NelderMeadOptions {
                max_iterations: 5000,
                ..Default::default()
            },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn quadratic_bowl_in_four_dimensions() {
        let target = [0.3, -2.0, 5.0, 1e-2];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
        let m = nelder_mead(f, &[0.0; 4], &[1.0; 4], NelderMeadOptions::default());
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-0.7 * t).exp() + 0.1).collect();
        let m = levenberg_marquardt(
            |p: &[f64]| {
                ts.iter()
                    .zip(&ys)
                    .map(|(t, y)| p[0] * (-p[1] * t).exp() + p[2] - y)
                    .collect()
            },
            &[1.0, 0.2, 0.0],
            LeastSquaresOptions::default(),
        );
        assert!(m.converged);
        for (a, b) in m.x.iter().zip([2.5, 0.7, 0.1]) {
            assert!((a - b).abs() < 1e-6, "{:?}", m.x);
        }
    }

    #[test]
    fn singular_systems_are_rejected() {
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn reports_non_convergence() {
        let f = |x: &[f64]| x[0];
        let m = nelder_mead(
            f,
            &[0.0],
            &[1.0],
            NelderMeadOptions {
                max_iterations: 10,
                ..Default::default()
            },
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 10);
    }
}
