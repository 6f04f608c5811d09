//! Small nonlinear least-squares toolkit: Levenberg-Marquardt with a
//! numerically differenced Jacobian, a Nelder-Mead fallback for points where
//! the Jacobian degenerates (eigenvalue crossings), and smooth parameter
//! transforms that keep bounded parameters unconstrained internally.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("residual function failed at the initial point")]
    InitialEvaluationFailed,
    #[error("residual function returned a non-finite value")]
    NonFiniteResidual,
    #[error("optimizer did not converge within {0} iterations")]
    MaxIterations(usize),
}

/// Smooth reparameterizations mapping an unconstrained internal coordinate
/// onto the natural (possibly bounded) parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Softplus: parameter > 0.
    Positive,
    /// Logistic: parameter in (0, 1).
    UnitInterval,
}

impl Transform {
    pub fn to_param(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Positive => softplus(z),
            Transform::UnitInterval => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn to_internal(&self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Positive => inverse_softplus(y),
            Transform::UnitInterval => {
                let y = y.clamp(1e-12, 1.0 - 1e-12);
                (y / (1.0 - y)).ln()
            }
        }
    }

    pub fn dparam_dz(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Positive => 1.0 / (1.0 + (-z).exp()),
            Transform::UnitInterval => {
                let y = 1.0 / (1.0 + (-z).exp());
                y * (1.0 - y)
            }
        }
    }

    /// Whether the parameter sits numerically on a bound of its domain.
    pub fn at_bound(&self, z: f64) -> bool {
        match self {
            Transform::Identity => false,
            // softplus(z) ~ 0 for very negative z; no upper bound
            Transform::Positive => z < -30.0,
            Transform::UnitInterval => z.abs() > 30.0,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    let y = y.max(1e-300);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().max(1e-300).ln()
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquaresOptions {
    pub max_iterations: usize,
    /// Relative objective-change convergence threshold.
    pub ftol: f64,
    /// Relative central-difference step for the Jacobian.
    pub rel_step: f64,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            rel_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquaresReport {
    /// Solution in natural parameter space.
    pub params: Vec<f64>,
    /// Sum of squared residuals at the solution.
    pub cost: f64,
    /// Objective value after every accepted step (starting point first).
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub initial_gradient_norm: f64,
    /// Standard errors in natural parameter space (zeros if not estimable).
    pub stderr: Vec<f64>,
    /// Internal coordinates at the solution, for bound diagnostics.
    pub at_bound: Vec<bool>,
}

/// Least-squares fit of `residuals` over bounded parameters.
///
/// The residual closure receives natural-space parameters and returns one
/// residual per data point, or `None` where the model cannot be evaluated.
/// Levenberg-Marquardt runs in the transformed (unconstrained) space; if the
/// numeric Jacobian degenerates the driver falls back to Nelder-Mead.
pub fn fit_least_squares<F>(
    residuals: F,
    initial: &[f64],
    transforms: &[Transform],
    options: &LeastSquaresOptions,
) -> Result<LeastSquaresReport, OptimizeError>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    assert_eq!(initial.len(), transforms.len());
    let z0: Vec<f64> = initial
        .iter()
        .zip(transforms)
        .map(|(&y, t)| t.to_internal(y))
        .collect();
    let eval = |z: &[f64]| -> Option<Vec<f64>> {
        let params: Vec<f64> = z
            .iter()
            .zip(transforms)
            .map(|(&z, t)| t.to_param(z))
            .collect();
        let r = residuals(&params)?;
        if r.iter().all(|v| v.is_finite()) {
            Some(r)
        } else {
            None
        }
    };

    let lm = levenberg_marquardt(&eval, &z0, options);
    let internal = match lm {
        Ok(report) => report,
        // Jacobian failure mid-run: derivative-free fallback
        Err(OptimizeError::NonFiniteResidual) => nelder_mead(&eval, &z0, options)?,
        Err(e) => return Err(e),
    };

    let params: Vec<f64> = internal
        .z
        .iter()
        .zip(transforms)
        .map(|(&z, t)| t.to_param(z))
        .collect();
    let stderr: Vec<f64> = internal
        .stderr_z
        .iter()
        .zip(internal.z.iter())
        .zip(transforms)
        .map(|((&s, &z), t)| s * t.dparam_dz(z).abs())
        .collect();
    let at_bound = internal
        .z
        .iter()
        .zip(transforms)
        .map(|(&z, t)| t.at_bound(z))
        .collect();

    Ok(LeastSquaresReport {
        params,
        cost: internal.cost,
        cost_history: internal.cost_history,
        iterations: internal.iterations,
        converged: internal.converged,
        gradient_norm: internal.gradient_norm,
        initial_gradient_norm: internal.initial_gradient_norm,
        stderr,
        at_bound,
    })
}

struct InternalReport {
    z: Vec<f64>,
    cost: f64,
    cost_history: Vec<f64>,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
    initial_gradient_norm: f64,
    stderr_z: Vec<f64>,
}

fn jacobian<F>(eval: &F, z: &[f64], rel_step: f64, m: usize) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = z.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = rel_step * z[j].abs().max(1.0);
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[j] += h;
        zm[j] -= h;
        let rp = eval(&zp)?;
        let rm = eval(&zm)?;
        if rp.len() != m || rm.len() != m {
            return None;
        }
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    if jac.iter().all(|v| v.is_finite()) {
        Some(jac)
    } else {
        None
    }
}

fn levenberg_marquardt<F>(
    eval: &F,
    z0: &[f64],
    options: &LeastSquaresOptions,
) -> Result<InternalReport, OptimizeError>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut z = z0.to_vec();
    let r0 = eval(&z).ok_or(OptimizeError::InitialEvaluationFailed)?;
    let m = r0.len();
    let n = z.len();
    let mut residual = DVector::from_vec(r0);
    let mut cost = residual.norm_squared();
    let mut cost_history = vec![cost];

    let mut jac =
        jacobian(eval, &z, options.rel_step, m).ok_or(OptimizeError::NonFiniteResidual)?;
    let mut gradient = jac.transpose() * &residual;
    let initial_gradient_norm = gradient.norm();

    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;

        let jtj = jac.transpose() * &jac;
        // Marquardt scaling with a floor against zero columns
        let mut lhs = jtj.clone();
        for i in 0..n {
            lhs[(i, i)] += mu * jtj[(i, i)].max(1e-30);
        }
        let rhs = -(jac.transpose() * &residual);
        let step = match lhs.lu().solve(&rhs) {
            Some(s) => s,
            None => {
                mu *= 10.0;
                continue;
            }
        };

        let z_new: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        match eval(&z_new) {
            Some(r_new) => {
                let r_new = DVector::from_vec(r_new);
                let cost_new = r_new.norm_squared();
                if cost_new < cost {
                    let improvement = cost - cost_new;
                    z = z_new;
                    residual = r_new;
                    cost = cost_new;
                    cost_history.push(cost);
                    mu = (mu / 3.0).max(1e-12);
                    jac = jacobian(eval, &z, options.rel_step, m)
                        .ok_or(OptimizeError::NonFiniteResidual)?;
                    gradient = jac.transpose() * &residual;
                    if improvement <= options.ftol * cost.max(f64::MIN_POSITIVE) || cost == 0.0 {
                        converged = true;
                        break;
                    }
                } else {
                    mu *= 4.0;
                    if mu > 1e12 {
                        // stuck: treat the current point as converged
                        converged = true;
                        break;
                    }
                }
            }
            None => {
                mu *= 10.0;
                if mu > 1e12 {
                    return Err(OptimizeError::NonFiniteResidual);
                }
            }
        }
    }

    let stderr_z = standard_errors(&jac, cost, m, n);
    Ok(InternalReport {
        z,
        cost,
        cost_history,
        iterations,
        converged,
        gradient_norm: gradient.norm(),
        initial_gradient_norm,
        stderr_z,
    })
}

/// Parameter standard errors from the linearized covariance (J^T J)^-1 s^2.
fn standard_errors(jac: &DMatrix<f64>, cost: f64, m: usize, n: usize) -> Vec<f64> {
    if m <= n {
        return vec![0.0; n];
    }
    let jtj = jac.transpose() * jac;
    match jtj.try_inverse() {
        Some(cov) => {
            let s2 = cost / (m - n) as f64;
            (0..n).map(|i| (cov[(i, i)] * s2).max(0.0).sqrt()).collect()
        }
        None => vec![0.0; n],
    }
}

fn nelder_mead<F>(
    eval: &F,
    z0: &[f64],
    options: &LeastSquaresOptions,
) -> Result<InternalReport, OptimizeError>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let cost_fn = |z: &[f64]| -> Option<f64> { eval(z).map(|r| r.iter().map(|v| v * v).sum()) };
    let n = z0.len();
    let f0 = cost_fn(z0).ok_or(OptimizeError::InitialEvaluationFailed)?;

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(z0.to_vec(), f0)];
    for j in 0..n {
        let mut v = z0.to_vec();
        v[j] += 0.05 * v[j].abs().max(1.0);
        let f = cost_fn(&v).unwrap_or(f64::INFINITY);
        simplex.push((v, f));
    }

    let mut cost_history = vec![f0];
    let mut iterations = 0;
    let max_iter = options.max_iterations * 4;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let x_scale = 1.0 + simplex[0].0.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if worst - best <= options.ftol * best.abs().max(f64::MIN_POSITIVE)
            && diameter <= 1e-8 * x_scale
        {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + (centroid[j] - simplex[n].0[j]))
            .collect();
        let fr = cost_fn(&reflect).unwrap_or(f64::INFINITY);

        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - simplex[n].0[j]))
                .collect();
            let fe = cost_fn(&expand).unwrap_or(f64::INFINITY);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 0.5 * (simplex[n].0[j] - centroid[j]))
                .collect();
            let fc = cost_fn(&contract).unwrap_or(f64::INFINITY);
            if fc < simplex[n].1 {
                simplex[n] = (contract, fc);
            } else {
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best_point)
                        .map(|(v, b)| b + 0.5 * (v - b))
                        .collect();
                    let fs = cost_fn(&shrunk).unwrap_or(f64::INFINITY);
                    *entry = (shrunk, fs);
                }
            }
        }
        if simplex[0].1 < *cost_history.last().unwrap() {
            cost_history.push(simplex[0].1);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let (z, cost) = simplex[0].clone();
    Ok(InternalReport {
        stderr_z: vec![0.0; n],
        gradient_norm: 0.0,
        initial_gradient_norm: 0.0,
        z,
        cost,
        cost_history,
        iterations,
        converged,
    })
}
