//! Minimization of the bounds over the posterior and their parameters.
//!
//! ρ is optimized by iRProp+ with a Euclidean projection onto the simplex
//! after every step; λ, γ and μ are updated in closed form between ρ runs
//! until the bound stops improving.

mod cmu;
mod co;
mod fo;

pub use cmu::{
    cmu_gradient, cmu_mu_star, cmu_surrogate, cmu_tnd_at, gibbs_gamma_star, optimize_cmu_tnd, optimize_tnd,
    tnd_lambda_star, GAMMA_CAP,
};
pub use co::{
    co_coefficients, co_gamma_continuous, co_gamma_star, co_gradient, co_lambda_continuous, co_lambda_star,
    co_surrogate, co_tnd_at, co_tnd_mu_profile, grid_search_quasiconvex, optimize_co_tnd, GridSearch,
};
pub use fo::optimize_fo;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundReport, Posterior};
use crate::{Error, Result};

/// Floor applied to ρ before taking ln(ρ/π) in gradients.
pub const RHO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for IrpropConfig {
    fn default() -> Self {
        IrpropConfig {
            eta_plus: 1.2,
            eta_minus: 0.5,
            step_init: 0.01,
            step_min: 1e-8,
            step_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Inner iterations without improvement before iRProp+ stops.
    pub patience: usize,
    /// Outer alternation stops once the bound improves by less than this.
    pub alternation_tol: f64,
    pub irprop: IrpropConfig,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            patience: 10,
            alternation_tol: 1e-9,
            irprop: IrpropConfig::default(),
            max_outer_iters: 100,
            max_inner_iters: 2000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.irprop;
        let ok = p.eta_plus > 1.0
            && p.eta_minus > 0.0
            && p.eta_minus < 1.0
            && p.step_min > 0.0
            && p.step_max >= p.step_min
            && p.step_init > 0.0
            && self.alternation_tol > 0.0
            && self.patience > 0
            && self.max_outer_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid optimizer config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Patience,
    MaxIterations,
    NonFinite,
    Converged,
}

/// One outer iteration: parameters in force and the bound they gave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub bound: f64,
    pub best: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_continuous: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    /// (μ, optimized bound) for every μ the search evaluated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu_evaluations: Vec<(f64, f64)>,
    #[serde(default)]
    pub fallback_scan: bool,
}

impl OptimizationTrace {
    fn new() -> Self {
        OptimizationTrace {
            records: Vec::new(),
            termination: Termination::Converged,
            mu_evaluations: Vec::new(),
            fallback_scan: false,
        }
    }

    /// Bound at the first outer iteration, i.e. at ρ = π.
    pub fn initial_bound(&self) -> Option<f64> {
        self.records.first().map(|r| r.bound)
    }

    /// Best bound over all outer iterations.
    pub fn final_bound(&self) -> Option<f64> {
        self.records.last().map(|r| r.best)
    }

    /// One JSON object per outer iteration.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Result of an optimizer run.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub posterior: Posterior,
    pub report: BoundReport,
    pub trace: OptimizationTrace,
    /// Minimized objective value (the optimization-time form of the bound).
    pub objective: f64,
}

/// Euclidean projection onto {x ≥ 0, Σx = 1} by sort and threshold.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone)]
pub struct IrpropResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after every iteration.
    pub values: Vec<f64>,
}

/// Gradient component within the simplex: centred over the support, with
/// outward components at zero coordinates removed.
fn tangent(x: &[f64], mut g: Vec<f64>) -> Vec<f64> {
    let (sum, count) = x
        .iter()
        .zip(&g)
        .filter(|(xi, _)| **xi > 0.0)
        .fold((0.0, 0usize), |(s, c), (_, gi)| (s + gi, c + 1));
    if count == 0 {
        return g;
    }
    let mean = sum / count as f64;
    for (gi, &xi) in g.iter_mut().zip(x) {
        *gi -= mean;
        if xi <= 0.0 && *gi > 0.0 {
            *gi = 0.0;
        }
    }
    g
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// iRProp+ on the simplex, driven by the gradient's component tangent to
/// the simplex and followed by a projection after every step. Returns the best iterate seen; stops after
/// `patience` iterations without improvement.
pub fn irprop_plus_minimize(
    mut objective: impl FnMut(&[f64]) -> f64,
    mut gradient: impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    config: &OptimizerConfig,
) -> Result<IrpropResult> {
    let p = config.irprop;
    let h = x0.len();
    let mut x = project_simplex(x0);
    let mut f = objective(&x);
    if !f.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective at the starting point is {f}"
        )));
    }
    let mut best_x = x.clone();
    let mut best = f;
    let mut f_prev = f;
    let mut step = vec![p.step_init; h];
    let mut g_prev = vec![0.0; h];
    let mut delta_prev = vec![0.0; h];
    let mut stale = 0;
    let mut values = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < config.max_inner_iters {
        iterations += 1;
        let mut g = tangent(&x, gradient(&x));
        let mut next = x.clone();
        for i in 0..h {
            let s = g_prev[i] * g[i];
            if s > 0.0 {
                step[i] = (step[i] * p.eta_plus).min(p.step_max);
                delta_prev[i] = -sign(g[i]) * step[i];
                next[i] += delta_prev[i];
            } else if s < 0.0 {
                step[i] = (step[i] * p.eta_minus).max(p.step_min);
                if f > f_prev {
                    next[i] -= delta_prev[i];
                }
                g[i] = 0.0;
                delta_prev[i] = 0.0;
            } else {
                delta_prev[i] = -sign(g[i]) * step[i];
                next[i] += delta_prev[i];
            }
        }
        g_prev = g;
        x = project_simplex(&next);
        f_prev = f;
        f = objective(&x);
        values.push(f);
        if !f.is_finite() {
            termination = Termination::NonFinite;
            break;
        }
        if f < best {
            best = f;
            best_x.clone_from(&x);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                termination = Termination::Patience;
                break;
            }
        }
    }
    Ok(IrpropResult {
        x: best_x,
        value: best,
        iterations,
        termination,
        values,
    })
}

/// A bound minimized by alternating closed-form parameter updates with
/// iRProp+ over ρ.
pub(crate) trait Alternating {
    type Params: Copy;
    fn prior(&self) -> &[f64];
    fn value(&self, rho: &[f64], p: &Self::Params) -> f64;
    fn gradient(&self, rho: &[f64], p: &Self::Params) -> Vec<f64>;
    fn params(&self, rho: &[f64]) -> Result<Self::Params>;
    fn record(&self, outer: usize, bound: f64, best: f64, p: &Self::Params, inner: usize) -> TraceRecord;
}

/// Starting from ρ = π, alternate parameter updates and ρ minimization
/// until the best bound improves by less than the tolerance. Returns the
/// best (ρ, parameters, value) seen and the trace.
pub(crate) fn alternate<A: Alternating>(
    problem: &A,
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, A::Params, f64, OptimizationTrace)> {
    config.validate()?;
    let mut trace = OptimizationTrace::new();
    let mut rho = problem.prior().to_vec();
    let mut p = problem.params(&rho)?;
    let v = problem.value(&rho, &p);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("bound at the prior is {v}")));
    }
    let mut best = (rho.clone(), p, v);
    trace.records.push(problem.record(0, v, v, &p, 0));
    trace.termination = Termination::MaxIterations;
    for outer in 1..=config.max_outer_iters {
        let before = best.2;
        let inner = irprop_plus_minimize(
            |x| problem.value(x, &p),
            |x| problem.gradient(x, &p),
            &rho,
            config,
        )?;
        rho = inner.x;
        // Only states with parameters computed at their own ρ count, so the
        // result is a point of the closed-form profile.
        p = problem.params(&rho)?;
        let v = problem.value(&rho, &p);
        if v < best.2 {
            best = (rho.clone(), p, v);
        }
        trace
            .records
            .push(problem.record(outer, v, best.2, &p, inner.iterations));
        log::debug!("outer {outer}: bound {v}, best {}", best.2);
        if inner.termination == Termination::NonFinite {
            trace.termination = Termination::NonFinite;
            break;
        }
        if before - best.2 < config.alternation_tol {
            trace.termination = Termination::Converged;
            break;
        }
    }
    Ok((best.0, best.1, best.2, trace))
}

/// ln(ρ/π) with ρ floored at [`RHO_FLOOR`].
pub(crate) fn log_ratio(rho: &[f64], prior: &[f64]) -> Vec<f64> {
    rho.iter()
        .zip(prior)
        .map(|(&r, &p)| (r.max(RHO_FLOOR) / p).ln())
        .collect()
}
