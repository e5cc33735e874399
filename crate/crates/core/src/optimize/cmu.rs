//! μ-tandem bound (PB-λ form) and its μ = 0 special case, the tandem bound.

use log::warn;

use super::{alternate, log_ratio, Alternating, Optimized, OptimizerConfig, TraceRecord};
use crate::bounds::{
    cmu_tnd_final_bound, kl_divergence, pb_lambda_lower_with, pb_lambda_upper_with, tnd_bound, BoundReport,
    Posterior,
};
use crate::grids::{snap, Grids};
use crate::lossstats::LossStats;
use crate::{Error, Result};

/// γ used when the Gibbs loss is exactly zero and γ* is unbounded.
pub const GAMMA_CAP: f64 = 1e6;

/// λ* = 2/(√(2n·emp/complexity + 1) + 1), the minimizer of the PB-λ upper
/// bound over λ ∈ (0, 2).
pub(crate) fn lambda_star_with(emp: f64, complexity: f64, n: usize) -> f64 {
    2.0 / ((2.0 * n as f64 * emp / complexity + 1.0).sqrt() + 1.0)
}

/// λ* for the tandem term with complexity 2KL + ln(4k√m/δ).
pub fn tnd_lambda_star(tandem: f64, kl: f64, m: usize, delta: f64, k: usize) -> f64 {
    let c = 2.0 * kl + (4.0 * k as f64 * (m as f64).sqrt() / delta).ln();
    lambda_star_with(tandem, c, m)
}

/// γ* = √((2KL + ln(16k²n/δ²))/(n·gibbs)), the maximizer of the PB-λ lower
/// bound. Undefined for zero Gibbs loss.
pub fn gibbs_gamma_star(gibbs: f64, kl: f64, n: usize, delta: f64, k: usize) -> Result<f64> {
    if gibbs <= 0.0 {
        return Err(Error::ZeroGibbsLoss);
    }
    let kf = k as f64;
    let nf = n as f64;
    Ok(((2.0 * kl + (16.0 * kf * kf * nf / (delta * delta)).ln()) / (nf * gibbs)).sqrt())
}

/// μ* = (½L_G − U_T)/(½ − L_G).
pub fn cmu_mu_star(u_t: f64, l_g: f64) -> Result<f64> {
    if l_g >= 0.5 {
        return Err(Error::Domain {
            name: "gibbs lower bound",
            value: l_g,
            reason: "must be < 0.5",
        });
    }
    Ok((0.5 * l_g - u_t) / (0.5 - l_g))
}

/// Gradient of f(ρ) = a·E_ρ²[L̂] − 2b·E_ρ[L̂] + 2c·KL(ρ‖π) with
/// a = 1/(1 − λ/2), b = μ(1 − γ/2), c = 1/(λ(1 − λ/2)m) + μ/(γn).
pub fn cmu_gradient(
    stats: &LossStats,
    rho: &[f64],
    prior: &[f64],
    mu: f64,
    lambda: f64,
    gamma: f64,
) -> Vec<f64> {
    let (m, n) = (stats.m_min() as f64, stats.n_min() as f64);
    let s = 1.0 - 0.5 * lambda;
    let a = 1.0 / s;
    let (b, c) = if mu == 0.0 {
        (0.0, 1.0 / (lambda * s * m))
    } else {
        (
            mu * (1.0 - 0.5 * gamma),
            1.0 / (lambda * s * m) + mu / (gamma * n),
        )
    };
    let tr = stats.tandem().mul_vec(rho);
    let lr = log_ratio(rho, prior);
    (0..rho.len())
        .map(|h| 2.0 * (a * tr[h] - b * stats.gibbs()[h] + c * (1.0 + lr[h])))
        .collect()
}

/// The function whose gradient [`cmu_gradient`] returns.
pub fn cmu_surrogate(stats: &LossStats, rho: &[f64], prior: &[f64], mu: f64, lambda: f64, gamma: f64) -> f64 {
    let (m, n) = (stats.m_min() as f64, stats.n_min() as f64);
    let s = 1.0 - 0.5 * lambda;
    let (b, c) = if mu == 0.0 {
        (0.0, 1.0 / (lambda * s * m))
    } else {
        (
            mu * (1.0 - 0.5 * gamma),
            1.0 / (lambda * s * m) + mu / (gamma * n),
        )
    };
    stats.tandem_expectation(rho) / s - 2.0 * b * stats.gibbs_expectation(rho)
        + 2.0 * c * kl_divergence(rho, prior)
}

#[derive(Debug, Clone, Copy)]
struct Params {
    mu: f64,
    mu_continuous: Option<f64>,
    lambda: f64,
    gamma: f64,
}

struct Problem<'a> {
    stats: &'a LossStats,
    prior: Vec<f64>,
    m: usize,
    n: usize,
    /// ln(F√m/δ) and ln(F√n/δ) with F = 4k, or F = 2 for the plain tandem bound.
    log_t: f64,
    log_g: f64,
    /// None pins μ to zero.
    mu_grid: Option<&'a [f64]>,
}

impl Alternating for Problem<'_> {
    type Params = Params;

    fn prior(&self) -> &[f64] {
        &self.prior
    }

    fn value(&self, rho: &[f64], p: &Params) -> f64 {
        let kl = kl_divergence(rho, &self.prior);
        let ut = pb_lambda_upper_with(
            self.stats.tandem_expectation(rho),
            2.0 * kl + self.log_t,
            self.m,
            p.lambda,
        );
        if p.mu == 0.0 {
            return ut / 0.25;
        }
        let lg = pb_lambda_lower_with(
            self.stats.gibbs_expectation(rho),
            kl + self.log_g,
            self.n,
            p.gamma,
        );
        let s = 0.5 - p.mu;
        (ut - 2.0 * p.mu * lg + p.mu * p.mu) / (s * s)
    }

    fn gradient(&self, rho: &[f64], p: &Params) -> Vec<f64> {
        let s = 0.5 - p.mu;
        let scale = 1.0 / (s * s);
        cmu_gradient(self.stats, rho, &self.prior, p.mu, p.lambda, p.gamma)
            .into_iter()
            .map(|g| g * scale)
            .collect()
    }

    fn params(&self, rho: &[f64]) -> Result<Params> {
        let kl = kl_divergence(rho, &self.prior);
        let t = self.stats.tandem_expectation(rho);
        let lambda = lambda_star_with(t, 2.0 * kl + self.log_t, self.m);
        let Some(grid) = self.mu_grid else {
            return Ok(Params {
                mu: 0.0,
                mu_continuous: None,
                lambda,
                gamma: f64::NAN,
            });
        };
        let g = self.stats.gibbs_expectation(rho);
        let nf = self.n as f64;
        let gamma = if g > 0.0 {
            (2.0 * (kl + self.log_g) / (nf * g)).sqrt()
        } else {
            warn!("zero Gibbs loss: gamma* is unbounded, using {GAMMA_CAP}");
            GAMMA_CAP
        };
        let ut = pb_lambda_upper_with(t, 2.0 * kl + self.log_t, self.m, lambda);
        let lg = pb_lambda_lower_with(g, kl + self.log_g, self.n, gamma);
        let (mu, mu_continuous) = match cmu_mu_star(ut, lg) {
            Ok(c) => (snap(grid, c).1, Some(c)),
            Err(_) => {
                // Outside the closed form's range: take the grid minimizer.
                let f = |mu: f64| (ut - 2.0 * mu * lg + mu * mu) / ((0.5 - mu) * (0.5 - mu));
                let best = grid
                    .iter()
                    .copied()
                    .fold(grid[0], |b, mu| if f(mu) < f(b) { mu } else { b });
                (best, None)
            }
        };
        Ok(Params {
            mu,
            mu_continuous,
            lambda,
            gamma,
        })
    }

    fn record(&self, outer: usize, bound: f64, best: f64, p: &Params, inner: usize) -> TraceRecord {
        let pinned = self.mu_grid.is_none();
        TraceRecord {
            outer,
            bound,
            best,
            mu: (!pinned).then_some(p.mu),
            mu_continuous: p.mu_continuous,
            lambda: Some(p.lambda),
            gamma: (!pinned).then_some(p.gamma),
            inner_iterations: inner,
        }
    }
}

fn uniform(h: usize) -> Vec<f64> {
    vec![1.0 / h as f64; h]
}

/// Minimize the μ-tandem bound with union factor 4k_μ over the grid.
pub fn optimize_cmu_tnd(
    stats: &LossStats,
    grids: &Grids,
    delta: f64,
    config: &OptimizerConfig,
) -> Result<Optimized> {
    let k = grids.k_mu();
    let factor = 4.0 * k as f64;
    let problem = Problem {
        stats,
        prior: uniform(stats.n_hypotheses()),
        m: stats.m_min(),
        n: stats.n_min(),
        log_t: (factor * (stats.m_min() as f64).sqrt() / delta).ln(),
        log_g: (factor * (stats.n_min() as f64).sqrt() / delta).ln(),
        mu_grid: Some(grids.mu_grid()),
    };
    let (rho, p, objective, trace) = alternate(&problem, config)?;
    let posterior = Posterior::new(rho, problem.prior.clone())?;
    let report = cmu_tnd_final_bound(stats, &posterior, delta, p.mu, p.lambda, p.gamma, k)?;
    Ok(Optimized {
        posterior,
        report,
        trace,
        objective,
    })
}

/// CμTND at a fixed posterior with closed-form (μ, λ, γ).
pub fn cmu_tnd_at(stats: &LossStats, grids: &Grids, delta: f64, post: &Posterior) -> Result<BoundReport> {
    let k = grids.k_mu();
    let factor = 4.0 * k as f64;
    let problem = Problem {
        stats,
        prior: post.prior().to_vec(),
        m: stats.m_min(),
        n: stats.n_min(),
        log_t: (factor * (stats.m_min() as f64).sqrt() / delta).ln(),
        log_g: (factor * (stats.n_min() as f64).sqrt() / delta).ln(),
        mu_grid: Some(grids.mu_grid()),
    };
    let p = problem.params(post.rho())?;
    cmu_tnd_final_bound(stats, post, delta, p.mu, p.lambda, p.gamma, k)
}

/// Minimize the tandem bound: the μ-tandem machinery with μ pinned to 0 and
/// the plain ln(2√m/δ) term. The report is the kl form at the optimum.
pub fn optimize_tnd(stats: &LossStats, delta: f64, config: &OptimizerConfig) -> Result<Optimized> {
    let problem = Problem {
        stats,
        prior: uniform(stats.n_hypotheses()),
        m: stats.m_min(),
        n: stats.n_min(),
        log_t: (2.0 * (stats.m_min() as f64).sqrt() / delta).ln(),
        log_g: 0.0,
        mu_grid: None,
    };
    let (rho, p, objective, trace) = alternate(&problem, config)?;
    let posterior = Posterior::new(rho, problem.prior.clone())?;
    let mut report = tnd_bound(stats, &posterior, delta)?;
    report.params.lambda = Some(p.lambda);
    report.terms.insert("pb_lambda_raw".into(), objective);
    Ok(Optimized {
        posterior,
        report,
        trace,
        objective,
    })
}
