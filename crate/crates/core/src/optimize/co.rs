//! Offset-tandem bound: per-μ alternating minimization over (λ, γ, ρ) and a
//! binary search over the μ grid.

use std::f64::consts::E;
use std::sync::Arc;

use log::{info, warn};

use super::{alternate, log_ratio, Alternating, OptimizationTrace, Optimized, OptimizerConfig, TraceRecord};
use crate::bounds::{co_tnd_bound, co_tnd_value, kl_divergence, variance_bound, BoundReport, Posterior};
use crate::grids::{snap, GridSet, Grids};
use crate::lossstats::{LossStats, MuTandemStats};
use crate::specfun::{lambert_w0, phi_over_square};
use crate::{par, Result};

/// Unsnapped λ* = 2(n−1)/n·(√(2(n−1)V/(K²C)) + 1) + 1)⁻¹ for complexity C.
pub fn co_lambda_continuous(variance: f64, complexity: f64, n: usize, c_range: f64) -> f64 {
    let nf = n as f64;
    let r = (2.0 * (nf - 1.0) * variance / (c_range * c_range * complexity) + 1.0).sqrt();
    2.0 * (nf - 1.0) / nf / (r + 1.0)
}

/// λ* for the variance bound, snapped to `grid`.
pub fn co_lambda_star(
    variance: f64,
    kl: f64,
    n: usize,
    delta: f64,
    k: u64,
    c_range: f64,
    grid: &[f64],
) -> f64 {
    let c = 2.0 * kl + (2.0 * k as f64 / delta).ln();
    snap(grid, co_lambda_continuous(variance, c, n, c_range)).1
}

/// Unsnapped γ* = (W₀(((1−μ)⁴C/(n·U_V) − 1)/e) + 1)/(1−μ)².
pub fn co_gamma_continuous(mu: f64, complexity: f64, n: usize, u_v: f64) -> Result<f64> {
    let b = (1.0 - mu) * (1.0 - mu);
    let arg = (b * b * complexity / (n as f64 * u_v) - 1.0) / E;
    Ok((lambert_w0(arg)? + 1.0) / b)
}

/// γ* for the Bennett term given the variance upper bound `u_v`, snapped
/// to `grid`.
#[allow(clippy::too_many_arguments)]
pub fn co_gamma_star(mu: f64, kl: f64, n: usize, delta: f64, k: u64, u_v: f64, grid: &[f64]) -> Result<f64> {
    let c = 2.0 * kl + (2.0 * k as f64 / delta).ln();
    Ok(snap(grid, co_gamma_continuous(mu, c, n, u_v)?).1)
}

/// Gradient of f(ρ) = E_ρ²[L̂_μ] + a·E_ρ²[V̂_μ] + 2b·KL(ρ‖π).
pub fn co_gradient(mu_stats: &MuTandemStats, rho: &[f64], prior: &[f64], a: f64, b: f64) -> Vec<f64> {
    let lr = mu_stats.loss.mul_vec(rho);
    let vr = mu_stats.variance.mul_vec(rho);
    let logs = log_ratio(rho, prior);
    (0..rho.len())
        .map(|h| 2.0 * (lr[h] + a * vr[h] + b * (1.0 + logs[h])))
        .collect()
}

/// The function whose gradient [`co_gradient`] returns.
pub fn co_surrogate(mu_stats: &MuTandemStats, rho: &[f64], prior: &[f64], a: f64, b: f64) -> f64 {
    mu_stats.loss.quad_form(rho) + a * mu_stats.variance.quad_form(rho) + 2.0 * b * kl_divergence(rho, prior)
}

/// Coefficients (a, b) of [`co_gradient`] at fixed (μ, λ, γ) and sample size n.
pub fn co_coefficients(mu: f64, lambda: f64, gamma: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let s = 1.0 - nf * lambda / (2.0 * (nf - 1.0));
    let b_mu = (1.0 - mu) * (1.0 - mu);
    let k = crate::lossstats::mu_tandem_range(mu);
    let coef = phi_over_square(gamma * b_mu) * gamma;
    (coef / s, 1.0 / (gamma * nf) + coef * k * k / (nf * lambda * s))
}

#[derive(Debug, Clone, Copy)]
struct CoParams {
    lambda: f64,
    gamma: f64,
}

struct CoProblem {
    mu_stats: MuTandemStats,
    prior: Vec<f64>,
    n: usize,
    delta: f64,
    k: u64,
    grid: Arc<GridSet>,
}

impl Alternating for CoProblem {
    type Params = CoParams;

    fn prior(&self) -> &[f64] {
        &self.prior
    }

    fn value(&self, rho: &[f64], p: &CoParams) -> f64 {
        let kl = kl_divergence(rho, &self.prior);
        co_tnd_value(
            self.mu_stats.loss.quad_form(rho),
            self.mu_stats.variance.quad_form(rho),
            kl,
            self.n,
            self.delta,
            self.mu_stats.mu,
            p.lambda,
            p.gamma,
            self.k,
        )
        .map(|t| t.raw)
        .unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, rho: &[f64], p: &CoParams) -> Vec<f64> {
        let mu = self.mu_stats.mu;
        let (a, b) = co_coefficients(mu, p.lambda, p.gamma, self.n);
        let scale = 1.0 / ((0.5 - mu) * (0.5 - mu));
        co_gradient(&self.mu_stats, rho, &self.prior, a, b)
            .into_iter()
            .map(|g| g * scale)
            .collect()
    }

    fn params(&self, rho: &[f64]) -> Result<CoParams> {
        let kl = kl_divergence(rho, &self.prior);
        let v = self.mu_stats.variance.quad_form(rho);
        let k_range = self.mu_stats.k_mu;
        let lambda = co_lambda_star(v, kl, self.n, self.delta, self.k, k_range, &self.grid.lambda_grid);
        let c = 2.0 * kl + (2.0 * self.k as f64 / self.delta).ln();
        let u_v = variance_bound(v, c, self.n, lambda, k_range)?;
        let gamma = co_gamma_star(
            self.mu_stats.mu,
            kl,
            self.n,
            self.delta,
            self.k,
            u_v,
            &self.grid.gamma_grid,
        )?;
        Ok(CoParams { lambda, gamma })
    }

    fn record(&self, outer: usize, bound: f64, best: f64, p: &CoParams, inner: usize) -> TraceRecord {
        TraceRecord {
            outer,
            bound,
            best,
            mu: Some(self.mu_stats.mu),
            mu_continuous: None,
            lambda: Some(p.lambda),
            gamma: Some(p.gamma),
            inner_iterations: inner,
        }
    }
}

/// Outcome of a search over grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub index: usize,
    pub value: f64,
    pub fallback: bool,
    /// Every (index, value) evaluated, in index order.
    pub evaluated: Vec<(usize, f64)>,
}

/// Binary search for the minimizer of `f` over 0..k assuming `f` is
/// quasiconvex in the index. If the probed values contradict that, every
/// index is evaluated and the first minimizer returned.
pub fn grid_search_quasiconvex<F>(k: usize, f: F) -> Result<GridSearch>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    assert!(k > 0, "empty grid");
    let mut memo: Vec<Option<f64>> = vec![None; k];
    let eval = |i: usize, memo: &mut Vec<Option<f64>>| -> Result<f64> {
        if let Some(v) = memo[i] {
            return Ok(v);
        }
        let v = f(i)?;
        memo[i] = Some(v);
        Ok(v)
    };
    let (mut lo, mut hi) = (0, k - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if eval(mid, &mut memo)? <= eval(mid + 1, &mut memo)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let v_lo = eval(lo, &mut memo)?;
    if lo > 0 {
        eval(lo - 1, &mut memo)?;
    }
    if lo + 1 < k {
        eval(lo + 1, &mut memo)?;
    }
    let probed: Vec<(usize, f64)> = memo
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let consistent = probed.windows(2).all(|w| {
        let ((i, a), (_, b)) = (w[0], w[1]);
        if i < lo {
            a >= b
        } else {
            a <= b
        }
    });
    if consistent {
        return Ok(GridSearch {
            index: lo,
            value: v_lo,
            fallback: false,
            evaluated: probed,
        });
    }
    warn!("grid profile is not quasiconvex on the probed points; scanning all {k} points");
    let missing: Vec<usize> = (0..k).filter(|&i| memo[i].is_none()).collect();
    let values = par::map_slice(&missing, |&i| f(i));
    for (i, v) in missing.into_iter().zip(values) {
        memo[i] = Some(v?);
    }
    let all: Vec<(usize, f64)> = memo.iter().map(|v| v.expect("scanned")).enumerate().collect();
    let (index, value) = all
        .iter()
        .copied()
        .fold(all[0], |b, (i, v)| if v < b.1 { (i, v) } else { b });
    Ok(GridSearch {
        index,
        value,
        fallback: true,
        evaluated: all,
    })
}

struct PerMu {
    rho: Vec<f64>,
    params: CoParams,
    value: f64,
    trace: OptimizationTrace,
    mu_stats: MuTandemStats,
    grid: Arc<GridSet>,
}

fn optimize_at_mu(
    stats: &LossStats,
    grids: &Grids,
    mu: f64,
    delta: f64,
    config: &OptimizerConfig,
) -> Result<PerMu> {
    let n = stats.m_min();
    let grid = grids.for_mu(n, mu)?;
    let h = stats.n_hypotheses();
    let problem = CoProblem {
        mu_stats: stats.mu_tandem(mu)?,
        prior: vec![1.0 / h as f64; h],
        n,
        delta,
        k: grids.k_mu() as u64,
        grid: Arc::clone(&grid),
    };
    let (rho, params, value, trace) = alternate(&problem, config)?;
    Ok(PerMu {
        rho,
        params,
        value,
        trace,
        mu_stats: problem.mu_stats,
        grid,
    })
}

/// Optimized bound (union factor k_μ) at every μ of the grid.
pub fn co_tnd_mu_profile(
    stats: &LossStats,
    grids: &Grids,
    delta: f64,
    config: &OptimizerConfig,
) -> Result<Vec<f64>> {
    let mus = grids.mu_grid();
    par::map_slice(mus, |&mu| {
        optimize_at_mu(stats, grids, mu, delta, config).map(|r| r.value)
    })
    .into_iter()
    .collect()
}

/// COTND at a fixed posterior: closed-form (λ, γ) per μ, scanning the
/// whole μ grid.
pub fn co_tnd_at(stats: &LossStats, grids: &Grids, delta: f64, post: &Posterior) -> Result<BoundReport> {
    let n = stats.m_min();
    let rho = post.rho();
    let evals = par::map_slice(
        grids.mu_grid(),
        |&mu| -> Result<(f64, CoParams, MuTandemStats, Arc<GridSet>)> {
            let grid = grids.for_mu(n, mu)?;
            let problem = CoProblem {
                mu_stats: stats.mu_tandem(mu)?,
                prior: post.prior().to_vec(),
                n,
                delta,
                k: grids.k_mu() as u64,
                grid,
            };
            let p = problem.params(rho)?;
            Ok((problem.value(rho, &p), p, problem.mu_stats, problem.grid))
        },
    );
    let mut best: Option<(f64, CoParams, MuTandemStats, Arc<GridSet>)> = None;
    for e in evals {
        let e = e?;
        if best.as_ref().is_none_or(|b| e.0 < b.0) {
            best = Some(e);
        }
    }
    let (value, p, mu_stats, grid) = best.expect("mu grid is non-empty");
    let k_report = (grids.k_mu() * grid.lambda_grid.len() * grid.gamma_grid.len()) as u64;
    let mut report = co_tnd_bound(stats, &mu_stats, post, delta, p.gamma, p.lambda, k_report)?;
    report.terms.insert("optimization_raw".into(), value);
    Ok(report)
}

/// Minimize the offset-tandem bound: binary search over the μ grid with an
/// inner alternating minimization per μ using union factor k_μ, then report
/// with the full factor k_μ·k_λ·k_γ.
pub fn optimize_co_tnd(
    stats: &LossStats,
    grids: &Grids,
    delta: f64,
    config: &OptimizerConfig,
) -> Result<Optimized> {
    config.validate()?;
    let mus = grids.mu_grid();
    let search = grid_search_quasiconvex(mus.len(), |i| {
        optimize_at_mu(stats, grids, mus[i], delta, config).map(|r| r.value)
    })?;
    if search.fallback {
        info!("mu search fell back to a full scan");
    }
    let best = optimize_at_mu(stats, grids, mus[search.index], delta, config)?;
    let posterior = Posterior::new(
        best.rho,
        vec![1.0 / stats.n_hypotheses() as f64; stats.n_hypotheses()],
    )?;
    let k_report = (grids.k_mu() * best.grid.lambda_grid.len() * best.grid.gamma_grid.len()) as u64;
    let mut report = co_tnd_bound(
        stats,
        &best.mu_stats,
        &posterior,
        delta,
        best.params.gamma,
        best.params.lambda,
        k_report,
    )?;
    report.terms.insert("optimization_raw".into(), best.value);
    let mut trace = best.trace;
    trace.mu_evaluations = search.evaluated.iter().map(|&(i, v)| (mus[i], v)).collect();
    trace.fallback_scan = search.fallback;
    Ok(Optimized {
        posterior,
        report,
        trace,
        objective: best.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PredictionTable;
    use crate::grids::GridConfig;
    use crate::Error;

    fn stats(h: usize, n: usize, seed: u64) -> LossStats {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let preds = (0..h)
            .map(|k| {
                let p = 0.15 + 0.04 * k as f64;
                truth
                    .iter()
                    .map(|&y| {
                        if rng.random::<f64>() < p {
                            1 - y as i32
                        } else {
                            y as i32
                        }
                    })
                    .collect()
            })
            .collect();
        LossStats::from_table(&PredictionTable::fully_observed(2, truth, preds).unwrap()).unwrap()
    }

    #[test]
    fn lambda_star_examples() {
        let grid = crate::grids::lambda_grid(500, 0.001, 1.05).unwrap();
        // Zero variance gives (n−1)/n, snapped to the top of the grid.
        assert_eq!(co_lambda_continuous(0.0, 3.0, 500, 1.0), 499.0 / 500.0);
        assert_eq!(
            co_lambda_star(0.0, 0.5, 500, 0.05, 200, 1.0, &grid),
            *grid.last().unwrap()
        );
        let c = 2.0 * 0.5 + (400.0f64 / 0.05).ln();
        let direct = 2.0 * 499.0 / 500.0 / ((2.0 * 499.0 * 0.04 / (1.21 * c) + 1.0f64).sqrt() + 1.0);
        assert_eq!(co_lambda_continuous(0.04, c, 500, 1.1), direct);
        assert_eq!(
            co_lambda_star(0.04, 0.5, 500, 0.05, 200, 1.1, &grid),
            snap(&grid, direct).1
        );
    }

    #[test]
    fn gamma_star_examples() {
        let (mu, c, n, u) = (0.1, 9.0, 800, 0.03);
        let g = co_gamma_continuous(mu, c, n, u).unwrap();
        let b = 0.81;
        let w = g * b - 1.0;
        let arg = (b * b * c / (n as f64 * u) - 1.0) / E;
        assert!((w * w.exp() - arg).abs() < 1e-12);
        // Huge variance drives γ* to 0, which snaps to the bottom of the grid.
        assert!(co_gamma_continuous(mu, c, n, 1e12).unwrap() < 1e-3);
        let grid = crate::grids::gamma_grid(n, b, 0.9, 1e-4, 1e-4, 1.05).unwrap();
        assert_eq!(co_gamma_star(mu, 0.0, n, 0.05, 1, 1e12, &grid).unwrap(), grid[0]);
        let picked = co_gamma_star(mu, 1.0, n, 0.05, 200, 0.03, &grid).unwrap();
        assert!(grid.contains(&picked));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = stats(4, 150, 2);
        let m = s.mu_tandem(0.15).unwrap();
        let prior = vec![0.25; 4];
        let rho = [0.1, 0.2, 0.3, 0.4];
        for (a, b) in [(0.0, 0.01), (0.7, 0.003)] {
            let g = co_gradient(&m, &rho, &prior, a, b);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            for h in 0..4 {
                let eps = 1e-6;
                let mut up = rho;
                let mut dn = rho;
                up[h] += eps;
                dn[h] -= eps;
                let fd =
                    (co_surrogate(&m, &up, &prior, a, b) - co_surrogate(&m, &dn, &prior, a, b)) / (2.0 * eps);
                assert!((fd - g[h]).abs() <= 1e-6 * (1.0 + norm));
            }
        }
    }

    #[test]
    fn binary_search_matches_scan_on_quasiconvex() {
        for target in [0usize, 3, 17, 39] {
            let f = |i: usize| Ok(((i as f64) - target as f64).abs().sqrt());
            let r = grid_search_quasiconvex(40, f).unwrap();
            assert_eq!(r.index, target);
            assert!(!r.fallback);
            assert!(r.evaluated.len() < 20);
        }
        let two = grid_search_quasiconvex(2, |i| Ok([3.0, 1.0][i])).unwrap();
        assert_eq!(two.index, 1);
    }

    #[test]
    fn non_quasiconvex_profile_falls_back() {
        // Local minimum at 5 catches the binary search; global at 30.
        let f = |i: usize| -> Result<f64> {
            Ok(match i {
                30 => -10.0,
                11..=19 => -3.0,
                _ => ((i as f64) - 5.0).abs(),
            })
        };
        let r = grid_search_quasiconvex(40, f).unwrap();
        let scan = (0..40)
            .map(|i| f(i).unwrap())
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
        assert!(r.fallback);
        assert_eq!(r.index, scan.0);
    }

    #[test]
    fn search_errors_propagate() {
        let r = grid_search_quasiconvex(4, |_| Err(Error::ZeroGibbsLoss));
        assert!(r.is_err());
    }

    #[test]
    fn co_optimizer_reports_with_full_union_factor() {
        let s = stats(5, 250, 7);
        let grids = Grids::new(
            GridConfig {
                k_mu: 20,
                ..GridConfig::default()
            },
            0.05,
        )
        .unwrap();
        let r = optimize_co_tnd(&s, &grids, 0.05, &OptimizerConfig::default()).unwrap();
        assert!(r.report.raw >= r.objective);
        assert!(r.objective <= r.trace.initial_bound().unwrap());
        assert!(!r.trace.mu_evaluations.is_empty());
    }
}
