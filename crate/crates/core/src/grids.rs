//! Parameter grids for the μ, λ and γ union bounds.
//!
//! The λ grid is geometric from the lower end of the range of optimal values
//! of the variance-bound parameter; the γ grid is geometric between the two
//! roots obtained via Lambert W. Both depend on the sample size and, through
//! the loss range, on μ, so [`Grids`] caches them per (n, μ).

use std::collections::HashMap;
use std::f64::consts::E;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::lossstats::mu_tandem_range;
use crate::specfun::{lambert_w0, lambert_w_minus1};
use crate::{Error, Result};

/// `k` uniform points μ_i = −1/2 + i/k in [−1/2, 1/2).
pub fn mu_grid(k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "mu grid needs at least 2 points, got {k}"
        )));
    }
    Ok((0..k).map(|i| -0.5 + i as f64 / k as f64).collect())
}

fn check_delta(name: &'static str, d: f64) -> Result<()> {
    if d > 0.0 && d < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: d,
            reason: "must lie in (0, 1)",
        })
    }
}

fn check_ratio(name: &'static str, c: f64) -> Result<()> {
    if c > 1.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value: c,
            reason: "must be > 1",
        })
    }
}

/// Base point and size of the λ grid.
pub fn lambda_grid_params(n: usize, delta1: f64, c1: f64) -> Result<(f64, usize)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "lambda grid needs n >= 2, got {n}"
        )));
    }
    check_delta("delta1", delta1)?;
    check_ratio("c1", c1)?;
    let nf = n as f64;
    let r = ((nf - 1.0) / (1.0 / delta1).ln() + 1.0).sqrt();
    let base = 2.0 * (nf - 1.0) / nf / (r + 1.0);
    let k = ((0.5 * r + 0.5).ln() / c1.ln()).ceil().max(1.0) as usize;
    Ok((base, k))
}

/// λ_i = c1^{i−1}·base for i = 1..k_λ; every point stays below (n−1)/n.
pub fn lambda_grid(n: usize, delta1: f64, c1: f64) -> Result<Vec<f64>> {
    let (base, k) = lambda_grid_params(n, delta1, c1)?;
    Ok((0..k).map(|i| base * c1.powi(i as i32)).collect())
}

/// Endpoints of the γ range for a loss bounded above by `b` with range
/// `c_range`.
pub fn gamma_range(n: usize, b: f64, c_range: f64, delta1: f64, delta2: f64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "gamma grid needs n >= 2, got {n}"
        )));
    }
    for (name, v) in [("b", b), ("c_range", c_range)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain {
                name,
                value: v,
                reason: "must be positive",
            });
        }
    }
    check_delta("delta1", delta1)?;
    check_delta("delta2", delta2)?;
    let nf = n as f64;
    let v_min = 2.0 * c_range * c_range * (1.0 / delta1).ln() / (nf - 1.0);
    let arg = (4.0 * b * b / (nf * c_range * c_range) * (1.0 / delta2).ln() - 1.0) / E;
    let gamma_min = (lambert_w0(arg)? + 1.0) / b;
    let alpha = 1.0 / (1.0 + b * b / v_min);
    let gamma_max = -(lambert_w_minus1(-alpha * (-alpha).exp())? + alpha) / b;
    Ok((gamma_min, gamma_max))
}

/// Residual e^{γb} − γb(1 + b²/V_min) − 1 whose positive root is γ_max.
pub fn gamma_max_residual(gamma: f64, n: usize, b: f64, c_range: f64, delta1: f64) -> f64 {
    let v_min = 2.0 * c_range * c_range * (1.0 / delta1).ln() / (n as f64 - 1.0);
    let x = gamma * b;
    x.exp_m1() - x * (1.0 + b * b / v_min)
}

/// γ_i = c2^{i−1}·γ_min for i = 1..k_γ, or {γ_min} when γ_max ≤ γ_min.
pub fn gamma_grid(n: usize, b: f64, c_range: f64, delta1: f64, delta2: f64, c2: f64) -> Result<Vec<f64>> {
    check_ratio("c2", c2)?;
    let (lo, hi) = gamma_range(n, b, c_range, delta1, delta2)?;
    if hi <= lo {
        return Ok(vec![lo]);
    }
    let k = ((hi / lo).ln() / c2.ln()).ceil().max(1.0) as usize;
    Ok((0..k).map(|i| lo * c2.powi(i as i32)).collect())
}

/// Nearest grid point (index, value); ties go to the smaller point.
pub fn snap(grid: &[f64], x: f64) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in grid.iter().enumerate() {
        if (v - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    (best, grid[best])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub k_mu: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            k_mu: 200,
            c1: 1.05,
            c2: 1.05,
        }
    }
}

/// All grids for one (n, μ): the λ grid for the variance bound and the γ
/// grid for the Bennett bound on the μ-tandem loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSet {
    pub n: usize,
    pub mu: f64,
    pub mu_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl GridSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }
}

/// The μ grid plus a concurrent cache of per-(n, μ) λ/γ grids.
#[derive(Debug)]
pub struct Grids {
    config: GridConfig,
    delta: f64,
    mu_grid: Vec<f64>,
    cache: RwLock<HashMap<(usize, u64), Arc<GridSet>>>,
}

impl Grids {
    pub fn new(config: GridConfig, delta: f64) -> Result<Self> {
        check_delta("delta", delta)?;
        check_ratio("c1", config.c1)?;
        check_ratio("c2", config.c2)?;
        Ok(Grids {
            mu_grid: mu_grid(config.k_mu)?,
            config,
            delta,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> GridConfig {
        self.config
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mu_grid(&self) -> &[f64] {
        &self.mu_grid
    }

    pub fn k_mu(&self) -> usize {
        self.mu_grid.len()
    }

    /// δ1 = δ2 = δ/(2k_μ).
    pub fn delta1(&self) -> f64 {
        self.delta / (2.0 * self.k_mu() as f64)
    }

    pub fn for_mu(&self, n: usize, mu: f64) -> Result<Arc<GridSet>> {
        let key = (n, mu.to_bits());
        if let Some(g) = self.cache.read().expect("grid cache poisoned").get(&key) {
            return Ok(Arc::clone(g));
        }
        let d1 = self.delta1();
        let set = Arc::new(GridSet {
            n,
            mu,
            mu_grid: self.mu_grid.clone(),
            lambda_grid: lambda_grid(n, d1, self.config.c1)?,
            gamma_grid: gamma_grid(
                n,
                (1.0 - mu) * (1.0 - mu),
                mu_tandem_range(mu),
                d1,
                d1,
                self.config.c2,
            )?,
            c1: self.config.c1,
            c2: self.config.c2,
            delta1: d1,
            delta2: d1,
        });
        let mut cache = self.cache.write().expect("grid cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(set)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_grid_examples() {
        assert_eq!(mu_grid(2).unwrap(), vec![-0.5, 0.0]);
        let g = mu_grid(200).unwrap();
        assert_eq!(g[0], -0.5);
        assert!((g[199] - 0.495).abs() < 1e-15);
        assert!((g[1] - g[0] - 0.005).abs() < 1e-15);
        assert!(g.iter().all(|&m| m < 0.5));
        assert!(mu_grid(1).is_err());
    }

    #[test]
    fn lambda_grid_examples() {
        let (base, k) = lambda_grid_params(1000, 0.025, 1.05).unwrap();
        assert_eq!(k, 45);
        assert!((base - 0.114_257_736_014_706_63).abs() < 1e-14);
        let g = lambda_grid(1000, 0.025, 1.05).unwrap();
        assert_eq!(g.len(), 45);
        assert_eq!(g[0], base);
        assert!(g.iter().all(|&l| l < 999.0 / 1000.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(lambda_grid_params(5000, 0.001, 1.05).unwrap().1, 55);
    }

    #[test]
    fn gamma_grid_spans_range() {
        for (n, mu) in [(1000usize, 0.0), (300, -0.5), (5000, 0.3)] {
            let b = (1.0 - mu) * (1.0 - mu);
            let c = mu_tandem_range(mu);
            let (lo, hi) = gamma_range(n, b, c, 0.001, 0.001).unwrap();
            assert!(lo > 0.0);
            let res = gamma_max_residual(hi, n, b, c, 0.001);
            let scale = (hi * b).exp();
            assert!(res.abs() <= 1e-8 * scale, "residual {res} at n={n}");
            let g = gamma_grid(n, b, c, 0.001, 0.001, 1.05).unwrap();
            assert_eq!(g[0], lo);
            assert!(*g.last().unwrap() >= hi / 1.05);
            assert!(g.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn degenerate_gamma_grid_is_single_point() {
        let g = gamma_grid(2, 1.0, 1.0, 0.4, 0.4, 1.05).unwrap();
        let (lo, hi) = gamma_range(2, 1.0, 1.0, 0.4, 0.4).unwrap();
        if hi <= lo {
            assert_eq!(g, vec![lo]);
        } else {
            assert!(!g.is_empty());
        }
    }

    #[test]
    fn snap_prefers_smaller_on_ties() {
        let g = [0.0, 1.0, 2.0];
        assert_eq!(snap(&g, 0.5), (0, 0.0));
        assert_eq!(snap(&g, 1.6), (2, 2.0));
        assert_eq!(snap(&g, -5.0), (0, 0.0));
        assert_eq!(snap(&g, 9.0), (2, 2.0));
    }

    #[test]
    fn cache_returns_shared_grids() {
        let grids = Grids::new(GridConfig::default(), 0.05).unwrap();
        let a = grids.for_mu(500, 0.1).unwrap();
        let b = grids.for_mu(500, 0.1).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.delta1, 0.05 / 400.0);
        assert!(a.to_json().contains("\"gamma_grid\""));
    }
}
