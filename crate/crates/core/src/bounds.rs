//! PAC-Bayesian inequalities and the composite majority-vote bounds.
//!
//! The scalar functions take the empirical quantities directly; the
//! `*_bound` functions combine them with [`LossStats`] and a [`Posterior`]
//! and return a [`BoundReport`] holding every term of the computation.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lossstats::{LossStats, MuTandemStats};
use crate::specfun::{kl_inv_lower, kl_inv_upper, lambert_w0, phi_over_square};
use crate::{par, Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Posterior ρ and prior π over the same hypothesis set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    rho: Vec<f64>,
    prior: Vec<f64>,
}

impl Posterior {
    pub fn new(rho: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        if rho.len() != prior.len() || rho.is_empty() {
            return Err(Error::Dimension(format!(
                "posterior has {} weights, prior {}",
                rho.len(),
                prior.len()
            )));
        }
        check_simplex("rho", &rho)?;
        check_simplex("prior", &prior)?;
        Ok(Posterior { rho, prior })
    }

    /// ρ = π = uniform.
    pub fn uniform(h: usize) -> Self {
        let u = vec![1.0 / h as f64; h];
        Posterior {
            rho: u.clone(),
            prior: u,
        }
    }

    /// Same prior, new weights.
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        Posterior::new(rho, self.prior.clone())
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn kl(&self) -> f64 {
        kl_divergence(&self.rho, &self.prior)
    }
}

/// KL(ρ‖π) with 0·ln 0 = 0; +∞ if ρ puts mass where π has none.
pub fn kl_divergence(rho: &[f64], pi: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&r, &p) in rho.iter().zip(pi) {
        if r > 0.0 {
            if p <= 0.0 {
                return f64::INFINITY;
            }
            s += r * (r / p).ln();
        }
    }
    s.max(0.0)
}

/// ln(2√n/δ)
pub fn log_term(n: usize, delta: f64) -> f64 {
    (2.0 * (n as f64).sqrt() / delta).ln()
}

pub fn pb_kl_upper(emp_loss: f64, kl_rho_pi: f64, n: usize, delta: f64, extra_log: f64) -> f64 {
    kl_inv_upper(emp_loss, (kl_rho_pi + log_term(n, delta) + extra_log) / n as f64)
}

pub fn pb_kl_lower(emp_loss: f64, kl_rho_pi: f64, n: usize, delta: f64, extra_log: f64) -> f64 {
    kl_inv_lower(emp_loss, (kl_rho_pi + log_term(n, delta) + extra_log) / n as f64)
}

/// emp/(1 − λ/2) + complexity/(λ(1 − λ/2)n), with the complexity term
/// (KL plus log factors) passed whole.
pub fn pb_lambda_upper_with(emp_loss: f64, complexity: f64, n: usize, lambda: f64) -> f64 {
    let s = 1.0 - 0.5 * lambda;
    emp_loss / s + complexity / (lambda * s * n as f64)
}

/// (1 − γ/2)·emp − complexity/(γn)
pub fn pb_lambda_lower_with(emp_loss: f64, complexity: f64, n: usize, gamma: f64) -> f64 {
    (1.0 - 0.5 * gamma) * emp_loss - complexity / (gamma * n as f64)
}

pub fn pb_lambda_upper(emp_loss: f64, kl_rho_pi: f64, n: usize, delta: f64, lambda: f64) -> f64 {
    pb_lambda_upper_with(emp_loss, kl_rho_pi + log_term(n, delta), n, lambda)
}

pub fn pb_lambda_lower(emp_loss: f64, kl_rho_pi: f64, n: usize, delta: f64, gamma: f64) -> f64 {
    pb_lambda_lower_with(emp_loss, kl_rho_pi + log_term(n, delta), n, gamma)
}

/// emp + φ(γb)/(γb²)·variance + (KL + log)/(γn)
pub fn pb_bennett(
    emp_loss: f64,
    variance: f64,
    kl_rho_pi: f64,
    n: usize,
    delta_term_log: f64,
    gamma: f64,
    b: f64,
) -> f64 {
    emp_loss
        + phi_over_square(gamma * b) * gamma * variance
        + (kl_rho_pi + delta_term_log) / (gamma * n as f64)
}

/// emp + (e − 2)γ·variance + (KL + log)/(γn), for γ ∈ (0, 1/b].
pub fn pb_bernstein(
    emp_loss: f64,
    variance: f64,
    kl_rho_pi: f64,
    n: usize,
    delta_term_log: f64,
    gamma: f64,
    _b: f64,
) -> f64 {
    emp_loss + (E - 2.0) * gamma * variance + (kl_rho_pi + delta_term_log) / (gamma * n as f64)
}

/// Upper bound on the expected variance of a loss with range `c_range`;
/// `kl_term_log` is the full KL-plus-log complexity term.
pub fn variance_bound(
    emp_variance: f64,
    kl_term_log: f64,
    n: usize,
    lambda: f64,
    c_range: f64,
) -> Result<f64> {
    let nf = n as f64;
    if n < 2 || !(lambda > 0.0 && lambda < 2.0 * (nf - 1.0) / nf) {
        return Err(Error::Domain {
            name: "lambda",
            value: lambda,
            reason: "must lie in (0, 2(n-1)/n)",
        });
    }
    let s = 1.0 - lambda * nf / (2.0 * (nf - 1.0));
    Ok(emp_variance / s + c_range * c_range * kl_term_log / (nf * lambda * s))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    /// Raw value clipped to [0, 1].
    pub bound: f64,
    pub raw: f64,
    pub params: BoundParams,
    /// KL(ρ‖π)
    pub kl_term: f64,
    pub union_factor: u64,
    pub terms: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(name: &str, raw: f64, params: BoundParams, kl: f64, union_factor: u64) -> Self {
        BoundReport {
            name: name.to_string(),
            bound: raw.clamp(0.0, 1.0),
            raw,
            params,
            kl_term: kl,
            union_factor,
            terms: BTreeMap::new(),
        }
    }

    fn term(mut self, name: &str, value: f64) -> Self {
        self.terms.insert(name.to_string(), value);
        self
    }
}

fn check_len(stats: &LossStats, post: &Posterior) -> Result<()> {
    if stats.n_hypotheses() != post.rho().len() {
        return Err(Error::Dimension(format!(
            "{} hypotheses but {} weights",
            stats.n_hypotheses(),
            post.rho().len()
        )));
    }
    Ok(())
}

fn check_mu(mu: f64) -> Result<()> {
    if mu < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "mu",
            value: mu,
            reason: "must be < 0.5",
        })
    }
}

/// First-order bound 2·kl⁻¹(E_ρ[L̂], (KL + ln(2√n/δ))/n) with n = n_min.
pub fn fo_bound(stats: &LossStats, post: &Posterior, delta: f64) -> Result<BoundReport> {
    check_len(stats, post)?;
    let kl = post.kl();
    let g = stats.gibbs_expectation(post.rho());
    let up = pb_kl_upper(g, kl, stats.n_min(), delta, 0.0);
    Ok(BoundReport::new("FO", 2.0 * up, BoundParams::default(), kl, 1)
        .term("gibbs", g)
        .term("gibbs_upper", up)
        .term("n", stats.n_min() as f64))
}

/// Tandem bound 4·kl⁻¹(E_ρ²[L̂], (2KL + ln(2√m/δ))/m) with m = m_min.
pub fn tnd_bound(stats: &LossStats, post: &Posterior, delta: f64) -> Result<BoundReport> {
    check_len(stats, post)?;
    let kl = post.kl();
    let t = stats.tandem_expectation(post.rho());
    let up = pb_kl_upper(t, 2.0 * kl, stats.m_min(), delta, 0.0);
    Ok(BoundReport::new("TND", 4.0 * up, BoundParams::default(), kl, 1)
        .term("tandem", t)
        .term("tandem_upper", up)
        .term("m", stats.m_min() as f64))
}

/// The PB-λ form of the μ-tandem bound that is minimized over ρ, λ, γ.
#[allow(clippy::too_many_arguments)]
pub fn cmu_tnd_value(
    tandem: f64,
    gibbs: f64,
    kl: f64,
    m: usize,
    n: usize,
    delta: f64,
    mu: f64,
    lambda: f64,
    gamma: f64,
    k: usize,
) -> f64 {
    let kf = k as f64;
    let ut = pb_lambda_upper_with(
        tandem,
        2.0 * kl + (4.0 * kf * (m as f64).sqrt() / delta).ln(),
        m,
        lambda,
    );
    if mu == 0.0 {
        return ut / 0.25;
    }
    let lg = pb_lambda_lower_with(gibbs, kl + (4.0 * kf * (n as f64).sqrt() / delta).ln(), n, gamma);
    let s = 0.5 - mu;
    (ut - 2.0 * mu * lg + mu * mu) / (s * s)
}

/// CμTND in its PB-λ form at fixed (μ, λ, γ) with union factor `k_mu`.
pub fn cmu_tnd_bound(
    stats: &LossStats,
    post: &Posterior,
    delta: f64,
    mu: f64,
    lambda: f64,
    gamma: f64,
    k_mu: usize,
) -> Result<BoundReport> {
    check_len(stats, post)?;
    check_mu(mu)?;
    if !(lambda > 0.0 && lambda < 2.0 && gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda {lambda} must lie in (0, 2) and gamma {gamma} must be positive"
        )));
    }
    let kl = post.kl();
    let (m, n) = (stats.m_min(), stats.n_min());
    let t = stats.tandem_expectation(post.rho());
    let g = stats.gibbs_expectation(post.rho());
    let raw = cmu_tnd_value(t, g, kl, m, n, delta, mu, lambda, gamma, k_mu);
    let kf = k_mu as f64;
    let ut = pb_lambda_upper_with(
        t,
        2.0 * kl + (4.0 * kf * (m as f64).sqrt() / delta).ln(),
        m,
        lambda,
    );
    let lg = pb_lambda_lower_with(g, kl + (4.0 * kf * (n as f64).sqrt() / delta).ln(), n, gamma);
    let params = BoundParams {
        mu: Some(mu),
        lambda: Some(lambda),
        gamma: Some(gamma),
    };
    Ok(BoundReport::new("CMUTND", raw, params, kl, 4 * k_mu as u64)
        .term("tandem", t)
        .term("gibbs", g)
        .term("tandem_upper", ut)
        .term("gibbs_lower", lg)
        .term("m", m as f64)
        .term("n", n as f64))
}

/// Final CμTND report with kl inverses in place of the PB-λ relaxations.
/// The Gibbs term enters with sign −2μ, so a lower inverse is used for
/// μ ≥ 0 and an upper inverse for μ < 0; the PB-λ value at the same
/// parameters is kept in the terms.
pub fn cmu_tnd_final_bound(
    stats: &LossStats,
    post: &Posterior,
    delta: f64,
    mu: f64,
    lambda: f64,
    gamma: f64,
    k_mu: usize,
) -> Result<BoundReport> {
    let relaxed = cmu_tnd_bound(stats, post, delta, mu, lambda, gamma, k_mu)?;
    let kl = relaxed.kl_term;
    let (m, n) = (stats.m_min(), stats.n_min());
    let t = relaxed.terms["tandem"];
    let g = relaxed.terms["gibbs"];
    let extra = (2.0 * k_mu as f64).ln();
    let tu = pb_kl_upper(t, 2.0 * kl, m, delta, extra);
    let (gl, gu) = (
        pb_kl_lower(g, kl, n, delta, extra),
        pb_kl_upper(g, kl, n, delta, extra),
    );
    let gb = if mu >= 0.0 { gl } else { gu };
    let s = 0.5 - mu;
    let raw = (tu - 2.0 * mu * gb + mu * mu) / (s * s);
    Ok(
        BoundReport::new("CMUTND", raw, relaxed.params, kl, 4 * k_mu as u64)
            .term("tandem", t)
            .term("gibbs", g)
            .term("tandem_upper", tu)
            .term("gibbs_lower", gl)
            .term("gibbs_upper", gu)
            .term("pb_lambda_raw", relaxed.raw)
            .term("m", m as f64)
            .term("n", n as f64),
    )
}

/// Terms of the offset-tandem bound for given ρ-expectations of the
/// μ-tandem loss and its variance.
#[derive(Debug, Clone, Copy)]
pub struct CoTerms {
    pub raw: f64,
    pub complexity: f64,
    pub variance_upper: f64,
    pub coefficient: f64,
}

/// COTND value with n = m_min and union factor k.
#[allow(clippy::too_many_arguments)]
pub fn co_tnd_value(
    mu_loss: f64,
    mu_variance: f64,
    kl: f64,
    n: usize,
    delta: f64,
    mu: f64,
    lambda: f64,
    gamma: f64,
    k: u64,
) -> Result<CoTerms> {
    check_mu(mu)?;
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Domain {
            name: "gamma",
            value: gamma,
            reason: "must be positive",
        });
    }
    let complexity = 2.0 * kl + (2.0 * k as f64 / delta).ln();
    let k_mu = crate::lossstats::mu_tandem_range(mu);
    let vu = variance_bound(mu_variance, complexity, n, lambda, k_mu)?;
    let b = (1.0 - mu) * (1.0 - mu);
    let coefficient = phi_over_square(gamma * b) * gamma;
    let s = 0.5 - mu;
    let raw = (mu_loss + complexity / (gamma * n as f64) + coefficient * vu) / (s * s);
    Ok(CoTerms {
        raw,
        complexity,
        variance_upper: vu,
        coefficient,
    })
}

pub fn co_tnd_bound(
    stats: &LossStats,
    mu_stats: &MuTandemStats,
    post: &Posterior,
    delta: f64,
    gamma: f64,
    lambda: f64,
    k_report: u64,
) -> Result<BoundReport> {
    check_len(stats, post)?;
    let kl = post.kl();
    let n = stats.m_min();
    let l = mu_stats.loss.quad_form(post.rho());
    let v = mu_stats.variance.quad_form(post.rho());
    let terms = co_tnd_value(l, v, kl, n, delta, mu_stats.mu, lambda, gamma, k_report)?;
    let params = BoundParams {
        mu: Some(mu_stats.mu),
        lambda: Some(lambda),
        gamma: Some(gamma),
    };
    Ok(BoundReport::new("COTND", terms.raw, params, kl, 2 * k_report)
        .term("mu_tandem", l)
        .term("mu_variance", v)
        .term("variance_upper", terms.variance_upper)
        .term("variance_coefficient", terms.coefficient)
        .term("complexity", terms.complexity)
        .term("n", n as f64))
}

/// γ minimizing the Bennett bound for fixed variance and complexity C:
/// γ* = (1 + W₀(((C b²)/(n V) − 1)/e))/b.
pub fn bennett_gamma_star(variance: f64, complexity: f64, n: usize, b: f64) -> Result<f64> {
    let arg = (complexity * b * b / (n as f64 * variance) - 1.0) / E;
    Ok((lambert_w0(arg)? + 1.0) / b)
}

/// γ minimizing the Bernstein bound on (0, 1/b].
pub fn bernstein_gamma_star(variance: f64, complexity: f64, n: usize, b: f64) -> f64 {
    let g = (complexity / ((E - 2.0) * variance * n as f64)).sqrt();
    g.min(1.0 / b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BennettPoint {
    pub n: usize,
    pub emp: f64,
    pub variance: f64,
    pub bennett: f64,
    pub bernstein: f64,
    pub ratio: f64,
}

/// Ratio of γ-optimized Bennett to Bernstein bounds over a grid of
/// empirical loss in (0, 1] and variance in (0, 1/4], with b = 1.
pub fn bennett_surface(n: usize, kl: f64, delta: f64, resolution: usize) -> Result<Vec<BennettPoint>> {
    let c = kl + (1.0 / delta).ln();
    let rows = par::map_indices(resolution, |i| -> Result<Vec<BennettPoint>> {
        let emp = (i + 1) as f64 / resolution as f64;
        (0..resolution)
            .map(|j| {
                let variance = 0.25 * (j + 1) as f64 / resolution as f64;
                let gb = bennett_gamma_star(variance, c, n, 1.0)?;
                let gs = bernstein_gamma_star(variance, c, n, 1.0);
                let bennett = pb_bennett(emp, variance, kl, n, (1.0 / delta).ln(), gb, 1.0);
                let bernstein = pb_bernstein(emp, variance, kl, n, (1.0 / delta).ln(), gs, 1.0);
                Ok(BennettPoint {
                    n,
                    emp,
                    variance,
                    bennett,
                    bernstein,
                    ratio: bennett / bernstein,
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(resolution * resolution);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

pub fn bennett_surface_csv(points: &[BennettPoint]) -> String {
    let mut out = String::from("n,emp,variance,bennett,bernstein,ratio\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.n, p.emp, p.variance, p.bennett, p.bernstein, p.ratio
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PredictionTable;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn kl_divergence_examples() {
        let u = vec![0.25; 4];
        assert_eq!(kl_divergence(&u, &u), 0.0);
        assert!(close(kl_divergence(&[1.0, 0.0, 0.0, 0.0], &u), 4f64.ln(), 1e-15));
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
        // mpmath: 0.2 ln(0.2/0.5) + 0.8 ln(0.8/0.5)
        assert!(close(
            kl_divergence(&[0.2, 0.8], &[0.5, 0.5]),
            0.192_744_757_021_757_5,
            1e-14
        ));
    }

    #[test]
    fn pb_kl_examples() {
        let v = pb_kl_upper(0.0, 0.0, 100, 0.05, 0.0);
        assert!(close(v, 1.0 - (-(400f64).ln() / 100.0).exp(), 1e-10));
        assert!(close(v, 0.058_155_079_116_972_27, 1e-10));
        let mut prev = 1.0;
        for n in [10, 100, 1000, 10_000] {
            let b = pb_kl_upper(0.1, 1.0, n, 0.05, 0.0);
            assert!(b < prev && b >= 0.1);
            prev = b;
        }
        assert!(pb_kl_lower(0.3, 1.0, 100, 0.05, 0.0) <= 0.3);
        assert_eq!(pb_kl_lower(0.0, 1.0, 100, 0.05, 0.0), 0.0);
    }

    #[test]
    fn pb_lambda_examples() {
        let budget = log_term(100, 0.05);
        assert!(close(
            pb_lambda_upper(0.2, 1.0, 100, 0.05, 1.0),
            0.4 + 2.0 * (1.0 + budget) / 100.0,
            1e-15
        ));
        assert!(close(
            pb_lambda_upper(0.0, 0.0, 100, 0.05, 0.5),
            budget / (0.5 * 0.75 * 100.0),
            1e-15
        ));
        assert!(close(
            pb_lambda_lower(0.3, 0.0, 100, 0.05, 2.0),
            -budget / 200.0,
            1e-15
        ));
        assert!(pb_lambda_lower(0.0, 0.0, 100, 0.05, 0.7) < 0.0);
    }

    #[test]
    fn bennett_examples() {
        assert!(close(pb_bennett(0.0, 1.0, 0.0, 1, 0.0, 1.0, 1.0), E - 2.0, 1e-15));
        let v = pb_bennett(0.1, 0.05, 5.0, 1000, 20f64.ln(), 0.1, 1.0);
        assert!(close(v, 0.182_542_781_773_363_72, 1e-12));
        assert!(pb_bennett(0.1, 0.05, 5.0, 1000, 1.0, 1e-12, 1.0) > 1e8);
        for g in [0.1, 0.5, 1.0] {
            let a = pb_bennett(0.1, 0.05, 2.0, 500, 3.0, g, 1.0);
            let b = pb_bernstein(0.1, 0.05, 2.0, 500, 3.0, g, 1.0);
            assert!(a <= b + 1e-15);
        }
    }

    #[test]
    fn variance_bound_examples() {
        let n = 101;
        let lam = 100.0 / 101.0;
        // s = 1/2 at the midpoint
        let v = variance_bound(0.1, 3.0, n, lam, 1.0).unwrap();
        assert!(close(v, 0.2 + 3.0 / (101.0 * lam * 0.5), 1e-14));
        let a = variance_bound(0.0, 3.0, n, lam, 1.0).unwrap();
        let b = variance_bound(0.0, 3.0, n, lam, 2.0).unwrap();
        assert!(close(b, 4.0 * a, 1e-15));
        assert!(variance_bound(0.1, 3.0, n, 2.0 * 100.0 / 101.0, 1.0).is_err());
    }

    fn hand_stats() -> LossStats {
        let truth = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let preds = vec![
            vec![0, 1, 0, 1, 0, 1, 0, 1, 1, 0],
            vec![1, 1, 0, 1, 0, 0, 0, 1, 0, 1],
            vec![0, 0, 0, 1, 1, 1, 0, 1, 0, 1],
        ];
        let t = PredictionTable::fully_observed(2, truth, preds).unwrap();
        LossStats::from_table(&t).unwrap()
    }

    #[test]
    fn fo_and_tnd_compose() {
        let s = hand_stats();
        let post = Posterior::uniform(3);
        let fo = fo_bound(&s, &post, 0.05).unwrap();
        let g = (0.2 + 0.2 + 0.2) / 3.0;
        assert!(close(fo.raw, 2.0 * pb_kl_upper(g, 0.0, 10, 0.05, 0.0), 1e-15));
        let tnd = tnd_bound(&s, &post, 0.05).unwrap();
        let t = s.tandem_expectation(post.rho());
        assert_eq!(tnd.raw, 4.0 * pb_kl_upper(t, 0.0, 10, 0.05, 0.0));
        assert!(tnd.bound <= 1.0);

        let point = Posterior::new(vec![1.0, 0.0, 0.0], vec![1.0 / 3.0; 3]).unwrap();
        let fo = fo_bound(&s, &point, 0.05).unwrap();
        assert!(close(fo.kl_term, 3f64.ln(), 1e-15));
        assert!(close(
            fo.raw,
            2.0 * pb_kl_upper(0.2, 3f64.ln(), 10, 0.05, 0.0),
            1e-15
        ));
    }

    #[test]
    fn cmu_at_zero_is_scaled_lambda_tandem() {
        let s = hand_stats();
        let post = Posterior::uniform(3);
        let r = cmu_tnd_bound(&s, &post, 0.05, 0.0, 0.7, 1.3, 200).unwrap();
        let t = s.tandem_expectation(post.rho());
        let expected = pb_lambda_upper_with(t, (800.0 * 10f64.sqrt() / 0.05).ln(), 10, 0.7) / 0.25;
        assert_eq!(r.raw, expected);
        assert!(cmu_tnd_bound(&s, &post, 0.05, 0.5, 0.7, 1.3, 200).is_err());
    }

    #[test]
    fn co_reduces_at_zero_variance() {
        let s = hand_stats();
        let post = Posterior::uniform(3);
        let mut m = s.mu_tandem(0.0).unwrap();
        m.variance = crate::lossstats::SymMatrix::from_fn(3, |_, _| 0.0);
        let lam = 0.3;
        let gam = 2.0;
        let r = co_tnd_bound(&s, &m, &post, 0.05, gam, lam, 1).unwrap();
        let t = s.tandem_expectation(post.rho());
        let c = (2.0f64 / 0.05).ln();
        let vu = c / (10.0 * lam * (1.0 - lam * 10.0 / 18.0));
        let expected = (t + c / (gam * 10.0) + phi_over_square(gam) * gam * vu) / 0.25;
        assert!(close(r.raw, expected, 1e-14));
        let bigger = co_tnd_bound(&s, &m, &post, 0.05, gam, lam, 50).unwrap();
        assert!(bigger.raw >= r.raw);
    }

    #[test]
    fn final_cmu_report_uses_kl_inverses() {
        let s = hand_stats();
        let post = Posterior::uniform(3);
        for mu in [-0.2, 0.0, 0.15] {
            let r = cmu_tnd_final_bound(&s, &post, 0.05, mu, 1.0, 1.0, 200).unwrap();
            assert!(r.terms.contains_key("pb_lambda_raw"));
            assert!(r.raw.is_finite());
        }
    }

    #[test]
    fn gamma_stars_minimize() {
        let (v, c, n) = (0.05, 8.0, 1000);
        let gb = bennett_gamma_star(v, c, n, 1.0).unwrap();
        let f = |g: f64| pb_bennett(0.1, v, 0.0, n, c, g, 1.0);
        assert!(f(gb) <= f(gb * 1.001) && f(gb) <= f(gb * 0.999));
        let gs = bernstein_gamma_star(v, c, n, 1.0);
        let h = |g: f64| pb_bernstein(0.1, v, 0.0, n, c, g, 1.0);
        assert!(h(gs) <= h((gs * 0.999).min(1.0)) + 1e-15);
    }

    #[test]
    fn bennett_surface_is_dominated() {
        let s = bennett_surface(1000, 5.0, 0.05, 10).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|p| p.ratio <= 1.0 + 1e-12));
        assert!(bennett_surface_csv(&s).starts_with("n,emp,variance"));
    }
}
