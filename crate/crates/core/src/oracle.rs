//! Oracle bounds on the majority-vote loss as functions of the Gibbs risk
//! g = E_ρ[L(h)] and the tandem risk t = E_ρ²[L(h,h')].

use std::fmt::Write as _;

use serde::Serialize;

use crate::{par, Error, Result};

const FEASIBLE_TOL: f64 = 1e-12;

/// A feasible pair (g, t) with g² ≤ t ≤ g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OraclePoint {
    g: f64,
    t: f64,
}

impl OraclePoint {
    pub fn new(g: f64, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Domain {
                name: "g",
                value: g,
                reason: "must lie in [0, 1]",
            });
        }
        if !(t >= g * g - FEASIBLE_TOL && t <= g + FEASIBLE_TOL) {
            return Err(Error::Domain {
                name: "t",
                value: t,
                reason: "must satisfy g^2 <= t <= g",
            });
        }
        Ok(OraclePoint { g, t })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn t(&self) -> f64 {
        self.t
    }
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

/// First-order bound 2g.
pub fn oracle_fo(p: OraclePoint) -> f64 {
    2.0 * p.g
}

/// Second-order Markov bound 4t.
pub fn oracle_tnd(p: OraclePoint) -> f64 {
    4.0 * p.t
}

/// C-bound (t − g²)/(1/4 + t − g), valid for g ≤ 1/2.
pub fn oracle_cbound(p: OraclePoint) -> Result<f64> {
    if p.g > 0.5 {
        return Err(Error::Domain {
            name: "g",
            value: p.g,
            reason: "C-bound needs g <= 0.5",
        });
    }
    let den = 0.25 + p.t - p.g;
    if den <= 0.0 {
        return Err(Error::Domain {
            name: "1/4 + t - g",
            value: den,
            reason: "denominator must be positive",
        });
    }
    Ok(((p.t - p.g * p.g) / den).max(0.0))
}

/// Chebyshev-Cantelli bound (t − 2μg + μ²)/(1/2 − μ)².
pub fn oracle_mv_param(p: OraclePoint, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let s = 0.5 - mu;
    Ok((p.t - 2.0 * mu * p.g + mu * mu) / (s * s))
}

/// Minimizer of [`oracle_mv_param`] over μ; may be negative.
pub fn mu_star(p: OraclePoint) -> Result<f64> {
    if p.g >= 0.5 {
        return Err(Error::Domain {
            name: "g",
            value: p.g,
            reason: "mu* needs g < 0.5",
        });
    }
    Ok(p.g - (p.t - p.g * p.g) / (0.5 - p.g))
}

/// Offset-tandem form E_ρ²[L_μ]/(1/2 − μ)².
pub fn oracle_mv_offset(mu_tandem_expectation: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let s = 0.5 - mu;
    Ok(mu_tandem_expectation / (s * s))
}

/// Sign with a dead zone of width `tol` around zero.
pub fn sign_tol(x: f64, tol: f64) -> i8 {
    if x > tol {
        1
    } else if x < -tol {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub g: f64,
    pub t: f64,
    /// C-bound over TND bound; 1 where both vanish.
    pub ratio: f64,
}

/// C-bound / TND ratio over the feasible part of a `resolution`² grid with
/// g = i/(2·resolution), t = j/(2·resolution), i.e. g, t ∈ [0, 1/2).
pub fn ratio_surface(resolution: usize) -> Vec<SurfacePoint> {
    let scale = 2.0 * resolution as f64;
    let rows = par::map_indices(resolution, |i| {
        let g = i as f64 / scale;
        (0..resolution)
            .filter_map(|j| {
                let t = j as f64 / scale;
                if t < g * g || t > g {
                    return None;
                }
                let p = OraclePoint { g, t };
                let tnd = oracle_tnd(p);
                let ratio = if tnd == 0.0 {
                    1.0
                } else {
                    oracle_cbound(p).expect("g < 1/2 on the grid") / tnd
                };
                Some(SurfacePoint { g, t, ratio })
            })
            .collect::<Vec<_>>()
    });
    rows.into_iter().flatten().collect()
}

pub fn surface_csv(points: &[SurfacePoint]) -> String {
    let mut out = String::from("g,t,ratio\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.g, p.t, p.ratio);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(g: f64, t: f64) -> OraclePoint {
        OraclePoint::new(g, t).unwrap()
    }

    #[test]
    fn first_and_second_order() {
        assert_eq!(oracle_fo(pt(0.2, 0.05)), 0.4);
        assert_eq!(oracle_fo(pt(0.0, 0.0)), 0.0);
        assert_eq!(oracle_fo(pt(0.5, 0.25)), 1.0);
        assert_eq!(oracle_tnd(pt(0.2, 0.1)), 0.4);
        assert_eq!(oracle_tnd(pt(0.0, 0.0)), 0.0);
        assert_eq!(oracle_tnd(pt(0.5, 0.25)), 1.0);
    }

    #[test]
    fn cbound_examples() {
        assert!((oracle_cbound(pt(0.2, 0.05)).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(oracle_cbound(pt(0.3, 0.09)).unwrap(), 0.0);
        assert!((oracle_cbound(pt(0.2, 0.1)).unwrap() - 0.4).abs() < 1e-15);
        assert!(oracle_cbound(pt(0.6, 0.4)).is_err());
    }

    #[test]
    fn cbound_is_min_over_mu_grid() {
        let p = pt(0.2, 0.05);
        let best = (0..100_000)
            .map(|i| -2.0 + i as f64 * 2.4 / 100_000.0)
            .map(|mu| oracle_mv_param(p, mu).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((best - 0.1).abs() < 1e-8);
    }

    #[test]
    fn mv_param_examples() {
        let p = pt(0.2, 0.05);
        assert_eq!(oracle_mv_param(p, 0.0).unwrap(), oracle_tnd(p));
        let ms = mu_star(p).unwrap();
        assert!((ms - 1.0 / 6.0).abs() < 1e-15);
        assert!((oracle_mv_param(p, ms).unwrap() - oracle_cbound(p).unwrap()).abs() < 1e-12);
        assert!((oracle_mv_param(p, 0.1).unwrap() - 0.125).abs() < 1e-15);
        assert!(oracle_mv_param(p, 0.5).is_err());
    }

    #[test]
    fn mu_star_examples() {
        assert!(mu_star(pt(0.2, 0.1)).unwrap().abs() < 1e-15);
        assert!(mu_star(pt(0.2, 0.15)).unwrap() < 0.0);
        assert!(mu_star(pt(0.5, 0.25)).is_err());
    }

    #[test]
    fn offset_matches_param() {
        let p = pt(0.2, 0.05);
        for mu in [-0.3, 0.0, 0.1] {
            let e = p.t() - 2.0 * mu * p.g() + mu * mu;
            assert!((oracle_mv_offset(e, mu).unwrap() - oracle_mv_param(p, mu).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn infeasible_points_rejected() {
        assert!(OraclePoint::new(0.2, 0.3).is_err());
        assert!(OraclePoint::new(0.2, 0.01).is_err());
        assert!(OraclePoint::new(-0.1, 0.0).is_err());
    }

    #[test]
    fn small_surface() {
        let s = ratio_surface(40);
        assert!(s.iter().all(|p| p.ratio <= 1.0 + 1e-12));
        assert!(s.iter().any(|p| p.ratio < 0.9));
        let csv = surface_csv(&s);
        assert_eq!(csv.lines().count(), s.len() + 1);
    }
}
