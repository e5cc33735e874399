//! Scalar special functions shared by the bounds: the binary KL divergence
//! and its two inverses, both real branches of the Lambert W function, and
//! the Bennett function φ(x) = eˣ − x − 1.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance of the kl inversions.
pub const KL_INV_TOL: f64 = 1e-12;
const KL_INV_MAX_ITERS: usize = 60;

const LAMBERT_MAX_ITERS: usize = 64;

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::Domain {
                name: "probability",
                value,
                reason: "must lie in [0, 1]",
            })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// A finite real number strictly greater than zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(PositiveReal(value))
        } else {
            Err(Error::Domain {
                name: "positive real",
                value,
                reason: "must be finite and > 0",
            })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        PositiveReal::new(value)
    }
}

impl From<PositiveReal> for f64 {
    fn from(p: PositiveReal) -> f64 {
        p.0
    }
}

/// KL divergence between Bernoulli(p) and Bernoulli(q).
///
/// Uses the convention 0·ln(0/x) = 0 and returns +∞ when q ∈ {0, 1} and
/// p ≠ q. Arguments are clamped to `[0, 1]` to absorb rounding in callers.
pub fn kl(p: f64, q: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let q = q.clamp(0.0, 1.0);
    if p == q {
        return 0.0;
    }
    if q <= 0.0 || q >= 1.0 {
        return f64::INFINITY;
    }
    let head = if p > 0.0 { p * (p / q).ln() } else { 0.0 };
    let tail = if p < 1.0 {
        (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    } else {
        0.0
    };
    (head + tail).max(0.0)
}

/// Largest q ∈ [p, 1] with kl(p‖q) ≤ `bound`.
pub fn kl_inv_upper(p: f64, bound: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if p >= 1.0 || bound.is_nan() || bound == f64::INFINITY {
        return 1.0;
    }
    if bound <= 0.0 {
        return p;
    }
    // kl(p‖q) → ∞ as q → 1 for p < 1, so the bisection bracket is [p, 1).
    let (mut lo, mut hi) = (p, 1.0);
    for _ in 0..KL_INV_MAX_ITERS {
        if hi - lo <= KL_INV_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if kl(p, mid) > bound {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Smallest q ∈ [0, p] with kl(p‖q) ≤ `bound`.
pub fn kl_inv_lower(p: f64, bound: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if p <= 0.0 || bound.is_nan() || bound == f64::INFINITY {
        return 0.0;
    }
    if bound <= 0.0 {
        return p;
    }
    let (mut lo, mut hi) = (0.0, p);
    for _ in 0..KL_INV_MAX_ITERS {
        if hi - lo <= KL_INV_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if kl(p, mid) > bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..LAMBERT_MAX_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        if !dw.is_finite() {
            break;
        }
        w -= dw;
        if dw.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

fn branch_distance(x: f64) -> Result<f64> {
    // 2(ex + 1); zero at the branch point.
    let d = 2.0 * (E * x + 1.0);
    if d < -1e-14 {
        return Err(Error::Domain {
            name: "lambert w argument",
            value: x,
            reason: "must be >= -1/e",
        });
    }
    Ok(d.max(0.0))
}

/// Principal branch W₀ of the Lambert W function, defined for x ≥ −1/e.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::NonFinite("lambert_w0 argument".into()));
    }
    let d = branch_distance(x)?;
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let p = d.sqrt();
    if p < 1e-5 {
        return Ok(-1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p);
    }
    let guess = if x < -0.32 {
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - l.ln_1p() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(x, guess))
}

/// Lower branch W₋₁ of the Lambert W function, defined on [−1/e, 0).
pub fn lambert_w_minus1(x: f64) -> Result<f64> {
    if x.is_nan() || x >= 0.0 {
        return Err(Error::Domain {
            name: "lambert w-1 argument",
            value: x,
            reason: "must lie in [-1/e, 0)",
        });
    }
    let d = branch_distance(x)?;
    let p = -d.sqrt();
    if p > -1e-5 {
        return Ok(-1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p);
    }
    let guess = if x < -0.25 {
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(x, guess))
}

/// The Bennett function φ(x) = eˣ − x − 1.
pub fn phi(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        x2 * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)))
    } else {
        x.exp_m1() - x
    }
}

/// φ(x)/x², continuously extended by 1/2 at zero.
pub fn phi_over_square(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0))
    } else {
        phi(x) / (x * x)
    }
}
