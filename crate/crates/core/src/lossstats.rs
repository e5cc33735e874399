//! Empirical loss statistics of a prediction table.
//!
//! Gibbs losses are measured on each hypothesis' own validation set S_h and
//! pairwise quantities on the overlaps S_h ∩ S_h'. Per-pair statistics are
//! reduced to four counts (overlap size, joint errors, and each member's
//! errors on the overlap), from which the tandem, μ-tandem and variance
//! matrices follow in closed form for any μ.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataio::PredictionTable;
use crate::{par, Error, Result};

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = f(i, j);
            }
        }
        SymMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// M·v
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// vᵀ·M·v, the ρ²-expectation of the matrix entries.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Membership and error bitsets of one hypothesis.
#[derive(Debug, Clone)]
struct Bits {
    in_set: Vec<u64>,
    err: Vec<u64>,
}

fn and_count(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as usize).sum()
}

fn bits_of(table: &PredictionTable) -> Vec<Bits> {
    let n = table.n_points();
    let words = n.div_ceil(64);
    par::map_indices(table.n_hypotheses(), |h| {
        let mut in_set = vec![0u64; words];
        let mut err = vec![0u64; words];
        for (i, &m) in table.mask(h).iter().enumerate() {
            if m {
                in_set[i / 64] |= 1 << (i % 64);
                if table.errs(h, i) {
                    err[i / 64] |= 1 << (i % 64);
                }
            }
        }
        Bits { in_set, err }
    })
}

/// Every empirical statistic the bounds consume.
#[derive(Debug, Clone)]
pub struct LossStats {
    n_hypotheses: usize,
    gibbs: Vec<f64>,
    validation_sizes: Vec<usize>,
    tandem: SymMatrix,
    /// |S_h ∩ S_h'|, row-major.
    overlap: Vec<usize>,
    /// Joint error counts on the overlaps, row-major.
    joint_errors: Vec<usize>,
    /// Errors of h on S_h ∩ S_h' at [h][h'] (not symmetric).
    errors_on_overlap: Vec<usize>,
    n_min: usize,
    m_min: usize,
    bits: Vec<Bits>,
}

/// μ-tandem losses and their unbiased empirical variances for one μ.
#[derive(Debug, Clone, Serialize)]
pub struct MuTandemStats {
    pub mu: f64,
    pub loss: SymMatrix,
    pub variance: SymMatrix,
    /// Range of the μ-tandem loss, max{1 − μ, 1 − 2μ}.
    pub k_mu: f64,
    /// Upper bound of the μ-tandem loss, (1 − μ)².
    pub b_mu: f64,
}

pub fn mu_tandem_range(mu: f64) -> f64 {
    (1.0 - mu).max(1.0 - 2.0 * mu)
}

impl LossStats {
    /// Build all statistics. Fails if a validation set or a pairwise overlap
    /// is empty.
    pub fn from_table(table: &PredictionTable) -> Result<Self> {
        let h = table.n_hypotheses();
        let bits = bits_of(table);
        let validation_sizes: Vec<usize> = bits.iter().map(|b| and_count(&b.in_set, &b.in_set)).collect();
        if let Some(empty) = validation_sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyValidationSet(empty));
        }
        let gibbs = bits
            .iter()
            .zip(&validation_sizes)
            .map(|(b, &s)| and_count(&b.err, &b.err) as f64 / s as f64)
            .collect();

        // (overlap, joint errors, errors of row hypothesis on overlap)
        let rows = par::map_indices(h, |i| {
            (0..h)
                .map(|j| {
                    (
                        and_count(&bits[i].in_set, &bits[j].in_set),
                        and_count(&bits[i].err, &bits[j].err),
                        and_count(&bits[i].err, &bits[j].in_set),
                    )
                })
                .collect::<Vec<_>>()
        });
        let mut overlap = Vec::with_capacity(h * h);
        let mut joint_errors = Vec::with_capacity(h * h);
        let mut errors_on_overlap = Vec::with_capacity(h * h);
        for row in &rows {
            for &(o, j, e) in row {
                overlap.push(o);
                joint_errors.push(j);
                errors_on_overlap.push(e);
            }
        }
        for i in 0..h {
            for j in i..h {
                if overlap[i * h + j] == 0 {
                    return Err(Error::SmallOverlap(i, j, 0, 1));
                }
            }
        }
        let tandem = SymMatrix::from_fn(h, |i, j| {
            joint_errors[i * h + j] as f64 / overlap[i * h + j] as f64
        });
        let n_min = *validation_sizes.iter().min().unwrap();
        let m_min = *overlap.iter().min().unwrap();
        Ok(LossStats {
            n_hypotheses: h,
            gibbs,
            validation_sizes,
            tandem,
            overlap,
            joint_errors,
            errors_on_overlap,
            n_min,
            m_min,
            bits,
        })
    }

    pub fn n_hypotheses(&self) -> usize {
        self.n_hypotheses
    }

    /// L̂(h, S_h) for every h.
    pub fn gibbs(&self) -> &[f64] {
        &self.gibbs
    }

    pub fn validation_sizes(&self) -> &[usize] {
        &self.validation_sizes
    }

    /// L̂(h, h', S_h ∩ S_h'), diagonal included.
    pub fn tandem(&self) -> &SymMatrix {
        &self.tandem
    }

    pub fn overlap(&self, h: usize, g: usize) -> usize {
        self.overlap[h * self.n_hypotheses + g]
    }

    /// min_h |S_h|
    pub fn n_min(&self) -> usize {
        self.n_min
    }

    /// min over all pairs (diagonal included) of |S_h ∩ S_h'|
    pub fn m_min(&self) -> usize {
        self.m_min
    }

    /// Whether h errs on point i; false outside S_h.
    pub fn errs(&self, h: usize, i: usize) -> bool {
        self.bits[h].err[i / 64] >> (i % 64) & 1 == 1
    }

    /// E_ρ[L̂(h, S_h)]
    pub fn gibbs_expectation(&self, rho: &[f64]) -> f64 {
        self.gibbs.iter().zip(rho).map(|(g, r)| g * r).sum()
    }

    /// E_ρ²[L̂(h, h')]
    pub fn tandem_expectation(&self, rho: &[f64]) -> f64 {
        self.tandem.quad_form(rho)
    }

    /// μ-tandem losses and variances. Requires μ < 1/2 and overlaps of at
    /// least two points.
    pub fn mu_tandem(&self, mu: f64) -> Result<MuTandemStats> {
        if !(mu < 0.5 && mu.is_finite()) {
            return Err(Error::Domain {
                name: "mu",
                value: mu,
                reason: "must be finite and < 0.5",
            });
        }
        let h = self.n_hypotheses;
        for i in 0..h {
            for j in i..h {
                let o = self.overlap[i * h + j];
                if o < 2 {
                    return Err(Error::SmallOverlap(i, j, o, 2));
                }
            }
        }
        let both = (1.0 - mu) * (1.0 - mu);
        let single = -mu * (1.0 - mu);
        let neither = mu * mu;
        let counts = |i: usize, j: usize| {
            let n = self.overlap[i * h + j] as f64;
            let c = self.joint_errors[i * h + j] as f64;
            let a = self.errors_on_overlap[i * h + j] as f64;
            let b = self.errors_on_overlap[j * h + i] as f64;
            (n, c, a + b - 2.0 * c, n - a - b + c)
        };
        let loss = SymMatrix::from_fn(h, |i, j| {
            let (n, c, mixed, none) = counts(i, j);
            (c * both + mixed * single + none * neither) / n
        });
        // Unbiased variance via the pairwise form Σ_{i<j}(x_i − x_j)²/(n(n−1));
        // the value gaps are 1−μ (both vs one), 1−2μ (both vs none), μ (one vs none).
        let variance = SymMatrix::from_fn(h, |i, j| {
            let (n, c, mixed, none) = counts(i, j);
            let d_bs = 1.0 - mu;
            let d_bn = 1.0 - 2.0 * mu;
            let sum = c * mixed * d_bs * d_bs + c * none * d_bn * d_bn + mixed * none * mu * mu;
            sum / (n * (n - 1.0))
        });
        Ok(MuTandemStats {
            mu,
            loss,
            variance,
            k_mu: mu_tandem_range(mu),
            b_mu: both,
        })
    }

    /// CSV with one row per hypothesis: index, Gibbs loss, |S_h|, then the
    /// tandem matrix row.
    pub fn to_csv(&self) -> String {
        let h = self.n_hypotheses;
        let mut out = String::from("h,gibbs,validation_size");
        for j in 0..h {
            let _ = write!(out, ",tandem_{j}");
        }
        out.push('\n');
        for i in 0..h {
            let _ = write!(out, "{},{},{}", i, self.gibbs[i], self.validation_sizes[i]);
            for j in 0..h {
                let _ = write!(out, ",{}", self.tandem.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

pub fn gibbs_losses(table: &PredictionTable) -> Result<Vec<f64>> {
    let sizes = table.validation_sizes();
    (0..table.n_hypotheses())
        .map(|h| {
            if sizes[h] == 0 {
                return Err(Error::EmptyValidationSet(h));
            }
            let errors = (0..table.n_points())
                .filter(|&i| table.mask(h)[i] && table.errs(h, i))
                .count();
            Ok(errors as f64 / sizes[h] as f64)
        })
        .collect()
}

/// Tandem loss matrix and overlap counts (row-major H×H).
pub fn tandem_losses(table: &PredictionTable) -> Result<(SymMatrix, Vec<usize>)> {
    let stats = LossStats::from_table(table)?;
    Ok((stats.tandem.clone(), stats.overlap.clone()))
}

pub fn mu_tandem_stats(table: &PredictionTable, mu: f64) -> Result<MuTandemStats> {
    LossStats::from_table(table)?.mu_tandem(mu)
}

/// Both sides of E[(E_ρ 1[h errs])²] = E_ρ²[joint error rate] on the points
/// that belong to every validation set.
pub fn second_moment_identity_check(table: &PredictionTable, rho: &[f64]) -> Result<(f64, f64)> {
    let h = table.n_hypotheses();
    if rho.len() != h {
        return Err(Error::Dimension(format!(
            "{} weights for {h} hypotheses",
            rho.len()
        )));
    }
    let common: Vec<usize> = (0..table.n_points())
        .filter(|&i| (0..h).all(|k| table.mask(k)[i]))
        .collect();
    if common.is_empty() {
        return Err(Error::InvalidArgument(
            "no point lies in every validation set".into(),
        ));
    }
    let n = common.len() as f64;
    let err = |k: usize, i: usize| if table.errs(k, i) { 1.0 } else { 0.0 };
    let lhs = common
        .iter()
        .map(|&i| {
            let z: f64 = (0..h).map(|k| rho[k] * err(k, i)).sum();
            z * z
        })
        .sum::<f64>()
        / n;
    let mut rhs = 0.0;
    for a in 0..h {
        for b in 0..h {
            let joint = common.iter().map(|&i| err(a, i) * err(b, i)).sum::<f64>() / n;
            rhs += rho[a] * rho[b] * joint;
        }
    }
    Ok((lhs, rhs))
}
