//! End-to-end evaluation: all four bounds at uniform and optimized weights,
//! with majority-vote test losses when a test table is available.

use serde::Serialize;

use crate::bounds::{fo_bound, tnd_bound, BoundReport, Posterior};
use crate::dataio::{stratified_split, Dataset, PredictionTable};
use crate::ensemble::{best_single_hypothesis, train_bagged, BaggingConfig, MajorityVote};
use crate::grids::{GridConfig, Grids};
use crate::lossstats::LossStats;
use crate::optimize::{
    cmu_tnd_at, co_tnd_at, optimize_cmu_tnd, optimize_co_tnd, optimize_fo, optimize_tnd, OptimizationTrace,
    Optimized, OptimizerConfig,
};
use crate::{Error, Result};

/// Bound names in report order.
pub const BOUND_NAMES: [&str; 4] = ["FO", "TND", "CMUTND", "COTND"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub delta: f64,
    pub grid: GridConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delta: 0.05,
            grid: GridConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// One bound evaluated at one weighting.
#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub bound: String,
    pub weighting: String,
    pub report: BoundReport,
    pub rho: Vec<f64>,
    /// Test loss of MV_ρ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_loss: Option<f64>,
    /// L(MV_ρ)/L(MV_u).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_ratio: Option<f64>,
    /// Bound at this ρ over the TND bound at its own optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_over_tnd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<OptimizationTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub n_hypotheses: usize,
    pub n_min: usize,
    pub m_min: usize,
    pub delta: f64,
    pub k_mu: usize,
    pub gibbs_uniform: f64,
    pub tandem_uniform: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_test_loss: Option<f64>,
    /// (index, test loss) of the hypothesis with the lowest validation loss.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_single: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub summary: Summary,
    pub entries: Vec<Entry>,
}

impl EvalReport {
    pub fn entry(&self, bound: &str, weighting: &str) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|e| e.bound == bound && e.weighting == weighting)
    }

    /// Report without the optimization traces.
    pub fn without_traces(&self) -> EvalReport {
        let mut r = self.clone();
        for e in &mut r.entries {
            e.trace = None;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn optimize(name: &str, stats: &LossStats, grids: &Grids, cfg: &EvalConfig) -> Result<Optimized> {
    match name {
        "FO" => optimize_fo(stats, cfg.delta, &cfg.optimizer),
        "TND" => optimize_tnd(stats, cfg.delta, &cfg.optimizer),
        "CMUTND" => optimize_cmu_tnd(stats, grids, cfg.delta, &cfg.optimizer),
        "COTND" => optimize_co_tnd(stats, grids, cfg.delta, &cfg.optimizer),
        _ => unreachable!("unknown bound {name}"),
    }
}

fn at_posterior(
    name: &str,
    stats: &LossStats,
    grids: &Grids,
    delta: f64,
    post: &Posterior,
) -> Result<BoundReport> {
    match name {
        "FO" => fo_bound(stats, post, delta),
        "TND" => tnd_bound(stats, post, delta),
        "CMUTND" => cmu_tnd_at(stats, grids, delta, post),
        "COTND" => co_tnd_at(stats, grids, delta, post),
        _ => unreachable!("unknown bound {name}"),
    }
}

/// Evaluate every bound at ρ = π and at its own minimizer. `oob` holds the
/// validation predictions; `test`, if given, the predictions on held-out
/// points for the majority-vote losses.
pub fn evaluate(
    oob: &PredictionTable,
    test: Option<&PredictionTable>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if let Some(t) = test {
        if t.n_hypotheses() != oob.n_hypotheses() {
            return Err(Error::Dimension(format!(
                "validation table has {} hypotheses, test table {}",
                oob.n_hypotheses(),
                t.n_hypotheses()
            )));
        }
    }
    cfg.optimizer.validate()?;
    let stats = LossStats::from_table(oob)?;
    let grids = Grids::new(cfg.grid, cfg.delta)?;
    let h = stats.n_hypotheses();
    let uniform = Posterior::uniform(h);
    let test_loss = |rho: &[f64]| -> Result<Option<f64>> {
        test.map(|t| MajorityVote::new(rho.to_vec()).test_loss(t))
            .transpose()
    };
    let uniform_test_loss = test_loss(uniform.rho())?;

    let mut entries = Vec::with_capacity(2 * BOUND_NAMES.len());
    for name in BOUND_NAMES {
        let report = at_posterior(name, &stats, &grids, cfg.delta, &uniform)?;
        entries.push(Entry {
            bound: name.to_string(),
            weighting: "uniform".into(),
            report,
            rho: uniform.rho().to_vec(),
            test_loss: uniform_test_loss,
            loss_ratio: uniform_test_loss.map(|_| 1.0),
            bound_over_tnd: None,
            trace: None,
        });
    }
    let mut optimized = Vec::with_capacity(BOUND_NAMES.len());
    for name in BOUND_NAMES {
        let opt = optimize(name, &stats, &grids, cfg)?;
        let loss = test_loss(opt.posterior.rho())?;
        optimized.push(Entry {
            bound: name.to_string(),
            weighting: "optimized".into(),
            report: opt.report,
            rho: opt.posterior.rho().to_vec(),
            test_loss: loss,
            loss_ratio: loss.zip(uniform_test_loss).map(|(l, u)| ratio(l, u)),
            bound_over_tnd: None,
            trace: Some(opt.trace),
        });
    }
    let tnd_opt = optimized[1].report.bound;
    for e in &mut optimized {
        e.bound_over_tnd = Some(ratio(e.report.bound, tnd_opt));
    }
    for e in &mut entries {
        e.bound_over_tnd = Some(ratio(e.report.bound, tnd_opt));
    }
    entries.extend(optimized);

    let best_single = test.map(|t| best_single_hypothesis(oob, t)).transpose()?;
    Ok(EvalReport {
        summary: Summary {
            n_hypotheses: h,
            n_min: stats.n_min(),
            m_min: stats.m_min(),
            delta: cfg.delta,
            k_mu: grids.k_mu(),
            gibbs_uniform: stats.gibbs_expectation(uniform.rho()),
            tandem_uniform: stats.tandem_expectation(uniform.rho()),
            uniform_test_loss,
            best_single,
        },
        entries,
    })
}

/// 0/0 is taken as 1.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub bagging: BaggingConfig,
    pub test_fraction: f64,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            bagging: BaggingConfig::default(),
            test_fraction: 0.2,
            eval: EvalConfig::default(),
        }
    }
}

/// Split, bag on the training part (out-of-bag predictions as validation
/// data), then evaluate against the test part. The split and the ensemble
/// both use `cfg.bagging.seed`.
pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let (train, test) = stratified_split(data, cfg.test_fraction, cfg.bagging.seed)?;
    let ensemble = train_bagged(&train, &cfg.bagging)?;
    let test_table = ensemble.predict_table(&test)?;
    evaluate(&ensemble.table, Some(&test_table), &cfg.eval)
}
