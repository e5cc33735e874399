//! First-order bound: 2× the PB-λ upper bound on the Gibbs loss.

use super::cmu::lambda_star_with;
use super::{alternate, log_ratio, Alternating, Optimized, OptimizerConfig, TraceRecord};
use crate::bounds::{fo_bound, kl_divergence, log_term, pb_lambda_upper_with, Posterior};
use crate::lossstats::LossStats;
use crate::Result;

struct FoProblem<'a> {
    stats: &'a LossStats,
    prior: Vec<f64>,
    n: usize,
    log_n: f64,
}

impl Alternating for FoProblem<'_> {
    type Params = f64;

    fn prior(&self) -> &[f64] {
        &self.prior
    }

    fn value(&self, rho: &[f64], lambda: &f64) -> f64 {
        let kl = kl_divergence(rho, &self.prior);
        2.0 * pb_lambda_upper_with(
            self.stats.gibbs_expectation(rho),
            kl + self.log_n,
            self.n,
            *lambda,
        )
    }

    fn gradient(&self, rho: &[f64], lambda: &f64) -> Vec<f64> {
        let s = 1.0 - 0.5 * lambda;
        let c = 1.0 / (lambda * s * self.n as f64);
        let lr = log_ratio(rho, &self.prior);
        (0..rho.len())
            .map(|h| 2.0 * (self.stats.gibbs()[h] / s + c * (1.0 + lr[h])))
            .collect()
    }

    fn params(&self, rho: &[f64]) -> Result<f64> {
        let kl = kl_divergence(rho, &self.prior);
        Ok(lambda_star_with(
            self.stats.gibbs_expectation(rho),
            kl + self.log_n,
            self.n,
        ))
    }

    fn record(&self, outer: usize, bound: f64, best: f64, lambda: &f64, inner: usize) -> TraceRecord {
        TraceRecord {
            outer,
            bound,
            best,
            mu: None,
            mu_continuous: None,
            lambda: Some(*lambda),
            gamma: None,
            inner_iterations: inner,
        }
    }
}

/// Minimize 2·PB-λ(E_ρ[L̂]) with n = n_min; the report is the kl form.
pub fn optimize_fo(stats: &LossStats, delta: f64, config: &OptimizerConfig) -> Result<Optimized> {
    let h = stats.n_hypotheses();
    let problem = FoProblem {
        stats,
        prior: vec![1.0 / h as f64; h],
        n: stats.n_min(),
        log_n: log_term(stats.n_min(), delta),
    };
    let (rho, lambda, objective, trace) = alternate(&problem, config)?;
    let posterior = Posterior::new(rho, problem.prior.clone())?;
    let mut report = fo_bound(stats, &posterior, delta)?;
    report.params.lambda = Some(lambda);
    report.terms.insert("pb_lambda_raw".into(), objective);
    Ok(Optimized {
        posterior,
        report,
        trace,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PredictionTable;

    #[test]
    fn fo_moves_weight_to_better_hypothesis() {
        // Hypothesis 0 errs on 10% of points, hypothesis 1 on 40%.
        let n = 500;
        let truth = vec![0usize; n];
        let p0: Vec<i32> = (0..n).map(|i| i32::from(i % 10 == 0)).collect();
        let p1: Vec<i32> = (0..n).map(|i| i32::from(i % 5 < 2)).collect();
        let t = PredictionTable::fully_observed(2, truth, vec![p0, p1]).unwrap();
        let stats = LossStats::from_table(&t).unwrap();
        let r = optimize_fo(&stats, 0.05, &OptimizerConfig::default()).unwrap();
        assert!(r.posterior.rho()[0] > 0.9);
        // exhaustive ρ grid on the 1-simplex
        let best = (0..=1000)
            .map(|i| {
                let a = i as f64 / 1000.0;
                let rho = [a, 1.0 - a];
                let pr = FoProblem {
                    stats: &stats,
                    prior: vec![0.5, 0.5],
                    n: stats.n_min(),
                    log_n: log_term(stats.n_min(), 0.05),
                };
                let l = pr.params(&rho).unwrap();
                pr.value(&rho, &l)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.objective <= best + 1e-3);
        let again = optimize_fo(&stats, 0.05, &OptimizerConfig::default()).unwrap();
        assert_eq!(again.posterior, r.posterior);
    }
}
