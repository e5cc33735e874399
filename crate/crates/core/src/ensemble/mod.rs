//! Bagged ensembles with out-of-bag bookkeeping, and ρ-weighted majority
//! votes over prediction tables.

mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tree::{DecisionTree, TreeConfig};

use crate::dataio::{Dataset, PredictionTable, NOT_EVALUATED};
use crate::lossstats::gibbs_losses;
use crate::{par, Error, Result};

const MAX_BOOTSTRAP_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaggingConfig {
    pub n_hypotheses: usize,
    pub tree: TreeConfig,
    /// Bootstrap size as a fraction of the training pool.
    pub bootstrap_fraction: f64,
    pub seed: u64,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        BaggingConfig {
            n_hypotheses: 20,
            tree: TreeConfig::default(),
            bootstrap_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaggedEnsemble {
    pub hypotheses: Vec<DecisionTree>,
    /// Out-of-bag predictions on the training pool.
    pub table: PredictionTable,
    pub seed: u64,
}

/// Bootstrap draw, in-bag flags and fitted tree for one hypothesis. The RNG
/// is the master seed on stream `h`, so results do not depend on which
/// thread trains which hypothesis.
fn train_one(data: &Dataset, cfg: &BaggingConfig, h: usize) -> Result<(DecisionTree, Vec<i32>, Vec<bool>)> {
    let n = data.len();
    let draws = ((n as f64) * cfg.bootstrap_fraction).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(h as u64);
    for _ in 0..MAX_BOOTSTRAP_RETRIES {
        let sample: Vec<usize> = (0..draws).map(|_| rng.random_range(0..n)).collect();
        let mut in_bag = vec![false; n];
        for &i in &sample {
            in_bag[i] = true;
        }
        if in_bag.iter().all(|&b| b) {
            continue;
        }
        let model = DecisionTree::fit(data, &sample, cfg.tree, &mut rng);
        let mask: Vec<bool> = in_bag.iter().map(|&b| !b).collect();
        let preds = mask
            .iter()
            .enumerate()
            .map(|(i, &oob)| {
                if oob {
                    model.predict(data.row(i)) as i32
                } else {
                    NOT_EVALUATED
                }
            })
            .collect();
        return Ok((model, preds, mask));
    }
    Err(Error::EmptyValidationSet(h))
}

/// Train `cfg.n_hypotheses` trees on bootstrap samples of `data` and record
/// each tree's predictions on its out-of-bag points.
pub fn train_bagged(data: &Dataset, cfg: &BaggingConfig) -> Result<BaggedEnsemble> {
    if cfg.n_hypotheses < 2 {
        return Err(Error::InvalidArgument(
            "an ensemble needs at least two hypotheses".into(),
        ));
    }
    if !(cfg.bootstrap_fraction > 0.0 && cfg.bootstrap_fraction.is_finite()) {
        return Err(Error::Domain {
            name: "bootstrap_fraction",
            value: cfg.bootstrap_fraction,
            reason: "must be positive",
        });
    }
    let results = par::map_indices(cfg.n_hypotheses, |h| train_one(data, cfg, h));
    let mut hypotheses = Vec::with_capacity(cfg.n_hypotheses);
    let mut predictions = Vec::with_capacity(cfg.n_hypotheses);
    let mut mask = Vec::with_capacity(cfg.n_hypotheses);
    for r in results {
        let (model, preds, m) = r?;
        hypotheses.push(model);
        predictions.push(preds);
        mask.push(m);
    }
    let table = PredictionTable::new(data.n_classes(), data.labels().to_vec(), predictions, mask)?;
    Ok(BaggedEnsemble {
        hypotheses,
        table,
        seed: cfg.seed,
    })
}

impl BaggedEnsemble {
    /// Predictions of every hypothesis on every point of `data`.
    pub fn predict_table(&self, data: &Dataset) -> Result<PredictionTable> {
        let predictions = par::map_slice(&self.hypotheses, |m| {
            (0..data.len())
                .map(|i| m.predict(data.row(i)) as i32)
                .collect::<Vec<i32>>()
        });
        PredictionTable::fully_observed(data.n_classes(), data.labels().to_vec(), predictions)
    }

    pub fn n_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }
}

/// ρ-weighted plurality label of one point. Ties go to the smallest label.
pub fn mv_predict(rho: &[f64], predictions: &[usize], n_classes: usize) -> usize {
    let mut votes = vec![0.0; n_classes];
    for (&w, &p) in rho.iter().zip(predictions) {
        votes[p] += w;
    }
    let mut best = 0;
    for (y, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = y;
        }
    }
    best
}

/// A weighting of the hypotheses of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub rho: Vec<f64>,
}

impl MajorityVote {
    pub fn new(rho: Vec<f64>) -> Self {
        MajorityVote { rho }
    }

    pub fn uniform(h: usize) -> Self {
        MajorityVote {
            rho: vec![1.0 / h as f64; h],
        }
    }

    /// Majority-vote predictions on every point of a fully observed table.
    pub fn predict(&self, table: &PredictionTable) -> Result<Vec<usize>> {
        if self.rho.len() != table.n_hypotheses() {
            return Err(Error::Dimension(format!(
                "{} weights for {} hypotheses",
                self.rho.len(),
                table.n_hypotheses()
            )));
        }
        let mut point = vec![0usize; table.n_hypotheses()];
        let mut out = Vec::with_capacity(table.n_points());
        for i in 0..table.n_points() {
            for (h, slot) in point.iter_mut().enumerate() {
                let p = table.predictions(h)[i];
                if p == NOT_EVALUATED {
                    return Err(Error::InvalidArgument(format!(
                        "hypothesis {h} has no prediction for point {i}"
                    )));
                }
                *slot = p as usize;
            }
            out.push(mv_predict(&self.rho, &point, table.n_classes()));
        }
        Ok(out)
    }

    /// Zero-one loss of the majority vote on a fully observed table.
    pub fn test_loss(&self, table: &PredictionTable) -> Result<f64> {
        let preds = self.predict(table)?;
        let errors = preds.iter().zip(table.truth()).filter(|(p, y)| p != y).count();
        Ok(errors as f64 / table.n_points() as f64)
    }
}

pub fn mv_test_loss(mv: &MajorityVote, test: &PredictionTable) -> Result<f64> {
    mv.test_loss(test)
}

/// The hypothesis with the smallest validation loss on `oob` (ties to the
/// smallest index) and its loss on the fully observed `test` table.
pub fn best_single_hypothesis(oob: &PredictionTable, test: &PredictionTable) -> Result<(usize, f64)> {
    if oob.n_hypotheses() != test.n_hypotheses() {
        return Err(Error::Dimension(
            "validation and test tables disagree on the number of hypotheses".into(),
        ));
    }
    let losses = gibbs_losses(oob)?;
    let mut best = 0;
    for (h, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = h;
        }
    }
    let mut rho = vec![0.0; oob.n_hypotheses()];
    rho[best] = 1.0;
    Ok((best, MajorityVote::new(rho).test_loss(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mv_predict_examples() {
        assert_eq!(mv_predict(&[0.5, 0.5], &[1, 1], 2), 1);
        assert_eq!(mv_predict(&[0.5, 0.5], &[0, 1], 2), 0);
        assert_eq!(mv_predict(&[0.2, 0.3, 0.5], &[0, 0, 1], 2), 0);
        assert_eq!(mv_predict(&[0.2, 0.3, 0.5], &[2, 1, 1], 3), 1);
    }

    #[test]
    fn mv_predict_is_scale_invariant() {
        let rho = [0.1, 0.25, 0.4, 0.25];
        let preds = [2, 0, 1, 0];
        let scaled: Vec<f64> = rho.iter().map(|r| r * 7.5).collect();
        assert_eq!(mv_predict(&rho, &preds, 3), mv_predict(&scaled, &preds, 3));
    }

    fn table(truth: Vec<usize>, preds: Vec<Vec<i32>>) -> PredictionTable {
        PredictionTable::fully_observed(2, truth, preds).unwrap()
    }

    #[test]
    fn test_loss_examples() {
        let t = table(vec![0, 1, 1], vec![vec![0, 1, 1], vec![0, 1, 1]]);
        assert_eq!(MajorityVote::uniform(2).test_loss(&t).unwrap(), 0.0);

        let t = table(vec![0, 1, 1, 0], vec![vec![0, 0, 1, 1]]);
        assert_eq!(MajorityVote::new(vec![1.0]).test_loss(&t).unwrap(), 0.5);
    }

    #[test]
    fn test_loss_matches_enumeration() {
        // Three hypotheses, binary labels; each point's vote is counted by hand
        // below from the error pattern.
        let truth = vec![0, 1, 0, 1, 1, 0];
        let preds = vec![
            vec![0, 0, 1, 1, 0, 0],
            vec![1, 1, 1, 0, 1, 0],
            vec![0, 1, 0, 0, 0, 1],
        ];
        let t = table(truth.clone(), preds.clone());
        let rho = [0.5, 0.3, 0.2];
        let mut errors = 0;
        for i in 0..truth.len() {
            let wrong: f64 = (0..3)
                .filter(|&h| preds[h][i] as usize != truth[i])
                .map(|h| rho[h])
                .sum();
            // binary: the vote errs iff the wrong side strictly outweighs,
            // or ties while the true label is 1 (tie → label 0).
            if wrong > 0.5 || (wrong == 0.5 && truth[i] == 1) {
                errors += 1;
            }
        }
        let expected = errors as f64 / truth.len() as f64;
        let got = MajorityVote::new(rho.to_vec()).test_loss(&t).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn best_single_examples() {
        let truth = vec![0, 1, 1, 0];
        let oob = PredictionTable::new(
            2,
            truth.clone(),
            vec![vec![0, 0, -1, -1], vec![-1, 1, 1, -1], vec![1, -1, -1, 1]],
            vec![
                vec![true, true, false, false],
                vec![false, true, true, false],
                vec![true, false, false, true],
            ],
        )
        .unwrap();
        let test = table(truth, vec![vec![0, 1, 1, 0], vec![1, 1, 1, 0], vec![1, 0, 0, 1]]);
        assert_eq!(best_single_hypothesis(&oob, &test).unwrap(), (1, 0.25));
    }

    #[test]
    fn best_single_ties_pick_first() {
        let truth = vec![0, 1];
        let oob = table(truth.clone(), vec![vec![0, 0], vec![1, 1]]);
        let test = table(truth, vec![vec![0, 1], vec![0, 0]]);
        assert_eq!(best_single_hypothesis(&oob, &test).unwrap(), (0, 0.0));
    }

    fn toy(n: usize) -> Dataset {
        // two classes separated by a margin of 0.2
        let xs: Vec<f64> = (0..n)
            .map(|i| i as f64 / n as f64 + if 2 * i >= n { 0.2 } else { 0.0 })
            .collect();
        let ys = xs.iter().map(|&x| usize::from(x >= 0.6)).collect();
        Dataset::new(xs, 1, ys, vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn bagging_is_deterministic() {
        let d = toy(10);
        let cfg = BaggingConfig {
            n_hypotheses: 2,
            seed: 42,
            ..BaggingConfig::default()
        };
        let a = train_bagged(&d, &cfg).unwrap();
        let b = train_bagged(&d, &cfg).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn oob_fraction_matches_bootstrap_combinatorics() {
        let d = toy(1000);
        let cfg = BaggingConfig {
            n_hypotheses: 100,
            tree: TreeConfig::stump(),
            seed: 3,
            ..BaggingConfig::default()
        };
        let ens = train_bagged(&d, &cfg).unwrap();
        let sizes = ens.table.validation_sizes();
        let mean = sizes.iter().sum::<usize>() as f64 / (100.0 * 1000.0);
        let expected = (1.0 - 1.0 / 1000.0f64).powi(1000);
        assert!((mean - expected).abs() <= 0.05, "mean oob fraction {mean}");
    }

    #[test]
    fn separable_toy_has_zero_training_loss() {
        let d = toy(200);
        let cfg = BaggingConfig {
            n_hypotheses: 5,
            tree: TreeConfig::stump(),
            seed: 1,
            ..BaggingConfig::default()
        };
        let ens = train_bagged(&d, &cfg).unwrap();
        let full = ens.predict_table(&d).unwrap();
        assert_eq!(MajorityVote::uniform(5).test_loss(&full).unwrap(), 0.0);
    }
}
