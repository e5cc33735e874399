//! Dataset and prediction-table ingestion and serialization.
//!
//! Two on-disk formats are understood:
//!
//! * LIBSVM sparse text (`label idx:val idx:val ...`, 1-based indices), plus
//!   a dense comma-separated variant with the label in the last column.
//! * The prediction-table CSV. The first line holds `H,N,C` (number of
//!   hypotheses, points and classes), the second the `N` true labels, and
//!   each of the following `H` lines the `N` predictions of one hypothesis.
//!   An empty cell marks a point outside that hypothesis' validation set.
//!   Files are UTF-8 with LF line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Dense labelled sample with labels remapped to `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    /// Original label value of each class index, ascending.
    label_values: Vec<f64>,
}

impl Dataset {
    /// Build a dataset from row-major features and contiguous labels.
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        label_values: Vec<f64>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        if n_features == 0 {
            return Err(Error::Dimension("dataset needs at least one feature".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Dimension(format!(
                "{} feature values for {} points of dimension {}",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if label_values.len() < 2 {
            return Err(Error::InvalidArgument(
                "dataset needs at least two classes".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= label_values.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad as i64,
                classes: label_values.len(),
            });
        }
        Ok(Dataset {
            features,
            n_features,
            labels,
            label_values,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.label_values.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_values(&self) -> &[f64] {
        &self.label_values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Points at `indices`, in the given order, with the class map kept.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_values: self.label_values.clone(),
        }
    }

    /// Number of points per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn remap_labels(raw: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut values: Vec<f64> = raw.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let labels = raw
        .iter()
        .map(|v| values.binary_search_by(|x| x.total_cmp(v)).unwrap())
        .collect();
    (labels, values)
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Read a LIBSVM sparse file into a dense dataset.
pub fn read_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_libsvm(open(path)?).map_err(|e| attach_path(e, path))
}

fn attach_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Parse LIBSVM text. Blank lines and `#` comments are skipped; a `qid:`
/// token is ignored.
pub fn parse_libsvm<R: Read>(reader: R) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<libsvm>", e))?;
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid label `{label_tok}`"),
        })?;
        let mut row = Vec::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let bad = || Error::Parse {
                line: line_no,
                message: format!("invalid feature `{tok}`, expected idx:value"),
            };
            let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let val: f64 = val.parse().map_err(|_| bad())?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "feature indices are 1-based".into(),
                });
            }
            dim = dim.max(idx);
            row.push((idx - 1, val));
        }
        raw_labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = dim.max(1);
    let mut features = vec![0.0; rows.len() * dim];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[i * dim + j] = v;
        }
    }
    let (labels, values) = remap_labels(&raw_labels);
    Dataset::new(features, dim, labels, values)
}

/// Parse dense CSV rows `f1,...,fd,label`.
pub fn parse_dense_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut features = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<csv>", e))?;
        let line_no = lineno + 1;
        let content = line.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = content.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "need at least one feature and a label".into(),
            });
        }
        let d = cells.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} columns, found {}", expected + 1, d + 1),
                })
            }
            _ => {}
        }
        for cell in &cells[..d] {
            features.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid number `{cell}`"),
            })?);
        }
        raw_labels.push(cells[d].parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid label `{}`", cells[d]),
        })?);
    }
    let dim = dim.ok_or(Error::EmptyInput)?;
    let (labels, values) = remap_labels(&raw_labels);
    Dataset::new(features, dim, labels, values)
}

/// Read a dataset, choosing the dense CSV reader for `.csv` files and the
/// LIBSVM reader otherwise.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let reader = open(path)?;
    let parsed = if is_csv {
        parse_dense_csv(reader)
    } else {
        parse_libsvm(reader)
    };
    parsed.map_err(|e| attach_path(e, path))
}

/// Serialize a dataset as LIBSVM text using the original label values.
/// Zero features are omitted.
pub fn format_libsvm(d: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..d.len() {
        let _ = write!(out, "{}", d.label_values[d.labels[i]]);
        for (j, &v) in d.row(i).iter().enumerate() {
            if v != 0.0 {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_libsvm(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_libsvm(d)).map_err(|e| Error::io(path, e))
}

/// Marker for "no prediction recorded".
pub const NOT_EVALUATED: i32 = -1;

/// H×N predictions, the N true labels, and the H×N validation-set mask.
///
/// `mask(h)[i]` is true when point `i` belongs to hypothesis `h`'s
/// validation set S_h. Every masked-in cell carries a prediction and every
/// hypothesis has a nonempty validation set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionTable {
    n_classes: usize,
    truth: Vec<usize>,
    predictions: Vec<Vec<i32>>,
    mask: Vec<Vec<bool>>,
}

impl PredictionTable {
    pub fn new(
        n_classes: usize,
        truth: Vec<usize>,
        predictions: Vec<Vec<i32>>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let n = truth.len();
        if n == 0 || predictions.is_empty() {
            return Err(Error::EmptyInput);
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument(
                "a prediction table needs at least two classes".into(),
            ));
        }
        if mask.len() != predictions.len() {
            return Err(Error::Dimension(format!(
                "{} prediction rows but {} mask rows",
                predictions.len(),
                mask.len()
            )));
        }
        if let Some(&y) = truth.iter().find(|&&y| y >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label: y as i64,
                classes: n_classes,
            });
        }
        for (h, (row, mrow)) in predictions.iter().zip(&mask).enumerate() {
            if row.len() != n || mrow.len() != n {
                return Err(Error::Dimension(format!(
                    "hypothesis {h} has {} predictions and {} mask entries for {n} points",
                    row.len(),
                    mrow.len()
                )));
            }
            for (&p, &m) in row.iter().zip(mrow) {
                if p != NOT_EVALUATED && (p < 0 || p as usize >= n_classes) {
                    return Err(Error::LabelOutOfRange {
                        label: p as i64,
                        classes: n_classes,
                    });
                }
                if m && p == NOT_EVALUATED {
                    return Err(Error::InvalidArgument(format!(
                        "hypothesis {h} has a validation point without a prediction"
                    )));
                }
            }
            if !mrow.iter().any(|&m| m) {
                return Err(Error::EmptyValidationSet(h));
            }
        }
        Ok(PredictionTable {
            n_classes,
            truth,
            predictions,
            mask,
        })
    }

    /// A table in which every hypothesis is evaluated on every point, as
    /// used for held-out test data.
    pub fn fully_observed(n_classes: usize, truth: Vec<usize>, predictions: Vec<Vec<i32>>) -> Result<Self> {
        let mask = predictions.iter().map(|r| vec![true; r.len()]).collect();
        PredictionTable::new(n_classes, truth, predictions, mask)
    }

    pub fn n_hypotheses(&self) -> usize {
        self.predictions.len()
    }

    pub fn n_points(&self) -> usize {
        self.truth.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn predictions(&self, h: usize) -> &[i32] {
        &self.predictions[h]
    }

    pub fn mask(&self, h: usize) -> &[bool] {
        &self.mask[h]
    }

    /// Whether hypothesis `h` errs on point `i` (false when unevaluated).
    pub fn errs(&self, h: usize, i: usize) -> bool {
        let p = self.predictions[h][i];
        p != NOT_EVALUATED && p as usize != self.truth[i]
    }

    /// Size of each validation set |S_h|.
    pub fn validation_sizes(&self) -> Vec<usize> {
        self.mask
            .iter()
            .map(|r| r.iter().filter(|&&m| m).count())
            .collect()
    }

    /// Same table restricted to the given hypotheses.
    pub fn select_hypotheses(&self, hs: &[usize]) -> Result<Self> {
        PredictionTable::new(
            self.n_classes,
            self.truth.clone(),
            hs.iter().map(|&h| self.predictions[h].clone()).collect(),
            hs.iter().map(|&h| self.mask[h].clone()).collect(),
        )
    }
}

/// Canonical CSV text of a prediction table.
pub fn format_prediction_table(t: &PredictionTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},{},{}", t.n_hypotheses(), t.n_points(), t.n_classes);
    let truth: Vec<String> = t.truth.iter().map(usize::to_string).collect();
    out.push_str(&truth.join(","));
    out.push('\n');
    for (row, mrow) in t.predictions.iter().zip(&t.mask) {
        let cells: Vec<String> = row
            .iter()
            .zip(mrow)
            .map(|(&p, &m)| if m { p.to_string() } else { String::new() })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_prediction_table(t: &PredictionTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_prediction_table(t)).map_err(|e| Error::io(path, e))
}

pub fn read_prediction_table(path: impl AsRef<Path>) -> Result<PredictionTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prediction_table(&text)
}

fn parse_usize(cell: &str, line: usize, what: &str) -> Result<usize> {
    cell.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{cell}`"),
    })
}

pub fn parse_prediction_table(text: &str) -> Result<PredictionTable> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().ok_or(Error::EmptyInput)?;
    let dims: Vec<&str> = header.split(',').collect();
    if dims.len() != 3 {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `n_hypotheses,n_points,n_classes`".into(),
        });
    }
    let h = parse_usize(dims[0], 1, "hypothesis count")?;
    let n = parse_usize(dims[1], 1, "point count")?;
    let c = parse_usize(dims[2], 1, "class count")?;

    let truth_line = lines
        .next()
        .ok_or_else(|| Error::Dimension("missing truth row".into()))?;
    let truth_cells: Vec<&str> = truth_line.split(',').collect();
    if truth_cells.len() != n {
        return Err(Error::Dimension(format!(
            "truth row has {} cells, header says {n}",
            truth_cells.len()
        )));
    }
    let truth = truth_cells
        .iter()
        .map(|cell| parse_usize(cell, 2, "label"))
        .collect::<Result<Vec<_>>>()?;

    let mut predictions = Vec::with_capacity(h);
    let mut mask = Vec::with_capacity(h);
    let mut rows_seen = 0;
    for (k, line) in lines.enumerate() {
        let line_no = k + 3;
        if line.is_empty() && n != 1 {
            // tolerate a trailing blank line only
            continue;
        }
        rows_seen += 1;
        if rows_seen > h {
            return Err(Error::Dimension(format!(
                "more than {h} hypothesis rows (line {line_no})"
            )));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(Error::Dimension(format!(
                "line {line_no} has {} cells, expected {n}",
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(n);
        let mut mrow = Vec::with_capacity(n);
        for cell in cells {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(NOT_EVALUATED);
                mrow.push(false);
            } else {
                let v: i64 = cell.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid prediction `{cell}`"),
                })?;
                if v < 0 || v as usize >= c {
                    return Err(Error::LabelOutOfRange { label: v, classes: c });
                }
                row.push(v as i32);
                mrow.push(true);
            }
        }
        predictions.push(row);
        mask.push(mrow);
    }
    if rows_seen != h {
        return Err(Error::Dimension(format!(
            "header declares {h} hypotheses, found {rows_seen} rows"
        )));
    }
    PredictionTable::new(c, truth, predictions, mask)
}

/// Index sets of a stratified train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled split: each class contributes `round(count·fraction)`
/// points to the test side. Both index lists are returned ascending.
pub fn stratified_split_indices(d: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Domain {
            name: "test_fraction",
            value: test_fraction,
            reason: "must lie in (0, 1)",
        });
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in d.labels().iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} point(s); stratification needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn stratified_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = stratified_split_indices(d, test_fraction, seed)?;
    Ok((d.subset(&split.train), d.subset(&split.test)))
}

/// Parameters of the bundled two-class Gaussian benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_points: usize,
    pub n_features: usize,
    /// Class means sit at ±`separation` in every coordinate.
    pub separation: f64,
    /// Probability of flipping a label after sampling.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_points: 3000,
            n_features: 6,
            separation: 0.6,
            label_noise: 0.05,
            seed: 2021,
        }
    }
}

/// Two balanced Gaussian classes with unit covariance. Values are rounded
/// to six decimals so the LIBSVM text form round-trips exactly.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut features = Vec::with_capacity(cfg.n_points * cfg.n_features);
    let mut labels = Vec::with_capacity(cfg.n_points);
    for _ in 0..cfg.n_points {
        let y = usize::from(rng.random::<bool>());
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for _ in 0..cfg.n_features {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = sign * cfg.separation + z;
            features.push((v * 1e6).round() / 1e6);
        }
        let flip = rng.random::<f64>() < cfg.label_noise;
        labels.push(if flip { 1 - y } else { y });
    }
    Dataset::new(features, cfg.n_features, labels, vec![0.0, 1.0])
}
