//! Covtype ingestion, binary subsetting, train/test splitting and the
//! Poisson partitioning of training points across simulated devices.
//!
//! Everything here is a pure function of its inputs and an explicit seed.
//! Randomness comes from one ChaCha20 stream per operation, so a given seed
//! yields the same shuffle and the same shard sizes on every platform.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of cartographic/soil features in a Covtype observation.
pub const COVTYPE_FEATURES: usize = 54;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dataset contains no data rows")]
    Empty,
    #[error("class id {0} is outside 1..=7")]
    ClassOutOfRange(u8),
    #[error("positive and negative class must differ (both are {0})")]
    SameClass(u8),
    #[error("class {0} has no rows in the dataset")]
    ClassAbsent(u8),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error(
        "devices demand {demand} points but the training set holds only {available}; \
         lower m0*n0 or provide more data"
    )]
    InsufficientData { demand: usize, available: usize },
    #[error("invalid partition request: {0}")]
    BadPartition(String),
    #[error("aggregation level {gamma} is outside [1, {m0}]")]
    BadGamma { gamma: f64, m0: usize },
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

/// Row-major feature matrix with binary labels and the original class ids.
///
/// Labels are `0.0` until [`filter_binary`] assigns `+1`/`-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    classes: Vec<u8>,
    d: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<f64>,
        classes: Vec<u8>,
        d: usize,
    ) -> Result<Self, DataError> {
        if d == 0 {
            return Err(DataError::Malformed("feature count must be positive".into()));
        }
        if features.len() != labels.len() * d || classes.len() != labels.len() {
            return Err(DataError::Malformed(format!(
                "{} feature values, {} labels and {} class ids do not describe rows of width {d}",
                features.len(),
                labels.len(),
                classes.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Malformed(format!(
                "non-finite feature in row {}",
                pos / d
            )));
        }
        Ok(Self {
            features,
            labels,
            classes,
            d,
        })
    }

    /// Builds a binary dataset directly from rows and `±1` labels.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self, DataError> {
        let d = rows.first().map(Vec::len).ok_or(DataError::Empty)?;
        if rows.iter().any(|r| r.len() != d) {
            return Err(DataError::Malformed("rows have different widths".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(DataError::Malformed("labels must be +1 or -1".into()));
        }
        let features = rows.iter().flatten().copied().collect();
        let classes = labels.iter().map(|&y| if y > 0.0 { 1 } else { 2 }).collect();
        Self::new(features, labels.to_vec(), classes, d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Copies the selected rows, in the given order, into a new dataset.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(idx.len() * self.d);
        let mut labels = Vec::with_capacity(idx.len());
        let mut classes = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            classes.push(self.classes[i]);
        }
        LabeledDataset {
            features,
            labels,
            classes,
            d: self.d,
        }
    }

    /// Appends a constant `1.0` feature so a linear model gains an intercept.
    pub fn with_bias_column(&self) -> LabeledDataset {
        let d = self.d + 1;
        let mut features = Vec::with_capacity(self.len() * d);
        for i in 0..self.len() {
            features.extend_from_slice(self.row(i));
            features.push(1.0);
        }
        LabeledDataset {
            features,
            labels: self.labels.clone(),
            classes: self.classes.clone(),
            d,
        }
    }

    /// Fraction of rows labelled `+1`.
    pub fn positive_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&y| y > 0.0).count() as f64 / self.len() as f64
    }
}

/// Per-column z-score transform fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of every column. Constant
    /// columns get a unit scale so they are centred but not blown up.
    pub fn fit(ds: &LabeledDataset) -> Standardizer {
        let d = ds.d();
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, x) in mean.iter_mut().zip(ds.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for ((v, x), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, ds: &mut LabeledDataset) {
        assert_eq!(ds.d, self.mean.len(), "standardizer fitted on a different width");
        for row in ds.features.chunks_exact_mut(ds.d) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        }
    }
}

/// Reads a Covtype file: 54 numeric columns then a class id in `1..=7`, no
/// header. Files ending in `.gz` are decompressed on the fly.
pub fn load_covtype(path: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gz {
        parse_covtype(BufReader::new(GzDecoder::new(file)))
    } else {
        parse_covtype(BufReader::new(file))
    }
}

/// Parses Covtype rows from any buffered reader. Blank lines are skipped;
/// line numbers in errors are 1-based and count blank lines.
pub fn parse_covtype<R: BufRead>(reader: R) -> Result<LabeledDataset, DataError> {
    let mut features = Vec::new();
    let mut classes = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        let mut class = None;
        for field in line.split(',') {
            let field = field.trim();
            if count < COVTYPE_FEATURES {
                let v: f64 = field.parse().map_err(|_| DataError::Parse {
                    line: line_no,
                    reason: format!("field {} is not numeric: {field:?}", count + 1),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Parse {
                        line: line_no,
                        reason: format!("field {} is not finite", count + 1),
                    });
                }
                features.push(v);
            } else if count == COVTYPE_FEATURES {
                let c: u8 = field.parse().map_err(|_| DataError::Parse {
                    line: line_no,
                    reason: format!("class label is not an integer: {field:?}"),
                })?;
                if !(1..=7).contains(&c) {
                    return Err(DataError::Parse {
                        line: line_no,
                        reason: format!("class label {c} outside 1..=7"),
                    });
                }
                class = Some(c);
            }
            count += 1;
        }
        if count != COVTYPE_FEATURES + 1 {
            return Err(DataError::Parse {
                line: line_no,
                reason: format!(
                    "expected {} columns, found {count}",
                    COVTYPE_FEATURES + 1
                ),
            });
        }
        classes.push(class.expect("class column parsed when count matches"));
    }
    if classes.is_empty() {
        return Err(DataError::Empty);
    }
    let labels = vec![0.0; classes.len()];
    LabeledDataset::new(features, labels, classes, COVTYPE_FEATURES)
}

/// Keeps only rows of the two classes, mapping `class_pos` to `+1` and
/// `class_neg` to `-1`. Row order is preserved.
pub fn filter_binary(
    ds: &LabeledDataset,
    class_pos: u8,
    class_neg: u8,
) -> Result<LabeledDataset, DataError> {
    for c in [class_pos, class_neg] {
        if !(1..=7).contains(&c) {
            return Err(DataError::ClassOutOfRange(c));
        }
    }
    if class_pos == class_neg {
        return Err(DataError::SameClass(class_pos));
    }
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.classes[i] == class_pos || ds.classes[i] == class_neg)
        .collect();
    for c in [class_pos, class_neg] {
        if !keep.iter().any(|&i| ds.classes[i] == c) {
            return Err(DataError::ClassAbsent(c));
        }
    }
    let mut out = ds.subset(&keep);
    for (y, &c) in out.labels.iter_mut().zip(&out.classes) {
        *y = if c == class_pos { 1.0 } else { -1.0 };
    }
    Ok(out)
}

/// Seeded uniform shuffle of `0..n` split into `floor(fraction * n)` training
/// indices and the remainder.
pub fn split_indices(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (train_fraction * n as f64).floor() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_train_test(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let (train, test) = split_indices(ds.len(), train_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Disjoint index lists into a training set, one per device (or per
/// collection point after [`regroup`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardSet {
    pub shards: Vec<Vec<usize>>,
    /// Mean points per source device requested at partition time.
    pub n0_target: f64,
    pub seed: u64,
    /// Points each shard received from devices other than its host.
    /// All zeros for a device-level partition.
    pub moved_points: Vec<usize>,
}

impl ShardSet {
    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    pub fn total_points(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    pub fn total_moved(&self) -> usize {
        self.moved_points.iter().sum()
    }

    /// JSON list of index lists, for reproducibility audits.
    pub fn manifest_json(&self) -> String {
        serde_json::to_string(&self.shards).expect("index lists always serialise")
    }
}

/// Poisson draw by sequential search of the CDF against one uniform variate.
///
/// The pmf recurrence runs in log space so large means do not underflow
/// `exp(-mean)`; the search is capped far in the upper tail in case the
/// accumulated CDF rounds to slightly below the drawn variate.
pub fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> usize {
    debug_assert!(mean > 0.0);
    let u: f64 = rng.gen();
    let ln_mean = mean.ln();
    let cap = (mean + 40.0 * mean.sqrt() + 100.0) as usize;
    let mut k = 0usize;
    let mut log_p = -mean;
    let mut cdf = log_p.exp();
    while u > cdf && k < cap {
        k += 1;
        log_p += ln_mean - (k as f64).ln();
        cdf += log_p.exp();
    }
    k
}

/// Gives each of `m0` devices a Poisson(`n0`)-sized block of distinct points
/// taken sequentially from a seeded shuffle of the training set.
pub fn partition_poisson(
    train: &LabeledDataset,
    m0: usize,
    n0: f64,
    seed: u64,
) -> Result<ShardSet, DataError> {
    if m0 == 0 {
        return Err(DataError::BadPartition("m0 must be at least 1".into()));
    }
    if !(n0 >= 1.0) {
        return Err(DataError::BadPartition(format!("n0 must be at least 1, got {n0}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let sizes: Vec<usize> = (0..m0).map(|_| poisson_inversion(&mut rng, n0)).collect();
    let demand: usize = sizes.iter().sum();
    if demand > train.len() {
        return Err(DataError::InsufficientData {
            demand,
            available: train.len(),
        });
    }
    let mut shards = Vec::with_capacity(m0);
    let mut next = 0;
    for size in sizes {
        shards.push(order[next..next + size].to_vec());
        next += size;
    }
    Ok(ShardSet {
        shards,
        n0_target: n0,
        seed,
        moved_points: vec![0; m0],
    })
}

/// Number of collection points realising aggregation level `gamma`.
pub fn cps_for_gamma(m0: usize, gamma: f64) -> usize {
    ((m0 as f64 / gamma).round() as usize).clamp(1, m0)
}

/// Merges device shards into `round(m0 / gamma)` collection points.
pub fn regroup(devices: &ShardSet, gamma: f64) -> Result<ShardSet, DataError> {
    let m0 = devices.len();
    if !(gamma >= 1.0 && gamma <= m0 as f64) {
        return Err(DataError::BadGamma { gamma, m0 });
    }
    regroup_to(devices, cps_for_gamma(m0, gamma))
}

/// Merges device shards into `m1` collection points. Collection point `i`
/// takes the contiguous device block `[floor(i*m0/m1), floor((i+1)*m0/m1))`
/// and is hosted by the first device of that block, whose own points are
/// therefore not counted as moved.
pub fn regroup_to(devices: &ShardSet, m1: usize) -> Result<ShardSet, DataError> {
    let m0 = devices.len();
    if m1 == 0 || m1 > m0 {
        return Err(DataError::BadPartition(format!(
            "collection point count {m1} outside 1..={m0}"
        )));
    }
    let mut shards = Vec::with_capacity(m1);
    let mut moved = Vec::with_capacity(m1);
    for i in 0..m1 {
        let start = i * m0 / m1;
        let end = (i + 1) * m0 / m1;
        let block = &devices.shards[start..end];
        shards.push(block.concat());
        moved.push(block.iter().skip(1).map(Vec::len).sum());
    }
    Ok(ShardSet {
        shards,
        n0_target: devices.n0_target,
        seed: devices.seed,
        moved_points: moved,
    })
}
