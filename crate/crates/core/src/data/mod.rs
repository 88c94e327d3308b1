//! Crop dataset ingestion, min-max scaling, stratified sharding and splits.

mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{synthetic_crop_dataset, CROP_CLASSES};

/// Column order of the crop CSV (label excluded).
pub const FEATURE_NAMES: [&str; 7] = ["N", "P", "K", "temperature", "humidity", "ph", "rainfall"];
pub const LABEL_COLUMN: &str = "label";

/// Feature matrix with integer labels indexing `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Data(format!("{} rows but {} labels", features.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!("label index {bad} has no class name")));
        }
        Ok(Dataset { features, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Concatenates datasets sharing one class list.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.class_names != first.class_names || p.num_features() != first.num_features()) {
            return Err(Error::Data("datasets disagree on classes or features".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Data(e.to_string()))?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Dataset::new(features, labels, first.class_names.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices grouped by class, each group in row order.
    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Reads a crop CSV; labels map to indices in lexicographic order of
    /// the distinct label strings in the file.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let rows = read_rows(path.as_ref())?;
        let classes: Vec<String> =
            rows.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        build(rows, classes, path.as_ref())
    }

    /// Reads a crop CSV against a fixed class list; unknown labels are an
    /// error. Used for shards and evaluation files so every party agrees on
    /// label indices.
    pub fn load_csv_with_classes(path: impl AsRef<Path>, classes: &[String]) -> Result<Dataset> {
        let rows = read_rows(path.as_ref())?;
        build(rows, classes.to_vec(), path.as_ref())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.num_features() != FEATURE_NAMES.len() {
            return Err(Error::Data(format!("crop CSV needs 7 features, dataset has {}", self.num_features())));
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
        header.push(LABEL_COLUMN);
        w.write_record(&header)?;
        for (row, &label) in self.features.rows().into_iter().zip(&self.labels) {
            // `{}` prints the shortest representation that parses back to
            // the same f64.
            let mut record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            record.push(self.class_names[label].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn read_rows(path: &Path) -> Result<Vec<(Vec<f64>, String)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))
    };
    let feature_cols = FEATURE_NAMES.iter().map(|n| column(n)).collect::<Result<Vec<_>>>()?;
    let label_col = column(LABEL_COLUMN)?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Data rows are numbered from 1; the header is line 1 of the file.
        let row_no = i + 1;
        let record = record?;
        let mut values = Vec::with_capacity(feature_cols.len());
        for (&c, name) in feature_cols.iter().zip(FEATURE_NAMES) {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!("{}: row {row_no}: column {name} is not numeric: {cell:?}", path.display()))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: row {row_no}: column {name} is not finite", path.display())));
            }
            values.push(v);
        }
        let label = record.get(label_col).unwrap_or("").to_string();
        if label.is_empty() {
            return Err(Error::Data(format!("{}: row {row_no}: empty label", path.display())));
        }
        rows.push((values, label));
    }
    Ok(rows)
}

fn build(rows: Vec<(Vec<f64>, String)>, classes: Vec<String>, path: &Path) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let mut features = Array2::zeros((rows.len(), FEATURE_NAMES.len()));
    let mut labels = Vec::with_capacity(rows.len());
    for (i, (values, label)) in rows.into_iter().enumerate() {
        features.row_mut(i).assign(&ndarray::ArrayView1::from(&values[..]));
        let idx = classes.iter().position(|c| *c == label).ok_or_else(|| {
            Error::Data(format!("{}: row {}: unknown label {label:?}", path.display(), i + 1))
        })?;
        labels.push(idx);
    }
    Dataset::new(features, labels, classes)
}

/// Per-feature minimum and maximum used for scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(dataset: &Dataset) -> FeatureStats {
        let cols = dataset.features.columns();
        let min = cols.into_iter().map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b))).collect();
        let max = dataset.features.columns().into_iter().map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
        FeatureStats { min, max }
    }

    /// Min-max scaling; constant features map to 0. Values outside the
    /// fitted range pass through unclamped.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.min.len() != dataset.num_features() {
            return Err(Error::Data(format!(
                "stats cover {} features, dataset has {}",
                self.min.len(),
                dataset.num_features()
            )));
        }
        let mut out = dataset.clone();
        for (j, mut col) in out.features.columns_mut().into_iter().enumerate() {
            let (lo, hi) = (self.min[j], self.max[j]);
            let span = hi - lo;
            col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
        }
        Ok(out)
    }
}

/// Scales `dataset` with `stats`, or with stats fitted on the dataset itself.
pub fn preprocess(dataset: &Dataset, stats: Option<&FeatureStats>) -> Result<(Dataset, FeatureStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => FeatureStats::fit(dataset),
    };
    Ok((stats.apply(dataset)?, stats))
}

/// Partitions `dataset` into `k` disjoint shards covering every row.
///
/// Stratified mode deals each class's shuffled rows round-robin, continuing
/// the rotation across classes, so every shard holds floor or ceil of
/// `class_count / k` rows of each class and shard sizes differ by at most one.
pub fn split_shards(dataset: &Dataset, k: usize, stratified: bool, seed: u64) -> Result<Vec<Dataset>> {
    if k == 0 {
        return Err(Error::Config("shard count must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Data("cannot shard an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); k];
    if stratified {
        let groups = dataset.indices_by_class();
        if let Some((class, g)) = groups.iter().enumerate().find(|(_, g)| !g.is_empty() && g.len() < k) {
            return Err(Error::Data(format!(
                "class {:?} has {} samples, fewer than {k} shards",
                dataset.class_names[class],
                g.len()
            )));
        }
        let mut next = 0;
        for mut group in groups {
            group.shuffle(&mut rng);
            for idx in group {
                assignment[next].push(idx);
                next = (next + 1) % k;
            }
        }
    } else {
        if dataset.len() < k {
            return Err(Error::Data(format!("{} rows cannot fill {k} shards", dataset.len())));
        }
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        all.shuffle(&mut rng);
        for (i, idx) in all.into_iter().enumerate() {
            assignment[i % k].push(idx);
        }
    }
    Ok(assignment
        .into_iter()
        .map(|mut idx| {
            idx.shuffle(&mut rng);
            dataset.select(&idx)
        })
        .collect())
}

/// Stratified split; each class sends `round(count * test_fraction)` rows to
/// the test side, keeping at least one row on the train side.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut group in dataset.indices_by_class() {
        group.shuffle(&mut rng);
        let n_test = ((group.len() as f64 * test_fraction).round() as usize).min(group.len().saturating_sub(1));
        test.extend_from_slice(&group[..n_test]);
        train.extend_from_slice(&group[n_test..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "split of {} rows at fraction {test_fraction} leaves an empty side",
            dataset.len()
        )));
    }
    Ok((dataset.select(&train), dataset.select(&test)))
}
