//! Datasets, stratified splits and standardization.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Lower bound applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

/// A labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label text for each encoded class, in encoding order.
    pub class_labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking finiteness, label range, class coverage and
    /// feature-name uniqueness.
    pub fn new(
        name: impl Into<String>,
        x: Array2<f64>,
        y: Vec<usize>,
        feature_names: Vec<String>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = x.dim();
        let class_count = class_labels.len();
        if y.len() != n {
            return Err(Error::Shape(format!("{n} rows but {} labels", y.len())));
        }
        if feature_names.len() != d {
            return Err(Error::Shape(format!(
                "{d} feature columns but {} feature names",
                feature_names.len()
            )));
        }
        let mut seen = HashMap::new();
        for (j, name) in feature_names.iter().enumerate() {
            if let Some(prev) = seen.insert(name.as_str(), j) {
                return Err(Error::InvalidData(format!(
                    "duplicate feature name `{name}` (columns {prev} and {j})"
                )));
            }
        }
        if class_count < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 classes, found {class_count}"
            )));
        }
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value {v} at row {i}, column {j}"
            )));
        }
        let mut counts = vec![0usize; class_count];
        for (i, &label) in y.iter().enumerate() {
            if label >= class_count {
                return Err(Error::InvalidData(format!(
                    "label {label} at row {i} outside [0, {class_count})"
                )));
            }
            counts[label] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::InvalidData(format!("class {c} has no samples")));
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            feature_names,
            class_labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Rows and labels at `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.x.select(Axis(0), idx),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    /// Writes the dataset as CSV with the label in a trailing `label_column`.
    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header)
            .map_err(|e| Error::Csv(e.to_string()))?;
        for (row, &label) in self.x.rows().into_iter().zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.class_labels[label].clone());
            w.write_record(&rec)
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a CSV file with a header row. Labels are re-encoded to `0..C` in
/// order of first appearance; every other column must be numeric.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::InvalidData(format!("label column `{label_column}` not in header"))
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let d = feature_names.len();

    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut class_labels: Vec<String> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        // data rows are 1-based after the header line
        let row_no = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Csv(format!(
                "row {row_no}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let code = match class_labels.iter().position(|l| l == cell) {
                    Some(code) => code,
                    None => {
                        class_labels.push(cell.to_string());
                        class_labels.len() - 1
                    }
                };
                y.push(code);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidData(format!(
                    "row {row_no}, column `{}`: non-numeric value `{cell}`",
                    &headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {row_no}, column `{}`: non-finite value `{cell}`",
                    &headers[c]
                )));
            }
            values.push(v);
        }
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    Dataset::new(name, x, y, feature_names, class_labels)
}

/// Disjoint train/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffled split. Each class contributes `round(n_c * test_fraction)`
/// test rows, clamped so that it keeps at least one row on each side.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    stratify(&ds.y, ds.class_count(), test_fraction, seed)
}

pub(crate) fn stratify(
    labels: &[usize],
    class_count: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut test = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::InvalidData(format!(
                "class {c} has a single sample; stratified split needs at least 2"
            )));
        }
        members.shuffle(&mut rng);
        let n_c = members.len();
        let n_test = ((n_c as f64 * test_fraction).round() as usize).clamp(1, n_c - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    if test.is_empty() {
        return Err(Error::InvalidData("test split is empty".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Per-feature centering and scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    /// Features whose training std fell below the floor.
    pub floored: Vec<usize>,
}

impl Standardizer {
    /// Fits on `x` using the population standard deviation.
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidData(
                "cannot fit standardizer on zero rows".into(),
            ));
        }
        let d = x.ncols();
        let mut mean = Array1::zeros(d);
        let mut std = Array1::zeros(d);
        let mut floored = Vec::new();
        for (j, col) in x.columns().into_iter().enumerate() {
            let v: Vec<f64> = col.to_vec();
            mean[j] = numeric::mean(v.iter().copied()).unwrap_or(0.0);
            let s = numeric::std_population(&v).unwrap_or(0.0);
            if s < STD_FLOOR {
                std[j] = STD_FLOOR;
                floored.push(j);
            } else {
                std[j] = s;
            }
        }
        Ok(Self { mean, std, floored })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            row -= &self.mean;
            row /= &self.std;
        }
        out
    }

    pub fn inverse_transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            row *= &self.std;
            row += &self.mean;
        }
        out
    }

    /// Human-readable warnings for floored features.
    pub fn warnings(&self, feature_names: &[String]) -> Vec<String> {
        self.floored
            .iter()
            .map(|&j| {
                let name = feature_names.get(j).map(String::as_str).unwrap_or("?");
                format!("feature {j} (`{name}`) is constant on the training rows; std floored at {STD_FLOOR:e}")
            })
            .collect()
    }
}

/// Fits a [`Standardizer`] on the training rows of `idx` only.
pub fn fit_standardizer(ds: &Dataset, idx: &SplitIndices) -> Result<Standardizer> {
    if idx.train.is_empty() {
        return Err(Error::InvalidData("no training rows".into()));
    }
    Standardizer::fit(&ds.x.select(Axis(0), &idx.train))
}

const EMBEDDED_SEED: u64 = 0x0D31_7A_A0D1;

/// Names accepted by [`embedded`].
pub const EMBEDDED_NAMES: [&str; 2] = ["wine_toy", "interact3"];

/// Deterministic synthetic datasets bundled with the crate.
pub fn embedded_datasets() -> Vec<Dataset> {
    vec![wine_toy(), interact3()]
}

pub fn embedded(name: &str) -> Option<Dataset> {
    match name {
        "wine_toy" => Some(wine_toy()),
        "interact3" => Some(interact3()),
        _ => None,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Two classes of 30, six features, linearly separable with unit margin
/// along a fixed direction in the first three (raw, unscaled) features.
fn wine_toy() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDED_SEED);
    let (n, d) = (60, 6);
    let dir = [1.0, -1.0, 1.0, 0.0, 0.0, 0.0];
    let norm = 3f64.sqrt();
    let scale = [1.5, 12.0, 0.3, 4.0, 80.0, 0.05];
    let offset = [13.0, 100.0, 2.4, 20.0, 700.0, 0.5];
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let mut x = Array2::zeros((n, d));
    for (i, &c) in labels.iter().enumerate() {
        let mut z: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let proj: f64 = z.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / norm;
        let sign = if c == 1 { 1.0 } else { -1.0 };
        let target = sign * (1.0 + normal(&mut rng).abs());
        for j in 0..d {
            z[j] += (target - proj) * dir[j] / norm;
            x[[i, j]] = offset[j] + scale[j] * z[j];
        }
    }
    let names = [
        "alcohol",
        "malic_acid",
        "ash",
        "alcalinity",
        "proline",
        "hue_noise",
    ];
    Dataset::new(
        "wine_toy",
        x,
        labels,
        names.iter().map(|s| s.to_string()).collect(),
        vec!["class_0".into(), "class_1".into()],
    )
    .expect("embedded dataset is valid")
}

/// Three classes of 30, eight features. Classes 1 and 2 overlap in the
/// first two features and separate on the sign of `x2 * x3`.
fn interact3() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(EMBEDDED_SEED ^ 0x3C);
    let (n, d) = (90, 8);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    labels.shuffle(&mut rng);
    let mut x = Array2::zeros((n, d));
    for (i, &c) in labels.iter().enumerate() {
        let (c0, c1) = match c {
            0 => (2.0, 0.0),
            _ => (-1.0, 0.6),
        };
        x[[i, 0]] = c0 + 0.8 * normal(&mut rng);
        x[[i, 1]] = c1 + 0.8 * normal(&mut rng);
        let a = 0.3 + normal(&mut rng).abs();
        let b = 0.3 + normal(&mut rng).abs();
        let sa = if normal(&mut rng) > 0.0 { 1.0 } else { -1.0 };
        // class 2: same-sign pair, otherwise opposite signs
        let sb = match c {
            2 => sa,
            _ => -sa,
        };
        x[[i, 2]] = sa * a;
        x[[i, 3]] = sb * b;
        x[[i, 4]] = 0.5 * x[[i, 0]] + 0.5 * normal(&mut rng);
        x[[i, 5]] = 3.0 + 2.0 * normal(&mut rng);
        x[[i, 6]] = -0.3 * x[[i, 1]] + normal(&mut rng);
        x[[i, 7]] = 10.0 * normal(&mut rng);
    }
    Dataset::new(
        "interact3",
        x,
        labels,
        (0..d).map(|j| format!("x{j}")).collect(),
        vec!["a".into(), "b".into(), "c".into()],
    )
    .expect("embedded dataset is valid")
}
