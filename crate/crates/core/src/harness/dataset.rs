//! Small synthetic classification sets and CSV ingestion.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TRAIN_FRACTION: f64 = 0.8;
/// Outer radius of each spiral arm.
const SPIRAL_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianBlobs,
    TwoSpirals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with integer labels and a train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_features: usize,
    pub num_classes: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Copies the listed rows into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.num_features);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.num_features == 0 || self.num_classes == 0 || n == 0 {
            return Err(Error::domain(
                "dataset needs at least one feature, class and sample",
            ));
        }
        if self.inputs.len() != n * self.num_features {
            return Err(Error::Shape(format!(
                "{} input values for {n} samples of width {}",
                self.inputs.len(),
                self.num_features
            )));
        }
        if let Some(v) = self.inputs.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite feature value {v}")));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::domain(format!(
                "label {l} outside [0, {})",
                self.num_classes
            )));
        }
        let mut seen = vec![0u8; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::domain(format!("split index {i} out of range")));
            }
            seen[i] += 1;
            if seen[i] > 1 {
                return Err(Error::domain(format!(
                    "sample {i} appears in more than one split slot"
                )));
            }
        }
        let mut present = vec![false; self.num_classes];
        for &i in &self.train {
            present[self.labels[i]] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::domain(format!(
                "class {c} missing from the train split"
            )));
        }
        Ok(())
    }
}

/// Per-class shuffled 80/20 split; every class with at least one sample
/// lands in the train split.
fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let n_train = ((members.len() as f64 * TRAIN_FRACTION).round() as usize)
            .max(1)
            .min(members.len());
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Generates a balanced 2-D classification set. Labels cycle through the
/// classes so counts differ by at most one.
pub fn make_synthetic_dataset(
    kind: SyntheticKind,
    num_samples: usize,
    num_classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || num_samples == 0 {
        return Err(Error::domain(
            "num_samples and num_classes must be positive",
        ));
    }
    if num_samples < 10 * num_classes {
        return Err(Error::domain(format!(
            "num_samples ({num_samples}) must be at least 10 x num_classes ({num_classes})"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::domain(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(num_samples * 2);
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let c = i % num_classes;
        let offset = 2.0 * PI * c as f64 / num_classes as f64;
        let (x, y) = match kind {
            SyntheticKind::GaussianBlobs => (3.0 * offset.cos(), 3.0 * offset.sin()),
            SyntheticKind::TwoSpirals => {
                // sqrt spreads points evenly along the arc; 1.75 turns out
                // to radius SPIRAL_RADIUS, so adjacent arms sit ~1.1 apart
                let u: f64 = rng.random::<f64>().sqrt();
                let theta = 3.5 * PI * u;
                let r = SPIRAL_RADIUS * u;
                (r * (theta + offset).cos(), r * (theta + offset).sin())
            }
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs.push(x + noise * nx);
        inputs.push(y + noise * ny);
        labels.push(c);
    }
    let (train, test) = stratified_split(&labels, num_classes, &mut rng);
    let ds = Dataset {
        num_features: 2,
        num_classes,
        inputs,
        labels,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

/// Reads a CSV with a header row, real-valued feature columns and an
/// integer class label in the last column. The split is drawn from `seed`.
pub fn load_csv_dataset(path: &Path, seed: u64) -> Result<Dataset> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let width = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .len();
    if width < 2 {
        return Err(parse_err(
            "need at least one feature column and a label column".into(),
        ));
    }
    let num_features = width - 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(format!("line {line}: {e}")))?;
        for (col, field) in record.iter().take(num_features).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(format!(
                    "line {line}, column {}: not a number: {field:?}",
                    col + 1
                ))
            })?;
            inputs.push(v);
        }
        let label = &record[num_features];
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("line {line}: label {label:?} is not a class index")))?;
        labels.push(label);
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = stratified_split(&labels, num_classes, &mut rng);
    let ds = Dataset {
        num_features,
        num_classes,
        inputs,
        labels,
        train,
        test,
    };
    ds.validate().map_err(|e| parse_err(e.to_string()))?;
    Ok(ds)
}
