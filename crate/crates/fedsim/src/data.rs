//! In-memory datasets and the synthetic desk-scale generator.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A labelled dataset with row-major `f64` features.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    input_dim: usize,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u8>,
        input_dim: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if !(1..=256).contains(&num_classes) {
            return Err(Error::InvalidData(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} examples of dim {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidData(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> u8 {
        self.labels[idx]
    }

    pub fn feature_row(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.input_dim..(idx + 1) * self.input_dim]
    }

    /// Contiguous feature rows `start..end`.
    pub fn feature_rows(&self, start: usize, end: usize) -> &[f64] {
        &self.features[start * self.input_dim..end * self.input_dim]
    }

    /// Copies the given examples into a dense batch.
    pub fn gather_batch(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &idx in indices {
            features.extend_from_slice(self.feature_row(idx));
            labels.push(self.labels[idx]);
        }
        Batch {
            features,
            labels,
            input_dim: self.input_dim,
        }
    }

    /// Number of examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Parameters of the Gaussian-blob stand-in task.
///
/// Class `c` is an isotropic Gaussian with standard deviation `noise`
/// centered at `separation` times a fixed unit direction. With
/// `num_classes <= input_dim` the directions come in consecutive pairs
/// separated by `pair_angle_degrees`; at the default 90 degrees all centers
/// are mutually orthogonal (the coordinate axes). Smaller angles make the
/// two classes of each pair genuinely confusable, so the task keeps some
/// fine-grained discriminations instead of being solvable by class means
/// alone. With more classes than dimensions the directions are seeded
/// random unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "default_pair_angle")]
    pub pair_angle_degrees: f64,
}

fn default_pair_angle() -> f64 {
    90.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_classes < 2 || self.num_classes > 256 {
            bad.push(format!(
                "data.synthetic.num_classes: must be in 2..=256, got {}",
                self.num_classes
            ));
        }
        if self.input_dim < 1 {
            bad.push(format!(
                "data.synthetic.input_dim: must be >= 1, got {}",
                self.input_dim
            ));
        }
        if self.train_per_class < 1 {
            bad.push(format!(
                "data.synthetic.train_per_class: must be >= 1, got {}",
                self.train_per_class
            ));
        }
        if self.test_per_class < 1 {
            bad.push(format!(
                "data.synthetic.test_per_class: must be >= 1, got {}",
                self.test_per_class
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            bad.push(format!(
                "data.synthetic.separation: must be finite and >= 0, got {}",
                self.separation
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bad.push(format!(
                "data.synthetic.noise: must be finite and >= 0, got {}",
                self.noise
            ));
        }
        if !(self.pair_angle_degrees > 0.0 && self.pair_angle_degrees <= 90.0) {
            bad.push(format!(
                "data.synthetic.pair_angle_degrees: must be in (0, 90], got {}",
                self.pair_angle_degrees
            ));
        } else if self.pair_angle_degrees < 90.0 && self.num_classes > self.input_dim {
            bad.push(format!(
                "data.synthetic.pair_angle_degrees: paired directions need num_classes <= input_dim, got {} > {}",
                self.num_classes, self.input_dim
            ));
        }
        Error::check_config(bad)
    }
}

// Sub-stream tags so centers, train noise, and test noise never overlap.
const CENTERS: u64 = 1;
const TRAIN_NOISE: u64 = 2;
const TEST_NOISE: u64 = 3;

fn class_centers(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let d = spec.input_dim;
    if spec.num_classes <= d && spec.pair_angle_degrees < 90.0 {
        // Classes 2j and 2j+1 share the plane of axes (2j, 2j+1), split by
        // the pair angle; a lone trailing class sits on its own axis.
        let half = spec.pair_angle_degrees.to_radians() / 2.0;
        let (cos_h, sin_h) = (half.cos(), half.sin());
        (0..spec.num_classes)
            .map(|c| {
                let mut v = vec![0.0; d];
                if c + 1 == spec.num_classes && spec.num_classes % 2 == 1 {
                    v[c] = spec.separation;
                } else {
                    let pair = c / 2;
                    v[2 * pair] = spec.separation * cos_h;
                    v[2 * pair + 1] = if c % 2 == 0 {
                        spec.separation * sin_h
                    } else {
                        -spec.separation * sin_h
                    };
                }
                v
            })
            .collect()
    } else if spec.num_classes <= d {
        (0..spec.num_classes)
            .map(|c| {
                let mut v = vec![0.0; d];
                v[c] = spec.separation;
                v
            })
            .collect()
    } else {
        let mut stream = rng::stream(rng::derive_seed(&[spec.seed, CENTERS]));
        (0..spec.num_classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut stream)).collect();
                let norm = v
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                for x in &mut v {
                    *x *= spec.separation / norm;
                }
                v
            })
            .collect()
    }
}

fn sample_split(
    spec: &SyntheticSpec,
    centers: &[Vec<f64>],
    per_class: usize,
    tag: u64,
    split: Split,
) -> Dataset {
    let d = spec.input_dim;
    let n = spec.num_classes * per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut stream = rng::stream(rng::derive_seed(&[spec.seed, tag]));
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in center {
                let eps: f64 = StandardNormal.sample(&mut stream);
                features.push(mu + spec.noise * eps);
            }
            labels.push(c as u8);
        }
    }
    Dataset::new(features, labels, d, spec.num_classes, split)
        .expect("generated dataset is consistent by construction")
}

/// Generates balanced train/test Gaussian-blob datasets, deterministic for
/// a given spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let centers = class_centers(spec);
    let train = sample_split(
        spec,
        &centers,
        spec.train_per_class,
        TRAIN_NOISE,
        Split::Train,
    );
    let test = sample_split(spec, &centers, spec.test_per_class, TEST_NOISE, Split::Test);
    Ok((train, test))
}
