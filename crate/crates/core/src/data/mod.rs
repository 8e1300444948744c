//! Datasets: a synthetic two-domain generator, a CSV feature loader and an
//! IDX (MNIST-style) loader.

mod csvio;
mod idx;
mod synthetic;

pub use csvio::{load_csv, write_csv, LabelMapping};
pub use idx::{load_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{class_means, make_synthetic_pair, ShiftSpec, SyntheticSpec};

use crate::diffcore::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

/// Feature matrix with optional integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    domain: Domain,
}

impl Dataset {
    pub fn new(
        features: Array,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        domain: Domain,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("dataset features", features.shape(), &[0, 0]));
        }
        if !features.is_finite() {
            return Err(Error::Format(
                "dataset features contain NaN or infinity".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::shape("dataset labels", features.shape(), &[l.len()]));
            }
            if let Some(&bad) = l.iter().find(|&&v| v >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad as i64,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            domain,
        })
    }

    pub fn features(&self) -> &Array {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a configuration error naming the dataset's domain.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Config(format!("{:?} dataset has no labels", self.domain)))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Feature-only view handed to training code for the target domain.
    pub fn unlabeled(&self) -> UnlabeledView<'_> {
        UnlabeledView {
            features: &self.features,
        }
    }

    /// First `n` rows.
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            let idx: Vec<usize> = (0..n).collect();
            self.features = self.features.select_rows(&idx);
            if let Some(l) = &mut self.labels {
                l.truncate(n);
            }
        }
        self
    }
}

/// Features of a dataset with no route back to its labels.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledView<'a> {
    features: &'a Array,
}

impl<'a> UnlabeledView<'a> {
    pub fn new(features: &'a Array) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &'a Array {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
