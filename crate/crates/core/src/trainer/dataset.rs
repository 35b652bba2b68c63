use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, n_classes: usize },
    /// Row-major `rows x n_outputs`.
    Regression { values: Vec<f64>, n_outputs: usize },
}

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub features: Vec<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(n_features: usize, features: Vec<f64>, targets: Targets) -> Result<Self> {
        let d = Self {
            n_features,
            features,
            targets,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = if self.n_features == 0 {
            0
        } else {
            self.features.len() / self.n_features
        };
        let bad = |detail: alloc::string::String| Error::ShapeMismatch { op: "dataset", detail };
        if self.n_features == 0 || rows * self.n_features != self.features.len() {
            return Err(bad(alloc::format!(
                "{} values for {} features",
                self.features.len(),
                self.n_features
            )));
        }
        match &self.targets {
            Targets::Classes { labels, n_classes } => {
                if labels.len() != rows {
                    return Err(bad(alloc::format!("{} labels for {rows} rows", labels.len())));
                }
                if let Some(&label) = labels.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::LabelOutOfRange {
                        label,
                        classes: *n_classes,
                    });
                }
            }
            Targets::Regression { values, n_outputs } => {
                if *n_outputs == 0 || values.len() != rows * n_outputs {
                    return Err(bad(alloc::format!("{} targets for {rows} rows", values.len())));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.n_features.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        match &self.targets {
            Targets::Classes { n_classes, .. } => *n_classes,
            Targets::Regression { n_outputs, .. } => *n_outputs,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
            Targets::Regression { values, n_outputs } => {
                let n = *n_outputs;
                let mut v = Vec::with_capacity(idx.len() * n);
                for &i in idx {
                    v.extend_from_slice(&values[i * n..(i + 1) * n]);
                }
                Targets::Regression {
                    values: v,
                    n_outputs: n,
                }
            }
        };
        Self {
            n_features: self.n_features,
            features,
            targets,
        }
    }

    /// Concatenates the rows of `other` after those of `self`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let targets = match (&self.targets, &other.targets) {
            (Targets::Classes { labels: a, n_classes: na }, Targets::Classes { labels: b, n_classes: nb })
                if na == nb =>
            {
                Targets::Classes {
                    labels: a.iter().chain(b).copied().collect(),
                    n_classes: *na,
                }
            }
            (
                Targets::Regression { values: a, n_outputs: na },
                Targets::Regression { values: b, n_outputs: nb },
            ) if na == nb => Targets::Regression {
                values: a.iter().chain(b).copied().collect(),
                n_outputs: *na,
            },
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "dataset concat",
                    detail: "target kinds differ".into(),
                })
            }
        };
        if self.n_features != other.n_features {
            return Err(Error::ShapeMismatch {
                op: "dataset concat",
                detail: alloc::format!("{} vs {} features", self.n_features, other.n_features),
            });
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        Ok(Self {
            n_features: self.n_features,
            features,
            targets,
        })
    }

    /// Shuffled `(train, validation)` split with `round(len * val_fraction)`
    /// validation rows.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidConfig(alloc::format!(
                "validation fraction {val_fraction} outside [0, 1)"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = libm::round(self.len() as f64 * val_fraction) as usize;
        let (val, train) = idx.split_at(n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// Feature rows `idx` as a batch tensor.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), self.n_features, data)
    }
}
