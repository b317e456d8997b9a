//! Labelled images represented by their local feature tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, norm, EmbeddingMatrix, Matrix};

/// Unit-norm tolerance applied to tokens read from disk.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Which split a sample was drawn for. Training refuses anything but `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub label: usize,
    /// Local feature tokens, one unit-norm row each.
    pub tokens: EmbeddingMatrix,
    /// Normalized mean of the tokens.
    pub global: Vec<f64>,
    pub split: Split,
}

impl Sample {
    /// Normalizes the token rows and derives the global feature from them.
    pub fn new(tokens: Matrix, label: usize, split: Split) -> Result<Self> {
        let tokens = EmbeddingMatrix::new(tokens)?.normalized()?;
        let global = mean_direction(&tokens)?;
        Ok(Self {
            label,
            tokens,
            global,
            split,
        })
    }

    /// Builds a sample from tokens that are already unit-norm, kept bit-for-bit.
    pub fn from_unit_tokens(tokens: EmbeddingMatrix, label: usize, split: Split) -> Result<Self> {
        let global = mean_direction(&tokens)?;
        let sample = Self {
            label,
            tokens,
            global,
            split,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn dim(&self) -> usize {
        self.tokens.dim()
    }

    /// Checks the unit-norm and shape invariants; errors carry a JSON pointer
    /// relative to the sample object.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.tokens.row_iter().enumerate() {
            if (norm(row) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Schema {
                    pointer: format!("/tokens/{i}"),
                    message: "token rows must be unit-norm".into(),
                });
            }
        }
        if self.global.len() != self.tokens.dim() {
            return Err(Error::Schema {
                pointer: "/global".into(),
                message: format!(
                    "global feature has length {}, tokens have dim {}",
                    self.global.len(),
                    self.tokens.dim()
                ),
            });
        }
        if (norm(&self.global) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Schema {
                pointer: "/global".into(),
                message: "global feature must be unit-norm".into(),
            });
        }
        Ok(())
    }
}

fn mean_direction(tokens: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; tokens.dim()];
    for row in tokens.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    l2_normalize(&mean)
}

/// Rejects any sample not tagged as training data.
pub fn ensure_train_split(samples: &[Sample]) -> Result<()> {
    match samples.iter().find(|s| s.split != Split::Train) {
        Some(s) => Err(Error::SplitViolation(s.split.to_string())),
        None => Ok(()),
    }
}
