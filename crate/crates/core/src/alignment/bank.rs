use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, norm, EmbeddingMatrix, Matrix};

/// Shared trainable context vectors plus frozen per-class anchors.
///
/// Class `k`'s prompts are `normalize(context[m] + anchors[k])` for each of the
/// `M` context rows. Only the context is ever updated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextBank {
    context: Matrix,
    anchors: Matrix,
}

impl ContextBank {
    pub fn new(context: Matrix, anchors: Matrix) -> Result<Self> {
        if context.rows() == 0 || anchors.rows() == 0 {
            return Err(Error::InvalidConfig(
                "need at least one prompt and one class".into(),
            ));
        }
        if context.cols() != anchors.cols() || context.cols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "context dim {} vs anchor dim {}",
                context.cols(),
                anchors.cols()
            )));
        }
        if !context.is_finite() || !anchors.is_finite() {
            return Err(Error::NonFinite("context bank".into()));
        }
        Ok(Self { context, anchors })
    }

    pub fn prompt_count(&self) -> usize {
        self.context.rows()
    }

    pub fn class_count(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.context.cols()
    }

    pub fn context(&self) -> &Matrix {
        &self.context
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    /// Same context, different classes.
    pub fn with_anchors(&self, anchors: Matrix) -> Result<Self> {
        Self::new(self.context.clone(), anchors)
    }

    /// `context -= lr * gradient`.
    pub fn descend(&mut self, gradient: &Matrix, lr: f64) -> Result<()> {
        self.context.add_scaled(-lr, gradient)?;
        if !self.context.is_finite() {
            return Err(Error::NonFinite("context after update".into()));
        }
        Ok(())
    }

    /// The `M` unit prompts of class `k`.
    pub fn class_prompts(&self, k: usize) -> Result<EmbeddingMatrix> {
        Ok(self.composed(k)?.prompts)
    }

    pub(crate) fn composed(&self, k: usize) -> Result<ComposedPrompts> {
        if k >= self.class_count() {
            return Err(Error::InvalidClass {
                index: k,
                classes: self.class_count(),
            });
        }
        let anchor = self.anchors.row(k);
        let mut rows = Vec::with_capacity(self.prompt_count());
        let mut norms = Vec::with_capacity(self.prompt_count());
        for s in self.context.row_iter() {
            let raw: Vec<f64> = s.iter().zip(anchor).map(|(a, b)| a + b).collect();
            norms.push(norm(&raw));
            rows.push(l2_normalize(&raw)?);
        }
        Ok(ComposedPrompts {
            prompts: EmbeddingMatrix::from_rows(&rows)?,
            norms,
        })
    }
}

#[derive(Deserialize)]
struct RawBank {
    context: Matrix,
    anchors: Matrix,
}

impl<'de> Deserialize<'de> for ContextBank {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawBank::deserialize(deserializer)?;
        ContextBank::new(raw.context, raw.anchors).map_err(serde::de::Error::custom)
    }
}

/// Unit prompts of one class with the pre-normalization lengths needed to
/// back-propagate through the normalization.
pub(crate) struct ComposedPrompts {
    pub prompts: EmbeddingMatrix,
    pub norms: Vec<f64>,
}

/// Per-class description embeddings; rows are unit-norm and class `i` may
/// have any number of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDescriptors {
    classes: Vec<EmbeddingMatrix>,
}

impl ClassDescriptors {
    /// Normalizes every row; all blocks must share one dimension.
    pub fn new(classes: Vec<EmbeddingMatrix>) -> Result<Self> {
        let Some(first) = classes.first() else {
            return Err(Error::MissingDescriptors("<all>".into()));
        };
        let dim = first.dim();
        let classes = classes
            .iter()
            .enumerate()
            .map(|(i, block)| {
                if block.dim() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "descriptors of class {i} have dim {}, expected {dim}",
                        block.dim()
                    )));
                }
                block.normalized()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { classes })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    pub fn class(&self, i: usize) -> &EmbeddingMatrix {
        &self.classes[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingMatrix> {
        self.classes.iter()
    }

    pub(crate) fn check_against(&self, bank: &ContextBank) -> Result<()> {
        if self.class_count() != bank.class_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} descriptor classes for {} bank classes",
                self.class_count(),
                bank.class_count()
            )));
        }
        if self.dim() != bank.dim() {
            return Err(Error::ShapeMismatch(format!(
                "descriptor dim {} vs bank dim {}",
                self.dim(),
                bank.dim()
            )));
        }
        Ok(())
    }
}
