use serde::{Deserialize, Serialize};

use crate::alignment::{predict_with, ContextBank, ObjectiveConfig, PromptSet};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::sample::Sample;

/// `2·base·new / (base + new)`.
pub fn harmonic_mean(base: f64, new: f64) -> Result<f64> {
    if !(base >= 0.0 && new >= 0.0) || !base.is_finite() || !new.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "accuracies must be finite and non-negative, got {base} and {new}"
        )));
    }
    if base == 0.0 && new == 0.0 {
        return Err(Error::DegenerateMetric);
    }
    Ok(2.0 * base * new / (base + new))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    FewShot {
        accuracy: f64,
        correct: usize,
        total: usize,
    },
    BaseToNew {
        base_accuracy: f64,
        new_accuracy: f64,
        harmonic_mean: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub seed: u64,
    /// Free-form snapshot of the configuration that produced the run.
    pub config: serde_json::Value,
    pub wall_time_secs: f64,
}

impl EvalReport {
    /// The report with its wall time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        match self.metrics {
            Metrics::FewShot { accuracy, .. } => Some(accuracy),
            Metrics::BaseToNew { .. } => None,
        }
    }
}

/// Predicted class per sample; ties go to the lowest class index.
pub fn predict_labels(
    samples: &[Sample],
    bank: &ContextBank,
    cfg: &ObjectiveConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let prompts = PromptSet::new(bank)?;
    samples
        .iter()
        .map(|s| {
            if s.label >= bank.class_count() {
                return Err(Error::ShapeMismatch(format!(
                    "label {} but the bank has {} classes",
                    s.label,
                    bank.class_count()
                )));
            }
            Ok(predict_with(&s.tokens, &prompts, cfg)?.argmax())
        })
        .collect()
}

/// Returns `(accuracy in percent, correct count)`.
pub fn accuracy(
    samples: &[Sample],
    bank: &ContextBank,
    cfg: &ObjectiveConfig,
) -> Result<(f64, usize)> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let predicted = predict_labels(samples, bank, cfg)?;
    let correct = predicted
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok((100.0 * correct as f64 / samples.len() as f64, correct))
}

pub fn evaluate_fewshot(
    bank: &ContextBank,
    test: &[Sample],
    cfg: &ObjectiveConfig,
    seed: u64,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let (acc, correct) = accuracy(test, bank, cfg)?;
    Ok(EvalReport {
        metrics: Metrics::FewShot {
            accuracy: acc,
            correct,
            total: test.len(),
        },
        seed,
        config,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// First `⌈K/2⌉` names in sorted order are base, the rest new.
pub fn base_to_new_split(classes: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    if classes.len() < 2 {
        return Err(Error::InvalidConfig(
            "base-to-new needs at least 2 classes".into(),
        ));
    }
    let mut sorted = classes.to_vec();
    sorted.sort();
    let new = sorted.split_off(classes.len().div_ceil(2));
    Ok((sorted, new))
}

/// Scores one trained context against base and new anchors. New-class
/// prompts come from the same context, with no descriptors involved.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_base_to_new(
    context: &Matrix,
    base_anchors: &Matrix,
    new_anchors: &Matrix,
    base_test: &[Sample],
    new_test: &[Sample],
    cfg: &ObjectiveConfig,
    seed: u64,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let base = ContextBank::new(context.clone(), base_anchors.clone())?;
    let new = ContextBank::new(context.clone(), new_anchors.clone())?;
    let (base_accuracy, _) = accuracy(base_test, &base, cfg)?;
    let (new_accuracy, _) = accuracy(new_test, &new, cfg)?;
    Ok(EvalReport {
        metrics: Metrics::BaseToNew {
            base_accuracy,
            new_accuracy,
            harmonic_mean: harmonic_mean(base_accuracy, new_accuracy)?,
        },
        seed,
        config,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_fixtures() {
        assert!((harmonic_mean(95.00, 90.17).unwrap() - 92.52).abs() < 0.005);
        assert!((harmonic_mean(88.70, 51.97).unwrap() - 65.54).abs() < 0.005);
        assert_eq!(harmonic_mean(71.5, 71.5).unwrap(), 71.5);
        assert_eq!(harmonic_mean(0.0, 50.0).unwrap(), 0.0);
        assert!(matches!(
            harmonic_mean(0.0, 0.0),
            Err(Error::DegenerateMetric)
        ));
        assert!(harmonic_mean(-1.0, 5.0).is_err());
    }

    #[test]
    fn split_rule() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (b, n) = base_to_new_split(&names(&["d", "b", "a", "c"])).unwrap();
        assert_eq!((b, n), (names(&["a", "b"]), names(&["c", "d"])));
        let (b, n) = base_to_new_split(&names(&["x", "y", "z"])).unwrap();
        assert_eq!((b.len(), n.len()), (2, 1));
        assert!(base_to_new_split(&names(&["a"])).is_err());
    }
}
