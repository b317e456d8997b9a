use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentMode, ClassDescriptors, DistillMode};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::sample::Sample;

use super::dataset::shots_in;
use super::eval::accuracy;
use super::train::{train, TrainConfig};

/// Axes of the ablation grid; cells are the full cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub distill: Vec<DistillMode>,
    pub align: Vec<AlignmentMode>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub prompts: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            distill: DistillMode::ALL.to_vec(),
            align: AlignmentMode::ALL.to_vec(),
            alpha: vec![0.2],
            beta: vec![0.2],
            prompts: vec![4],
            seeds: vec![0],
        }
    }
}

impl AblationGrid {
    /// A one-cell grid holding `cfg`'s own settings.
    pub fn single(cfg: &TrainConfig) -> Self {
        Self {
            distill: vec![cfg.objective.distill],
            align: vec![cfg.objective.align],
            alpha: vec![cfg.objective.sinkhorn.alpha],
            beta: vec![cfg.objective.beta],
            prompts: vec![cfg.prompts],
            seeds: vec![cfg.seed],
        }
    }

    pub fn len(&self) -> usize {
        self.distill.len()
            * self.align.len()
            * self.alpha.len()
            * self.beta.len()
            * self.prompts.len()
            * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell configurations in row order: distill, align, alpha, beta, M, seed.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &distill in &self.distill {
            for &align in &self.align {
                for &alpha in &self.alpha {
                    for &beta in &self.beta {
                        for &prompts in &self.prompts {
                            for &seed in &self.seeds {
                                let mut cfg = base.clone();
                                cfg.objective.distill = distill;
                                cfg.objective.align = align;
                                cfg.objective.sinkhorn.alpha = alpha;
                                cfg.objective.beta = beta;
                                cfg.prompts = prompts;
                                cfg.seed = seed;
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub distill: DistillMode,
    pub align: AlignmentMode,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "M")]
    pub prompts: usize,
    pub shots: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Trains and evaluates every grid cell on the same data.
pub fn ablate(
    train_set: &[Sample],
    test_set: &[Sample],
    anchors: &Matrix,
    descriptors: Option<&ClassDescriptors>,
    grid: &AblationGrid,
    base: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig(
            "ablation grid has an empty axis".into(),
        ));
    }
    let shots = shots_in(train_set);
    let epochs = base.epochs_for(shots);
    grid.cells(base)
        .into_iter()
        .map(|cfg| {
            let outcome = train(train_set, anchors, descriptors, &cfg, epochs)?;
            let (acc, _) = accuracy(test_set, &outcome.bank, &cfg.objective)?;
            Ok(AblationRow {
                distill: cfg.objective.distill,
                align: cfg.objective.align,
                alpha: cfg.objective.sinkhorn.alpha,
                beta: cfg.objective.beta,
                prompts: cfg.prompts,
                shots,
                seed: cfg.seed,
                accuracy: acc,
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "distill,align,alpha,beta,M,shots,seed,accuracy";

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.4}",
            r.distill, r.align, r.alpha, r.beta, r.prompts, r.shots, r.seed, r.accuracy
        );
    }
    out
}
