use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::descriptions::{ClassEmbedding, EmbeddingStore};
use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, EmbeddingMatrix, Matrix};
use crate::sample::{Sample, Split};

/// Part-structured synthetic few-shot data.
///
/// Every class owns `parts_per_class` prototypes `normalize(center_k + part_j)`,
/// where the part directions are shared by all classes. Tokens are noisy
/// copies of the prototypes interleaved with noisy shared background
/// prototypes; descriptors are noisy copies of the class prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub parts_per_class: usize,
    /// Local tokens per image (a 7×7 map by default).
    pub tokens: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub descriptor_noise: f64,
    /// Train splits to emit; smaller splits are prefixes of larger ones.
    pub shots_train: Vec<usize>,
    pub test_per_class: usize,
    /// Background prototypes shared by every class.
    pub background_parts: usize,
    pub descriptors_per_part: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            parts_per_class: 4,
            tokens: 49,
            dim: 32,
            noise_sigma: 0.7,
            descriptor_noise: 0.1,
            shots_train: vec![1, 2, 4, 8, 16],
            test_per_class: 20,
            background_parts: 2,
            descriptors_per_part: 1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.classes == 0
            || self.parts_per_class == 0
            || self.test_per_class == 0
            || self.descriptors_per_part == 0
        {
            return bad("sizes must be at least 1");
        }
        if self.dim < 2 {
            return Err(Error::InvalidDim(self.dim));
        }
        if self.tokens < self.parts_per_class {
            return bad("need at least one token per part");
        }
        if self.shots_train.is_empty() || self.shots_train.contains(&0) {
            return bad("shots must be a non-empty list of positive counts");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.descriptor_noise >= 0.0 && self.descriptor_noise.is_finite())
        {
            return bad("noise levels must be finite and non-negative");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        let width = (self.classes.saturating_sub(1)).to_string().len().max(2);
        (0..self.classes)
            .map(|k| format!("class{k:0width$}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub class_names: Vec<String>,
    /// Train split per shot count.
    pub train: BTreeMap<usize, Vec<Sample>>,
    pub test: Vec<Sample>,
    /// Noisy descriptors plus noise-free anchors, keyed by class name.
    pub store: EmbeddingStore,
    /// `prototypes[k]` is `parts_per_class × dim`.
    pub prototypes: Vec<Matrix>,
}

// Independent ChaCha streams so adding shots never changes the test split.
const STREAM_STRUCTURE: u64 = 0;
const STREAM_DESCRIPTORS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Result<Vec<f64>> {
    l2_normalize(&gaussian(rng, dim))
}

/// `normalize(base + sigma·g)`; exactly `base` when `sigma` is zero.
fn jitter(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(base.to_vec());
    }
    let noisy: Vec<f64> = base
        .iter()
        .zip(gaussian(rng, base.len()))
        .map(|(b, g)| b + sigma * g)
        .collect();
    l2_normalize(&noisy)
}

fn image(
    cfg: &SyntheticConfig,
    prototypes: &Matrix,
    background: &[Vec<f64>],
    label: usize,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let cycle = cfg.parts_per_class + background.len();
    let rows = (0..cfg.tokens)
        .map(|t| {
            let slot = t % cycle;
            let base = if slot < cfg.parts_per_class {
                prototypes.row(slot)
            } else {
                &background[slot - cfg.parts_per_class]
            };
            jitter(base, cfg.noise_sigma, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Sample::from_unit_tokens(EmbeddingMatrix::from_rows(&rows)?, label, split)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let (k_count, p_count, d) = (cfg.classes, cfg.parts_per_class, cfg.dim);

    let mut rng = stream(cfg.seed, STREAM_STRUCTURE);
    let parts = (0..p_count)
        .map(|_| unit(&mut rng, d))
        .collect::<Result<Vec<_>>>()?;
    let mut prototypes = Vec::with_capacity(k_count);
    for _ in 0..k_count {
        let center = unit(&mut rng, d)?;
        let rows = parts
            .iter()
            .map(|u| l2_normalize(&center.iter().zip(u).map(|(c, u)| c + u).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        prototypes.push(Matrix::from_rows(&rows)?);
    }
    let background = (0..cfg.background_parts)
        .map(|_| unit(&mut rng, d))
        .collect::<Result<Vec<_>>>()?;

    let names = cfg.class_names();
    let mut rng = stream(cfg.seed, STREAM_DESCRIPTORS);
    let mut classes = BTreeMap::new();
    for (name, protos) in names.iter().zip(&prototypes) {
        let mut descriptors = Vec::with_capacity(p_count * cfg.descriptors_per_part);
        for row in protos.row_iter() {
            for _ in 0..cfg.descriptors_per_part {
                descriptors.push(jitter(row, cfg.descriptor_noise, &mut rng)?);
            }
        }
        let mut mean = vec![0.0; d];
        for row in protos.row_iter() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        classes.insert(
            name.clone(),
            ClassEmbedding {
                descriptors,
                anchor: Some(l2_normalize(&mean)?),
            },
        );
    }
    let store = EmbeddingStore { dim: d, classes };

    let max_shots = *cfg.shots_train.iter().max().expect("validated non-empty");
    let mut rng = stream(cfg.seed, STREAM_TRAIN);
    // pool[k][i] is the i-th training image of class k.
    let mut pool = Vec::with_capacity(k_count);
    for (k, protos) in prototypes.iter().enumerate() {
        pool.push(
            (0..max_shots)
                .map(|_| image(cfg, protos, &background, k, Split::Train, &mut rng))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let train = cfg
        .shots_train
        .iter()
        .map(|&s| {
            let split = (0..s)
                .flat_map(|i| pool.iter().map(move |class| class[i].clone()))
                .collect();
            (s, split)
        })
        .collect();

    let mut rng = stream(cfg.seed, STREAM_TEST);
    let mut test = Vec::with_capacity(k_count * cfg.test_per_class);
    for _ in 0..cfg.test_per_class {
        for (k, protos) in prototypes.iter().enumerate() {
            test.push(image(cfg, protos, &background, k, Split::Test, &mut rng)?);
        }
    }

    Ok(SyntheticData {
        class_names: names,
        train,
        test,
        store,
        prototypes,
    })
}
