use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::l2_normalize;

/// Maps text to a unit vector of a fixed dimension.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// Hash-seeded Gaussian vector, normalized. Stable across platforms and
/// releases: SHA-256 of the little-endian seed followed by the UTF-8 text
/// seeds a ChaCha8 stream.
pub fn mock_encode(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 2 {
        return Err(Error::InvalidDim(dim));
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    l2_normalize(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl MockEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDim(dim));
        }
        Ok(Self { dim, seed })
    }
}

impl TextEncoder for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        mock_encode(text, self.dim, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cosine, norm};

    #[test]
    fn deterministic_and_unit() {
        let a = mock_encode("panda", 32, 7).unwrap();
        assert_eq!(a, mock_encode("panda", 32, 7).unwrap());
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, mock_encode("panda", 32, 8).unwrap());
    }

    #[test]
    fn distinct_texts_are_far_apart() {
        let p = mock_encode("panda", 32, 7).unwrap();
        let t = mock_encode("tiger", 32, 7).unwrap();
        assert!(cosine(&p, &t).unwrap() < 0.5);
    }

    #[test]
    fn small_dims_are_rejected() {
        assert!(matches!(mock_encode("x", 1, 0), Err(Error::InvalidDim(1))));
        assert!(MockEncoder::new(0, 0).is_err());
        assert_eq!(mock_encode("x", 2, 0).unwrap().len(), 2);
    }
}
