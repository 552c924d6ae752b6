use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::{words, BpeTokenizer};
use super::transformer::{TextEncoder, TextEncoderConfig};
use super::FeatureMatrix;
use crate::error::{Error, Result};

/// How initial node features are derived from node text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMethod {
    /// Token counts hashed into `dim` buckets (FNV-1a).
    HashedBagOfWords,
    /// Pooled output of a randomly initialized, frozen text encoder.
    FrozenTextEncoderPooling,
}

impl FromStr for FeatureMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashed-bag-of-words" => Ok(Self::HashedBagOfWords),
            "frozen-text-encoder-pooling" => Ok(Self::FrozenTextEncoderPooling),
            other => Err(Error::Config(format!("unknown feature method {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HashedBagOfWords => "hashed-bag-of-words",
            Self::FrozenTextEncoderPooling => "frozen-text-encoder-pooling",
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn hashed_bag_of_words(texts: &[String], dim: usize) -> FeatureMatrix {
    let mut x = Array2::zeros((texts.len(), dim));
    for (i, t) in texts.iter().enumerate() {
        for w in words(t) {
            x[[i, (fnv1a(w.as_bytes()) % dim as u64) as usize]] += 1.0;
        }
    }
    FeatureMatrix(x)
}

/// Builds the initial feature matrix `X`, one row per text.
pub fn init_features(texts: &[String], dim: usize, method: FeatureMethod, seed: u64) -> Result<FeatureMatrix> {
    if dim == 0 {
        return Err(Error::Config("feature dimension must be at least 1".into()));
    }
    match method {
        FeatureMethod::HashedBagOfWords => Ok(hashed_bag_of_words(texts, dim)),
        FeatureMethod::FrozenTextEncoderPooling => {
            let mut config = TextEncoderConfig::small();
            config.out_dim = dim;
            let tokenizer = BpeTokenizer::train(texts, config.vocab_size, config.max_len);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let encoder = TextEncoder::new(config, tokenizer, &mut rng)?;
            Ok(FeatureMatrix(encoder.encode(texts).into_inner()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_zero_row() {
        let x = init_features(&["".into(), "a b".into()], 16, FeatureMethod::HashedBagOfWords, 0).unwrap();
        assert!(x.as_array().row(0).iter().all(|&v| v == 0.0));
        assert_eq!(x.as_array().row(1).sum(), 2.0);
    }

    #[test]
    fn repeated_token_counts_twice() {
        // FNV-1a of "genetic", computed independently of `fnv1a`
        let mut h: u64 = 14695981039346656037;
        for b in "genetic".bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        let dim = 256;
        let x = init_features(&["genetic genetic".into()], dim, FeatureMethod::HashedBagOfWords, 0).unwrap();
        assert_eq!(x.as_array()[[0, (h % dim as u64) as usize]], 2.0);
        assert_eq!(x.as_array().sum(), 2.0);
    }

    #[test]
    fn identical_texts_identical_rows() {
        let texts: Vec<String> = vec!["graph neural nets".into(), "graph neural nets".into()];
        for method in [FeatureMethod::HashedBagOfWords, FeatureMethod::FrozenTextEncoderPooling] {
            let x = init_features(&texts, 32, method, 5).unwrap();
            assert_eq!(x.as_array().row(0), x.as_array().row(1));
            assert_eq!(x.dim(), 32);
        }
    }

    #[test]
    fn unknown_method_is_config_error() {
        assert!(matches!("tf-idf".parse::<FeatureMethod>(), Err(Error::Config(_))));
        assert_eq!(
            "frozen-text-encoder-pooling".parse::<FeatureMethod>().unwrap(),
            FeatureMethod::FrozenTextEncoderPooling
        );
    }
}
