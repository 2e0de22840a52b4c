use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowEncoderConfig {
    pub vocab_cap: usize,
    pub embedding_dim: usize,
    pub max_tokens: usize,
}

impl Default for BowEncoderConfig {
    fn default() -> Self {
        BowEncoderConfig { vocab_cap: 20_000, embedding_dim: 50, max_tokens: 32 }
    }
}

impl BowEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_cap == 0 || self.max_tokens == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidConfig(format!("bag-of-words config {self:?} has a zero size")));
        }
        Ok(())
    }
}

/// Maps raw token ids to embedding rows, keeping the most frequent ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    index: HashMap<u32, usize>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent ids; equal counts are ordered by first
    /// occurrence.
    pub fn build<'a>(sequences: impl IntoIterator<Item = &'a [u32]>, cap: usize) -> Self {
        let mut counts: HashMap<u32, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for seq in sequences {
            for &tok in seq {
                let entry = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(u32, usize, usize)> = counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(cap);
        Vocabulary { index: ranked.into_iter().enumerate().map(|(row, (tok, _, _))| (tok, row)).collect() }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn row(&self, token: u32) -> Option<usize> {
        self.index.get(&token).copied()
    }
}

/// A frozen embedding table plus its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct BowEncoder {
    pub config: BowEncoderConfig,
    pub vocabulary: Vocabulary,
    /// `vocabulary.len() x embedding_dim`.
    pub embeddings: Tensor,
}

impl BowEncoder {
    pub fn new(config: BowEncoderConfig, vocabulary: Vocabulary, embeddings: Tensor) -> Result<Self> {
        config.validate()?;
        if embeddings.rows() != vocabulary.len() || embeddings.cols() != config.embedding_dim {
            return Err(Error::shape(
                "bow_encoder",
                format!(
                    "embeddings {:?} for {} words of dim {}",
                    embeddings.shape(),
                    vocabulary.len(),
                    config.embedding_dim
                ),
            ));
        }
        Ok(BowEncoder { config, vocabulary, embeddings })
    }

    /// Random `N(0, 1/dim)` embeddings for a vocabulary built from `sequences`.
    pub fn random<'a>(
        config: BowEncoderConfig,
        sequences: impl IntoIterator<Item = &'a [u32]>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let vocabulary = Vocabulary::build(sequences, config.vocab_cap);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (config.embedding_dim as f64).sqrt()).expect("positive sd");
        let data = (0..vocabulary.len() * config.embedding_dim).map(|_| normal.sample(&mut rng)).collect();
        let embeddings = Tensor::new(vocabulary.len(), config.embedding_dim, data)?;
        Self::new(config, vocabulary, embeddings)
    }

    pub fn encode(&self, tokens: &[u32]) -> Vec<f64> {
        encode_bag_of_words(tokens, self)
    }
}

/// Mean embedding of the first `max_tokens` in-vocabulary ids.
///
/// The divisor is the number of contributing tokens; an empty or all
/// out-of-vocabulary sequence encodes to zeros.
pub fn encode_bag_of_words(tokens: &[u32], encoder: &BowEncoder) -> Vec<f64> {
    let dim = encoder.config.embedding_dim;
    let mut sum = vec![0.0; dim];
    let rows = tokens.iter().filter_map(|&t| encoder.vocabulary.row(t)).take(encoder.config.max_tokens);
    let mut count = 0usize;
    for row in rows {
        for (s, e) in sum.iter_mut().zip(encoder.embeddings.row_slice(row)) {
            *s += e;
        }
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    sum
}
