//! Deterministic, offline embedding functions.
//!
//! Neither needs a network connection. [`LetterBag`] is the 26-dimensional
//! letter-frequency embedding the matcher tests use as an oracle-friendly
//! reference; [`HashedNgram`] is a coarse lexical embedding good enough for
//! recorded fixtures to produce sensible gift matches.

use super::{ChatRequest, Provider, ProviderError, ProviderResult};

/// Counts of `a`..`z`, case-insensitive. Everything else is ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct LetterBag;

impl LetterBag {
    pub const DIM: usize = 26;

    pub fn vector(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; Self::DIM];
        for c in text.chars().filter(char::is_ascii_alphabetic) {
            v[(c.to_ascii_lowercase() as u8 - b'a') as usize] += 1.0;
        }
        v
    }
}

impl Provider for LetterBag {
    fn chat(&self, _request: &ChatRequest) -> ProviderResult {
        Err(ProviderError::Refusal("letter-bag is an embedding-only provider".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| Self::vector(t)).collect())
    }

    fn fingerprint(&self) -> String {
        "letter-bag-26".into()
    }
}

/// Feature-hashed words and character trigrams.
///
/// Words are lowercased and a plural `s` is dropped, so `vegetables` and
/// `Vegetable Medley` share a feature. Components are integer counts; cosine
/// similarity does not care about scale.
#[derive(Debug, Clone, Copy)]
pub struct HashedNgram {
    dim: usize,
}

impl Default for HashedNgram {
    fn default() -> Self {
        Self { dim: 128 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn stem(word: &str) -> &str {
    match word.strip_suffix('s') {
        Some(rest) if rest.len() >= 3 && !rest.ends_with('s') => rest,
        _ => word,
    }
}

impl HashedNgram {
    const WORD_WEIGHT: f64 = 3.0;

    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lowered = text.to_lowercase();
        for word in lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let word = stem(word);
            v[(fnv1a(word.as_bytes()) % self.dim as u64) as usize] += Self::WORD_WEIGHT;
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                let tri: String = tri.iter().collect();
                v[(fnv1a(tri.as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        v
    }
}

impl Provider for HashedNgram {
    fn chat(&self, _request: &ChatRequest) -> ProviderResult {
        Err(ProviderError::Refusal("hashed-ngram is an embedding-only provider".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn fingerprint(&self) -> String {
        format!("hashed-ngram-{}", self.dim)
    }
}
