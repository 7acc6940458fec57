//! Vocabulary and word-vector table.
//!
//! Index 0 is always the unknown-word slot; every out-of-vocabulary token
//! maps there. Pretrained vectors are read from a whitespace-separated text
//! file (`token v1 .. ve` per line); vocabulary words missing from the file
//! keep their random initialization.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

use crate::tensor::{init_vec, Rng, Vector};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: vector has {got} components, expected {expected}")]
    DimMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding file contains no vectors")]
    Empty,
}

/// Token-to-index map with a reserved unknown slot at index 0.
#[derive(Debug, Clone)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        v.insert(UNK_TOKEN);
        v
    }

    /// Vocabulary over a token iterator, indices in first-seen order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    /// Index of `token`, inserting it if new.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    /// Index of `token`, or the unknown slot when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

/// Fraction of vocabulary words found in a pretrained vector file.
#[derive(Debug, Clone, Copy)]
pub struct Coverage {
    pub found: usize,
    pub vocab_size: usize,
}

impl Coverage {
    pub fn rate(&self) -> f64 {
        if self.vocab_size == 0 {
            return 0.0;
        }
        self.found as f64 / self.vocab_size as f64
    }
}

/// Dense `vocab_size x dim` table of word vectors, one row per index.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: Vec<Vector>,
}

impl EmbeddingTable {
    /// Every row drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let rows = (0..vocab_size).map(|_| init_vec(dim, scale, rng)).collect();
        EmbeddingTable { dim, rows }
    }

    pub fn lookup(&self, index: usize) -> &Vector {
        &self.rows[index]
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    /// Overwrite rows for vocabulary words present in a pretrained text
    /// file. The file's vector dimension must equal `self.dim` and stay
    /// constant across lines; errors carry the offending line number.
    pub fn load_pretrained<R: BufRead>(
        &mut self,
        reader: R,
        vocab: &Vocab,
    ) -> Result<Coverage, EmbeddingError> {
        let mut found = vec![false; vocab.len()];
        let mut any = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EmbeddingError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().ok_or_else(|| EmbeddingError::Parse {
                line: lineno + 1,
                message: "missing token".into(),
            })?;
            let mut values = Vec::with_capacity(self.dim);
            for p in parts {
                let v: f64 = p.parse().map_err(|_| EmbeddingError::Parse {
                    line: lineno + 1,
                    message: format!("component `{p}` is not a number"),
                })?;
                values.push(v);
            }
            if values.len() != self.dim {
                return Err(EmbeddingError::DimMismatch {
                    line: lineno + 1,
                    expected: self.dim,
                    got: values.len(),
                });
            }
            any = true;
            if vocab.contains(token) {
                let idx = vocab.lookup(token);
                if !found[idx] {
                    found[idx] = true;
                    self.rows[idx] = Vector::from_slice(&values);
                }
            }
        }
        if !any {
            return Err(EmbeddingError::Empty);
        }
        Ok(Coverage {
            // The unknown slot never comes from the file.
            found: found.iter().skip(1).filter(|&&f| f).count(),
            vocab_size: vocab.len() - 1,
        })
    }
}
