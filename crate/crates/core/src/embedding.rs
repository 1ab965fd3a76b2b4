use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Ordered row labels; token `i` names row `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::InvalidArgument(format!("token {i} is empty")));
            }
            if let Some(prev) = seen.insert(t.as_str(), i) {
                return Err(Error::InvalidArgument(format!(
                    "token {t:?} appears at rows {prev} and {i}"
                )));
            }
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }
}

/// An `n x d` embedding with optional row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: DenseMatrix,
    vocab: Option<Vocabulary>,
}

impl EmbeddingMatrix {
    pub fn new(matrix: DenseMatrix, vocab: Option<Vocabulary>) -> Result<Self> {
        if let Some(v) = &vocab {
            if v.len() != matrix.rows() {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary has {} tokens but the matrix has {} rows",
                    v.len(),
                    matrix.rows()
                )));
            }
        }
        Ok(Self { matrix, vocab })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn vocab(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    pub fn into_parts(self) -> (DenseMatrix, Option<Vocabulary>) {
        (self.matrix, self.vocab)
    }
}

impl From<DenseMatrix> for EmbeddingMatrix {
    fn from(matrix: DenseMatrix) -> Self {
        Self {
            matrix,
            vocab: None,
        }
    }
}
