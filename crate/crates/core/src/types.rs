//! Domain types: embeddings, concept spans, triplets, and the learnable
//! alignment parameters.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use serde::{Deserialize, Serialize};

/// One global vector plus `r` region vectors in an h-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub id: String,
    pub cls: Vector,
    /// r x h, one row per region.
    pub regions: Matrix,
}

impl ImageEmbedding {
    pub fn new(id: impl Into<String>, cls: Vector, regions: Matrix) -> Result<Self> {
        if regions.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        if cls.dim() != regions.cols() {
            return Err(Error::DimMismatch {
                left: cls.dim(),
                right: regions.cols(),
            });
        }
        Ok(Self {
            id: id.into(),
            cls,
            regions,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.regions.rows()
    }

    pub fn dim(&self) -> usize {
        self.cls.dim()
    }
}

/// One global vector plus `s` token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub id: String,
    pub cls: Vector,
    /// s x h, one row per token.
    pub tokens: Matrix,
}

impl TextEmbedding {
    pub fn new(id: impl Into<String>, cls: Vector, tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        if cls.dim() != tokens.cols() {
            return Err(Error::DimMismatch {
                left: cls.dim(),
                right: tokens.cols(),
            });
        }
        Ok(Self {
            id: id.into(),
            cls,
            tokens,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.cls.dim()
    }
}

/// A concept mention: a CUI plus the 1-based indices of the tokens it spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpan {
    pub cui: String,
    /// 1-based token indices, strictly increasing.
    pub token_indices: Vec<usize>,
}

impl ConceptSpan {
    pub fn new(cui: impl Into<String>, token_indices: Vec<usize>) -> Result<Self> {
        if token_indices.is_empty() {
            return Err(Error::InvalidSpan("no token indices".into()));
        }
        if token_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpan(
                "token indices must be strictly increasing".into(),
            ));
        }
        if token_indices[0] == 0 {
            return Err(Error::InvalidSpan("token indices are 1-based".into()));
        }
        Ok(Self {
            cui: cui.into(),
            token_indices,
        })
    }

    /// Check every index against the owning text's token count.
    pub fn validate_against(&self, text: &TextEmbedding) -> Result<()> {
        let s = text.num_tokens();
        for &v in &self.token_indices {
            if v == 0 || v > s {
                return Err(Error::SpanOutOfRange {
                    index: v,
                    tokens: s,
                });
            }
        }
        Ok(())
    }
}

/// One image-text pair with the concepts mentioned in the text.
/// A triplet with zero concepts is valid: it contributes to the global
/// alignment loss and is skipped by the region-concept terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub image: ImageEmbedding,
    pub text: TextEmbedding,
    pub concepts: Vec<ConceptSpan>,
}

impl Triplet {
    pub fn new(
        image: ImageEmbedding,
        text: TextEmbedding,
        concepts: Vec<ConceptSpan>,
    ) -> Result<Self> {
        for span in &concepts {
            span.validate_against(&text)?;
        }
        Ok(Self {
            image,
            text,
            concepts,
        })
    }
}

/// Learnable scalars plus the inference hyperparameters.
///
/// Pairing inside a batch is positional: item m is the positive for item m
/// and the negative for every other item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    /// Global logit scale, > 0.
    pub t_g: f64,
    /// Global logit bias.
    pub b_g: f64,
    /// Local logit scale, > 0.
    pub t_l: f64,
    /// Local logit bias.
    pub b_l: f64,
    /// Weight of the region-concept loss in the total, >= 0.
    pub alpha: f64,
    /// Fusion ratio between local and global class probabilities, in [0, 1].
    pub beta: f64,
    /// Regions pooled per concept at inference.
    pub k: usize,
}

impl AlignmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_g > 0.0 && self.t_l > 0.0) {
            return Err(Error::InvalidParams("logit scales must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidParams("alpha must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParams("beta must be in [0, 1]".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

impl Default for AlignmentParams {
    /// t = 10, b = 0 follows sigmoid-loss initialization convention;
    /// alpha = 0.5 and beta = 0.5 are the reference operating points.
    fn default() -> Self {
        Self {
            t_g: 10.0,
            b_g: 0.0,
            t_l: 10.0,
            b_l: 0.0,
            alpha: 0.5,
            beta: 0.5,
            k: 16,
        }
    }
}
