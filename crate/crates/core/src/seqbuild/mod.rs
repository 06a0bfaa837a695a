//! In-context learning sequences.
//!
//! Two layouts are supported. The naive layout alternates context examples
//! and their annotations and ends with one query,
//! `(x_1, a_1, ..., x_n, a_n, x_{n+1})`, with a prediction at every example
//! token. The proposed layout inserts a query after every annotation,
//! `(x_1, a_1, q_1, ..., x_n, a_n, q_n)`, and uses a mask and position
//! indices that make each query invisible to every later token.

mod build;
mod dump;
mod layout;
mod sampling;
mod task;

pub use build::{
    apply_hinting, apply_permutation_and_types, build_naive_sequence, build_proposed_sequence, build_sequence,
    encode_annotation, permute_tokens,
};
pub use dump::{read_json_line, to_json_line, SequenceDump};
pub use layout::{attention_mask, position_indices};
pub use sampling::{
    context_group_counts, largest_remainder_counts, sample_context, sample_queries, ExampleRef, SampledContext,
};
pub use task::{ClassSet, Episode, GraftedUniverseTask, Relabel, RelabeledTask, SingleTask, Split, TaskSource};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Naive,
    Proposed,
}

/// What annotation tokens encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelMode {
    LabelOnly,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenType {
    ContextX,
    Annotation,
    Query,
}

impl TokenType {
    /// One-hot code written into dimensions 0..3 of every token.
    pub fn one_hot(self) -> [f32; 3] {
        match self {
            TokenType::ContextX => [1.0, 0.0, 0.0],
            TokenType::Annotation => [0.0, 1.0, 0.0],
            TokenType::Query => [0.0, 0.0, 1.0],
        }
    }
}

/// Fixed random vectors used to encode labels and spurious bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationCodebook {
    pub v_label: Vec<f32>,
    pub v_spur: Vec<f32>,
    pub anno_scale: f64,
    pub mode: LabelMode,
}

impl AnnotationCodebook {
    /// Draws two random directions and scales both to `anno_scale`.
    pub fn new<R: Rng + ?Sized>(d: usize, anno_scale: f64, mode: LabelMode, rng: &mut R) -> Result<Self> {
        if !(anno_scale > 0.0) || !anno_scale.is_finite() {
            return Err(Error::Config(format!("annotation scale must be positive, got {anno_scale}")));
        }
        let mut draw = || -> Vec<f32> {
            loop {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    return v.iter().map(|a| (a / norm * anno_scale) as f32).collect();
                }
            }
        };
        let v_label = draw();
        let v_spur = draw();
        Ok(AnnotationCodebook { v_label, v_spur, anno_scale, mode })
    }

    pub fn dim(&self) -> usize {
        self.v_label.len()
    }
}

/// Binary `T x T` matrix; `allows(i, j)` says whether token `i` may attend to `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    t: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(t: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = vec![false; t * t];
        for i in 0..t {
            for j in 0..t {
                allowed[i * t + j] = f(i, j);
            }
        }
        AttentionMask { t, allowed }
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.t + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.t..(i + 1) * self.t]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.allowed[i * self.t + j] = value;
    }
}

/// A fully assembled sequence ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct IclSequence {
    pub scheme: Scheme,
    pub d: usize,
    /// Row-major `T x d` token matrix.
    pub tokens: Vec<f32>,
    pub token_types: Vec<TokenType>,
    pub positions: Vec<u32>,
    pub mask: AttentionMask,
    pub predict_at: Vec<usize>,
    pub targets: Vec<u8>,
    pub query_groups: Vec<u8>,
    /// Number of context examples visible at each prediction.
    pub context_len_at: Vec<usize>,
    /// Group histogram of the visible context at each prediction.
    pub context_group_counts: Vec<[u32; 4]>,
}

impl IclSequence {
    pub fn len(&self) -> usize {
        self.token_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_types.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.d..(i + 1) * self.d]
    }

    pub fn token_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.tokens[i * self.d..(i + 1) * self.d]
    }
}

/// How to sample and lay out a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecipe {
    pub scheme: Scheme,
    /// Context size.
    pub n: usize,
    pub label_mode: LabelMode,
    pub permute: bool,
    /// Whether the permutation also applies to annotation tokens.
    #[serde(default = "yes")]
    pub permute_annotations: bool,
    /// Probability of replacing each intermediate query by an earlier context example.
    pub hint_prob: f64,
    /// `None` means class-balanced with 10% minority within each class.
    pub context_group_dist: Option<[f64; 4]>,
    pub query_group_dist: [f64; 4],
}

impl SequenceRecipe {
    pub const DEFAULT_HINT_PROB: f64 = 0.25;

    pub fn new(scheme: Scheme, n: usize) -> Self {
        SequenceRecipe {
            scheme,
            n,
            label_mode: LabelMode::LabelOnly,
            permute: false,
            permute_annotations: true,
            hint_prob: 0.0,
            context_group_dist: None,
            query_group_dist: [0.25; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("context size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hint_prob) {
            return Err(Error::Config(format!("hint probability {} outside [0, 1]", self.hint_prob)));
        }
        check_dist(&self.query_group_dist, "query")?;
        if let Some(dist) = &self.context_group_dist {
            check_dist(dist, "context")?;
        }
        Ok(())
    }

    /// Number of tokens in a full sequence.
    pub fn seq_len(&self) -> usize {
        match self.scheme {
            Scheme::Naive => 2 * self.n + 1,
            Scheme::Proposed => 3 * self.n,
        }
    }

    /// Largest position index used by a full sequence.
    pub fn max_position(&self) -> usize {
        2 * self.n
    }
}

fn yes() -> bool {
    true
}

fn check_dist(dist: &[f64; 4], what: &str) -> Result<()> {
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} group distribution {dist:?} is not a probability vector")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn codebook_norms() {
        let cb = AnnotationCodebook::new(16, 3.5, LabelMode::Group, &mut stream(0, "cb", 0)).unwrap();
        let norm = |v: &[f32]| v.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
        assert!((norm(&cb.v_label) - 3.5).abs() < 1e-5);
        assert!((norm(&cb.v_spur) - 3.5).abs() < 1e-5);
        assert!(AnnotationCodebook::new(16, 0.0, LabelMode::Group, &mut stream(0, "cb", 0)).is_err());
    }

    #[test]
    fn recipe_validation() {
        let mut r = SequenceRecipe::new(Scheme::Proposed, 8);
        assert!(r.validate().is_ok());
        r.hint_prob = 1.5;
        assert!(r.validate().is_err());
        r.hint_prob = 0.25;
        r.query_group_dist = [0.5, 0.5, 0.5, 0.0];
        assert!(r.validate().is_err());
        r.query_group_dist = [0.25; 4];
        r.context_group_dist = Some([0.25, 0.25, 0.05, 0.45]);
        assert!(r.validate().is_ok());
    }
}
