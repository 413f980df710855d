use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tagging::Scheme;
use crate::tensor::Tensor;

pub const NUM_SUBTAGS: usize = 5;
pub const NUM_SENTIMENTS: usize = 3;
/// Sub-tags plus START and STOP.
pub const NUM_TRANSITION_STATES: usize = 7;
pub const START: usize = 5;
pub const STOP: usize = 6;

/// Architecture and feature switches. Everything needed to rebuild the
/// parameter shapes except the vocabulary size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub offset_dim: usize,
    pub max_offset: usize,
    pub scheme: Scheme,
    pub use_offset_features: bool,
    pub use_opinion_features: bool,
    /// Hard BIOES legality on transitions.
    pub structural_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden_dim: 300,
            offset_dim: 100,
            max_offset: 6,
            scheme: Scheme::TargetFirst,
            use_offset_features: true,
            use_opinion_features: true,
            structural_mask: true,
        }
    }
}

impl ModelConfig {
    pub fn offset_rows(&self) -> usize {
        2 * self.max_offset + 1
    }
}

/// Token to embedding-row mapping. Row 0 is padding, row 1 the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: &'static str = "<pad>";
    pub const UNK: &'static str = "<unk>";
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(Self::PAD);
        v.insert(Self::UNK);
        v
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Restores a vocabulary from its row listing; the first two entries must
    /// be the padding and unknown markers.
    pub fn from_rows(rows: Vec<String>) -> Option<Self> {
        if rows.len() < 2 || rows[0] != Self::PAD || rows[1] != Self::UNK {
            return None;
        }
        let mut index = HashMap::with_capacity(rows.len());
        for (i, t) in rows.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return None;
            }
        }
        Some(Vocabulary {
            tokens: rows,
            index,
        })
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Gate weights of one recurrent direction. Gate blocks are stacked as
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_input: Tensor::zeros(4 * hidden, input),
            w_hidden: Tensor::zeros(4 * hidden, hidden),
            bias: Tensor::zeros(4 * hidden, 1),
        }
    }
}

/// Every trainable tensor. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embeddings: Tensor,
    pub lstm_forward: LstmParams,
    pub lstm_backward: LstmParams,
    /// Sub-tag scores from `[fwd_i; bwd_i]`, rows in B, I, O, E, S order.
    pub token_w: Tensor,
    pub token_b: Tensor,
    /// Sentiment scores from `[g; bwd_i]`, rows in +, 0, - order.
    pub sentiment_w: Tensor,
    pub sentiment_b: Tensor,
    pub opinion_w: Tensor,
    pub opinion_b: Tensor,
    /// One row per `min(j, k)` in `-M..=M`.
    pub offset_table: Tensor,
    pub offset_w: Tensor,
    pub offset_b: Tensor,
    /// Indexed `[from][to]` over B, I, O, E, S, START, STOP.
    pub transitions: Tensor,
}

impl Params {
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let h = config.hidden_dim;
        Params {
            embeddings: Tensor::zeros(vocab_size, config.embed_dim),
            lstm_forward: LstmParams::zeros(config.embed_dim, h),
            lstm_backward: LstmParams::zeros(config.embed_dim, h),
            token_w: Tensor::zeros(NUM_SUBTAGS, 2 * h),
            token_b: Tensor::zeros(NUM_SUBTAGS, 1),
            sentiment_w: Tensor::zeros(NUM_SENTIMENTS, 3 * h),
            sentiment_b: Tensor::zeros(NUM_SENTIMENTS, 1),
            opinion_w: Tensor::zeros(1, 2 * h),
            opinion_b: Tensor::zeros(1, 1),
            offset_table: Tensor::zeros(config.offset_rows(), config.offset_dim),
            offset_w: Tensor::zeros(1, config.offset_dim),
            offset_b: Tensor::zeros(1, 1),
            transitions: Tensor::zeros(NUM_TRANSITION_STATES, NUM_TRANSITION_STATES),
        }
    }

    /// Random initialization: embeddings and offset rows from U(-0.1, 0.1),
    /// recurrent and head weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// transitions zero.
    pub fn random<R: Rng + ?Sized>(config: &ModelConfig, vocab_size: usize, rng: &mut R) -> Self {
        let h = config.hidden_dim;
        let lstm = |rng: &mut R| {
            let bound = 1.0 / (h as f64).sqrt();
            LstmParams {
                w_input: Tensor::uniform(4 * h, config.embed_dim, bound, rng),
                w_hidden: Tensor::uniform(4 * h, h, bound, rng),
                bias: Tensor::uniform(4 * h, 1, bound, rng),
            }
        };
        let head = |rows: usize, fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (Tensor::uniform(rows, fan_in, bound, rng), Tensor::uniform(rows, 1, bound, rng))
        };
        let mut embeddings = Tensor::uniform(vocab_size, config.embed_dim, 0.1, rng);
        if vocab_size > 0 {
            embeddings.row_mut(Vocabulary::PAD_ID).fill(0.0);
        }
        let lstm_forward = lstm(rng);
        let lstm_backward = lstm(rng);
        let (token_w, token_b) = head(NUM_SUBTAGS, 2 * h, rng);
        let (sentiment_w, sentiment_b) = head(NUM_SENTIMENTS, 3 * h, rng);
        let (opinion_w, opinion_b) = head(1, 2 * h, rng);
        let offset_table = Tensor::uniform(config.offset_rows(), config.offset_dim, 0.1, rng);
        let (offset_w, offset_b) = head(1, config.offset_dim, rng);
        Params {
            embeddings,
            lstm_forward,
            lstm_backward,
            token_w,
            token_b,
            sentiment_w,
            sentiment_b,
            opinion_w,
            opinion_b,
            offset_table,
            offset_w,
            offset_b,
            transitions: Tensor::zeros(NUM_TRANSITION_STATES, NUM_TRANSITION_STATES),
        }
    }

    /// Named tensors in a fixed order (the checkpoint order).
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("embeddings", &self.embeddings),
            ("lstm.forward.w_input", &self.lstm_forward.w_input),
            ("lstm.forward.w_hidden", &self.lstm_forward.w_hidden),
            ("lstm.forward.bias", &self.lstm_forward.bias),
            ("lstm.backward.w_input", &self.lstm_backward.w_input),
            ("lstm.backward.w_hidden", &self.lstm_backward.w_hidden),
            ("lstm.backward.bias", &self.lstm_backward.bias),
            ("head.token.w", &self.token_w),
            ("head.token.b", &self.token_b),
            ("head.sentiment.w", &self.sentiment_w),
            ("head.sentiment.b", &self.sentiment_b),
            ("head.opinion.w", &self.opinion_w),
            ("head.opinion.b", &self.opinion_b),
            ("head.offset.table", &self.offset_table),
            ("head.offset.w", &self.offset_w),
            ("head.offset.b", &self.offset_b),
            ("crf.transitions", &self.transitions),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("embeddings", &mut self.embeddings),
            ("lstm.forward.w_input", &mut self.lstm_forward.w_input),
            ("lstm.forward.w_hidden", &mut self.lstm_forward.w_hidden),
            ("lstm.forward.bias", &mut self.lstm_forward.bias),
            ("lstm.backward.w_input", &mut self.lstm_backward.w_input),
            ("lstm.backward.w_hidden", &mut self.lstm_backward.w_hidden),
            ("lstm.backward.bias", &mut self.lstm_backward.bias),
            ("head.token.w", &mut self.token_w),
            ("head.token.b", &mut self.token_b),
            ("head.sentiment.w", &mut self.sentiment_w),
            ("head.sentiment.b", &mut self.sentiment_b),
            ("head.opinion.w", &mut self.opinion_w),
            ("head.opinion.b", &mut self.opinion_b),
            ("head.offset.table", &mut self.offset_table),
            ("head.offset.w", &mut self.offset_w),
            ("head.offset.b", &mut self.offset_b),
            ("crf.transitions", &mut self.transitions),
        ]
    }

    pub fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
