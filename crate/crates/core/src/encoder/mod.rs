//! Feature extractor: embeddings, a bidirectional recurrent encoder, span
//! representations and the four factor heads, with hand-written gradients.
//!
//! Hidden states are addressed with 1-based positions `1..=n`. The forward
//! direction also exposes position `0` and the backward direction position
//! `n + 1`; both are fixed zero vectors so that span differences need no
//! special cases.

mod heads;
mod lstm;
mod params;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use heads::Emissions;
pub use params::{
    LstmParams, ModelConfig, Params, Vocabulary, NUM_SENTIMENTS, NUM_SUBTAGS, NUM_TRANSITION_STATES,
    START, STOP,
};

use crate::embeddings::Pretrained;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncoderError {
    #[error("span [{a},{b}] is not a valid 1-based range for a sentence of length {len}")]
    IndexOutOfRange { a: usize, b: usize, len: usize },
    #[error("tag {tag} at position {position} has a partner window outside the sentence")]
    TagWindowOutOfBounds { position: usize, tag: String },
    #[error("encoder state does not belong to the current model parameters")]
    StaleTape,
    #[error("cannot encode an empty sentence")]
    EmptyInput,
    #[error("gradient table does not match the sentence lattice")]
    GradientShape,
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stamp {
    model: u64,
    version: u64,
}

/// Parameters, vocabulary and configuration of a trainable extractor.
#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    params: Params,
    stamp: Stamp,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::from_parts(self.config.clone(), self.vocab.clone(), self.params.clone())
    }
}

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

impl Mode<'_> {
    /// Inverted-dropout mask, or `None` when dropout is off.
    fn mask(&mut self, width: usize) -> Option<Vec<f64>> {
        match self {
            Mode::Train { dropout, rng } if *dropout > 0.0 => {
                let keep = 1.0 - *dropout;
                Some(
                    (0..width)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// Embedding rows for one sentence, after dropout.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub ids: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
struct Trace {
    embedded: Embedded,
    forward_steps: Vec<lstm::Step>,
    backward_steps: Vec<lstm::Step>,
    forward_masks: Option<Vec<Vec<f64>>>,
    backward_masks: Option<Vec<Vec<f64>>>,
}

/// Hidden states of one sentence plus what backpropagation needs.
#[derive(Debug, Clone)]
pub struct EncoderState {
    len: usize,
    hidden: usize,
    forward: Vec<f64>,
    backward: Vec<f64>,
    trace: Option<Trace>,
    stamp: Option<Stamp>,
}

impl EncoderState {
    /// Builds a state from explicit per-token hidden vectors (positions
    /// `1..=n`). Such a state has no trace and cannot be backpropagated.
    pub fn from_hidden(forward: &[Vec<f64>], backward: &[Vec<f64>]) -> Self {
        assert_eq!(forward.len(), backward.len());
        let len = forward.len();
        let hidden = forward.first().map_or(0, Vec::len);
        let mut state = EncoderState {
            len,
            hidden,
            forward: vec![0.0; (len + 2) * hidden],
            backward: vec![0.0; (len + 2) * hidden],
            trace: None,
            stamp: None,
        };
        for t in 1..=len {
            state.forward[t * hidden..(t + 1) * hidden].copy_from_slice(&forward[t - 1]);
            state.backward[t * hidden..(t + 1) * hidden].copy_from_slice(&backward[t - 1]);
        }
        state
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// Forward hidden state at `t` in `0..=n`; `t = 0` is the zero vector.
    pub fn fwd(&self, t: usize) -> &[f64] {
        &self.forward[t * self.hidden..(t + 1) * self.hidden]
    }

    /// Backward hidden state at `t` in `1..=n + 1`; `t = n + 1` is the zero vector.
    pub fn bwd(&self, t: usize) -> &[f64] {
        &self.backward[t * self.hidden..(t + 1) * self.hidden]
    }

    /// `h_t = [fwd_t; bwd_t]`.
    pub fn hidden(&self, t: usize) -> Vec<f64> {
        let mut h = self.fwd(t).to_vec();
        h.extend_from_slice(self.bwd(t));
        h
    }

    /// Span representation `[fwd_b - fwd_{a-1}; bwd_a - bwd_{b+1}]` for the
    /// 1-based inclusive span `[a, b]`.
    pub fn segment_repr(&self, a: usize, b: usize) -> Result<Vec<f64>, EncoderError> {
        if a < 1 || a > b || b > self.len {
            return Err(EncoderError::IndexOutOfRange { a, b, len: self.len });
        }
        let mut g = Vec::with_capacity(2 * self.hidden);
        g.extend(self.fwd(b).iter().zip(self.fwd(a - 1)).map(|(x, y)| x - y));
        g.extend(self.bwd(a).iter().zip(self.bwd(b + 1)).map(|(x, y)| x - y));
        Ok(g)
    }
}

impl Model {
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: Params) -> Self {
        Model {
            config,
            vocab,
            params,
            stamp: Stamp {
                model: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
                version: 0,
            },
        }
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig, vocab: Vocabulary) -> Self {
        let params = Params::zeros(&config, vocab.len());
        Self::from_parts(config, vocab, params)
    }

    pub fn random<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocabulary, rng: &mut R) -> Self {
        let params = Params::random(&config, vocab.len(), rng);
        Self::from_parts(config, vocab, params)
    }

    /// Random initialization, then every vocabulary row found in `pretrained`
    /// is overwritten with the pretrained vector.
    pub fn with_pretrained<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        pretrained: &Pretrained,
        rng: &mut R,
    ) -> Self {
        let mut model = Self::random(config, vocab, rng);
        for (id, token) in model.vocab.tokens().iter().enumerate() {
            if let Some(row) = pretrained.get(token) {
                model.params.embeddings.row_mut(id).copy_from_slice(row);
            }
        }
        model
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access; invalidates every encoder state computed so far.
    pub fn params_mut(&mut self) -> &mut Params {
        self.stamp.version += 1;
        &mut self.params
    }

    /// Zero-valued gradient buffer with this model's shapes.
    pub fn zero_grads(&self) -> Params {
        Params::zeros(&self.config, self.vocab.len())
    }

    pub fn token_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t.as_ref())).collect()
    }

    /// Looks up embedding rows; out-of-vocabulary tokens read the unknown row.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S], mode: &mut Mode<'_>) -> Embedded {
        self.embed_ids(self.token_ids(tokens), mode)
    }

    pub fn embed_ids(&self, ids: Vec<usize>, mode: &mut Mode<'_>) -> Embedded {
        let dim = self.config.embed_dim;
        let mut rows: Vec<Vec<f64>> = ids.iter().map(|&id| self.params.embeddings.row(id).to_vec()).collect();
        let masks = match mode {
            Mode::Eval => None,
            _ => {
                let masks: Option<Vec<Vec<f64>>> = rows.iter().map(|_| mode.mask(dim)).collect();
                if let Some(ms) = &masks {
                    for (row, m) in rows.iter_mut().zip(ms) {
                        row.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
                    }
                }
                masks
            }
        };
        Embedded { ids, rows, masks }
    }

    /// Runs both recurrent directions over the embedded sentence.
    pub fn run_encoder(&self, embedded: Embedded, mode: &mut Mode<'_>) -> Result<EncoderState, EncoderError> {
        let n = embedded.rows.len();
        if n == 0 {
            return Err(EncoderError::EmptyInput);
        }
        let h = self.config.hidden_dim;
        let inputs: Vec<&[f64]> = embedded.rows.iter().map(Vec::as_slice).collect();
        let reversed: Vec<&[f64]> = inputs.iter().rev().copied().collect();
        let forward_steps = lstm::run(&self.params.lstm_forward, &inputs);
        let backward_steps = lstm::run(&self.params.lstm_backward, &reversed);

        let forward_masks: Option<Vec<Vec<f64>>> = (0..n).map(|_| mode.mask(h)).collect();
        let backward_masks: Option<Vec<Vec<f64>>> = (0..n).map(|_| mode.mask(h)).collect();

        let mut forward = vec![0.0; (n + 2) * h];
        let mut backward = vec![0.0; (n + 2) * h];
        for t in 1..=n {
            let out = &mut forward[t * h..(t + 1) * h];
            out.copy_from_slice(&forward_steps[t - 1].h);
            if let Some(ms) = &forward_masks {
                out.iter_mut().zip(&ms[t - 1]).for_each(|(x, k)| *x *= k);
            }
            // backward direction visited position t at step n - t
            let out = &mut backward[t * h..(t + 1) * h];
            out.copy_from_slice(&backward_steps[n - t].h);
            if let Some(ms) = &backward_masks {
                out.iter_mut().zip(&ms[t - 1]).for_each(|(x, k)| *x *= k);
            }
        }
        drop(inputs);
        drop(reversed);
        Ok(EncoderState {
            len: n,
            hidden: h,
            forward,
            backward,
            trace: Some(Trace {
                embedded,
                forward_steps,
                backward_steps,
                forward_masks,
                backward_masks,
            }),
            stamp: Some(self.stamp),
        })
    }

    /// `embed` followed by `run_encoder`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], mode: &mut Mode<'_>) -> Result<EncoderState, EncoderError> {
        let embedded = self.embed(tokens, mode);
        self.run_encoder(embedded, mode)
    }

    /// Backpropagates `d_emissions` (loss gradient per lattice cell, same
    /// layout as [`Emissions::scores`]) through the heads and the encoder,
    /// adding into `grads`. Transition gradients are not touched here.
    pub fn backward(&self, state: &EncoderState, d_emissions: &[Vec<f64>], grads: &mut Params) -> Result<(), EncoderError> {
        let trace = match (&state.trace, state.stamp) {
            (Some(trace), Some(stamp)) if stamp == self.stamp => trace,
            _ => return Err(EncoderError::StaleTape),
        };
        let n = state.len;
        let h = state.hidden;
        let (d_fwd, d_bwd) = heads::backward(self, state, d_emissions, grads)?;

        // undo output dropout; reorder to each direction's processing order
        let mut dh_forward: Vec<Vec<f64>> = (1..=n).map(|t| d_fwd[t * h..(t + 1) * h].to_vec()).collect();
        let mut dh_backward: Vec<Vec<f64>> = (1..=n).rev().map(|t| d_bwd[t * h..(t + 1) * h].to_vec()).collect();
        if let Some(ms) = &trace.forward_masks {
            for (d, m) in dh_forward.iter_mut().zip(ms) {
                d.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
            }
        }
        if let Some(ms) = &trace.backward_masks {
            for (step, d) in dh_backward.iter_mut().enumerate() {
                d.iter_mut().zip(&ms[n - 1 - step]).for_each(|(x, k)| *x *= k);
            }
        }

        let inputs: Vec<&[f64]> = trace.embedded.rows.iter().map(Vec::as_slice).collect();
        let reversed: Vec<&[f64]> = inputs.iter().rev().copied().collect();
        let mut d_inputs = vec![vec![0.0; self.config.embed_dim]; n];
        lstm::backward(
            &self.params.lstm_forward,
            &inputs,
            &trace.forward_steps,
            &dh_forward,
            &mut grads.lstm_forward,
            &mut d_inputs,
        );
        let mut d_reversed = vec![vec![0.0; self.config.embed_dim]; n];
        lstm::backward(
            &self.params.lstm_backward,
            &reversed,
            &trace.backward_steps,
            &dh_backward,
            &mut grads.lstm_backward,
            &mut d_reversed,
        );
        for (t, d) in d_reversed.into_iter().enumerate() {
            d_inputs[n - 1 - t].iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }

        for (t, (id, d)) in trace.embedded.ids.iter().zip(d_inputs).enumerate() {
            let row = grads.embeddings.row_mut(*id);
            match &trace.embedded.masks {
                Some(ms) => row.iter_mut().zip(d.iter().zip(&ms[t])).for_each(|(g, (x, k))| *g += x * k),
                None => row.iter_mut().zip(&d).for_each(|(g, x)| *g += x),
            }
        }
        Ok(())
    }
}
