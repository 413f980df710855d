//! Negative log-likelihood training with Adam, instance filtering and
//! best-dev model selection.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{self, CrfError};
use crate::embeddings::Pretrained;
use crate::encoder::{EncoderError, Mode, Model, ModelConfig, Params, Vocabulary};
use crate::eval::{self, MatchMode, Prf};
use crate::io::CorpusRecord;
use crate::tagging::{self, CodecError, Scheme, TagSequence, Triplet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no training instance survives filtering")]
    NoTrainableInstances,
    #[error("the development set is empty")]
    EmptyDevSet,
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Every knob of a training run. Field names double as configuration file
/// keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub max_offset: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout: f64,
    pub seed: u64,
    pub use_offset_features: bool,
    pub use_opinion_features: bool,
    pub structural_mask: bool,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub offset_dim: usize,
    pub freeze_embeddings: bool,
    /// Global gradient-norm clip; off when absent.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            scheme: model.scheme,
            max_offset: model.max_offset,
            epochs: 20,
            batch_size: 1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout: 0.5,
            seed: 42,
            use_offset_features: model.use_offset_features,
            use_opinion_features: model.use_opinion_features,
            structural_mask: model.structural_mask,
            embed_dim: model.embed_dim,
            hidden_dim: model.hidden_dim,
            offset_dim: model.offset_dim,
            freeze_embeddings: false,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return fail("Adam needs betas in [0, 1) and a positive eps");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.offset_dim == 0 {
            return fail("dimensions must be positive");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return fail("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            offset_dim: self.offset_dim,
            max_offset: self.max_offset,
            scheme: self.scheme,
            use_offset_features: self.use_offset_features,
            use_opinion_features: self.use_opinion_features,
            structural_mask: self.structural_mask,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(config: &TrainConfig, model: &Model) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            steps: 0,
            m: model.zero_grads(),
            v: model.zero_grads(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                if lr != 0.0 {
                    let m_hat = m.data[i] / c1;
                    let v_hat = v.data[i] / c2;
                    p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// A sentence with its gold tag sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub triplets: Vec<Triplet>,
    pub gold: TagSequence,
}

/// What filtering removed, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    pub kept: usize,
    pub offset_too_large: usize,
    pub overlapping_primary: usize,
    pub multiple_secondary: usize,
    pub other: usize,
    /// 1-based sentence numbers of dropped records.
    pub dropped: Vec<usize>,
}

impl DropReport {
    pub fn total_dropped(&self) -> usize {
        self.offset_too_large + self.overlapping_primary + self.multiple_secondary + self.other
    }
}

impl fmt::Display for DropReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kept {} dropped {} (offset {}, overlapping {}, multiple partners {}, other {})",
            self.kept,
            self.total_dropped(),
            self.offset_too_large,
            self.overlapping_primary,
            self.multiple_secondary,
            self.other
        )
    }
}

/// Keeps the sentences whose triplets encode under `scheme` with offset bound
/// `max_offset` (`None`: unbounded).
pub fn filter_instances(records: &[CorpusRecord], scheme: Scheme, max_offset: Option<usize>) -> (Vec<Instance>, DropReport) {
    let mut kept = Vec::new();
    let mut report = DropReport::default();
    for (i, r) in records.iter().enumerate() {
        let bound = max_offset.unwrap_or(r.tokens.len());
        match tagging::encode(r.tokens.len(), &r.triplets, scheme, bound) {
            Ok(gold) => {
                let mut triplets = r.triplets.clone();
                triplets.sort();
                triplets.dedup();
                kept.push(Instance {
                    tokens: r.tokens.clone(),
                    triplets,
                    gold,
                });
            }
            Err(e) => {
                match e {
                    CodecError::OffsetExceedsM { .. } => report.offset_too_large += 1,
                    CodecError::OverlappingPrimarySpans(..) => report.overlapping_primary += 1,
                    CodecError::MultipleSecondarySpans(..) => report.multiple_secondary += 1,
                    _ => report.other += 1,
                }
                report.dropped.push(i + 1);
            }
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// `-log p(gold | x)` for one instance and its gradient. Dropout applies
/// when `mode` is training mode.
pub fn loss_and_gradient(model: &Model, instance: &Instance, mode: &mut Mode<'_>) -> Result<(f64, Params), TrainError> {
    let state = model.encode(&instance.tokens, mode)?;
    let em = model.emissions(&state);
    let gold = crf::sequence_indices(model, instance.tokens.len(), &instance.gold)?;
    let trans = crf::effective_transitions(model);
    let g = crf::nll_gradient(&em, &trans, &gold);
    let mut grads = model.zero_grads();
    model.backward(&state, &g.d_emissions, &mut grads)?;
    grads.transitions.add_assign(&g.d_transitions);
    Ok((g.loss, grads))
}

/// Summed negative log-likelihood of the batch, without dropout.
pub fn nll_loss(model: &Model, batch: &[Instance]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for inst in batch {
        let state = model.encode(&inst.tokens, &mut Mode::Eval)?;
        total -= crf::log_prob(model, &state, &inst.gold)?;
    }
    Ok(total)
}

/// Decodes every sentence, in parallel.
pub fn predict_all(model: &Model, sentences: &[Vec<String>]) -> Result<Vec<Vec<Triplet>>, CrfError> {
    sentences.par_iter().map(|tokens| crf::predict(model, tokens)).collect()
}

/// Exact-match scores of the model's predictions against `records`.
pub fn evaluate(model: &Model, records: &[CorpusRecord]) -> Result<Prf, TrainError> {
    let sentences: Vec<Vec<String>> = records.iter().map(|r| r.tokens.clone()).collect();
    let predictions = predict_all(model, &sentences)?;
    let gold: Vec<Vec<Triplet>> = records.iter().map(|r| r.triplets.clone()).collect();
    Ok(eval::score(&gold, &predictions, MatchMode::Exact).expect("one prediction per sentence"))
}

/// Vocabulary over the given sentences, in first-seen order.
pub fn build_vocab<'a, I>(records: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    let mut vocab = Vocabulary::new();
    for r in records {
        for t in &r.tokens {
            vocab.insert(t);
        }
    }
    vocab
}

/// Fresh model for `config`: training-set vocabulary plus any pretrained
/// token that occurs in `extra` (typically dev and test sentences), then
/// random initialization seeded from the config with pretrained rows copied
/// in.
pub fn init_model(
    config: &TrainConfig,
    train: &[CorpusRecord],
    extra: &[CorpusRecord],
    pretrained: Option<&Pretrained>,
) -> Result<Model, TrainError> {
    let model_config = config.model_config();
    if let Some(p) = pretrained {
        if p.dim() != model_config.embed_dim {
            return Err(TrainError::InvalidConfig(format!(
                "pretrained vectors have {} dimensions but embed_dim is {}",
                p.dim(),
                model_config.embed_dim
            )));
        }
    }
    let mut vocab = build_vocab(train);
    if let Some(p) = pretrained {
        let extra_tokens: BTreeSet<&str> = extra.iter().flat_map(|r| r.tokens.iter().map(String::as_str)).collect();
        for t in extra_tokens {
            if p.get(t).is_some() {
                vocab.insert(t);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(match pretrained {
        Some(p) => Model::with_pretrained(model_config, vocab, p, &mut rng),
        None => Model::random(model_config, vocab, &mut rng),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Prf,
}

/// Result of a run: the best-dev parameters and the full history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub history: Vec<EpochReport>,
    pub drops: DropReport,
}

pub fn train(config: &TrainConfig, model: Model, train: &[CorpusRecord], dev: &[CorpusRecord]) -> Result<TrainOutcome, TrainError> {
    train_with_observer(config, model, train, dev, |_, _| ControlFlow::Continue(()))
}

/// Like [`train`], calling `observer` after every epoch with the report and
/// the current (not the best) model. Returning `Break` ends training early;
/// the best-dev model so far is still returned.
pub fn train_with_observer<F>(
    config: &TrainConfig,
    mut model: Model,
    train: &[CorpusRecord],
    dev: &[CorpusRecord],
    mut observer: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochReport, &Model) -> ControlFlow<()>,
{
    config.validate()?;
    let (instances, drops) = filter_instances(train, config.scheme, Some(config.max_offset));
    if instances.is_empty() {
        return Err(TrainError::NoTrainableInstances);
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDevSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config, &model);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut best: Option<(usize, f64, Params)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let mut mode = Mode::Train {
                    dropout: config.dropout,
                    rng: &mut rng,
                };
                let (loss, g) = loss_and_gradient(&model, &instances[i], &mut mode)?;
                epoch_loss += loss;
                grads.add_assign(&g);
            }
            if config.freeze_embeddings {
                grads.embeddings.fill(0.0);
            }
            if let Some(clip) = config.clip_norm {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adam.step(model.params_mut(), &grads);
        }

        let report = EpochReport {
            epoch,
            train_loss: epoch_loss,
            dev: evaluate(&model, dev)?,
        };
        if best.as_ref().is_none_or(|(_, f1, _)| report.dev.f1 > *f1) {
            best = Some((epoch, report.dev.f1, model.params().clone()));
        }
        let flow = observer(&report, &model);
        history.push(report);
        if flow.is_break() {
            break;
        }
    }

    let (best_epoch, best_dev_f1, params) = best.expect("at least one epoch ran");
    let best_model = Model::from_parts(model.config.clone(), model.vocab.clone(), params);
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_dev_f1,
        history,
        drops,
    })
}
