//! Sequence scoring, the forward algorithm, Viterbi decoding and the
//! negative log-likelihood gradient over position-aware tag lattices.
//!
//! Transitions only see sub-tags, so every recursion first pools the previous
//! column by sub-tag (five values) and then fans out to the current column.
//! A lattice column therefore costs time linear in its width.

use thiserror::Error;

use crate::encoder::{EncoderError, EncoderState, Emissions, Model, NUM_SUBTAGS, NUM_TRANSITION_STATES, START, STOP};
use crate::tagging::{self, can_follow, CodecError, SubTag, Tag, TagSequence, TagSet, Triplet};
use crate::tensor::{log_sum_exp, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrfError {
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

pub type Transitions = [[f64; NUM_TRANSITION_STATES]; NUM_TRANSITION_STATES];

/// Whether the transition `from -> to` (indices over B, I, O, E, S, START,
/// STOP) is legal under the BIOES automaton.
pub fn transition_allowed(from: usize, to: usize) -> bool {
    let decode = |i: usize| if i < NUM_SUBTAGS { Some(SubTag::ALL[i]) } else { None };
    if from == STOP || to == START {
        return false;
    }
    can_follow(decode(from), decode(to))
}

/// Transition scores as used by inference: raw parameters, with illegal
/// moves pinned to `-inf` when the structural mask is on.
pub fn effective_transitions(model: &Model) -> Transitions {
    let raw = &model.params().transitions;
    let mut out = [[0.0; NUM_TRANSITION_STATES]; NUM_TRANSITION_STATES];
    for (from, row) in out.iter_mut().enumerate() {
        for (to, cell) in row.iter_mut().enumerate() {
            *cell = if model.config.structural_mask && !transition_allowed(from, to) {
                f64::NEG_INFINITY
            } else {
                raw.get(from, to)
            };
        }
    }
    out
}

#[inline]
fn sub_index(set: &TagSet, idx: usize) -> usize {
    set.sub_tag_at(idx).index()
}

/// Lattice-cell indices of a sequence, checking it belongs to the model's
/// output space.
pub fn sequence_indices(model: &Model, n: usize, seq: &TagSequence) -> Result<Vec<usize>, CrfError> {
    if seq.len() != n {
        return Err(CrfError::InvalidSequence(format!(
            "sequence has {} tags for a sentence of {n} tokens",
            seq.len()
        )));
    }
    if model.config.structural_mask {
        seq.validate()?;
    }
    seq.tags
        .iter()
        .enumerate()
        .map(|(i, tag)| {
            TagSet::new(n, i, model.config.max_offset).index_of(tag).ok_or_else(|| {
                CrfError::InvalidSequence(format!("tag {tag} is not admissible at position {i}"))
            })
        })
        .collect()
}

/// Score of a path through precomputed emissions.
pub fn path_score(em: &Emissions, trans: &Transitions, path: &[usize]) -> f64 {
    let mut prev = START;
    let mut score = 0.0;
    for (i, &idx) in path.iter().enumerate() {
        let sub = sub_index(&em.sets[i], idx);
        score = if i == 0 {
            trans[prev][sub] + em.scores[i][idx]
        } else {
            score + trans[prev][sub] + em.scores[i][idx]
        };
        prev = sub;
    }
    score + trans[prev][STOP]
}

/// Transition plus factor scores of `seq`, with every factor score computed
/// directly from span representations.
pub fn sequence_score(model: &Model, state: &EncoderState, seq: &TagSequence) -> Result<f64, CrfError> {
    sequence_indices(model, state.len(), seq)?;
    let trans = effective_transitions(model);
    let mut prev = START;
    let mut score = 0.0;
    for (i, tag) in seq.tags.iter().enumerate() {
        let sub = tag.sub_tag().index();
        let phi = model.factor_score(state, i, tag)?;
        score = if i == 0 { trans[prev][sub] + phi } else { score + trans[prev][sub] + phi };
        prev = sub;
    }
    Ok(score + trans[prev][STOP])
}

/// Forward recursion. `alpha[i][v]` is the log-sum over all prefixes ending in
/// tag `v` at position `i`.
pub struct ForwardPass {
    pub alpha: Vec<Vec<f64>>,
    /// `alpha` pooled by sub-tag, per position.
    pub pooled: Vec<[f64; NUM_SUBTAGS]>,
    pub log_z: f64,
}

fn pool_by_subtag(set: &TagSet, column: &[f64]) -> [f64; NUM_SUBTAGS] {
    let mut groups: [Vec<f64>; NUM_SUBTAGS] = Default::default();
    for (idx, &v) in column.iter().enumerate() {
        groups[sub_index(set, idx)].push(v);
    }
    let mut out = [f64::NEG_INFINITY; NUM_SUBTAGS];
    for (o, g) in out.iter_mut().zip(&groups) {
        *o = log_sum_exp(g);
    }
    out
}

pub fn forward(em: &Emissions, trans: &Transitions) -> ForwardPass {
    let n = em.len();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pooled: Vec<[f64; NUM_SUBTAGS]> = Vec::with_capacity(n);
    for i in 0..n {
        let set = &em.sets[i];
        let incoming: [f64; NUM_SUBTAGS] = if i == 0 {
            std::array::from_fn(|t| trans[START][t])
        } else {
            let prev = &pooled[i - 1];
            std::array::from_fn(|t| {
                let terms: Vec<f64> = (0..NUM_SUBTAGS).map(|s| prev[s] + trans[s][t]).collect();
                log_sum_exp(&terms)
            })
        };
        let column: Vec<f64> = em.scores[i]
            .iter()
            .enumerate()
            .map(|(idx, phi)| incoming[sub_index(set, idx)] + phi)
            .collect();
        pooled.push(pool_by_subtag(set, &column));
        alpha.push(column);
    }
    let log_z = match pooled.last() {
        Some(last) => {
            let terms: Vec<f64> = (0..NUM_SUBTAGS).map(|s| last[s] + trans[s][STOP]).collect();
            log_sum_exp(&terms)
        }
        None => 0.0,
    };
    ForwardPass { alpha, pooled, log_z }
}

/// Log-partition over all sequences in the model's output space.
pub fn log_partition(model: &Model, state: &EncoderState) -> f64 {
    let em = model.emissions(state);
    forward(&em, &effective_transitions(model)).log_z
}

/// MAP path through the lattice and its score. Ties resolve to the tag that
/// comes first in canonical order, both at the final column and at every
/// backpointer.
pub fn viterbi_path(em: &Emissions, trans: &Transitions) -> (Vec<usize>, f64) {
    let n = em.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut pi: Vec<f64> = em.scores[0]
        .iter()
        .enumerate()
        .map(|(idx, phi)| trans[START][sub_index(&em.sets[0], idx)] + phi)
        .collect();
    let mut backpointers: Vec<Vec<u32>> = Vec::with_capacity(n);
    backpointers.push(Vec::new());

    for i in 1..n {
        // best predecessor within each sub-tag group, first index wins
        let prev_set = &em.sets[i - 1];
        let mut best = [(f64::NEG_INFINITY, usize::MAX); NUM_SUBTAGS];
        for (idx, &v) in pi.iter().enumerate() {
            let slot = &mut best[sub_index(prev_set, idx)];
            if slot.1 == usize::MAX || v > slot.0 {
                *slot = (v, idx);
            }
        }
        let incoming: [(f64, usize); NUM_SUBTAGS] = std::array::from_fn(|t| {
            let mut pick = (f64::NEG_INFINITY, usize::MAX);
            for (s, &(v, idx)) in best.iter().enumerate() {
                if idx == usize::MAX {
                    continue;
                }
                let cand = v + trans[s][t];
                if pick.1 == usize::MAX || cand > pick.0 || (cand == pick.0 && idx < pick.1) {
                    pick = (cand, idx);
                }
            }
            pick
        });
        let set = &em.sets[i];
        let mut column = Vec::with_capacity(set.len());
        let mut bp = Vec::with_capacity(set.len());
        for (idx, phi) in em.scores[i].iter().enumerate() {
            let (v, from) = incoming[sub_index(set, idx)];
            column.push(v + phi);
            bp.push(from as u32);
        }
        pi = column;
        backpointers.push(bp);
    }

    let last_set = &em.sets[n - 1];
    let mut end = (f64::NEG_INFINITY, usize::MAX);
    for (idx, &v) in pi.iter().enumerate() {
        let cand = v + trans[sub_index(last_set, idx)][STOP];
        if end.1 == usize::MAX || cand > end.0 {
            end = (cand, idx);
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = end.1;
    for i in (1..n).rev() {
        path[i - 1] = backpointers[i][path[i]] as usize;
    }
    (path, end.0)
}

pub fn path_to_sequence(model: &Model, em: &Emissions, path: &[usize]) -> TagSequence {
    let tags: Vec<Tag> = path.iter().zip(&em.sets).map(|(&idx, set)| set.get(idx)).collect();
    TagSequence::new(tags, model.config.scheme, model.config.max_offset)
}

/// Highest-scoring tag sequence and its score.
pub fn viterbi(model: &Model, state: &EncoderState) -> (TagSequence, f64) {
    let em = model.emissions(state);
    let (path, score) = viterbi_path(&em, &effective_transitions(model));
    (path_to_sequence(model, &em, &path), score)
}

/// `log p(seq | x)`; never positive.
pub fn log_prob(model: &Model, state: &EncoderState, seq: &TagSequence) -> Result<f64, CrfError> {
    let score = sequence_score(model, state, seq)?;
    Ok((score - log_partition(model, state)).min(0.0))
}

/// Gradients of `-log p(gold | x)` with respect to the lattice cells and the
/// raw transition parameters.
pub struct NllGradient {
    pub loss: f64,
    pub d_emissions: Vec<Vec<f64>>,
    pub d_transitions: Tensor,
}

pub fn nll_gradient(em: &Emissions, trans: &Transitions, gold: &[usize]) -> NllGradient {
    let n = em.len();
    let fwd = forward(em, trans);
    let log_z = fwd.log_z;
    let gold_score = path_score(em, trans, gold);

    // beta depends on the sub-tag only; emit[i][t] pools factor scores by sub-tag
    let emit: Vec<[f64; NUM_SUBTAGS]> = (0..n).map(|i| pool_by_subtag(&em.sets[i], &em.scores[i])).collect();
    let mut beta = vec![[f64::NEG_INFINITY; NUM_SUBTAGS]; n];
    if n > 0 {
        beta[n - 1] = std::array::from_fn(|s| trans[s][STOP]);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        beta[i] = std::array::from_fn(|s| {
            let terms: Vec<f64> = (0..NUM_SUBTAGS).map(|t| trans[s][t] + emit[i + 1][t] + beta[i + 1][t]).collect();
            log_sum_exp(&terms)
        });
    }

    let mut d_emissions: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let set = &em.sets[i];
        let row = fwd.alpha[i]
            .iter()
            .enumerate()
            .map(|(idx, a)| (a + beta[i][sub_index(set, idx)] - log_z).exp())
            .collect();
        d_emissions.push(row);
    }

    let mut d_transitions = Tensor::zeros(NUM_TRANSITION_STATES, NUM_TRANSITION_STATES);
    let mut expect = |from: usize, to: usize, log_weight: f64| {
        let w = (log_weight - log_z).exp();
        if w.is_finite() && w != 0.0 {
            d_transitions.data[from * NUM_TRANSITION_STATES + to] += w;
        }
    };
    if n > 0 {
        for t in 0..NUM_SUBTAGS {
            expect(START, t, trans[START][t] + emit[0][t] + beta[0][t]);
        }
        for i in 0..n - 1 {
            for s in 0..NUM_SUBTAGS {
                for t in 0..NUM_SUBTAGS {
                    expect(s, t, fwd.pooled[i][s] + trans[s][t] + emit[i + 1][t] + beta[i + 1][t]);
                }
            }
        }
        for s in 0..NUM_SUBTAGS {
            expect(s, STOP, fwd.pooled[n - 1][s] + trans[s][STOP]);
        }
    }

    // subtract the gold path's indicator counts
    let mut prev = START;
    for (i, &idx) in gold.iter().enumerate() {
        d_emissions[i][idx] -= 1.0;
        let sub = sub_index(&em.sets[i], idx);
        d_transitions.data[prev * NUM_TRANSITION_STATES + sub] -= 1.0;
        prev = sub;
    }
    if n > 0 {
        d_transitions.data[prev * NUM_TRANSITION_STATES + STOP] -= 1.0;
    }

    NllGradient {
        loss: (log_z - gold_score).max(0.0),
        d_emissions,
        d_transitions,
    }
}

/// MAP decoding followed by tag-sequence decoding.
pub fn predict<S: AsRef<str>>(model: &Model, tokens: &[S]) -> Result<Vec<Triplet>, CrfError> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let state = model.encode(tokens, &mut crate::encoder::Mode::Eval)?;
    let (seq, _) = viterbi(model, &state);
    Ok(tagging::decode(&seq)?)
}
