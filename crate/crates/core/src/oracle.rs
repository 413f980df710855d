//! Brute-force reference for the lattice algorithms: walks every sequence in
//! the output space depth-first and scores it term by term.
//!
//! Nothing here goes through the lattice code: factor scores come from
//! [`Model::factor_score`], legality from the BIOES automaton in
//! [`crate::tagging`], and transitions straight from the raw parameters.

use thiserror::Error;

use crate::encoder::{EncoderError, EncoderState, Model, START, STOP};
use crate::tagging::{can_follow, SubTag, TagSequence, TagSet};
use crate::tensor::LogSumExp;

pub const DEFAULT_CAP: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("{count} sequences exceed the enumeration cap of {cap}")]
    TooManySequences { count: u128, cap: u64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Number of sequences in the output space, by path counting over sub-tags.
pub fn count_sequences(len: usize, max_offset: usize, structural_mask: bool) -> u128 {
    if len == 0 {
        return 0;
    }
    let per_sub = |i: usize| -> [u128; 5] {
        let set = TagSet::new(len, i, max_offset);
        let p = set.pairs().len() as u128;
        // B, I, O, E, S
        [3 * p, 1, 1, 1, 3 * p]
    };
    if !structural_mask {
        return (0..len).map(|i| per_sub(i).iter().sum::<u128>()).product();
    }
    let mut paths = [0u128; 5];
    let first = per_sub(0);
    for s in SubTag::ALL {
        if can_follow(None, Some(s)) {
            paths[s.index()] = first[s.index()];
        }
    }
    for i in 1..len {
        let counts = per_sub(i);
        let mut next = [0u128; 5];
        for to in SubTag::ALL {
            let incoming: u128 = SubTag::ALL
                .iter()
                .filter(|from| can_follow(Some(**from), Some(to)))
                .map(|from| paths[from.index()])
                .sum();
            next[to.index()] = incoming.saturating_mul(counts[to.index()]);
        }
        paths = next;
    }
    SubTag::ALL
        .iter()
        .filter(|s| can_follow(Some(**s), None))
        .map(|s| paths[s.index()])
        .sum()
}

/// Raw transition score, or `None` when the move is outside the output space.
fn transition(model: &Model, from: Option<SubTag>, to: Option<SubTag>) -> Option<f64> {
    if model.config.structural_mask && !can_follow(from, to) {
        return None;
    }
    let row = from.map_or(START, SubTag::index);
    let col = to.map_or(STOP, SubTag::index);
    Some(model.params().transitions.get(row, col))
}

/// Calls `visit` with the tag-set indices and score of every sequence.
/// Returns the number of sequences visited.
pub fn oracle_for_each<F>(model: &Model, state: &EncoderState, cap: u64, mut visit: F) -> Result<u64, OracleError>
where
    F: FnMut(&[usize], f64),
{
    let n = state.len();
    let m = model.config.max_offset;
    let count = count_sequences(n, m, model.config.structural_mask);
    if count > cap as u128 {
        return Err(OracleError::TooManySequences { count, cap });
    }
    if n == 0 {
        return Ok(0);
    }
    let sets: Vec<TagSet> = (0..n).map(|i| TagSet::new(n, i, m)).collect();
    let mut table: Vec<Vec<(SubTag, f64)>> = Vec::with_capacity(n);
    for (i, set) in sets.iter().enumerate() {
        let row = set
            .iter()
            .map(|tag| Ok((tag.sub_tag(), model.factor_score(state, i, &tag)?)))
            .collect::<Result<Vec<_>, EncoderError>>()?;
        table.push(row);
    }

    let mut path = Vec::with_capacity(n);
    let mut visited = 0u64;
    walk(model, &table, None, 0.0, &mut path, &mut |p: &[usize], s| {
        visited += 1;
        visit(p, s)
    });
    Ok(visited)
}

fn walk<F: FnMut(&[usize], f64)>(
    model: &Model,
    table: &[Vec<(SubTag, f64)>],
    prev: Option<SubTag>,
    score: f64,
    path: &mut Vec<usize>,
    visit: &mut F,
) {
    let i = path.len();
    if i == table.len() {
        if let Some(stop) = transition(model, prev, None) {
            visit(path, score + stop);
        }
        return;
    }
    for (idx, &(sub, phi)) in table[i].iter().enumerate() {
        let Some(psi) = transition(model, prev, Some(sub)) else {
            continue;
        };
        let next = if i == 0 { psi + phi } else { score + psi + phi };
        path.push(idx);
        walk(model, table, Some(sub), next, path, visit);
        path.pop();
    }
}

/// Every sequence in the output space with its score.
pub fn oracle_enumerate(model: &Model, state: &EncoderState, cap: u64) -> Result<Vec<(TagSequence, f64)>, OracleError> {
    let n = state.len();
    let m = model.config.max_offset;
    let sets: Vec<TagSet> = (0..n).map(|i| TagSet::new(n, i, m)).collect();
    let mut out = Vec::new();
    oracle_for_each(model, state, cap, |path, score| {
        let tags = path.iter().zip(&sets).map(|(&idx, set)| set.get(idx)).collect();
        out.push((TagSequence::new(tags, model.config.scheme, m), score));
    })?;
    Ok(out)
}

/// Aggregates of a full enumeration.
#[derive(Debug, Clone)]
pub struct OracleSummary {
    pub count: u64,
    pub max_score: f64,
    /// Tag-set indices of the best sequence. Among equal scores the winner is
    /// the one whose last tag comes first in canonical order, then the
    /// second-to-last, and so on: what first-wins backtracking produces.
    pub argmax: Vec<usize>,
    pub log_z: f64,
}

pub fn oracle_summary(model: &Model, state: &EncoderState, cap: u64) -> Result<OracleSummary, OracleError> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut lse = LogSumExp::default();
    let count = oracle_for_each(model, state, cap, |path, score| {
        lse.push(score);
        let replace = match &best {
            None => true,
            Some((b, bp)) => score > *b || (score == *b && path.iter().rev().lt(bp.iter().rev())),
        };
        if replace {
            best = Some((score, path.to_vec()));
        }
    })?;
    let (max_score, argmax) = best.unwrap_or((f64::NEG_INFINITY, Vec::new()));
    Ok(OracleSummary {
        count,
        max_score,
        argmax,
        log_z: lse.value(),
    })
}
