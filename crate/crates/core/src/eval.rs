//! Triplet-level evaluation: exact and partial matching, per-length
//! breakdowns, and the two-scheme ensemble merge.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagging::{Span, Triplet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    SentenceCountMismatch { gold: usize, pred: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchMode {
    /// Target, opinion and sentiment all exact.
    Exact,
    /// Target boundary only has to overlap.
    PartialTarget,
    /// Opinion boundary only has to overlap.
    PartialOpinion,
}

impl MatchMode {
    pub const ALL: [MatchMode; 3] = [MatchMode::Exact, MatchMode::PartialTarget, MatchMode::PartialOpinion];

    pub fn matches(self, gold: &Triplet, pred: &Triplet) -> bool {
        if gold.sentiment != pred.sentiment {
            return false;
        }
        match self {
            MatchMode::Exact => gold.target == pred.target && gold.opinion == pred.opinion,
            MatchMode::PartialTarget => gold.opinion == pred.opinion && spans_overlap(&gold.target, &pred.target),
            MatchMode::PartialOpinion => gold.target == pred.target && spans_overlap(&gold.opinion, &pred.opinion),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::PartialTarget => "partial-target",
            MatchMode::PartialOpinion => "partial-opinion",
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "partial-target" => Ok(MatchMode::PartialTarget),
            "partial-opinion" => Ok(MatchMode::PartialOpinion),
            other => Err(format!("unknown match mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            matched,
            predicted,
            gold,
        }
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "precision={:.6}\nrecall={:.6}\nf1={:.6}\nmatched={}\npredicted={}\ngold={}\n",
            self.precision, self.recall, self.f1, self.matched, self.predicted, self.gold
        )
    }
}

pub fn spans_overlap(a: &Span, b: &Span) -> bool {
    a.start.max(b.start) <= a.end.min(b.end)
}

/// Two triplets overlap when their targets overlap and their opinion spans
/// overlap.
pub fn triplets_overlap(a: &Triplet, b: &Triplet) -> bool {
    spans_overlap(&a.target, &b.target) && spans_overlap(&a.opinion, &b.opinion)
}

fn canonical(ts: &[Triplet]) -> Vec<Triplet> {
    let mut v = ts.to_vec();
    v.sort();
    v
}

fn deduped(ts: &[Triplet]) -> Vec<Triplet> {
    let mut v = canonical(ts);
    v.dedup();
    v
}

/// Maximum one-to-one matching between predictions and gold triplets of one
/// sentence. Predictions are deduplicated; both sides are visited in
/// canonical order so the result is deterministic. Returns `(gold, pred)`
/// pairs indexing the canonically sorted inputs.
pub fn match_sentence(gold: &[Triplet], pred: &[Triplet], mode: MatchMode) -> Vec<(Triplet, Triplet)> {
    let gold = canonical(gold);
    let pred = deduped(pred);
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| (0..gold.len()).filter(|&g| mode.matches(&gold[g], p)).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; gold.len()];

    fn augment(p: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, owner, seen)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }

    for p in 0..pred.len() {
        let mut seen = vec![false; gold.len()];
        augment(p, &adj, &mut owner, &mut seen);
    }
    owner
        .iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| (gold[g], pred[p])))
        .collect()
}

fn check_lengths<A, B>(gold: &[A], pred: &[B]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    Ok(())
}

/// Corpus-level precision, recall and F1.
pub fn score(gold: &[Vec<Triplet>], pred: &[Vec<Triplet>], mode: MatchMode) -> Result<Prf, EvalError> {
    check_lengths(gold, pred)?;
    let (mut matched, mut predicted, mut total) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        matched += match_sentence(g, p, mode).len();
        predicted += deduped(p).len();
        total += g.len();
    }
    Ok(Prf::from_counts(matched, predicted, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Facet {
    TargetLen,
    OpinionLen,
    /// Distance between the first tokens of target and opinion span.
    OffsetLen,
}

impl Facet {
    pub fn length(self, t: &Triplet) -> usize {
        match self {
            Facet::TargetLen => t.target.len(),
            Facet::OpinionLen => t.opinion.len(),
            Facet::OffsetLen => t.opinion.start.abs_diff(t.target.start),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Facet::TargetLen => "target_len",
            Facet::OpinionLen => "opinion_len",
            Facet::OffsetLen => "offset_len",
        }
    }
}

impl FromStr for Facet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "target_len" | "target" => Ok(Facet::TargetLen),
            "opinion_len" | "opinion" => Ok(Facet::OpinionLen),
            "offset_len" | "offset" => Ok(Facet::OffsetLen),
            other => Err(format!("unknown facet {other:?}")),
        }
    }
}

/// Scores under `mode` bucketed by the facet's length. Gold triplets and
/// matches count toward the gold triplet's bucket, predictions toward their
/// own. Buckets with neither gold nor predicted triplets are absent.
pub fn length_breakdown(
    gold: &[Vec<Triplet>],
    pred: &[Vec<Triplet>],
    mode: MatchMode,
    facet: Facet,
) -> Result<BTreeMap<usize, Prf>, EvalError> {
    check_lengths(gold, pred)?;
    let mut counts: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for t in g {
            counts.entry(facet.length(t)).or_default().2 += 1;
        }
        for t in deduped(p) {
            counts.entry(facet.length(&t)).or_default().1 += 1;
        }
        for (t, _) in match_sentence(g, p, mode) {
            counts.entry(facet.length(&t)).or_default().0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(len, (m, p, g))| (len, Prf::from_counts(m, p, g)))
        .collect())
}

/// Adds to each base prediction set every donor triplet that overlaps none
/// of the original base triplets.
pub fn ensemble_merge(base: &[Vec<Triplet>], donor: &[Vec<Triplet>]) -> Result<Vec<Vec<Triplet>>, EvalError> {
    check_lengths(base, donor)?;
    Ok(base
        .iter()
        .zip(donor)
        .map(|(b, d)| {
            let mut merged = deduped(b);
            let additions: Vec<Triplet> = deduped(d)
                .into_iter()
                .filter(|x| b.iter().all(|y| !triplets_overlap(x, y)))
                .collect();
            merged.extend(additions);
            merged.sort();
            merged.dedup();
            merged
        })
        .collect())
}

/// Aligned plain-text table of named scores.
pub fn render_table(rows: &[(String, Prf)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}  {:>9}  {:>6}\n",
        "name", "precision", "recall", "f1", "matched", "predicted", "gold"
    );
    for (name, p) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}  {:>9}  {:>6}",
            name, p.precision, p.recall, p.f1, p.matched, p.predicted, p.gold
        );
    }
    out
}

/// CSV with one row per length bucket.
pub fn breakdown_csv(facet: Facet, buckets: &BTreeMap<usize, Prf>) -> String {
    let mut out = format!("{},precision,recall,f1,matched,predicted,gold\n", facet.name());
    for (len, p) in buckets {
        let _ = writeln!(
            out,
            "{len},{:.6},{:.6},{:.6},{},{},{}",
            p.precision, p.recall, p.f1, p.matched, p.predicted, p.gold
        );
    }
    out
}
