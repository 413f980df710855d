//! Factor scores.
//!
//! [`Model::factor_score`] evaluates one tag directly from span vectors. The
//! lattice path ([`Model::emissions`]) never builds span vectors: every head is
//! linear, so each head is applied once per hidden state and a span's score is
//! read off as a difference of those projections. That keeps a lattice cell at
//! constant cost.

use super::params::{Params, NUM_SENTIMENTS, NUM_SUBTAGS};
use super::{EncoderError, EncoderState, Model};
use crate::tagging::{Tag, TagSet};
use crate::tensor::dot;

/// Per-position tag sets and the factor score of every tag in them.
#[derive(Debug, Clone)]
pub struct Emissions {
    pub sets: Vec<TagSet>,
    pub scores: Vec<Vec<f64>>,
}

impl Emissions {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Total number of lattice cells.
    pub fn cells(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }
}

/// Head outputs for every hidden state, indexed by 1-based position.
struct Projections {
    token: Vec<[f64; NUM_SUBTAGS]>,
    /// Sentiment head on the forward half of `g`.
    sent_fwd: Vec<[f64; NUM_SENTIMENTS]>,
    /// Sentiment head on the backward half of `g`.
    sent_bwd: Vec<[f64; NUM_SENTIMENTS]>,
    /// Sentiment head on `bwd_i`, bias included.
    sent_local: Vec<[f64; NUM_SENTIMENTS]>,
    op_fwd: Vec<f64>,
    op_bwd: Vec<f64>,
    offset: Vec<f64>,
}

impl Projections {
    fn new(model: &Model, state: &EncoderState) -> Self {
        let p = &model.params;
        let h = state.hidden;
        let n = state.len;
        let mut token = vec![[0.0; NUM_SUBTAGS]; n + 2];
        let mut sent_fwd = vec![[0.0; NUM_SENTIMENTS]; n + 2];
        let mut sent_bwd = vec![[0.0; NUM_SENTIMENTS]; n + 2];
        let mut sent_local = vec![[0.0; NUM_SENTIMENTS]; n + 2];
        let mut op_fwd = vec![0.0; n + 2];
        let mut op_bwd = vec![0.0; n + 2];
        for t in 0..n + 2 {
            let f = state.fwd(t);
            let b = state.bwd(t);
            p.sentiment_w.matvec_cols(f, 0, &mut sent_fwd[t]);
            p.sentiment_w.matvec_cols(b, h, &mut sent_bwd[t]);
            op_fwd[t] = dot(&p.opinion_w.data[..h], f);
            op_bwd[t] = dot(&p.opinion_w.data[h..], b);
            if (1..=n).contains(&t) {
                token[t].copy_from_slice(&p.token_b.data);
                p.token_w.matvec_cols(f, 0, &mut token[t]);
                p.token_w.matvec_cols(b, h, &mut token[t]);
                sent_local[t].copy_from_slice(&p.sentiment_b.data);
                p.sentiment_w.matvec_cols(b, 2 * h, &mut sent_local[t]);
            }
        }
        let offset = (0..p.offset_table.rows)
            .map(|r| dot(&p.offset_w.data, p.offset_table.row(r)) + p.offset_b.data[0])
            .collect();
        Projections {
            token,
            sent_fwd,
            sent_bwd,
            sent_local,
            op_fwd,
            op_bwd,
            offset,
        }
    }
}

/// Gradients with respect to the projections, same layout.
struct ProjectionGrads {
    token: Vec<[f64; NUM_SUBTAGS]>,
    sent_fwd: Vec<[f64; NUM_SENTIMENTS]>,
    sent_bwd: Vec<[f64; NUM_SENTIMENTS]>,
    sent_local: Vec<[f64; NUM_SENTIMENTS]>,
    op_fwd: Vec<f64>,
    op_bwd: Vec<f64>,
    op_bias: f64,
    offset: Vec<f64>,
}

impl Model {
    /// Factor score of `tag` at 0-based `position`, computed directly from
    /// the hidden states and span representation.
    pub fn factor_score(&self, state: &EncoderState, position: usize, tag: &Tag) -> Result<f64, EncoderError> {
        let p = &self.params;
        let t = position + 1;
        let h = state.hidden(t);
        let mut token = p.token_b.data.clone();
        p.token_w.matvec(&h, &mut token);
        let mut score = token[tag.sub_tag().index()];

        if let Some(anchor) = tag.anchor() {
            let (start, end) = anchor.window(position);
            if start < 0 || end >= state.len as i64 || anchor.j > anchor.k {
                return Err(EncoderError::TagWindowOutOfBounds {
                    position,
                    tag: tag.to_string(),
                });
            }
            let g = state.segment_repr(start as usize + 1, end as usize + 1)?;
            let mut input = g.clone();
            input.extend_from_slice(state.bwd(t));
            let mut sentiment = p.sentiment_b.data.clone();
            p.sentiment_w.matvec(&input, &mut sentiment);
            score += sentiment[anchor.sentiment.code()];
            if self.config.use_opinion_features {
                score += dot(&p.opinion_w.data, &g) + p.opinion_b.data[0];
            }
            if self.config.use_offset_features {
                score += self.offset_score(anchor.j, anchor.k);
            }
        }
        Ok(score)
    }

    /// Offset factor: the affine map applied to the offset-table row of
    /// `min(j, k)`.
    pub fn offset_score(&self, j: i32, k: i32) -> f64 {
        let p = &self.params;
        let row = offset_row(j, k, self.config.max_offset);
        dot(&p.offset_w.data, p.offset_table.row(row)) + p.offset_b.data[0]
    }

    /// Factor scores of every admissible tag at every position.
    pub fn emissions(&self, state: &EncoderState) -> Emissions {
        let n = state.len;
        let m = self.config.max_offset;
        let proj = Projections::new(self, state);
        let use_opinion = self.config.use_opinion_features;
        let use_offset = self.config.use_offset_features;
        let op_bias = self.params.opinion_b.data[0];

        let mut sets = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for pos in 0..n {
            let set = TagSet::new(n, pos, m);
            let t = pos + 1;
            let tok = &proj.token[t];
            let mut row = Vec::with_capacity(set.len());
            row.extend([tok[1], tok[3], tok[2]]);
            for sub in [0usize, 4] {
                for e in 0..NUM_SENTIMENTS {
                    for &(j, k) in set.pairs() {
                        let a = (t as i64 + j as i64) as usize;
                        let b = (t as i64 + k as i64) as usize;
                        let mut s = tok[sub]
                            + (proj.sent_fwd[b][e] - proj.sent_fwd[a - 1][e])
                            + (proj.sent_bwd[a][e] - proj.sent_bwd[b + 1][e])
                            + proj.sent_local[t][e];
                        if use_opinion {
                            s += (proj.op_fwd[b] - proj.op_fwd[a - 1]) + (proj.op_bwd[a] - proj.op_bwd[b + 1]) + op_bias;
                        }
                        if use_offset {
                            s += proj.offset[offset_row(j, k, m)];
                        }
                        row.push(s);
                    }
                }
            }
            sets.push(set);
            scores.push(row);
        }
        Emissions { sets, scores }
    }
}

fn offset_row(j: i32, k: i32, max_offset: usize) -> usize {
    (j.min(k) + max_offset as i32) as usize
}

/// Backpropagates lattice-cell gradients through the heads. Returns the
/// gradients reaching the forward and backward hidden states (flattened,
/// position-major, including the zero boundary slots).
pub(super) fn backward(
    model: &Model,
    state: &EncoderState,
    d_emissions: &[Vec<f64>],
    grads: &mut Params,
) -> Result<(Vec<f64>, Vec<f64>), EncoderError> {
    let n = state.len;
    let h = state.hidden;
    let m = model.config.max_offset;
    let p = &model.params;
    if d_emissions.len() != n {
        return Err(EncoderError::GradientShape);
    }
    let mut g = ProjectionGrads {
        token: vec![[0.0; NUM_SUBTAGS]; n + 2],
        sent_fwd: vec![[0.0; NUM_SENTIMENTS]; n + 2],
        sent_bwd: vec![[0.0; NUM_SENTIMENTS]; n + 2],
        sent_local: vec![[0.0; NUM_SENTIMENTS]; n + 2],
        op_fwd: vec![0.0; n + 2],
        op_bwd: vec![0.0; n + 2],
        op_bias: 0.0,
        offset: vec![0.0; p.offset_table.rows],
    };
    let use_opinion = model.config.use_opinion_features;
    let use_offset = model.config.use_offset_features;

    for (pos, d_row) in d_emissions.iter().enumerate() {
        let set = TagSet::new(n, pos, m);
        if d_row.len() != set.len() {
            return Err(EncoderError::GradientShape);
        }
        let t = pos + 1;
        g.token[t][1] += d_row[0];
        g.token[t][3] += d_row[1];
        g.token[t][2] += d_row[2];
        let mut idx = 3;
        for sub in [0usize, 4] {
            for e in 0..NUM_SENTIMENTS {
                for &(j, k) in set.pairs() {
                    let d = d_row[idx];
                    idx += 1;
                    if d == 0.0 {
                        continue;
                    }
                    let a = (t as i64 + j as i64) as usize;
                    let b = (t as i64 + k as i64) as usize;
                    g.token[t][sub] += d;
                    g.sent_fwd[b][e] += d;
                    g.sent_fwd[a - 1][e] -= d;
                    g.sent_bwd[a][e] += d;
                    g.sent_bwd[b + 1][e] -= d;
                    g.sent_local[t][e] += d;
                    if use_opinion {
                        g.op_fwd[b] += d;
                        g.op_fwd[a - 1] -= d;
                        g.op_bwd[a] += d;
                        g.op_bwd[b + 1] -= d;
                        g.op_bias += d;
                    }
                    if use_offset {
                        g.offset[offset_row(j, k, m)] += d;
                    }
                }
            }
        }
    }

    let mut d_fwd = vec![0.0; (n + 2) * h];
    let mut d_bwd = vec![0.0; (n + 2) * h];
    for t in 0..n + 2 {
        let f = state.fwd(t);
        let b = state.bwd(t);
        let df = &mut d_fwd[t * h..(t + 1) * h];
        grads.sentiment_w.add_outer_cols(&g.sent_fwd[t], f, 0);
        p.sentiment_w.matvec_t_cols(&g.sent_fwd[t], 0, df);
        let dof = g.op_fwd[t];
        if dof != 0.0 {
            for u in 0..h {
                grads.opinion_w.data[u] += dof * f[u];
                df[u] += dof * p.opinion_w.data[u];
            }
        }
        if (1..=n).contains(&t) {
            grads.token_w.add_outer_cols(&g.token[t], f, 0);
            p.token_w.matvec_t_cols(&g.token[t], 0, df);
        }

        let db = &mut d_bwd[t * h..(t + 1) * h];
        grads.sentiment_w.add_outer_cols(&g.sent_bwd[t], b, h);
        p.sentiment_w.matvec_t_cols(&g.sent_bwd[t], h, db);
        let dob = g.op_bwd[t];
        if dob != 0.0 {
            for u in 0..h {
                grads.opinion_w.data[h + u] += dob * b[u];
                db[u] += dob * p.opinion_w.data[h + u];
            }
        }
        if (1..=n).contains(&t) {
            grads.token_w.add_outer_cols(&g.token[t], b, h);
            p.token_w.matvec_t_cols(&g.token[t], h, db);
            for (acc, d) in grads.token_b.data.iter_mut().zip(&g.token[t]) {
                *acc += d;
            }
            grads.sentiment_w.add_outer_cols(&g.sent_local[t], b, 2 * h);
            p.sentiment_w.matvec_t_cols(&g.sent_local[t], 2 * h, db);
            for (acc, d) in grads.sentiment_b.data.iter_mut().zip(&g.sent_local[t]) {
                *acc += d;
            }
        }
    }
    grads.opinion_b.data[0] += g.op_bias;
    for (r, &d) in g.offset.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grads.offset_b.data[0] += d;
        let row = p.offset_table.row(r);
        for (gw, x) in grads.offset_w.data.iter_mut().zip(row) {
            *gw += d * x;
        }
        for (gt, w) in grads.offset_table.row_mut(r).iter_mut().zip(&p.offset_w.data) {
            *gt += d * w;
        }
    }
    Ok((d_fwd, d_bwd))
}
