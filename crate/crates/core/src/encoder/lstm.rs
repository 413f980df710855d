//! One direction of the recurrent encoder, with its backward pass.

use super::params::LstmParams;
use crate::tensor::sigmoid;

/// Activations of a single step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Step {
    /// Post-activation gates `[i; f; g; o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub(crate) h: Vec<f64>,
}

/// Runs the cell over `inputs` in the given order, starting from zero state.
pub(crate) fn run(params: &LstmParams, inputs: &[&[f64]]) -> Vec<Step> {
    let hidden = params.w_hidden.cols;
    let mut steps: Vec<Step> = Vec::with_capacity(inputs.len());
    let zeros = vec![0.0; hidden];
    for x in inputs {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (&s.h[..], &s.c[..]),
            None => (&zeros[..], &zeros[..]),
        };
        let mut z = params.bias.data.clone();
        params.w_input.matvec(x, &mut z);
        params.w_hidden.matvec(h_prev, &mut z);
        let mut gates = z;
        for (idx, v) in gates.iter_mut().enumerate() {
            *v = if idx / hidden == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let (i, rest) = gates.split_at(hidden);
        let (f, rest) = rest.split_at(hidden);
        let (g, o) = rest.split_at(hidden);
        let c: Vec<f64> = (0..hidden).map(|u| f[u] * c_prev[u] + i[u] * g[u]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..hidden).map(|u| o[u] * tanh_c[u]).collect();
        steps.push(Step {
            gates,
            c,
            tanh_c,
            h,
        });
    }
    steps
}

/// Backpropagation through time. `d_h[t]` is the loss gradient reaching the
/// output of step `t`; input gradients are added into `d_inputs`.
pub(crate) fn backward(
    params: &LstmParams,
    inputs: &[&[f64]],
    steps: &[Step],
    d_h: &[Vec<f64>],
    grads: &mut LstmParams,
    d_inputs: &mut [Vec<f64>],
) {
    let hidden = params.w_hidden.cols;
    let zeros = vec![0.0; hidden];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; 4 * hidden];
    for t in (0..steps.len()).rev() {
        let step = &steps[t];
        let (h_prev, c_prev) = if t > 0 {
            (&steps[t - 1].h[..], &steps[t - 1].c[..])
        } else {
            (&zeros[..], &zeros[..])
        };
        let g = &step.gates;
        for u in 0..hidden {
            let (gi, gf, gg, go) = (g[u], g[hidden + u], g[2 * hidden + u], g[3 * hidden + u]);
            let dh = d_h[t][u] + dh_next[u];
            let tc = step.tanh_c[u];
            let dc = dc_next[u] + dh * go * (1.0 - tc * tc);
            dz[u] = dc * gg * gi * (1.0 - gi);
            dz[hidden + u] = dc * c_prev[u] * gf * (1.0 - gf);
            dz[2 * hidden + u] = dc * gi * (1.0 - gg * gg);
            dz[3 * hidden + u] = dh * tc * go * (1.0 - go);
            dc_next[u] = dc * gf;
        }
        grads.w_input.add_outer(&dz, inputs[t]);
        grads.w_hidden.add_outer(&dz, h_prev);
        for (b, d) in grads.bias.data.iter_mut().zip(&dz) {
            *b += d;
        }
        params.w_input.matvec_t(&dz, &mut d_inputs[t]);
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        params.w_hidden.matvec_t(&dz, &mut dh_next);
    }
}
