//! Dense row-major matrices with just the kernels the encoder needs.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `out += W[:, offset..offset + x.len()] · x`
    pub fn matvec_cols(&self, x: &[f64], offset: usize, out: &mut [f64]) {
        debug_assert!(offset + x.len() <= self.cols && out.len() == self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(&self.row(r)[offset..offset + x.len()], x);
        }
    }

    /// `out += W · x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        self.matvec_cols(x, 0, out)
    }

    /// `out += W[:, offset..offset + out.len()]^T · y`
    pub fn matvec_t_cols(&self, y: &[f64], offset: usize, out: &mut [f64]) {
        debug_assert!(y.len() == self.rows && offset + out.len() <= self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.row(r)[offset..offset + out.len()];
            for (o, w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
    }

    pub fn matvec_t(&self, y: &[f64], out: &mut [f64]) {
        self.matvec_t_cols(y, 0, out)
    }

    /// `W[:, offset..offset + x.len()] += y · x^T`
    pub fn add_outer_cols(&mut self, y: &[f64], x: &[f64], offset: usize) {
        debug_assert!(y.len() == self.rows && offset + x.len() <= self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let cols = self.cols;
            let row = &mut self.data[r * cols + offset..r * cols + offset + x.len()];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += yr * xv;
            }
        }
    }

    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        self.add_outer_cols(y, x, 0)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Streaming `log(sum(exp(.)))` accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}
