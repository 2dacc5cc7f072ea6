//! Batched LSTM recurrences.
//!
//! Sequences are stored time-major as `(T·B) × width` matrices where row
//! `t·B + b` holds sample `b` at step `t`. This lets the input projection,
//! the weight gradients and the input gradient run as single matrix products
//! over the whole sequence; only the recurrent product is per step.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::params::LstmParams;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// About three times cheaper than `f64::tanh`, accurate to a few ulps in
/// absolute terms, and saturates cleanly at ±1.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

/// Right-hand sides with at most this many elements use a plain loop, which
/// is faster than packing for the narrow layers. The choice depends only on
/// the weight shape, so every row of the result is computed the same way
/// whatever the batch size.
const SMALL_GEMM: usize = 12_000;

/// `c = a·b + beta·c`
pub(crate) fn gemm(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, beta: f64, c: &mut ArrayViewMut2<'_, f64>) {
    if b.len() > SMALL_GEMM {
        general_mat_mul(1.0, a, b, beta, c);
        return;
    }
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        *c *= beta;
    }
    for (a_row, mut c_row) in a.outer_iter().zip(c.outer_iter_mut()) {
        let c_row = c_row.as_slice_mut().expect("contiguous rows");
        for (&aik, b_row) in a_row.iter().zip(b.outer_iter()) {
            match b_row.as_slice() {
                Some(b_row) => {
                    for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                        *cj += aik * bj;
                    }
                }
                None => {
                    for (cj, &bj) in c_row.iter_mut().zip(b_row.iter()) {
                        *cj += aik * bj;
                    }
                }
            }
        }
    }
}

/// What a layer reads at each step.
#[derive(Clone, Copy)]
pub enum LayerInput<'a> {
    /// `(T·B) × input` sequence.
    Sequence(ArrayView2<'a, f64>),
    /// `B × input`, identical at every step.
    Repeated(ArrayView2<'a, f64>),
}

/// Gradient arriving at a layer's hidden outputs.
pub enum Upstream<'a> {
    /// `(T·B) × hidden`.
    Sequence(ArrayView2<'a, f64>),
    /// `B × hidden`, final step only.
    Last(ArrayView2<'a, f64>),
}

/// Forward activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Activated gates `(T·B) × 4H`.
    pub gates: Array2<f64>,
    pub cells: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl LayerTrace {
    /// Hidden state at the final step, `B × H`.
    pub fn last_hidden(&self, batch: usize) -> ArrayView2<'_, f64> {
        let rows = self.hidden.nrows();
        self.hidden.slice(s![rows - batch.., ..])
    }
}

pub fn forward(p: &LstmParams, input: LayerInput<'_>, steps: usize, batch: usize) -> LayerTrace {
    let h = p.hidden_size();
    let h4 = 4 * h;
    let rows = steps * batch;
    let mut gates = Array2::<f64>::zeros((rows, h4));
    match input {
        LayerInput::Sequence(x) => {
            debug_assert_eq!(x.nrows(), rows);
            gemm(&x, &p.wx.view(), 0.0, &mut gates.view_mut());
            gates += &p.bias;
        }
        LayerInput::Repeated(e) => {
            let mut pre = Array2::zeros((batch, h4));
            gemm(&e, &p.wx.view(), 0.0, &mut pre.view_mut());
            pre += &p.bias;
            for t in 0..steps {
                gates.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&pre);
            }
        }
    }
    let mut cells = Array2::<f64>::zeros((rows, h));
    let mut hidden = Array2::<f64>::zeros((rows, h));
    for t in 0..steps {
        let cur = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev = hidden.slice(s![(t - 1) * batch..t * batch, ..]);
            let mut z = gates.slice_mut(s![cur.clone(), ..]);
            gemm(&prev, &p.wh.view(), 1.0, &mut z);
        }
        let g_all = gates.as_slice_mut().expect("standard layout");
        let c_all = cells.as_slice_mut().expect("standard layout");
        let h_all = hidden.as_slice_mut().expect("standard layout");
        for row in cur {
            let z = &mut g_all[row * h4..(row + 1) * h4];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = tanh(z[2 * h + j]);
                let o = sigmoid(z[3 * h + j]);
                z[j] = i;
                z[h + j] = f;
                z[2 * h + j] = g;
                z[3 * h + j] = o;
                let c_prev = if t > 0 { c_all[(row - batch) * h + j] } else { 0.0 };
                let c = f * c_prev + i * g;
                c_all[row * h + j] = c;
                h_all[row * h + j] = o * tanh(c);
            }
        }
    }
    LayerTrace {
        gates,
        cells,
        hidden,
    }
}

/// Backpropagation through time. Accumulates into `grad` and returns the
/// gradient with respect to the layer input (same shape as the input).
pub fn backward(
    p: &LstmParams,
    trace: &LayerTrace,
    input: LayerInput<'_>,
    upstream: Upstream<'_>,
    steps: usize,
    batch: usize,
    grad: &mut LstmParams,
) -> Array2<f64> {
    let h = p.hidden_size();
    let h4 = 4 * h;
    let rows = steps * batch;
    let mut dz = Array2::<f64>::zeros((rows, h4));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = vec![0.0; batch * h];

    let gates = trace.gates.as_slice().expect("standard layout");
    let cells = trace.cells.as_slice().expect("standard layout");

    for t in (0..steps).rev() {
        {
            let dz_all = dz.as_slice_mut().expect("standard layout");
            let dhn = dh_next.as_slice().expect("standard layout");
            for b in 0..batch {
                let row = t * batch + b;
                let up_row: Option<ndarray::ArrayView1<'_, f64>> = match &upstream {
                    Upstream::Sequence(u) => Some(u.row(row)),
                    Upstream::Last(u) if t + 1 == steps => Some(u.row(b)),
                    Upstream::Last(_) => None,
                };
                let gz = &gates[row * h4..(row + 1) * h4];
                let d = &mut dz_all[row * h4..(row + 1) * h4];
                for j in 0..h {
                    let dh = up_row.as_ref().map_or(0.0, |u| u[j]) + dhn[b * h + j];
                    let (i, f, g, o) = (gz[j], gz[h + j], gz[2 * h + j], gz[3 * h + j]);
                    let c = cells[row * h + j];
                    let tc = tanh(c);
                    let c_prev = if t > 0 { cells[(row - batch) * h + j] } else { 0.0 };
                    let dc = dc_next[b * h + j] + dh * o * (1.0 - tc * tc);
                    dc_next[b * h + j] = dc * f;
                    d[j] = dc * g * i * (1.0 - i);
                    d[h + j] = dc * c_prev * f * (1.0 - f);
                    d[2 * h + j] = dc * i * (1.0 - g * g);
                    d[3 * h + j] = dh * tc * o * (1.0 - o);
                }
            }
        }
        if t > 0 {
            let dz_t = dz.slice(s![t * batch..(t + 1) * batch, ..]);
            gemm(&dz_t, &p.wh.t(), 0.0, &mut dh_next.view_mut());
        }
    }

    if steps > 1 {
        let h_prev = trace.hidden.slice(s![..(steps - 1) * batch, ..]);
        let dz_later = dz.slice(s![batch.., ..]);
        general_mat_mul(1.0, &h_prev.t(), &dz_later, 1.0, &mut grad.wh);
    }
    grad.bias += &dz.sum_axis(Axis(0));
    match input {
        LayerInput::Sequence(x) => {
            general_mat_mul(1.0, &x.t(), &dz, 1.0, &mut grad.wx);
            dz.dot(&p.wx.t())
        }
        LayerInput::Repeated(e) => {
            let mut dz_sum = Array2::<f64>::zeros((batch, h4));
            for t in 0..steps {
                dz_sum += &dz.slice(s![t * batch..(t + 1) * batch, ..]);
            }
            general_mat_mul(1.0, &e.t(), &dz_sum, 1.0, &mut grad.wx);
            dz_sum.dot(&p.wx.t())
        }
    }
}
