//! Finite-difference verification of backpropagation.
//!
//! Subtracting two rounded losses loses most significant digits once a
//! gradient is small next to the loss itself. Instead the perturbation of a
//! single parameter is pushed through the network by propagating the exact
//! change of every activation (`σ(z+δ) − σ(z)`, `tanh(a+δ) − tanh(a)` and so
//! on, in closed forms without cancellation). The resulting loss changes are
//! the same central differences, correct to a few ulps of the change.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;

use super::lstm::{self, LayerInput, LayerTrace};
use super::model::{forward, forward_trace, loss_and_gradients, Trace};
use super::params::{LstmParams, Weights};
use super::spec::{Loss, ModelSpec, Regularization};
use crate::rng::seeded;

/// Timesteps of the reduced model used for checking.
pub const CHECK_TIMESTEPS: usize = 8;
const CHECK_BATCH: usize = 1;
/// Weights and residuals are kept at least this far from the kinks of
/// `|·|` so central differences never straddle one.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor holding the worst element.
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// One parameter moved by `h`.
#[derive(Clone, Copy)]
struct Perturbation {
    /// Layer index over encoder then decoder layers; `n_layers` is the head.
    stage: usize,
    /// 0 = input weights (or head weights), 1 = recurrent weights, 2 = bias.
    tensor: usize,
    row: usize,
    col: usize,
    h: f64,
}

/// `σ(z+δ) − σ(z)` from `s = σ(z)`.
#[inline]
fn sigmoid_delta(s: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    let em = (-d).exp_m1();
    -s * (1.0 - s) * em / (1.0 + (1.0 - s) * em)
}

/// `tanh(a+δ) − tanh(a)` from `u = tanh(a)`.
#[inline]
fn tanh_delta(u: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    let em = (2.0 * d).exp_m1();
    let t = em / (em + 2.0);
    if !t.is_finite() {
        return (1.0 - u) * (1.0 + u) / (1.0 + u);
    }
    (1.0 - u) * (1.0 + u) * t / (1.0 + u * t)
}

enum DeltaInput<'a> {
    None,
    Sequence(ArrayView2<'a, f64>),
    Repeated(ArrayView2<'a, f64>),
}

/// Change of a layer's hidden sequence, `(T·B) × H`, given the change of its
/// input and an optional perturbation of its own parameters.
fn layer_delta(
    p: &LstmParams,
    base: &LayerTrace,
    tanh_cells: &Array2<f64>,
    input: LayerInput<'_>,
    d_input: DeltaInput<'_>,
    pert: Option<Perturbation>,
    steps: usize,
    batch: usize,
) -> Array2<f64> {
    let h = p.hidden_size();
    let h4 = 4 * h;
    let rows = steps * batch;
    let mut dh = Array2::<f64>::zeros((rows, h));
    let mut dc = Array2::<f64>::zeros((rows, h));
    let mut dz = Array2::<f64>::zeros((batch, h4));

    let repeated_dz = match &d_input {
        DeltaInput::Repeated(de) => {
            let mut out = Array2::zeros((batch, h4));
            lstm::gemm(de, &p.wx.view(), 0.0, &mut out.view_mut());
            Some(out)
        }
        _ => None,
    };

    for t in 0..steps {
        let cur = t * batch..(t + 1) * batch;
        match (&d_input, &repeated_dz) {
            (_, Some(rz)) => dz.assign(rz),
            (DeltaInput::Sequence(dx), _) => {
                let dx_t = dx.slice(s![cur.clone(), ..]);
                lstm::gemm(&dx_t, &p.wx.view(), 0.0, &mut dz.view_mut());
            }
            _ => dz.fill(0.0),
        }
        if t > 0 {
            let (done, _) = dh.view().split_at(ndarray::Axis(0), t * batch);
            let prev = done.slice(s![(t - 1) * batch.., ..]);
            lstm::gemm(&prev, &p.wh.view(), 1.0, &mut dz.view_mut());
        }
        if let Some(q) = pert {
            for b in 0..batch {
                let row = t * batch + b;
                dz[[b, q.col]] += match q.tensor {
                    0 => {
                        let (x, dx) = match (&input, &d_input) {
                            (LayerInput::Sequence(x), DeltaInput::Sequence(dx)) => {
                                (x[[row, q.row]], dx[[row, q.row]])
                            }
                            (LayerInput::Sequence(x), _) => (x[[row, q.row]], 0.0),
                            (LayerInput::Repeated(e), DeltaInput::Repeated(de)) => {
                                (e[[b, q.row]], de[[b, q.row]])
                            }
                            (LayerInput::Repeated(e), _) => (e[[b, q.row]], 0.0),
                        };
                        (x + dx) * q.h
                    }
                    1 if t > 0 => {
                        let prow = row - batch;
                        (base.hidden[[prow, q.row]] + dh[[prow, q.row]]) * q.h
                    }
                    1 => 0.0,
                    _ => q.h,
                };
            }
        }
        let gates = base.gates.as_slice().expect("standard layout");
        let cells = base.cells.as_slice().expect("standard layout");
        let tcs = tanh_cells.as_slice().expect("standard layout");
        let dz_all = dz.as_slice().expect("standard layout");
        let dc_all = dc.as_slice_mut().expect("standard layout");
        let dh_all = dh.as_slice_mut().expect("standard layout");
        for b in 0..batch {
            let row = t * batch + b;
            let gz = &gates[row * h4..(row + 1) * h4];
            let d = &dz_all[b * h4..(b + 1) * h4];
            for j in 0..h {
                let (i, f, g, o) = (gz[j], gz[h + j], gz[2 * h + j], gz[3 * h + j]);
                let di = sigmoid_delta(i, d[j]);
                let df = sigmoid_delta(f, d[h + j]);
                let dg = tanh_delta(g, d[2 * h + j]);
                let d_o = sigmoid_delta(o, d[3 * h + j]);
                let (c_prev, dc_prev) = if t > 0 {
                    (cells[(row - batch) * h + j], dc_all[(row - batch) * h + j])
                } else {
                    (0.0, 0.0)
                };
                let dcell = df * c_prev + (f + df) * dc_prev + di * g + (i + di) * dg;
                dc_all[row * h + j] = dcell;
                let u = tcs[row * h + j];
                dh_all[row * h + j] = d_o * u + (o + d_o) * tanh_delta(u, dcell);
            }
        }
    }
    dh
}

/// `L(w + h·e) − L(w)` for the data term, where `e` selects one parameter.
/// `tanh` of every cell state, encoder layers then decoder layers.
fn tanh_cells(base: &Trace) -> Vec<Array2<f64>> {
    base.encoder
        .iter()
        .chain(&base.decoder)
        .map(|l| l.cells.mapv(lstm::tanh))
        .collect()
}

fn data_loss_change(
    spec: &ModelSpec,
    w: &Weights,
    base: &Trace,
    tcs: &[Array2<f64>],
    q: Perturbation,
) -> f64 {
    let b = base.batch;
    let steps = spec.timesteps;
    let n_enc = w.encoder.len();
    let n_dec = w.decoder.len();
    let own = |stage: usize| (q.stage == stage).then_some(q);

    let mut d_prev: Option<Array2<f64>> = None;
    for k in q.stage.min(n_enc)..n_enc {
        let x = if k == 0 { base.input.view() } else { base.encoder[k - 1].hidden.view() };
        let dx = d_prev.as_ref().map_or(DeltaInput::None, |d| DeltaInput::Sequence(d.view()));
        d_prev = Some(layer_delta(
            &w.encoder[k],
            &base.encoder[k],
            &tcs[k],
            LayerInput::Sequence(x),
            dx,
            own(k),
            steps,
            b,
        ));
    }
    let d_encoding = d_prev.take().map(|d| d.slice(s![(steps - 1) * b.., ..]).to_owned());

    for k in q.stage.saturating_sub(n_enc).min(n_dec)..n_dec {
        let (x, dx) = if k == 0 {
            (
                LayerInput::Repeated(base.encoding.view()),
                d_encoding.as_ref().map_or(DeltaInput::None, |d| DeltaInput::Repeated(d.view())),
            )
        } else {
            (
                LayerInput::Sequence(base.decoder[k - 1].hidden.view()),
                d_prev.as_ref().map_or(DeltaInput::None, |d| DeltaInput::Sequence(d.view())),
            )
        };
        d_prev = Some(layer_delta(
            &w.decoder[k],
            &base.decoder[k],
            &tcs[n_enc + k],
            x,
            dx,
            own(n_enc + k),
            steps,
            b,
        ));
    }

    let last = &base.decoder[n_dec - 1].hidden;
    let mut d_out = Array2::<f64>::zeros(base.output.raw_dim());
    if let Some(dh) = &d_prev {
        lstm::gemm(&dh.view(), &w.head.w.view(), 0.0, &mut d_out.view_mut());
    }
    if q.stage == n_enc + n_dec {
        for row in 0..d_out.nrows() {
            d_out[[row, q.col]] += match q.tensor {
                0 => {
                    let dh = d_prev.as_ref().map_or(0.0, |d| d[[row, q.row]]);
                    (last[[row, q.row]] + dh) * q.h
                }
                _ => q.h,
            };
        }
    }

    let mut total = 0.0;
    for ((&r, &x), &dr) in base.output.iter().zip(base.input.iter()).zip(d_out.iter()) {
        let d = r - x;
        total += match spec.loss {
            Loss::Mse => dr * (2.0 * d + dr),
            Loss::Mae if (d + dr).signum() == d.signum() => d.signum() * dr,
            Loss::Mae => (d + dr).abs() - d.abs(),
        };
    }
    total / base.output.len() as f64
}

fn penalty(reg: Regularization, w: f64) -> f64 {
    match reg {
        Regularization::None => 0.0,
        Regularization::L1(f) => f * w.abs(),
        Regularization::L2(f) => f * w * w,
    }
}

struct Setup {
    spec: ModelSpec,
    weights: Weights,
    x: Array3<f64>,
}

/// The reduced model of `spec` with random weights and biases, and a random
/// batch. Weights and residuals are moved off the kinks of `|·|`.
fn setup(spec: &ModelSpec, seed: u64) -> Setup {
    let spec = spec.reduced(CHECK_TIMESTEPS);
    let mut rng = seeded(seed);
    let mut weights = Weights::init(&spec, &mut rng);
    for t in weights.tensors_mut() {
        let regularized = t.regularized;
        for v in t.data.iter_mut() {
            if !regularized {
                *v += rng.random_range(-0.5..0.5);
            }
            if v.abs() < KINK_MARGIN {
                *v = if *v < 0.0 { -KINK_MARGIN } else { KINK_MARGIN } + *v;
            }
        }
    }
    let shape = (CHECK_BATCH, spec.timesteps, spec.features);
    let mut x = Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
    let out = forward(&spec, &weights, x.view()).expect("shapes are consistent");
    for (xi, ri) in x.iter_mut().zip(out.iter()) {
        if (*ri - *xi).abs() < KINK_MARGIN {
            *xi += 4.0 * KINK_MARGIN;
        }
    }
    Setup { spec, weights, x }
}

fn perturbation(weights: &Weights, tensor_index: usize, flat: usize, h: f64) -> Perturbation {
    let n_layers = weights.encoder.len() + weights.decoder.len();
    let stage = (tensor_index / 3).min(n_layers);
    let tensor = if stage == n_layers { tensor_index - 3 * n_layers } else { tensor_index % 3 };
    let cols = if stage == n_layers {
        weights.head.w.ncols()
    } else {
        let l = if stage < weights.encoder.len() {
            &weights.encoder[stage]
        } else {
            &weights.decoder[stage - weights.encoder.len()]
        };
        l.wh.ncols()
    };
    let is_bias = (stage == n_layers && tensor == 1) || tensor == 2;
    let (row, col) = if is_bias { (0, flat) } else { (flat / cols, flat % cols) };
    Perturbation { stage, tensor, row, col, h }
}

/// Builds the reduced model of `spec` with random weights and biases and a
/// random batch, then compares backpropagated gradients with central
/// differences over every parameter.
pub fn gradient_check_with(spec: &ModelSpec, seed: u64, h: f64) -> GradCheckReport {
    assert!(h > 0.0, "step must be positive");
    let Setup { spec, weights, x } = setup(spec, seed);
    let (_, grads) = loss_and_gradients(&spec, &weights, x.view()).expect("loss is finite");
    let base = forward_trace(&spec, &weights, x.view()).expect("shapes are consistent");

    let tcs = tanh_cells(&base);
    let param_values: Vec<Vec<f64>> = weights.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (ti, g) in grads.tensors().iter().enumerate() {
        for (k, &a) in g.data.iter().enumerate() {
            let plus = data_loss_change(&spec, &weights, &base, &tcs, perturbation(&weights, ti, k, h));
            let minus = data_loss_change(&spec, &weights, &base, &tcs, perturbation(&weights, ti, k, -h));
            let mut n = (plus - minus) / (2.0 * h);
            if g.regularized {
                // The penalty is a sum over elements, so only this element's
                // share changes.
                let w = param_values[ti][k];
                n += (penalty(spec.reg, w + h) - penalty(spec.reg, w - h)) / (2.0 * h);
            }
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_tensor = g.name.clone();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report
}

/// Maximum relative error `|a−n| / max(|a|, |n|, 1e-12)`.
pub fn gradient_check(spec: &ModelSpec, seed: u64, h: f64) -> f64 {
    gradient_check_with(spec, seed, h).max_rel_error
}
