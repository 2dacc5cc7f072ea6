//! Whole-autoencoder forward pass, loss and gradients.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView3, Axis};

use super::lstm::{self, LayerInput, LayerTrace, Upstream};
use super::params::Weights;
use super::spec::{Loss, ModelSpec, Regularization};
use super::NeuralError;

/// Activations of one forward pass.
pub struct Trace {
    pub batch: usize,
    /// Input, time-major `(T·B) × F`.
    pub input: Array2<f64>,
    pub encoder: Vec<LayerTrace>,
    /// Final encoder hidden state, `B × E`.
    pub encoding: Array2<f64>,
    pub decoder: Vec<LayerTrace>,
    /// Reconstruction, time-major `(T·B) × F`.
    pub output: Array2<f64>,
}

fn check_shape(spec: &ModelSpec, batch: &ArrayView3<'_, f64>) -> Result<(), NeuralError> {
    let (_, t, f) = batch.dim();
    if t != spec.timesteps || f != spec.features {
        return Err(NeuralError::ShapeMismatch(format!(
            "batch has {t} timesteps × {f} features, model expects {} × {}",
            spec.timesteps, spec.features
        )));
    }
    Ok(())
}

/// `B × T × F` to time-major `(T·B) × F`.
pub fn to_time_major(batch: ArrayView3<'_, f64>) -> Array2<f64> {
    let (b, t, f) = batch.dim();
    let permuted = batch.permuted_axes([1, 0, 2]);
    let mut out = Array2::zeros((t * b, f));
    for (ti, slab) in permuted.outer_iter().enumerate() {
        out.slice_mut(ndarray::s![ti * b..(ti + 1) * b, ..]).assign(&slab);
    }
    out
}

pub fn from_time_major(data: &Array2<f64>, batch: usize) -> Array3<f64> {
    let t = data.nrows() / batch;
    let f = data.ncols();
    Array3::from_shape_fn((batch, t, f), |(b, ti, fi)| data[[ti * batch + b, fi]])
}

pub fn forward_trace(
    spec: &ModelSpec,
    weights: &Weights,
    batch: ArrayView3<'_, f64>,
) -> Result<Trace, NeuralError> {
    check_shape(spec, &batch)?;
    let b = batch.len_of(Axis(0));
    let steps = spec.timesteps;
    let input = to_time_major(batch);

    let mut encoder: Vec<LayerTrace> = Vec::with_capacity(weights.encoder.len());
    for p in &weights.encoder {
        let x = encoder.last().map_or(input.view(), |tr| tr.hidden.view());
        let tr = lstm::forward(p, LayerInput::Sequence(x), steps, b);
        encoder.push(tr);
    }
    let encoding = encoder.last().expect("validated").last_hidden(b).to_owned();

    let mut decoder: Vec<LayerTrace> = Vec::with_capacity(weights.decoder.len());
    for p in &weights.decoder {
        let x = match decoder.last() {
            None => LayerInput::Repeated(encoding.view()),
            Some(tr) => LayerInput::Sequence(tr.hidden.view()),
        };
        decoder.push(lstm::forward(p, x, steps, b));
    }

    let last = &decoder.last().expect("validated").hidden;
    let mut output = Array2::zeros((last.nrows(), weights.head.w.ncols()));
    lstm::gemm(&last.view(), &weights.head.w.view(), 0.0, &mut output.view_mut());
    output += &weights.head.bias;
    Ok(Trace {
        batch: b,
        input,
        encoder,
        encoding,
        decoder,
        output,
    })
}

/// Reconstruction `B × T × F`.
pub fn forward(
    spec: &ModelSpec,
    weights: &Weights,
    batch: ArrayView3<'_, f64>,
) -> Result<Array3<f64>, NeuralError> {
    let trace = forward_trace(spec, weights, batch)?;
    Ok(from_time_major(&trace.output, trace.batch))
}

/// Mean pointwise error of each sample (no regularization).
pub fn sample_errors(loss: Loss, trace: &Trace) -> Vec<f64> {
    let b = trace.batch;
    let f = trace.input.ncols();
    let rows = trace.input.nrows();
    let mut sums = vec![0.0; b];
    for row in 0..rows {
        let s = row % b;
        for c in 0..f {
            let d = trace.output[[row, c]] - trace.input[[row, c]];
            sums[s] += match loss {
                Loss::Mae => d.abs(),
                Loss::Mse => d * d,
            };
        }
    }
    let n = (rows / b * f) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Data term averaged over all `B·T·F` elements.
pub fn data_loss(loss: Loss, trace: &Trace) -> f64 {
    let n = trace.output.len() as f64;
    let total: f64 = trace
        .output
        .iter()
        .zip(trace.input.iter())
        .map(|(r, x)| {
            let d = r - x;
            match loss {
                Loss::Mae => d.abs(),
                Loss::Mse => d * d,
            }
        })
        .sum();
    total / n
}

/// Penalty over weight matrices.
pub fn regularization(reg: Regularization, weights: &Weights) -> f64 {
    let (factor, l1) = match reg {
        Regularization::None => return 0.0,
        Regularization::L1(f) => (f, true),
        Regularization::L2(f) => (f, false),
    };
    let sum: f64 = weights
        .tensors()
        .iter()
        .filter(|t| t.regularized)
        .flat_map(|t| t.data.iter())
        .map(|&w| if l1 { w.abs() } else { w * w })
        .sum();
    factor * sum
}

fn add_regularization_grad(reg: Regularization, weights: &Weights, grads: &mut Weights) {
    let (factor, l1) = match reg {
        Regularization::None => return,
        Regularization::L1(f) => (f, true),
        Regularization::L2(f) => (f, false),
    };
    for (w, g) in weights.tensors().iter().zip(grads.tensors_mut()) {
        if !w.regularized {
            continue;
        }
        for (gv, &wv) in g.data.iter_mut().zip(w.data) {
            *gv += if l1 {
                factor * sign(wv)
            } else {
                2.0 * factor * wv
            };
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss (data term plus penalty) and its gradient for one batch.
pub fn loss_and_gradients(
    spec: &ModelSpec,
    weights: &Weights,
    batch: ArrayView3<'_, f64>,
) -> Result<(f64, Weights), NeuralError> {
    let trace = forward_trace(spec, weights, batch)?;
    let loss = data_loss(spec.loss, &trace) + regularization(spec.reg, weights);
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss { epoch: None });
    }
    let grads = backward(spec, weights, &trace);
    Ok((loss, grads))
}

fn backward(spec: &ModelSpec, weights: &Weights, trace: &Trace) -> Weights {
    let b = trace.batch;
    let steps = spec.timesteps;
    let n = trace.output.len() as f64;
    let mut grads = weights.zeros_like();

    let mut d_out = &trace.output - &trace.input;
    match spec.loss {
        Loss::Mae => d_out.mapv_inplace(|d| sign(d) / n),
        Loss::Mse => d_out.mapv_inplace(|d| 2.0 * d / n),
    }

    let dec_last = &trace.decoder.last().expect("validated").hidden;
    general_mat_mul(1.0, &dec_last.t(), &d_out, 1.0, &mut grads.head.w);
    grads.head.bias += &d_out.sum_axis(Axis(0));
    let mut upstream = d_out.dot(&weights.head.w.t());

    for k in (0..weights.decoder.len()).rev() {
        let input = if k == 0 {
            LayerInput::Repeated(trace.encoding.view())
        } else {
            LayerInput::Sequence(trace.decoder[k - 1].hidden.view())
        };
        upstream = lstm::backward(
            &weights.decoder[k],
            &trace.decoder[k],
            input,
            Upstream::Sequence(upstream.view()),
            steps,
            b,
            &mut grads.decoder[k],
        );
    }

    // `upstream` is now the gradient wrt the encoding (B × E).
    let n_enc = weights.encoder.len();
    for k in (0..n_enc).rev() {
        let input = if k == 0 {
            trace.input.view()
        } else {
            trace.encoder[k - 1].hidden.view()
        };
        let up = if k + 1 == n_enc {
            Upstream::Last(upstream.view())
        } else {
            Upstream::Sequence(upstream.view())
        };
        upstream = lstm::backward(
            &weights.encoder[k],
            &trace.encoder[k],
            LayerInput::Sequence(input),
            up,
            steps,
            b,
            &mut grads.encoder[k],
        );
    }

    add_regularization_grad(spec.reg, weights, &mut grads);
    grads
}
