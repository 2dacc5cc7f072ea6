use log::{debug, info};
use ndarray::{s, ArrayView3, Axis};
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamState};
use super::model::{data_loss, forward_trace, loss_and_gradients, regularization};
use super::params::Weights;
use super::spec::ModelSpec;
use super::{EpochLoss, NeuralError, TrainedModel, TrainingHistory};
use crate::features::WindowedDataset;
use crate::rng::seeded;

/// Loss including the penalty, over a whole window stack.
pub fn evaluate_loss(
    spec: &ModelSpec,
    weights: &Weights,
    windows: ArrayView3<'_, f64>,
) -> Result<f64, NeuralError> {
    let n = windows.len_of(Axis(0));
    if n == 0 {
        return Err(NeuralError::EmptyDataset);
    }
    let mut total = 0.0;
    for start in (0..n).step_by(spec.batch_size) {
        let end = (start + spec.batch_size).min(n);
        let trace = forward_trace(spec, weights, windows.slice(s![start..end, .., ..]))?;
        total += data_loss(spec.loss, &trace) * (end - start) as f64;
    }
    Ok(total / n as f64 + regularization(spec.reg, weights))
}

fn check_dataset(spec: &ModelSpec, ds: &WindowedDataset) -> Result<(), NeuralError> {
    let (_, t, f) = ds.data.dim();
    if t != spec.timesteps || f != spec.features {
        return Err(NeuralError::ShapeMismatch(format!(
            "dataset windows are {t} × {f}, model expects {} × {}",
            spec.timesteps, spec.features
        )));
    }
    Ok(())
}

/// Mini-batch Adam training. Initialization and every epoch's shuffle draw
/// from one generator seeded with `seed`, so the result is a pure function
/// of the inputs.
pub fn train(
    spec: &ModelSpec,
    train: &WindowedDataset,
    val: &WindowedDataset,
    epochs: usize,
    seed: u64,
) -> Result<TrainedModel, NeuralError> {
    spec.validate()?;
    if epochs == 0 {
        return Err(NeuralError::InvalidParameter("epochs must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    check_dataset(spec, train)?;
    if !val.is_empty() {
        check_dataset(spec, val)?;
    }

    let mut rng = seeded(seed);
    let mut weights = Weights::init(spec, &mut rng);
    let mut adam = AdamState::new(&weights);
    let initial_train_loss = evaluate_loss(spec, &weights, train.data.view())?;
    let mut history = TrainingHistory {
        initial_train_loss,
        epochs: Vec::with_capacity(epochs),
    };

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(spec.batch_size) {
            let batch = train.data.select(Axis(0), idx);
            let (loss, grads) = loss_and_gradients(spec, &weights, batch.view())
                .map_err(|e| match e {
                    NeuralError::NonFiniteLoss { .. } => NeuralError::NonFiniteLoss {
                        epoch: Some(epoch),
                    },
                    other => other,
                })?;
            sum += loss * idx.len() as f64;
            adam_step(&mut weights, &grads, &mut adam, spec.learning_rate)?;
        }
        let train_loss = sum / n as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(spec, &weights, val.data.view())?)
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(NeuralError::NonFiniteLoss { epoch: Some(epoch) });
        }
        info!(
            "{:?} epoch {}/{}: train {:.6}{}",
            spec.kind,
            epoch + 1,
            epochs,
            train_loss,
            val_loss.map_or(String::new(), |v| format!(", val {v:.6}"))
        );
        history.epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    debug!("trained {} parameters", weights.num_params());

    Ok(TrainedModel {
        spec: spec.clone(),
        features: train.spec,
        weights,
        norm: train.norm.clone(),
        threshold: None,
        history,
    })
}
