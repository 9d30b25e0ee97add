use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adamw::{adamw_step, OptState, ParamRef};
use super::schedule::lr_at;
use super::TrainConfig;
use crate::error::{bail, Result};
use crate::firefly::{CodecModel, QuantMode};
use crate::gfsq::{utilization, CodeGrid};
use crate::tensor::FrameTensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    pub lr: f64,
    /// Mean squared reconstruction error over the whole dataset.
    pub loss: f64,
    /// Mean per-group utilization over the whole dataset.
    pub utilization: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub utilization: Vec<f64>,
    pub model: CodecModel,
}

impl TrainReport {
    /// `step,lr,loss,utilization` rows with a header line.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,lr,loss,utilization\n");
        for p in &self.curve {
            out.push_str(&format!("{},{:e},{:e},{}\n", p.step, p.lr, p.loss, p.utilization));
        }
        out
    }
}

/// Dataset-wide reconstruction error (true grid quantization) and utilization.
pub fn evaluate(model: &CodecModel, dataset: &FrameTensor) -> Result<(f64, Vec<f64>)> {
    let recon = model.reconstruct(dataset, QuantMode::Ste)?;
    let codes: CodeGrid = model.encode(dataset)?;
    Ok((recon.mean_squared_error(dataset)?, utilization(&codes)?))
}

/// Minimizes reconstruction MSE through the straight-through bottleneck.
pub fn train_codec(dataset: &[FrameTensor], mut model: CodecModel, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        bail!(Config, "training needs at least one signal");
    }
    let all = FrameTensor::concat_batch(dataset)?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|t| t.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut state = OptState::default();
    let mut curve = Vec::new();

    let (initial_mse, init_util) = evaluate(&model, &all)?;
    curve.push(CurvePoint {
        step: 0,
        lr: lr_at(0, config),
        loss: initial_mse,
        utilization: mean(&init_util),
    });

    for step in 0..config.total_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(dataset.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(dataset[order[cursor]].clone());
            cursor += 1;
        }
        let batch = FrameTensor::concat_batch(&batch)?;
        let (loss, grad) = model
            .loss_and_grad(&batch, QuantMode::Ste)
            .map_err(|e| diverged(e, step))?;
        if !loss.is_finite() {
            bail!(Training, "loss diverged at step {step}");
        }
        let lr = lr_at(step, config);
        let grads: Vec<Vec<f64>> = grad.named_tensors().into_iter().map(|t| t.2).collect();
        let mut params: Vec<ParamRef<'_>> = model
            .tensors_mut()
            .into_iter()
            .zip(&names)
            .zip(&grads)
            .map(|((value, name), grad)| ParamRef {
                name,
                value: value.as_mut_slice(),
                grad,
            })
            .collect();
        adamw_step(&mut params, &mut state, lr, config).map_err(|e| match e {
            crate::Error::Training(msg) => crate::Error::Training(format!("{msg} at step {step}")),
            other => other,
        })?;
        let done = step + 1;
        if let Some((name, _)) = names
            .iter()
            .zip(model.tensors_mut())
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
        {
            bail!(Training, "parameter {name} diverged at step {done}");
        }

        if done % config.log_every == 0 || done == config.total_steps {
            let (mse, util) = evaluate(&model, &all).map_err(|e| diverged(e, done))?;
            if !mse.is_finite() {
                bail!(Training, "loss diverged at step {done}");
            }
            curve.push(CurvePoint {
                step: done,
                lr: lr_at(done, config),
                loss: mse,
                utilization: mean(&util),
            });
        }
    }
    let (final_mse, util) = evaluate(&model, &all)?;
    Ok(TrainReport {
        curve,
        initial_mse,
        final_mse,
        utilization: util,
        model,
    })
}

/// Non-finite activations surface as domain errors from the quantizer; during
/// training they mean the run has diverged.
fn diverged(e: crate::Error, step: u64) -> crate::Error {
    match e {
        crate::Error::Domain(msg) => crate::Error::Training(format!("diverged at step {step}: {msg}")),
        other => other,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
