use super::TrainConfig;
use crate::error::{bail, Result};

/// Per-parameter first/second moment accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// One parameter tensor with its gradient, addressed by name in errors.
pub struct ParamRef<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Bias-corrected Adam step with decoupled weight decay. Decay is applied
/// first (`w -= lr·wd·w`), then the moment update.
pub fn adamw_step(params: &mut [ParamRef<'_>], state: &mut OptState, lr: f64, config: &TrainConfig) -> Result<()> {
    if !(lr >= 0.0) {
        bail!(Domain, "learning rate {lr} must be non-negative");
    }
    for p in params.iter() {
        if p.value.len() != p.grad.len() {
            bail!(
                Shape,
                "parameter {} has {} values and {} gradients",
                p.name,
                p.value.len(),
                p.grad.len()
            );
        }
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            bail!(Training, "non-finite gradient in {}[{i}]", p.name);
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
        bail!(Shape, "optimizer state does not match the parameter layout");
    }
    state.step += 1;
    let (b1, b2) = config.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = lr * config.weight_decay;
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            let w = &mut p.value[i];
            *w -= decay * *w;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
