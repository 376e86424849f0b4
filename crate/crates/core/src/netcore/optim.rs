use super::network::{Gradients, NetworkParams};
use crate::error::{Error, Result};

/// Nesterov-momentum SGD state with coupled weight decay and a cosine schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// One buffer per parameter tensor, in [`NetworkParams::tensors`] order.
    momentum_buffers: Vec<Vec<f64>>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epoch: usize,
    pub total_epochs: usize,
}

impl OptimizerState {
    pub fn new(
        params: &NetworkParams,
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        total_epochs: usize,
    ) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::key("lr", "base learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::key("momentum", "momentum must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::key("weight-decay", "weight decay must be non-negative"));
        }
        if total_epochs == 0 {
            return Err(Error::key("max-epochs", "total epochs must be positive"));
        }
        Ok(OptimizerState {
            momentum_buffers: params.tensors().map(|t| vec![0.0; t.len()]).collect(),
            base_lr,
            momentum,
            weight_decay,
            epoch: 0,
            total_epochs,
        })
    }

    pub fn momentum_buffers(&self) -> &[Vec<f64>] {
        &self.momentum_buffers
    }

    /// Learning rate for the current epoch under the cosine schedule.
    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.epoch.min(self.total_epochs), self.base_lr, self.total_epochs)
    }
}

/// `0.5 * base_lr * (1 + cos(pi * epoch / total_epochs))`.
pub fn cosine_lr(epoch: usize, base_lr: f64, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::key("max-epochs", "cosine schedule needs total_epochs > 0"));
    }
    if epoch > total_epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} past schedule end {total_epochs}"
        )));
    }
    let progress = epoch as f64 / total_epochs as f64;
    Ok(0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One Nesterov step:
///
/// ```text
/// g   <- grad + weight_decay * w
/// buf <- momentum * buf + g
/// w   <- w - lr * (g + momentum * buf)
/// ```
///
/// Parameters are left untouched when any gradient entry is non-finite.
pub fn sgd_nesterov_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {lr} is not a non-negative number")));
    }
    if !grads.matches(params) || state.momentum_buffers.len() != 2 * params.layers.len() {
        return Err(Error::Config("gradient/parameter/buffer shapes differ".into()));
    }
    if grads.has_non_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            epoch: state.epoch,
            message: "non-finite gradient".into(),
        });
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((w, g), buf) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.momentum_buffers.iter_mut())
    {
        if buf.len() != w.len() {
            return Err(Error::Config("momentum buffer shape mismatch".into()));
        }
        for ((wi, &gi), bi) in w.iter_mut().zip(g).zip(buf.iter_mut()) {
            let g_eff = gi + wd * *wi;
            *bi = mu * *bi + g_eff;
            *wi -= lr * (g_eff + mu * *bi);
        }
    }
    Ok(())
}
