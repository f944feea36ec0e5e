//! Adam with cosine-annealed learning rate.

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Training hyperparameters. Defaults: Adam at 1e-3 with no weight decay,
/// cosine annealing over the full run, batch size 64, 50 epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine period; equals `epochs` unless overridden.
    pub cosine_t_max: usize,
    /// Learning-rate floor reached at `cosine_t_max`.
    pub lr_floor: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 50,
            batch_size: 64,
            cosine_t_max: 50,
            lr_floor: 0.0,
        }
    }
}

impl TrainSchedule {
    pub fn with_epochs(epochs: usize) -> Self {
        TrainSchedule { epochs, cosine_t_max: epochs, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.cosine_t_max == 0 {
            return Err(Error::Config("epochs, batch size, and T_max must be positive".into()));
        }
        Ok(())
    }

    /// Cosine-annealed learning rate at the given epoch:
    /// `floor + ½(base − floor)(1 + cos(π·e/T_max))`, clamped past `T_max`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let e = epoch.min(self.cosine_t_max) as f64;
        let t = self.cosine_t_max as f64;
        self.lr_floor
            + 0.5 * (self.learning_rate - self.lr_floor) * (1.0 + (std::f64::consts::PI * e / t).cos())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update over every trainable parameter in the store, at the
/// cosine-annealed rate for `epoch`. Each parameter's step counter drives its
/// bias correction. A trainable parameter without a gradient is a
/// configuration error (the caller forgot to run backward).
pub fn adam_step(store: &mut ParamStore, schedule: &TrainSchedule, epoch: usize) -> Result<()> {
    let lr = schedule.lr_at_epoch(epoch);
    adam_step_with_lr(store, lr, schedule.weight_decay)
}

pub fn adam_step_with_lr(store: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
    let ids: Vec<_> = store.params().map(|(id, _)| id).collect();
    for id in ids {
        let p = store.param_mut(id);
        if !p.trainable {
            continue;
        }
        let grad = match &p.grad {
            Some(g) => g.clone(),
            None => {
                return Err(Error::Config(format!(
                    "adam_step: trainable parameter '{}' has no gradient",
                    p.name
                )))
            }
        };
        p.step += 1;
        let t = p.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        let m = p.moment1.data_mut();
        let v = p.moment2.data_mut();
        let g = grad.data();
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        }
        let w = p.value.data_mut();
        for i in 0..g.len() {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * w[i]);
        }
    }
    Ok(())
}
