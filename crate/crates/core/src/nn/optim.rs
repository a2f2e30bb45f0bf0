//! AdamW with decoupled weight decay, plus the reward-net LR schedule
//! (linear warm-down, then cosine annealing to a floor).

use super::{NetGraph, NnError};

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First/second moments for one parameter buffer.
#[derive(Debug, Clone, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Optimizer state for a set of parameter buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(cfg: AdamWConfig, buffer_sizes: &[usize]) -> Self {
        let moments = buffer_sizes
            .iter()
            .map(|&n| Moments { m: vec![0.0; n], v: vec![0.0; n] })
            .collect();
        OptimizerState { cfg, step: 0, moments }
    }

    pub fn for_net(cfg: AdamWConfig, net: &NetGraph) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Self::new(cfg, &sizes)
    }

    /// One AdamW step over a single buffer (moments slot `slot`).
    pub fn step_buffer(&mut self, slot: usize, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnError> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        let t = self.step + 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        let mom = &mut self.moments[slot];
        for i in 0..params.len() {
            mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * grads[i];
            mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
            let mh = mom.m[i] / bc1;
            let vh = mom.v[i] / bc2;
            params[i] -= lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
        Ok(())
    }

    /// Step every parameter buffer of a net against its accumulated gradients.
    pub fn step_net(&mut self, net: &mut NetGraph, lr: f64) -> Result<(), NnError> {
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let wslot = 2 * li;
            if !layer.weight.is_empty() {
                let grads = layer.weight_grad.clone();
                self.step_buffer(wslot, &mut layer.weight, &grads, lr)?;
            }
            if !layer.bias.is_empty() {
                let grads = layer.bias_grad.clone();
                self.step_buffer(wslot + 1, &mut layer.bias, &grads, lr)?;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// LR schedule constants (at the reference iteration scale of 5000).
pub const REWARD_LR_INIT: f64 = 5e-4;
pub const REWARD_LR_LINEAR_END: f64 = 5e-5;
pub const REWARD_LR_FLOOR: f64 = 1e-6;

/// Reward-net learning rate at `iter` for a run of `total` iterations.
///
/// Linear decay from 5e-4 to 5e-5 over the first fifth of the run, then
/// cosine annealing down to 1e-6. With total=5000 the linear segment is the
/// first 1000 iterations.
pub fn reward_lr_at(iter: usize, total: usize) -> Result<f64, NnError> {
    if iter > total {
        return Err(NnError::ScheduleExhausted { iter, total });
    }
    let linear_end = total / 5;
    if iter < linear_end {
        let f = iter as f64 / linear_end as f64;
        Ok(REWARD_LR_INIT + (REWARD_LR_LINEAR_END - REWARD_LR_INIT) * f)
    } else if total == linear_end {
        Ok(REWARD_LR_LINEAR_END)
    } else {
        let f = (iter - linear_end) as f64 / (total - linear_end) as f64;
        let cos = (1.0 + (std::f64::consts::PI * f).cos()) / 2.0;
        Ok(REWARD_LR_FLOOR + (REWARD_LR_LINEAR_END - REWARD_LR_FLOOR) * cos)
    }
}
