//! Adam with bias correction and an l2 term folded into the gradient.

use std::collections::BTreeMap;

use crate::error::{ensure_eq, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_weight: f64,
}

impl From<&super::TrainConfig> for AdamConfig {
    fn from(c: &super::TrainConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
            l2_weight: c.l2_weight,
        }
    }
}

/// First and second moments per parameter, kept in `f64`.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One update of every trainable parameter. Parameters missing from `grads`
/// are treated as having a zero gradient.
pub fn adam_step<F: Float>(
    store: &mut ParamStore<F>,
    grads: &BTreeMap<ParamId, Tensor<F>>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    for id in ids {
        let theta = store.get_mut(id);
        let n = theta.len();
        let g = grads.get(&id);
        if let Some(g) = g {
            ensure_eq("gradient shape", g.shape(), theta.shape())?;
        }
        let (m, v) = state.moments.entry(id).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        for i in 0..n {
            let p = theta.data()[i].as_f64();
            let gi = g.map_or(0.0, |g| g.data()[i].as_f64()) + cfg.l2_weight * p;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            if update != 0.0 {
                theta.data_mut()[i] = F::of(p - update);
            }
        }
    }
    Ok(())
}
