use serde::{Deserialize, Serialize};

use super::{ParameterSet, TrainingConfig};
use crate::error::{Error, Result};

/// Adam moment estimates, congruent with the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One in-place update. Frozen word embeddings are skipped entirely.
    pub fn apply(&mut self, params: &mut ParameterSet, grads: &ParameterSet, learning_rate: f64) -> Result<()> {
        params.check_congruent(grads)?;
        params.check_congruent(&self.m).map_err(|_| {
            Error::Structural("optimizer state does not match the parameters".into())
        })?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let frozen = params.word_embeddings_frozen;
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            if frozen && p.0 == "word_embeddings" {
                continue;
            }
            for (((x, &gx), mx), vx) in p.2.iter_mut().zip(g.2).zip(m.2.iter_mut()).zip(v.2.iter_mut()) {
                *mx = b1 * *mx + (1.0 - b1) * gx;
                *vx = b2 * *vx + (1.0 - b2) * gx * gx;
                let mhat = *mx / c1;
                let vhat = *vx / c2;
                *x -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional Adam step: returns updated parameters and optimizer state.
pub fn update_parameters(
    params: &ParameterSet,
    grads: &ParameterSet,
    opt_state: &AdamState,
    config: &TrainingConfig,
) -> Result<(ParameterSet, AdamState)> {
    let mut p = params.clone();
    let mut s = opt_state.clone();
    s.apply(&mut p, grads, config.learning_rate)?;
    Ok((p, s))
}
