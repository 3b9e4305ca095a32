use std::collections::{BTreeMap, HashMap};

use crate::model::ParamStore;
use crate::{Error, Result};

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPSILON: f32 = 1e-8;

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without an entry in `grads` see a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &HashMap<String, Vec<f32>>, lr: f32) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if g.len() != p.tensor.numel() {
                return Err(Error::Dimension(format!(
                    "gradient for `{name}` has {} entries, parameter has {}",
                    g.len(),
                    p.tensor.numel()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (name, p) in params.iter_mut().filter(|(_, p)| p.trainable) {
            let n = p.tensor.numel();
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let g = grads.get(name);
            let data = p.tensor.data_mut();
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= lr * mhat / (vhat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
