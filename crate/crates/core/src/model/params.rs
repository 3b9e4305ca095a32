//! Named parameter storage shared by the model, optimiser and checkpoints.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::tensor::{Graph, RunningStats, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    /// Running statistics are stored here too but never receive gradients.
    pub trainable: bool,
}

/// Parameters keyed by dotted name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        self.entries.insert(name.into(), Param { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries.get_mut(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|p| p.trainable).map(|p| p.tensor.numel()).sum()
    }

    pub fn running_stats(&self, prefix: &str) -> Result<RunningStats> {
        Ok(RunningStats {
            mean: self.get(&format!("{prefix}.mean"))?.tensor.data().to_vec(),
            var: self.get(&format!("{prefix}.var"))?.tensor.data().to_vec(),
        })
    }

    pub fn set_running_stats(&mut self, prefix: &str, stats: &RunningStats) -> Result<()> {
        self.get_mut(&format!("{prefix}.mean"))?.tensor.data_mut().copy_from_slice(&stats.mean);
        self.get_mut(&format!("{prefix}.var"))?.tensor.data_mut().copy_from_slice(&stats.var);
        Ok(())
    }

    /// Replaces values with those of `other`, which must hold the same
    /// names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!("{} tensors supplied for {} parameters", other.len(), self.len())));
        }
        for (name, p) in self.entries.iter_mut() {
            let src = other.get(name)?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    src.tensor.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }
}

/// Glorot-uniform matrix `[fan_in, fan_out]`.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive extents")
}

/// Maps parameter names to graph leaves for one forward pass. Names can be
/// pre-bound (used by gradient checks); otherwise leaves are created from
/// the store on first use.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: HashMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, vars: HashMap::new() }
    }

    pub fn with_bound(store: &'a ParamStore, vars: HashMap<String, Var>) -> Self {
        Self { store, vars }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let p = self.store.get(name)?;
        let v = if p.trainable { g.param(p.tensor.clone()) } else { g.input(p.tensor.clone()) };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Bound leaves, for collecting gradients after backward.
    pub fn bound(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    pub fn into_bound(self) -> HashMap<String, Var> {
        self.vars
    }
}
