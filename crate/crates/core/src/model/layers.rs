//! Shared per-point layers and the forward-pass context.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{glorot, Binder, ParamStore};
use crate::tensor::{Graph, RunningStats, Tensor, Var};
use crate::Result;

/// State threaded through one forward pass.
pub struct Fwd<'a, 'g> {
    pub g: &'g mut Graph,
    pub binder: Binder<'a>,
    pub training: bool,
    pub rng: ChaCha8Rng,
    /// Running-statistics updates produced by batch norm in training mode.
    pub bn_updates: Vec<(String, RunningStats)>,
}

impl<'a, 'g> Fwd<'a, 'g> {
    pub fn var(&mut self, name: &str) -> Result<Var> {
        self.binder.var(self.g, name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseKind {
    /// `x·w + b`.
    Affine,
    /// `x·w`.
    NoBias,
    /// `ReLU(BN(x·w))`.
    BnRelu,
}

/// A shared per-point fully-connected unit (a 1×1 convolution).
#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kind: DenseKind,
}

impl Dense {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kind: DenseKind) -> Self {
        Self { name: name.into(), cin, cout, kind }
    }

    /// Adds this unit's parameters. `zero` starts the weights at zero.
    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R, zero: bool) {
        let w = if zero { Tensor::zeros(vec![self.cin, self.cout]) } else { glorot(self.cin, self.cout, rng) };
        store.insert(format!("{}.w", self.name), w, true);
        match self.kind {
            DenseKind::Affine => store.insert(format!("{}.b", self.name), Tensor::zeros(vec![self.cout]), true),
            DenseKind::NoBias => {}
            DenseKind::BnRelu => {
                store.insert(format!("{}.bn.gamma", self.name), Tensor::filled(vec![self.cout], 1.0), true);
                store.insert(format!("{}.bn.beta", self.name), Tensor::zeros(vec![self.cout]), true);
                store.insert(format!("{}.bn.mean", self.name), Tensor::zeros(vec![self.cout]), false);
                store.insert(format!("{}.bn.var", self.name), Tensor::filled(vec![self.cout], 1.0), false);
            }
        }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.var(&format!("{}.w", self.name))?;
        match self.kind {
            DenseKind::Affine => {
                let b = f.var(&format!("{}.b", self.name))?;
                f.g.linear(x, w, Some(b))
            }
            DenseKind::NoBias => f.g.linear(x, w, None),
            DenseKind::BnRelu => {
                let h = f.g.linear(x, w, None)?;
                let prefix = format!("{}.bn", self.name);
                let gamma = f.var(&format!("{prefix}.gamma"))?;
                let beta = f.var(&format!("{prefix}.beta"))?;
                let running = f.binder.store().running_stats(&prefix)?;
                let (y, update) = f.g.batch_norm(h, gamma, beta, &running, f.training)?;
                if let Some(u) = update {
                    f.bn_updates.push((prefix, u));
                }
                Ok(f.g.relu(y))
            }
        }
    }
}
