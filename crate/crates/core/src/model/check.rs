//! Finite-difference check of the whole network.

use std::collections::HashMap;

use super::net::{Geometry, Model};
use super::params::Binder;
use crate::tensor::gradcheck::{self, GradReport};
use crate::tensor::{Tensor, Var};
use crate::train::total_loss;
use crate::Result;

/// Compares backward gradients of the loss (cross-entropy plus weighted
/// augmentation losses) with central differences for every trainable
/// scalar. `training` selects batch statistics and a fixed dropout mask
/// drawn from `seed`; otherwise the running statistics are used.
pub fn check_model(
    model: &Model,
    geom: &Geometry,
    input: &[f32],
    labels: &[u32],
    training: bool,
    seed: u64,
) -> Result<GradReport> {
    let names: Vec<String> =
        model.params().iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.clone()).collect();
    let tensors: Vec<Tensor> = names.iter().map(|n| model.params().get(n).map(|p| p.tensor.clone())).collect::<Result<_>>()?;
    let weights = model.config().effective_loss_weights();
    gradcheck::check(&tensors, |g, leaves: &[Var]| {
        let bound: HashMap<String, Var> = names.iter().cloned().zip(leaves.iter().copied()).collect();
        let out = model.forward(g, Binder::with_bound(model.params(), bound), geom, input, training, seed)?;
        let ce = g.cross_entropy(out.logits, labels, None)?;
        total_loss(g, ce, &out.aug_losses, &weights)
    })
}
