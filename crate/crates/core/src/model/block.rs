//! The bilateral context block: neighbourhood construction, bilateral
//! offsets, augmented local context and mixed aggregation at one level.

use rand::Rng;

use super::config::{Aggregation, AugLoss, OffsetOrder};
use super::layers::{Dense, DenseKind, Fwd};
use super::params::ParamStore;
use crate::spatial::NeighborIndex;
use crate::tensor::Var;
use crate::Result;

/// Gathered neighbourhood of one value space.
pub struct Context {
    /// `[n, k, 2c]`: centroid value followed by the neighbour's offset from it.
    pub ctx: Var,
    /// `[n, k, c]` neighbour values.
    pub vj: Var,
    /// `[n, k, c]` centroid values broadcast over the neighbours.
    pub vi: Var,
    /// `[n, k, c]` relative values `vj − vi`.
    pub rel: Var,
}

/// `out[i, j] = concat(v_i, v_j − v_i)`.
pub fn local_context(f: &mut Fwd, values: Var, neighbors: &NeighborIndex) -> Result<Context> {
    let k = neighbors.k();
    let vj = f.g.neighbor_gather(values, neighbors.as_slice(), k)?;
    let own = NeighborIndex::self_index(neighbors.len(), k);
    let vi = f.g.neighbor_gather(values, own.as_slice(), k)?;
    let rel = f.g.sub(vj, vi)?;
    let ctx = f.g.concat(&[vi, rel], 2)?;
    Ok(Context { ctx, vj, vi, rel })
}

/// Result of the bilateral augmentation unit.
pub struct Augmented {
    /// `[n, k, d′]` augmented local context.
    pub g: Var,
    pub shifted_p: Option<Var>,
    pub shifted_f: Option<Var>,
}

pub struct BlockOutput {
    /// `[N_m, out_dim]`.
    pub out: Var,
    /// Sum of the active augmentation losses, if any.
    pub aug_loss: Option<Var>,
    pub shifted_p: Option<Var>,
    pub shifted_f: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub level: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    order: OffsetOrder,
    aug_loss: AugLoss,
    aggregation: Aggregation,
    offset_p: Option<Dense>,
    offset_f: Option<Dense>,
    proj_p: Dense,
    proj_f: Dense,
    refine: Option<Dense>,
    score: Option<Dense>,
    lift: Option<Dense>,
}

impl Block {
    pub fn new(
        level: usize,
        in_dim: usize,
        out_dim: usize,
        order: OffsetOrder,
        aug_loss: AugLoss,
        aggregation: Aggregation,
    ) -> Self {
        let name = |part: &str| format!("enc{level}.{part}");
        let d = in_dim;
        let half = out_dim / 2;
        let (offset_p, offset_f, aug_p, aug_f) = match order {
            OffsetOrder::None => (None, None, 6, 2 * d),
            OffsetOrder::PThenF => (
                Some(Dense::new(name("offset_p"), 2 * d, 3, DenseKind::Affine)),
                Some(Dense::new(name("offset_f"), 9, d, DenseKind::Affine)),
                9,
                3 * d,
            ),
            OffsetOrder::FThenP => (
                Some(Dense::new(name("offset_p"), 3 * d, 3, DenseKind::Affine)),
                Some(Dense::new(name("offset_f"), 6, d, DenseKind::Affine)),
                9,
                3 * d,
            ),
        };
        let uses_mean = aggregation != Aggregation::Max;
        Self {
            level,
            in_dim,
            out_dim,
            order,
            aug_loss: if order == OffsetOrder::None { AugLoss::default() } else { aug_loss },
            aggregation,
            offset_p,
            offset_f,
            proj_p: Dense::new(name("proj_p"), aug_p, half / 2, DenseKind::BnRelu),
            proj_f: Dense::new(name("proj_f"), aug_f, half / 2, DenseKind::BnRelu),
            refine: uses_mean.then(|| Dense::new(name("refine"), half, half, DenseKind::BnRelu)),
            score: uses_mean.then(|| Dense::new(name("score"), half, half, DenseKind::NoBias)),
            lift: (aggregation != Aggregation::Mixed).then(|| Dense::new(name("lift"), half, out_dim, DenseKind::Affine)),
        }
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for d in self.offset_p.iter().chain(&self.offset_f) {
            d.register(store, rng, true);
        }
        for d in [&self.proj_p, &self.proj_f].into_iter().chain(&self.refine).chain(&self.score).chain(&self.lift) {
            d.register(store, rng, false);
        }
    }

    /// Offsets in both spaces and the augmented context `G`.
    pub fn augment(&self, f: &mut Fwd, p: &Context, ft: &Context) -> Result<Augmented> {
        let (aug_p, aug_f, shifted_p, shifted_f) = match self.order {
            OffsetOrder::None => (p.ctx, ft.ctx, None, None),
            OffsetOrder::PThenF => {
                let (sp, aug_p) = self.shift(f, self.offset_p.as_ref(), ft.ctx, p)?;
                let (sf, aug_f) = self.shift(f, self.offset_f.as_ref(), aug_p, ft)?;
                (aug_p, aug_f, Some(sp), Some(sf))
            }
            OffsetOrder::FThenP => {
                let (sf, aug_f) = self.shift(f, self.offset_f.as_ref(), p.ctx, ft)?;
                let (sp, aug_p) = self.shift(f, self.offset_p.as_ref(), aug_f, p)?;
                (aug_p, aug_f, Some(sp), Some(sf))
            }
        };
        let gp = self.proj_p.apply(f, aug_p)?;
        let gf = self.proj_f.apply(f, aug_f)?;
        let g = f.g.concat(&[gp, gf], 2)?;
        Ok(Augmented { g, shifted_p, shifted_f })
    }

    /// Shifts `target`'s neighbours by an offset predicted from `source` and
    /// returns `(shifted, [v_i; v_j − v_i; shifted])`.
    fn shift(&self, f: &mut Fwd, unit: Option<&Dense>, source: Var, target: &Context) -> Result<(Var, Var)> {
        let unit = unit.expect("offset units exist for ordered variants");
        let offset = unit.apply(f, source)?;
        let shifted = f.g.add(target.vj, offset)?;
        let aug = f.g.concat(&[target.vi, target.rel, shifted], 2)?;
        Ok((shifted, aug))
    }

    /// Max, attentive mean or both, always `out_dim` channels wide.
    pub fn aggregate(&self, f: &mut Fwd, g: Var) -> Result<Var> {
        let max = (self.aggregation != Aggregation::Mean).then(|| f.g.neighbor_max(g)).transpose()?;
        let mean = match (&self.refine, &self.score) {
            (Some(refine), Some(score)) => {
                let values = refine.apply(f, g)?;
                let scores = score.apply(f, g)?;
                Some(f.g.neighbor_weighted_mean(values, scores)?)
            }
            _ => None,
        };
        match (max, mean) {
            (Some(a), Some(b)) => f.g.concat(&[a, b], 1),
            (Some(one), None) | (None, Some(one)) => self.lift.as_ref().expect("lift exists for single modes").apply(f, one),
            (None, None) => unreachable!("at least one branch is active"),
        }
    }

    /// Runs the block at resolution `N_{m−1}` and keeps the rows at `sample`.
    ///
    /// `positions` is `[n, 3]`, `features` is `[n, in_dim]`, and `neighbors`
    /// indexes the same `n` points.
    pub fn forward(
        &self,
        f: &mut Fwd,
        positions: Var,
        features: Var,
        neighbors: &NeighborIndex,
        sample: &[usize],
        mean_loss: bool,
    ) -> Result<BlockOutput> {
        let p = local_context(f, positions, neighbors)?;
        let ft = local_context(f, features, neighbors)?;
        let aug = self.augment(f, &p, &ft)?;
        let pooled = self.aggregate(f, aug.g)?;
        let out = f.g.gather_rows(pooled, sample)?;

        let scale = if mean_loss { 1.0 / sample.len() as f32 } else { 1.0 };
        let mut terms = Vec::new();
        if let (true, Some(sp)) = (self.aug_loss.geometric, aug.shifted_p) {
            terms.push(center_loss_at(f, sp, positions, sample, scale)?);
        }
        if let (true, Some(sf)) = (self.aug_loss.semantic, aug.shifted_f) {
            terms.push(center_loss_at(f, sf, features, sample, scale)?);
        }
        let aug_loss = match terms.as_slice() {
            [] => None,
            [one] => Some(*one),
            [a, b] => Some(f.g.add(*a, *b)?),
            _ => unreachable!(),
        };
        Ok(BlockOutput { out, aug_loss, shifted_p: aug.shifted_p, shifted_f: aug.shifted_f })
    }

    pub fn parameter_layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.offset_p.iter().chain(&self.offset_f).collect();
        v.extend([&self.proj_p, &self.proj_f]);
        v.extend(self.refine.iter().chain(&self.score).chain(&self.lift));
        v
    }
}

/// Centre-distance loss restricted to the sampled centroids.
fn center_loss_at(f: &mut Fwd, shifted: Var, centroids: Var, sample: &[usize], scale: f32) -> Result<Var> {
    let s = f.g.gather_rows(shifted, sample)?;
    let c = f.g.gather_rows(centroids, sample)?;
    f.g.center_distance_loss(s, c, scale)
}
