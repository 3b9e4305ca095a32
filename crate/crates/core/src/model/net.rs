//! Full network: extractor, encoder cascade, per-level decoders, fusion and
//! prediction head.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::Block;
use super::config::{Fusion, ModelConfig, Sampler, DECODER_WIDTH, EXTRACTOR_DIM};
use super::layers::{Dense, DenseKind, Fwd};
use super::params::{Binder, ParamStore};
use crate::spatial::{self, NeighborIndex, Point};
use crate::tensor::{Graph, RunningStats, Tensor, Var};
use crate::{Error, Result};

/// Non-differentiable structure of one cloud: the resolution pyramid and
/// every index list the network gathers with.
#[derive(Clone, Debug)]
pub struct Geometry {
    /// Positions per level, level 0 being the input cloud.
    pub positions: Vec<Vec<Point>>,
    /// `samples[m − 1]` indexes level `m − 1` rows kept at level `m`.
    pub samples: Vec<Vec<usize>>,
    /// `neighbors[m − 1]`: neighbourhoods of level `m − 1` used by block `m`.
    pub neighbors: Vec<NeighborIndex>,
    /// `upsample[m − 1]`: nearest level-`m` row for every level-`m − 1` point.
    pub upsample: Vec<Vec<usize>>,
}

impl Geometry {
    pub fn sizes(&self) -> Vec<usize> {
        self.positions.iter().map(Vec::len).collect()
    }

    pub fn num_points(&self) -> usize {
        self.positions[0].len()
    }
}

/// Per-level values kept for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct LevelTrace {
    /// `[n, 3]` positions of the block's input level.
    pub positions: Var,
    /// `[n, d]` features entering the block.
    pub features: Var,
    pub shifted_p: Option<Var>,
    pub shifted_f: Option<Var>,
}

pub struct ForwardOutput {
    /// `[N, Q]`.
    pub logits: Var,
    /// Unweighted augmentation loss per level.
    pub aug_losses: Vec<Option<Var>>,
    /// Encoder outputs `S_1 … S_M`.
    pub encoded: Vec<Var>,
    /// Full-resolution decoder maps that enter fusion.
    pub maps: Vec<Var>,
    /// `[N, M]` fusion weights for the weighted fusion modes.
    pub fusion_weights: Option<Var>,
    pub fused: Var,
    pub traces: Vec<LevelTrace>,
    pub bn_updates: Vec<(String, RunningStats)>,
    /// Graph leaf of every parameter the pass touched.
    pub bound: HashMap<String, Var>,
}

/// One upsampling chain from level `m` back to full resolution.
#[derive(Clone, Debug)]
struct Decoder {
    level: usize,
    /// `(pre, post)` per hop, from level `m` down to level 1.
    hops: Vec<(Dense, Dense)>,
    phi: Option<Dense>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    extractor: Dense,
    blocks: Vec<Block>,
    decoders: Vec<Decoder>,
    squeeze: Option<Dense>,
    head: Vec<Dense>,
    out: Dense,
    params: ParamStore,
}

/// Decoder width at level `l`.
fn decoder_width(cfg: &ModelConfig, l: usize) -> usize {
    if l == 0 {
        DECODER_WIDTH
    } else {
        cfg.levels[l - 1].dim
    }
}

impl Model {
    /// Builds the network and initialises its parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let v = &config.variant;
        let levels = config.levels.len();
        let extractor = Dense::new("extractor", config.input_channels, EXTRACTOR_DIM, DenseKind::BnRelu);
        let blocks: Vec<Block> = (1..=levels)
            .map(|m| Block::new(m, config.width(m - 1), config.width(m), v.offset_order, v.aug_loss, v.aggregation))
            .collect();

        let decoded: Vec<usize> = if v.fusion == Fusion::LastOnly { vec![levels] } else { (1..=levels).collect() };
        let decoders = decoded
            .into_iter()
            .map(|m| {
                let hops = (1..=m)
                    .rev()
                    .map(|j| {
                        let (from, to) = (decoder_width(&config, j), decoder_width(&config, j - 1));
                        // the current map at level m is the encoder output itself
                        let from = if j == m { config.width(m) } else { from };
                        let pre = Dense::new(format!("dec{m}.hop{j}.pre"), from, to, DenseKind::BnRelu);
                        let post =
                            Dense::new(format!("dec{m}.hop{j}.post"), to + config.width(j - 1), to, DenseKind::BnRelu);
                        (pre, post)
                    })
                    .collect();
                let phi = (v.fusion == Fusion::PointwiseAdaptive)
                    .then(|| Dense::new(format!("dec{m}.phi"), DECODER_WIDTH, 1, DenseKind::Affine));
                Decoder { level: m, hops, phi }
            })
            .collect();

        let squeeze = (v.fusion == Fusion::ScalarWeights)
            .then(|| Dense::new("fusion.squeeze", DECODER_WIDTH * levels, levels, DenseKind::Affine));
        let mut width = if v.fusion == Fusion::Concat { DECODER_WIDTH * levels } else { DECODER_WIDTH };
        let mut head = Vec::new();
        for (i, &d) in config.head_dims.iter().enumerate() {
            head.push(Dense::new(format!("head.fc{}", i + 1), width, d, DenseKind::BnRelu));
            width = d;
        }
        let out = Dense::new("head.out", width, config.num_classes, DenseKind::Affine);

        let mut model =
            Self { config, extractor, blocks, decoders, squeeze, head, out, params: ParamStore::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        model.extractor.register(&mut store, &mut rng, false);
        for b in &model.blocks {
            b.register(&mut store, &mut rng);
        }
        for d in &model.decoders {
            for (pre, post) in &d.hops {
                pre.register(&mut store, &mut rng, false);
                post.register(&mut store, &mut rng, false);
            }
            if let Some(phi) = &d.phi {
                phi.register(&mut store, &mut rng, false);
            }
        }
        if let Some(s) = &model.squeeze {
            s.register(&mut store, &mut rng, false);
        }
        for h in &model.head {
            h.register(&mut store, &mut rng, false);
        }
        model.out.register(&mut store, &mut rng, false);
        model.params = store;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Writes batch-norm running statistics produced by a training pass.
    pub fn apply_bn_updates(&mut self, updates: &[(String, RunningStats)]) -> Result<()> {
        for (prefix, stats) in updates {
            self.params.set_running_stats(prefix, stats)?;
        }
        Ok(())
    }

    /// Samples the pyramid and precomputes every neighbour list.
    pub fn geometry(&self, positions: &[Point]) -> Result<Geometry> {
        let sizes = self.config.level_sizes(positions.len())?;
        let v = &self.config.variant;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.sampler_seed);
        let mut levels = vec![positions.to_vec()];
        let mut samples = Vec::new();
        let mut neighbors = Vec::new();
        let mut upsample = Vec::new();
        for m in 1..sizes.len() {
            let prev = &levels[m - 1];
            let want = sizes[m].min(prev.len());
            let set = match v.sampler {
                Sampler::Fps => spatial::fps(prev, want, 0)?,
                Sampler::Random => spatial::random_sample(prev, want, &mut rng)?,
            };
            neighbors.push(spatial::dilated_knn(prev, prev, self.config.k, v.knn_dilation)?);
            upsample.push(spatial::nearest_indices(&set.positions, prev)?);
            samples.push(set.indices);
            levels.push(set.positions);
        }
        Ok(Geometry { positions: levels, samples, neighbors, upsample })
    }

    /// Records the network on `g`. `input` is row-major `[N, input_channels]`.
    /// Dropout masks in training mode are drawn from `seed`.
    pub fn forward(
        &self,
        g: &mut Graph,
        binder: Binder,
        geom: &Geometry,
        input: &[f32],
        training: bool,
        seed: u64,
    ) -> Result<ForwardOutput> {
        let n = geom.num_points();
        if n == 0 {
            return Err(Error::EmptyInput("cloud has no points".into()));
        }
        let c = self.config.input_channels;
        if input.len() != n * c {
            return Err(Error::Dimension(format!("{} input values for {n} points of {c} channels", input.len())));
        }
        if geom.samples.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "geometry has {} levels, model has {}",
                geom.samples.len(),
                self.blocks.len()
            )));
        }
        let mut f = Fwd { g, binder, training, rng: ChaCha8Rng::seed_from_u64(seed), bn_updates: Vec::new() };

        let x = f.g.input(Tensor::new(vec![n, c], input.to_vec())?);
        let extracted = self.extractor.apply(&mut f, x)?;

        // encoder cascade
        let mut skips = vec![extracted];
        let mut aug_losses = Vec::new();
        let mut traces = Vec::new();
        let mut features = extracted;
        for (m, block) in self.blocks.iter().enumerate() {
            let pos = &geom.positions[m];
            let pos_var = f.g.input(Tensor::new(vec![pos.len(), 3], spatial::flatten(pos))?);
            let out =
                block.forward(&mut f, pos_var, features, &geom.neighbors[m], &geom.samples[m], self.config.mean_aug_loss)?;
            traces.push(LevelTrace {
                positions: pos_var,
                features,
                shifted_p: out.shifted_p,
                shifted_f: out.shifted_f,
            });
            aug_losses.push(out.aug_loss);
            features = out.out;
            skips.push(features);
        }

        // one decoder per fused level
        let mut maps = Vec::with_capacity(self.decoders.len());
        let mut summaries = Vec::new();
        for d in &self.decoders {
            let mut current = skips[d.level];
            for ((pre, post), j) in d.hops.iter().zip((1..=d.level).rev()) {
                let lifted = pre.apply(&mut f, current)?;
                let up = f.g.gather_rows(lifted, &geom.upsample[j - 1])?;
                let joined = f.g.concat(&[up, skips[j - 1]], 1)?;
                current = post.apply(&mut f, joined)?;
            }
            if let Some(phi) = &d.phi {
                summaries.push(phi.apply(&mut f, current)?);
            }
            maps.push(current);
        }

        let (fused, fusion_weights) = self.fuse(&mut f, &maps, &summaries, n)?;

        let mut h = fused;
        for layer in &self.head {
            h = layer.apply(&mut f, h)?;
        }
        let dropout = self.config.dropout;
        let mut rng = f.rng.clone();
        h = f.g.dropout(h, dropout, training, &mut rng)?;
        let logits = self.out.apply(&mut f, h)?;

        Ok(ForwardOutput {
            logits,
            aug_losses,
            encoded: skips[1..].to_vec(),
            maps,
            fusion_weights,
            fused,
            traces,
            bn_updates: f.bn_updates,
            bound: f.binder.into_bound(),
        })
    }

    fn fuse(&self, f: &mut Fwd, maps: &[Var], summaries: &[Var], n: usize) -> Result<(Var, Option<Var>)> {
        match self.config.variant.fusion {
            Fusion::LastOnly => Ok((*maps.last().expect("one decoder"), None)),
            Fusion::Sum => {
                let mut acc = maps[0];
                for &m in &maps[1..] {
                    acc = f.g.add(acc, m)?;
                }
                Ok((acc, None))
            }
            Fusion::Product => {
                let mut acc = maps[0];
                for &m in &maps[1..] {
                    acc = f.g.mul(acc, m)?;
                }
                Ok((acc, None))
            }
            Fusion::Concat => Ok((f.g.concat(maps, 1)?, None)),
            Fusion::PointwiseAdaptive => {
                let phi = f.g.concat(summaries, 1)?;
                let weights = f.g.softmax(phi, 1)?;
                Ok((f.g.weighted_maps(maps, weights)?, Some(weights)))
            }
            Fusion::ScalarWeights => {
                let squeezed: Vec<Var> = maps.iter().map(|&m| f.g.mean_rows(m)).collect::<Result<_>>()?;
                let joined = f.g.concat(&squeezed, 1)?;
                let scores = self.squeeze.as_ref().expect("squeeze layer exists").apply(f, joined)?;
                let weights = f.g.softmax(scores, 1)?;
                let weights = f.g.gather_rows(weights, &vec![0; n])?;
                Ok((f.g.weighted_maps(maps, weights)?, Some(weights)))
            }
        }
    }

    /// Eval-mode logits `[N, Q]`, row-major.
    pub fn predict(&self, geom: &Geometry, input: &[f32]) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, Binder::new(&self.params), geom, input, false, 0)?;
        Ok(g.data(out.logits).to_vec())
    }

    /// Arg-max class per point.
    pub fn predict_labels(&self, geom: &Geometry, input: &[f32]) -> Result<Vec<u32>> {
        let logits = self.predict(geom, input)?;
        Ok(argmax_rows(&logits, self.config.num_classes))
    }
}

/// Arg-max of each row, ties to the lowest class.
pub fn argmax_rows(values: &[f32], width: usize) -> Vec<u32> {
    values
        .chunks_exact(width)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}
