//! Define-by-run tape. Every op appends a node holding its output value and
//! whatever the backward rule needs; `backward` walks the tape in reverse.

use rand::Rng;

use super::kernels;
use super::Tensor;
use crate::{Error, Result};

/// Batch-norm momentum applied to running statistics.
pub const BN_MOMENTUM: f32 = 0.99;
/// Batch-norm variance floor.
pub const BN_EPS: f32 = 1e-6;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, inv_std: Vec<f32>, batch: bool },
    Softmax { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Dropout { x: Var, mask: Vec<f32> },
    Gather { x: Var, idx: Vec<usize> },
    NeighborMax { x: Var, argmax: Vec<usize> },
    NeighborWeightedMean { x: Var, scores: Var, weights: Vec<f32> },
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, probs: Vec<f32>, count: usize },
    Sum(Var),
    MeanRows(Var),
    Reshape(Var),
    CenterLoss { shifted: Var, centroids: Var, units: Vec<f32>, scale: f32 },
    WeightedMaps { maps: Vec<Var>, weights: Var },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Sum(a) | Op::MeanRows(a) | Op::Reshape(a) => vec![*a],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Softmax { x, .. } | Op::Dropout { x, .. } | Op::Gather { x, .. } | Op::NeighborMax { x, .. } => {
                vec![*x]
            }
            Op::Concat { xs, .. } => xs.clone(),
            Op::NeighborWeightedMean { x, scores, .. } => vec![*x, *scores],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::CenterLoss { shifted, centroids, .. } => vec![*shifted, *centroids],
            Op::WeightedMaps { maps, weights } => {
                let mut v = maps.clone();
                v.push(*weights);
                v
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf)
    }

    /// Trainable leaf; `backward` accumulates into its gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let parents = op.parents();
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        #[cfg(debug_assertions)]
        if !matches!(op, Op::Leaf) && parents.iter().all(|p| self.nodes[p.0].value.all_finite()) {
            debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<Vec<f32>> {
        self.same_shape(a, b, what)?;
        Ok(self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let data = self.data(a).iter().map(|v| v * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Relu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Column means of an `[n, c]` tensor, shaped `[1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() != 2 {
            return Err(Error::Dimension(format!("mean_rows expects rank 2, got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let mut out = vec![0.0f32; c];
        for row in self.data(a).chunks_exact(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f32);
        Ok(self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(a)))
    }

    /// Per-row affine map over the last axis: `x[.., c_in] · w[c_in, c_out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.len() != 2 || xs.len() < 2 || *xs.last().unwrap() != ws[0] {
            return Err(Error::Dimension(format!("linear: input {xs:?} against weight {ws:?}")));
        }
        let (cin, cout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::Dimension(format!("linear: bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / cin;
        let mut out = vec![0.0f32; rows * cout];
        if let Some(b) = b {
            let bias = self.data(b);
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bias);
            }
        }
        kernels::matmul_acc(self.data(x), self.data(w), &mut out, rows, cin, cout, b.is_some());
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = cout;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }))
    }

    /// Batch normalisation over every axis but the last.
    ///
    /// In training mode the batch statistics are used and the updated running
    /// statistics are returned; in eval mode `running` is used as-is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        training: bool,
    ) -> Result<(Var, Option<RunningStats>)> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        let n = self.value(x).numel() / c;
        if shape.len() < 2 || n == 0 {
            return Err(Error::EmptyInput("batch_norm needs at least one row".into()));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running.mean.len() != c || running.var.len() != c {
            return Err(Error::Dimension(format!("batch_norm: parameters do not match {c} channels")));
        }
        let xd = self.data(x);
        let (mean, var, update) = if training {
            let mut mean = vec![0.0f64; c];
            for row in xd.chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0f64; c];
            for row in xd.chunks_exact(c) {
                for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v as f64 - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            let mean: Vec<f32> = mean.into_iter().map(|v| v as f32).collect();
            let var: Vec<f32> = var.into_iter().map(|v| v as f32).collect();
            let update = RunningStats {
                mean: running.mean.iter().zip(&mean).map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b).collect(),
                var: running.var.iter().zip(&var).map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b).collect(),
            };
            (mean, var, Some(update))
        } else {
            (running.mean.clone(), running.var.clone(), None)
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(h * g[j] + bt[j]);
            }
        }
        let node = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch: training },
        );
        Ok((node, update))
    }

    /// Softmax along `axis`, stabilised by subtracting the running maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!("softmax axis {axis} for rank {}", shape.len())));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0f32; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| xd[at(j)]).fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f32;
                for j in 0..len {
                    let e = (xd[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Dimension(format!("concat: {s:?} against {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; identity in eval.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f32, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Dropout { x, mask }))
    }

    fn gather(&mut self, x: Var, idx: Vec<usize>, lead: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = shape[0];
        let cols: usize = shape[1..].iter().product();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Index { index: bad, len: rows });
        }
        if idx.is_empty() {
            return Err(Error::EmptyInput("gather with no indices".into()));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            out.extend_from_slice(&xd[i * cols..(i + 1) * cols]);
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend_from_slice(&shape[1..]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Gather { x, idx }))
    }

    /// Selects rows of `x` (first axis) by index.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.gather(x, idx.to_vec(), &[idx.len()])
    }

    /// `out[i, j, :] = x[idx[i*k + j], :]` for a flat `[q*k]` index list.
    pub fn neighbor_gather(&mut self, x: Var, idx: &[usize], k: usize) -> Result<Var> {
        if k == 0 || idx.len() % k != 0 {
            return Err(Error::Dimension(format!("{} indices do not split into rows of {k}", idx.len())));
        }
        self.gather(x, idx.to_vec(), &[idx.len() / k, k])
    }

    fn rank3(&self, x: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [n, k, c] => Ok((n, k, c)),
            ref s => Err(Error::Dimension(format!("{what} expects [n, k, c], got {s:?}"))),
        }
    }

    /// Max over the neighbour axis of `[n, k, c]`; ties go to the lowest slot.
    pub fn neighbor_max(&mut self, x: Var) -> Result<Var> {
        let (n, k, c) = self.rank3(x, "neighbor_max")?;
        let xd = self.data(x);
        let mut out = vec![0.0f32; n * c];
        let mut argmax = vec![0usize; n * c];
        for i in 0..n {
            let block = &xd[i * k * c..(i + 1) * k * c];
            for ch in 0..c {
                let mut best = block[ch];
                let mut arg = 0;
                for j in 1..k {
                    let v = block[j * c + ch];
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
                out[i * c + ch] = best;
                argmax[i * c + ch] = arg;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::NeighborMax { x, argmax }))
    }

    /// Softmax-weighted mean over the neighbour axis, weights per channel.
    pub fn neighbor_weighted_mean(&mut self, x: Var, scores: Var) -> Result<Var> {
        let (n, k, c) = self.rank3(x, "neighbor_weighted_mean")?;
        self.same_shape(x, scores, "neighbor_weighted_mean")?;
        let xd = self.data(x);
        let sd = self.data(scores);
        let mut weights = vec![0.0f32; xd.len()];
        let mut out = vec![0.0f32; n * c];
        for i in 0..n {
            let base = i * k * c;
            for ch in 0..c {
                let max = (0..k).map(|j| sd[base + j * c + ch]).fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f32;
                for j in 0..k {
                    let e = (sd[base + j * c + ch] - max).exp();
                    weights[base + j * c + ch] = e;
                    total += e;
                }
                let mut acc = 0.0f32;
                for j in 0..k {
                    let w = weights[base + j * c + ch] / total;
                    weights[base + j * c + ch] = w;
                    acc += w * xd[base + j * c + ch];
                }
                out[i * c + ch] = acc;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::NeighborWeightedMean { x, scores, weights }))
    }

    /// Mean negative log-likelihood over points whose label is not `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u32], ignore: Option<u32>) -> Result<Var> {
        let (n, q) = match *self.shape(logits) {
            [n, q] => (n, q),
            ref s => return Err(Error::Dimension(format!("cross_entropy expects [n, Q], got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
        }
        let mut kept = Vec::with_capacity(n);
        for &l in labels {
            if Some(l) == ignore {
                kept.push(None);
            } else if (l as usize) < q {
                kept.push(Some(l as usize));
            } else {
                return Err(Error::Validation(format!("label {l} outside [0, {q})")));
            }
        }
        let count = kept.iter().flatten().count();
        if count == 0 {
            return Err(Error::UndefinedLoss);
        }
        let ld = self.data(logits);
        let mut probs = vec![0.0f32; n * q];
        let mut total = 0.0f64;
        for (i, label) in kept.iter().enumerate() {
            let row = &ld[i * q..(i + 1) * q];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let denom: f32 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for j in 0..q {
                probs[i * q + j] = (row[j] - max).exp() / denom;
            }
            if let Some(t) = label {
                total += (log_denom - (row[*t] - max)) as f64;
            }
        }
        let loss = (total / count as f64) as f32;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: kept, probs, count }))
    }

    /// `scale · Σ_i ‖mean_j shifted[i, j, :] − centroids[i, :]‖₂`.
    pub fn center_distance_loss(&mut self, shifted: Var, centroids: Var, scale: f32) -> Result<Var> {
        let (n, k, c) = self.rank3(shifted, "center_distance_loss")?;
        if self.shape(centroids) != [n, c] {
            return Err(Error::Dimension(format!(
                "centroids {:?} against shifted neighbours [{n}, {k}, {c}]",
                self.shape(centroids)
            )));
        }
        let sd = self.data(shifted);
        let cd = self.data(centroids);
        let mut units = vec![0.0f32; n * c];
        let mut total = 0.0f64;
        let mut diff = vec![0.0f32; c];
        for i in 0..n {
            diff.fill(0.0);
            for j in 0..k {
                let row = &sd[(i * k + j) * c..(i * k + j + 1) * c];
                diff.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            let mut sq = 0.0f32;
            for (ch, d) in diff.iter_mut().enumerate() {
                *d = *d / k as f32 - cd[i * c + ch];
                sq += *d * *d;
            }
            let norm = sq.sqrt();
            total += norm as f64;
            if norm > 1e-12 {
                for ch in 0..c {
                    units[i * c + ch] = diff[ch] / norm;
                }
            }
        }
        let loss = (total * scale as f64) as f32;
        Ok(self.push(Tensor::scalar(loss), Op::CenterLoss { shifted, centroids, units, scale }))
    }

    /// `out[i, :] = Σ_m weights[i, m] · maps[m][i, :]`.
    pub fn weighted_maps(&mut self, maps: &[Var], weights: Var) -> Result<Var> {
        let first = *maps.first().ok_or_else(|| Error::Dimension("no maps to fuse".into()))?;
        let (n, c) = match *self.shape(first) {
            [n, c] => (n, c),
            ref s => return Err(Error::Dimension(format!("fused maps must be [n, c], got {s:?}"))),
        };
        for &m in maps {
            self.same_shape(first, m, "weighted_maps")?;
        }
        let count = maps.len();
        if self.shape(weights) != [n, count] {
            return Err(Error::Dimension(format!(
                "fusion weights {:?} for {count} maps of {n} points",
                self.shape(weights)
            )));
        }
        let wd = self.data(weights);
        let mut out = vec![0.0f32; n * c];
        for (m, &map) in maps.iter().enumerate() {
            let md = self.data(map);
            for i in 0..n {
                let w = wd[i * count + m];
                for ch in 0..c {
                    out[i * c + ch] += w * md[i * c + ch];
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::WeightedMaps { maps: maps.to_vec(), weights }))
    }

    /// Reverse sweep from a one-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                self.nodes[id].value.accumulate_grad(&g);
            } else {
                self.propagate(id, &g, &mut grads);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, delta: Vec<f32>| match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    send(*a, g.to_vec());
                }
                if self.needs(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    send(*a, g.to_vec());
                }
                if self.needs(*b) {
                    send(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    send(*a, g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect());
                }
                if self.needs(*b) {
                    send(*b, g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|v| v * f).collect()),
            Op::Relu(a) => {
                let y = node.value.data();
                send(*a, g.iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::MeanRows(a) => {
                let (n, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut d = Vec::with_capacity(n * c);
                for _ in 0..n {
                    d.extend(g.iter().map(|v| v / n as f32));
                }
                send(*a, d);
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (cin, cout) = (ws[0], ws[1]);
                let rows = g.len() / cout;
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; rows * cin];
                    kernels::matmul_nt_acc(g, self.data(*w), &mut dx, rows, cout, cin);
                    send(*x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0f32; cin * cout];
                    kernels::matmul_tn_acc(self.data(*x), g, &mut dw, rows, cin, cout);
                    send(*w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![0.0f32; cout];
                        for row in g.chunks_exact(cout) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        send(*b, db);
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let c = inv_std.len();
                let n = g.len() / c;
                let mut sum_g = vec![0.0f32; c];
                let mut sum_gx = vec![0.0f32; c];
                for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                if self.needs(*x) {
                    let gm = self.data(*gamma);
                    let mut dx = Vec::with_capacity(g.len());
                    let nf = n as f32;
                    for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            let d = if *batch {
                                gm[j] * inv_std[j] / nf * (nf * grow[j] - sum_g[j] - hrow[j] * sum_gx[j])
                            } else {
                                gm[j] * inv_std[j] * grow[j]
                            };
                            dx.push(d);
                        }
                    }
                    send(*x, dx);
                }
                if self.needs(*gamma) {
                    send(*gamma, sum_gx);
                }
                if self.needs(*beta) {
                    send(*beta, sum_g);
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0f32; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f32 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                send(*x, dx);
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = o * total * inner + offset * inner;
                            d.extend_from_slice(&g[start..start + len * inner]);
                        }
                        send(v, d);
                    }
                    offset += len;
                }
            }
            Op::Dropout { x, mask } => send(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Gather { x, idx } => {
                let cols = g.len() / idx.len();
                let mut dx = vec![0.0f32; self.value(*x).numel()];
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g[r * cols..(r + 1) * cols];
                    dx[i * cols..(i + 1) * cols].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
                send(*x, dx);
            }
            Op::NeighborMax { x, argmax } => {
                let [n, k, c] = self.shape(*x)[..] else { unreachable!() };
                let mut dx = vec![0.0f32; n * k * c];
                for i in 0..n {
                    for ch in 0..c {
                        let j = argmax[i * c + ch];
                        dx[(i * k + j) * c + ch] += g[i * c + ch];
                    }
                }
                send(*x, dx);
            }
            Op::NeighborWeightedMean { x, scores, weights } => {
                let [n, k, c] = self.shape(*x)[..] else { unreachable!() };
                let xd = self.data(*x);
                let out = node.value.data();
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; n * k * c];
                    for i in 0..n {
                        for j in 0..k {
                            for ch in 0..c {
                                let at = (i * k + j) * c + ch;
                                dx[at] = g[i * c + ch] * weights[at];
                            }
                        }
                    }
                    send(*x, dx);
                }
                if self.needs(*scores) {
                    let mut ds = vec![0.0f32; n * k * c];
                    for i in 0..n {
                        for j in 0..k {
                            for ch in 0..c {
                                let at = (i * k + j) * c + ch;
                                ds[at] = g[i * c + ch] * weights[at] * (xd[at] - out[i * c + ch]);
                            }
                        }
                    }
                    send(*scores, ds);
                }
            }
            Op::CrossEntropy { logits, labels, probs, count } => {
                let q = probs.len() / labels.len();
                let scale = g[0] / *count as f32;
                let mut d = vec![0.0f32; probs.len()];
                for (i, label) in labels.iter().enumerate() {
                    if let Some(t) = label {
                        for j in 0..q {
                            let onehot = if j == *t { 1.0 } else { 0.0 };
                            d[i * q + j] = (probs[i * q + j] - onehot) * scale;
                        }
                    }
                }
                send(*logits, d);
            }
            Op::CenterLoss { shifted, centroids, units, scale } => {
                let [n, k, c] = self.shape(*shifted)[..] else { unreachable!() };
                let s = g[0] * scale;
                if self.needs(*shifted) {
                    let mut d = vec![0.0f32; n * k * c];
                    for i in 0..n {
                        for j in 0..k {
                            for ch in 0..c {
                                d[(i * k + j) * c + ch] = s * units[i * c + ch] / k as f32;
                            }
                        }
                    }
                    send(*shifted, d);
                }
                if self.needs(*centroids) {
                    send(*centroids, units.iter().map(|u| -s * u).collect());
                }
            }
            Op::WeightedMaps { maps, weights } => {
                let count = maps.len();
                let wd = self.data(*weights);
                let c = node.value.shape()[1];
                let n = node.value.shape()[0];
                for (m, &map) in maps.iter().enumerate() {
                    if self.needs(map) {
                        let mut d = vec![0.0f32; n * c];
                        for i in 0..n {
                            let w = wd[i * count + m];
                            for ch in 0..c {
                                d[i * c + ch] = g[i * c + ch] * w;
                            }
                        }
                        send(map, d);
                    }
                }
                if self.needs(*weights) {
                    let mut dw = vec![0.0f32; n * count];
                    for (m, &map) in maps.iter().enumerate() {
                        let md = self.data(map);
                        for i in 0..n {
                            let mut acc = 0.0f32;
                            for ch in 0..c {
                                acc += g[i * c + ch] * md[i * c + ch];
                            }
                            dw[i * count + m] = acc;
                        }
                    }
                    send(*weights, dw);
                }
            }
        }
    }
}
