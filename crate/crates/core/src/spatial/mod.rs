//! Non-differentiable geometry: sampling, neighbour search, interpolation
//! and neighbourhood statistics.

mod kdtree;

use rand::seq::index;
use rand::Rng;

pub use kdtree::{dist2, KdTree, Point};

use crate::{Error, Result};

/// Neighbour count used throughout the network.
pub const DEFAULT_K: usize = 12;

/// Per-query neighbour lists, row-major `[q, k]`, each row sorted by
/// distance with ties going to the lower index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    k: usize,
}

impl NeighborIndex {
    pub fn new(indices: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 || indices.len() % k != 0 {
            return Err(Error::Dimension(format!("{} indices do not form rows of {k}", indices.len())));
        }
        Ok(Self { indices, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Row `i` filled with `i` itself, used to broadcast centroids.
    pub fn self_index(n: usize, k: usize) -> Self {
        Self { indices: (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect(), k }
    }
}

/// A subset of a parent cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    pub positions: Vec<Point>,
}

impl SampleSet {
    fn from_indices(parent: &[Point], indices: Vec<usize>) -> Self {
        let positions = indices.iter().map(|&i| parent[i]).collect();
        Self { indices, positions }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_count(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::Size(format!("cannot sample {m} of {n} points")));
    }
    Ok(())
}

/// Greedy farthest point sampling starting from `start`.
pub fn fps(positions: &[Point], m: usize, start: usize) -> Result<SampleSet> {
    let n = positions.len();
    check_count(n, m)?;
    if start >= n {
        return Err(Error::Index { index: start, len: n });
    }
    let mut min_d2 = vec![f32::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut current = start;
    for _ in 0..m {
        picked.push(current);
        min_d2[current] = -1.0;
        let anchor = positions[current];
        let mut best = usize::MAX;
        let mut best_d2 = -1.0f32;
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d < 0.0 {
                continue;
            }
            let cand = dist2(&positions[i], &anchor);
            if cand < *d {
                *d = cand;
            }
            if *d > best_d2 {
                best_d2 = *d;
                best = i;
            }
        }
        current = best;
    }
    Ok(SampleSet::from_indices(positions, picked))
}

/// Uniform random subset of size `m`.
pub fn random_sample<R: Rng + ?Sized>(positions: &[Point], m: usize, rng: &mut R) -> Result<SampleSet> {
    check_count(positions.len(), m)?;
    let picked = index::sample(rng, positions.len(), m).into_vec();
    Ok(SampleSet::from_indices(positions, picked))
}

/// `k` nearest reference points for each query. When `k` exceeds the
/// reference size, rows are padded with the nearest point.
pub fn knn(query: &[Point], reference: &[Point], k: usize) -> Result<NeighborIndex> {
    if reference.is_empty() {
        return Err(Error::Size("knn against an empty reference set".into()));
    }
    if k == 0 {
        return Err(Error::Size("knn with k = 0".into()));
    }
    let tree = KdTree::new(reference);
    let mut indices = Vec::with_capacity(query.len() * k);
    for q in query {
        let found = tree.nearest(q, k);
        let nearest = found[0].0;
        indices.extend(found.iter().map(|&(i, _)| i));
        indices.extend(std::iter::repeat(nearest).take(k - found.len()));
    }
    NeighborIndex::new(indices, k)
}

/// Dilated neighbourhood: the ranks `0, d, 2d, …` of the `k·d` nearest.
pub fn dilated_knn(query: &[Point], reference: &[Point], k: usize, dilation: usize) -> Result<NeighborIndex> {
    if dilation == 0 {
        return Err(Error::Size("dilation must be at least 1".into()));
    }
    if dilation == 1 {
        return knn(query, reference, k);
    }
    let wide = knn(query, reference, k * dilation)?;
    let indices = (0..wide.len()).flat_map(|i| wide.row(i).iter().step_by(dilation).copied()).collect();
    NeighborIndex::new(indices, k)
}

/// Index of the nearest `low` point for each `high` point.
pub fn nearest_indices(low: &[Point], high: &[Point]) -> Result<Vec<usize>> {
    if low.is_empty() {
        return Err(Error::Size("interpolation from an empty point set".into()));
    }
    Ok(knn(high, low, 1)?.indices)
}

/// Copies each high-resolution point's feature from its nearest low-resolution
/// point. `low_feat` is row-major `[low.len(), channels]`.
pub fn nn_interpolate(low: &[Point], low_feat: &[f32], channels: usize, high: &[Point]) -> Result<Vec<f32>> {
    if low_feat.len() != low.len() * channels {
        return Err(Error::Dimension(format!(
            "{} feature values for {} points of {channels} channels",
            low_feat.len(),
            low.len()
        )));
    }
    let nearest = nearest_indices(low, high)?;
    let mut out = Vec::with_capacity(high.len() * channels);
    for i in nearest {
        out.extend_from_slice(&low_feat[i * channels..(i + 1) * channels]);
    }
    Ok(out)
}

/// Compactness of a set of neighbourhoods.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeighborhoodStats {
    /// Mean over all `(i, j)` of `‖neighbor_ij − centroid_i‖₂`.
    pub mean_dist: f64,
    /// Mean over neighbourhoods of `mean_j ‖neighbor_ij − mean_j neighbor_ij‖²`.
    pub variance: f64,
}

/// Statistics of the neighbourhoods of `centroids` (`[n, dim]`).
///
/// Neighbour values come from `reference[neighbors[i, j]]`, or from
/// `shifted` (`[n, k, dim]`) when supplied.
pub fn neighborhood_stats(
    centroids: &[f32],
    dim: usize,
    neighbors: &NeighborIndex,
    reference: &[f32],
    shifted: Option<&[f32]>,
) -> Result<NeighborhoodStats> {
    let n = neighbors.len();
    let k = neighbors.k();
    if centroids.len() != n * dim {
        return Err(Error::Dimension(format!("{} centroid values for {n}×{dim}", centroids.len())));
    }
    if let Some(s) = shifted {
        if s.len() != n * k * dim {
            return Err(Error::Dimension(format!("{} shifted values for {n}×{k}×{dim}", s.len())));
        }
    }
    if n == 0 {
        return Ok(NeighborhoodStats::default());
    }
    let value = |i: usize, j: usize| -> &[f32] {
        match shifted {
            Some(s) => &s[(i * k + j) * dim..(i * k + j + 1) * dim],
            None => {
                let r = neighbors.row(i)[j];
                &reference[r * dim..(r + 1) * dim]
            }
        }
    };
    let mut dist_total = 0.0f64;
    let mut var_total = 0.0f64;
    let mut mean = vec![0.0f64; dim];
    for i in 0..n {
        let c = &centroids[i * dim..(i + 1) * dim];
        mean.fill(0.0);
        for j in 0..k {
            let v = value(i, j);
            let d2: f64 = v.iter().zip(c).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            dist_total += d2.sqrt();
            mean.iter_mut().zip(v).for_each(|(m, a)| *m += *a as f64 / k as f64);
        }
        let mut spread = 0.0f64;
        for j in 0..k {
            spread += value(i, j).iter().zip(&mean).map(|(a, m)| (*a as f64 - m).powi(2)).sum::<f64>();
        }
        var_total += spread / k as f64;
    }
    Ok(NeighborhoodStats { mean_dist: dist_total / (n * k) as f64, variance: var_total / n as f64 })
}

/// Flattens points into a row-major `[n, 3]` buffer.
pub fn flatten(points: &[Point]) -> Vec<f32> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

#[cfg(test)]
mod tests;
