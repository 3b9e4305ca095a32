//! Fixed-size, spatially contiguous training crops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointCloud;
use crate::spatial::KdTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropSpec {
    pub crop_size: usize,
    pub seed: u64,
}

/// Indices of a crop: the `crop_size` nearest points to a random centre,
/// padded by resampling with replacement when the cloud is smaller.
pub fn crop_indices<R: Rng + ?Sized>(cloud: &PointCloud, crop_size: usize, rng: &mut R) -> Vec<usize> {
    let n = cloud.len();
    let center = cloud.positions[rng.gen_range(0..n)];
    let tree = KdTree::new(&cloud.positions);
    let mut idx: Vec<usize> = tree.nearest(&center, crop_size).into_iter().map(|(i, _)| i).collect();
    while idx.len() < crop_size {
        idx.push(rng.gen_range(0..n));
    }
    idx
}

pub fn sample_crop_with<R: Rng + ?Sized>(cloud: &PointCloud, crop_size: usize, rng: &mut R) -> PointCloud {
    cloud.select(&crop_indices(cloud, crop_size, rng))
}

/// Deterministic crop for `spec.seed`.
pub fn sample_crop(cloud: &PointCloud, spec: CropSpec) -> PointCloud {
    sample_crop_with(cloud, spec.crop_size, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}
