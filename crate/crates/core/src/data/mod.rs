//! Point clouds, file formats, synthetic scenes and training crops.

mod crop;
mod io;
mod synthetic;

pub use crop::{crop_indices, sample_crop, sample_crop_with, CropSpec};
pub use io::{load_cloud, read_binary, read_text, save_cloud, write_binary, write_text, CloudFormat};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use crate::spatial::Point;
use crate::{Error, Result};

/// One scene: positions in metres, optional colours in `[0, 1]`, optional
/// per-point labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub labels: Option<Vec<u32>>,
    pub num_classes: usize,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Point>,
        colors: Option<Vec<[f32; 3]>>,
        labels: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self> {
        let cloud = Self { positions, colors, labels, num_classes };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite coordinate".into()));
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::Validation(format!("{} colours for {n} points", c.len())));
            }
            if c.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation("colour outside [0, 1]".into()));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::Validation(format!("{} labels for {n} points", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&v| v as usize >= self.num_classes) {
                return Err(Error::Validation(format!("label {bad} outside [0, {})", self.num_classes)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Row-major network input: coordinates, then colours when
    /// `channels == 6`.
    pub fn input_features(&self, channels: usize) -> Result<Vec<f32>> {
        match channels {
            3 => Ok(self.positions.iter().flatten().copied().collect()),
            6 => {
                let colors = self
                    .colors
                    .as_ref()
                    .ok_or_else(|| Error::Config("model expects colours but the cloud has none".into()))?;
                Ok(self.positions.iter().zip(colors).flat_map(|(p, c)| p.iter().chain(c).copied()).collect())
            }
            _ => Err(Error::Config(format!("unsupported input width {channels}; use 3 or 6"))),
        }
    }

    /// Points at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn labels(&self) -> Result<&[u32]> {
        self.labels.as_deref().ok_or_else(|| Error::Validation("cloud carries no labels".into()))
    }

    /// Points per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in self.labels.iter().flatten() {
            h[l as usize] += 1;
        }
        h
    }
}
