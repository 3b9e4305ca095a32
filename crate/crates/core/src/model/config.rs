//! Architecture description and the ablation switches.

use std::fmt;
use std::str::FromStr;

use crate::spatial::DEFAULT_K;
use crate::{Error, Result};

/// Width of every full-resolution decoder map.
pub const DECODER_WIDTH: usize = 32;
/// Output width of the single-layer feature extractor.
pub const EXTRACTOR_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffsetOrder {
    None,
    PThenF,
    FThenP,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Mean,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    LastOnly,
    Sum,
    Product,
    Concat,
    ScalarWeights,
    PointwiseAdaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    Fps,
    Random,
}

/// Which augmentation losses are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugLoss {
    pub geometric: bool,
    pub semantic: bool,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), s
                    ))),
                }
            }
        }
    };
}

keyword_enum!(OffsetOrder { None => "none", PThenF => "p_then_f", FThenP => "f_then_p" });
keyword_enum!(Aggregation { Max => "max", Mean => "mean", Mixed => "mixed" });
keyword_enum!(Fusion {
    LastOnly => "last_only",
    Sum => "sum",
    Product => "product",
    Concat => "concat",
    ScalarWeights => "scalar_weights",
    PointwiseAdaptive => "pointwise_adaptive",
});
keyword_enum!(Sampler { Fps => "fps", Random => "random" });

impl fmt::Display for AugLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.geometric, self.semantic) {
            (false, false) => f.write_str("none"),
            (true, false) => f.write_str("geometric"),
            (false, true) => f.write_str("semantic"),
            (true, true) => f.write_str("geometric,semantic"),
        }
    }
}

impl FromStr for AugLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = AugLoss::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" => {}
                "geometric" | "geo" => out.geometric = true,
                "semantic" | "sem" => out.semantic = true,
                _ => return Err(Error::Config(format!("unknown augmentation loss `{part}`"))),
            }
        }
        Ok(out)
    }
}

/// Every switch exercised by the ablation grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub offset_order: OffsetOrder,
    pub aug_loss: AugLoss,
    pub aggregation: Aggregation,
    pub fusion: Fusion,
    pub sampler: Sampler,
    pub knn_dilation: usize,
    pub equal_loss_weights: bool,
}

impl Default for Variant {
    /// The proposed network.
    fn default() -> Self {
        Self {
            offset_order: OffsetOrder::PThenF,
            aug_loss: AugLoss { geometric: true, semantic: false },
            aggregation: Aggregation::Mixed,
            fusion: Fusion::PointwiseAdaptive,
            sampler: Sampler::Fps,
            knn_dilation: 1,
            equal_loss_weights: false,
        }
    }
}

/// Named rows of the ablation tables.
pub const BLOCK_GRID: [&str; 7] = ["B0", "B1", "B2", "B3", "B4", "B5", "B6"];
pub const FUSION_GRID: [&str; 6] = ["A0", "A1", "A2", "A3", "A4", "A5"];
pub const NETWORK_GRID: [&str; 6] = ["N0", "N1", "N2", "N3", "N4", "N5"];

/// Equal augmentation-loss weight used by the `equal_loss_weights` switch.
pub const EQUAL_LOSS_WEIGHT: f32 = 0.3;

impl Variant {
    fn block(order: OffsetOrder, geometric: bool, semantic: bool, aggregation: Aggregation) -> Self {
        Self {
            offset_order: order,
            aug_loss: AugLoss { geometric, semantic },
            aggregation,
            fusion: Fusion::LastOnly,
            ..Self::default()
        }
    }

    /// Looks up a named ablation row. Block rows (`B*`) pair each block
    /// setting with last-only fusion; fusion rows (`A*`) use the full block.
    pub fn preset(name: &str) -> Result<Self> {
        use Aggregation::*;
        use OffsetOrder::*;
        let full = Self::default();
        let v = match name {
            "B0" | "N0" => Self::block(None, false, false, Max),
            "B1" => Self::block(FThenP, false, true, Mixed),
            "B2" => Self::block(PThenF, true, true, Mixed),
            "B3" => Self::block(PThenF, false, false, Mixed),
            "B4" => Self::block(PThenF, true, false, Max),
            "B5" => Self::block(PThenF, true, false, Mean),
            "B6" => Self::block(PThenF, true, false, Mixed),
            "A0" => Self { fusion: Fusion::LastOnly, ..full },
            "A1" => Self { fusion: Fusion::Sum, ..full },
            "A2" => Self { fusion: Fusion::Product, ..full },
            "A3" => Self { fusion: Fusion::Concat, ..full },
            "A4" => Self { fusion: Fusion::ScalarWeights, ..full },
            "A5" | "N5" | "N4" => full,
            "N1" => Self { sampler: Sampler::Random, ..full },
            "N2" => Self { knn_dilation: 2, ..full },
            "N3" => Self { equal_loss_weights: true, ..full },
            _ => return Err(Error::Config(format!("unknown ablation row `{name}`"))),
        };
        Ok(v)
    }
}

/// One encoder level: the cloud is reduced to `N / divisor` points with
/// `dim` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub divisor: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub levels: Vec<Level>,
    pub k: usize,
    pub input_channels: usize,
    pub head_dims: Vec<usize>,
    pub num_classes: usize,
    pub aug_loss_weights: Vec<f32>,
    /// Divide each level's augmentation loss by its point count.
    pub mean_aug_loss: bool,
    pub dropout: f32,
    /// Seed for the random sampler; fixed so inference stays deterministic.
    pub sampler_seed: u64,
    pub variant: Variant,
}

pub const DEFAULT_DIVISORS: [usize; 5] = [4, 16, 64, 256, 512];
pub const DEFAULT_DIMS: [usize; 5] = [32, 128, 256, 512, 1024];
pub const DEFAULT_AUG_WEIGHTS: [f32; 5] = [0.1, 0.1, 0.3, 0.5, 0.5];

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_DIVISORS.iter().zip(DEFAULT_DIMS).map(|(&divisor, dim)| Level { divisor, dim }).collect(),
            k: DEFAULT_K,
            input_channels: 6,
            head_dims: vec![64, 32],
            num_classes: 13,
            aug_loss_weights: DEFAULT_AUG_WEIGHTS.to_vec(),
            mean_aug_loss: false,
            dropout: 0.5,
            sampler_seed: 0,
            variant: Variant::default(),
        }
    }
}

impl ModelConfig {
    /// Default architecture configured for an ablation row. Row `N4` also
    /// drops the last level.
    pub fn for_preset(name: &str, num_classes: usize, input_channels: usize) -> Result<Self> {
        let mut cfg = Self { num_classes, input_channels, variant: Variant::preset(name)?, ..Self::default() };
        if name == "N4" {
            cfg.levels = [(4, 16), (16, 64), (64, 128), (256, 256)]
                .iter()
                .map(|&(divisor, dim)| Level { divisor, dim })
                .collect();
            cfg.aug_loss_weights.truncate(4);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.levels.is_empty() {
            return fail("at least one level is required".into());
        }
        if self.aug_loss_weights.len() != self.levels.len() {
            return fail(format!(
                "{} augmentation loss weights for {} levels",
                self.aug_loss_weights.len(),
                self.levels.len()
            ));
        }
        let mut prev = 1;
        for (i, l) in self.levels.iter().enumerate() {
            if l.divisor < prev {
                return fail(format!("level {} divisor {} is below the previous level's", i + 1, l.divisor));
            }
            if l.dim == 0 || l.dim % 4 != 0 {
                return fail(format!("level {} width {} must be a positive multiple of 4", i + 1, l.dim));
            }
            prev = l.divisor;
        }
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if self.input_channels < 3 {
            return fail(format!("input needs at least the 3 coordinates, got {}", self.input_channels));
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.head_dims.iter().any(|&d| d == 0) {
            return fail("head widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.variant.knn_dilation == 0 {
            return fail("knn dilation must be at least 1".into());
        }
        if self.aug_loss_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return fail("augmentation loss weights must be finite and nonnegative".into());
        }
        Ok(())
    }

    /// Weights actually applied to the per-level augmentation losses.
    pub fn effective_loss_weights(&self) -> Vec<f32> {
        if self.variant.equal_loss_weights {
            vec![EQUAL_LOSS_WEIGHT; self.levels.len()]
        } else {
            self.aug_loss_weights.clone()
        }
    }

    /// Smallest cloud the pyramid accepts.
    pub fn min_points(&self) -> usize {
        self.levels[0].divisor
    }

    /// Point counts `[N, N_1, …, N_M]`, each clamped to at least one point.
    pub fn level_sizes(&self, n: usize) -> Result<Vec<usize>> {
        if n < self.min_points() {
            return Err(Error::Size(format!("{n} points is below the pyramid minimum of {}", self.min_points())));
        }
        let mut sizes = vec![n];
        for l in &self.levels {
            sizes.push((n / l.divisor).max(1));
        }
        Ok(sizes)
    }

    /// Channel width at level `l` (level 0 is the extractor output).
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            EXTRACTOR_DIM
        } else {
            self.levels[l - 1].dim
        }
    }
}
