//! Ablation sweeps: every row of a grid trained under the same seeds and
//! budget, then scored on the training scenes.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::data::PointCloud;
use crate::metrics::{ConfusionMatrix, Scores};
use crate::model::{Model, ModelConfig, BLOCK_GRID, FUSION_GRID, NETWORK_GRID};
use crate::train::{evaluate, prepare_samples, train, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    Block,
    Fusion,
    Network,
}

impl Grid {
    pub fn rows(self) -> &'static [&'static str] {
        match self {
            Grid::Block => &BLOCK_GRID,
            Grid::Fusion => &FUSION_GRID,
            Grid::Network => &NETWORK_GRID,
        }
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(Grid::Block),
            "fusion" => Ok(Grid::Fusion),
            "network" => Ok(Grid::Network),
            _ => Err(Error::Config(format!("unknown grid `{s}`; expected block, fusion or network"))),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grid::Block => "block",
            Grid::Fusion => "fusion",
            Grid::Network => "network",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub scores: Scores,
}

/// Trains one named variant and scores it on `clouds`.
pub fn run_variant(
    name: &str,
    clouds: &[PointCloud],
    train_cfg: &TrainConfig,
    init_seed: u64,
    input_channels: usize,
) -> Result<AblationRow> {
    let first = clouds.first().ok_or_else(|| Error::EmptyInput("no clouds to ablate on".into()))?;
    let cfg = ModelConfig::for_preset(name, first.num_classes, input_channels)?;
    let mut model = Model::new(cfg, init_seed)?;
    let samples = prepare_samples(&model, clouds, train_cfg)?;
    train(&mut model, &samples, train_cfg, &mut |_| Ok(()))?;
    let mut cm = ConfusionMatrix::new(first.num_classes);
    for c in clouds {
        cm.merge(&evaluate(&model, c)?.0)?;
    }
    Ok(AblationRow { name: name.to_string(), scores: cm.scores()? })
}

pub fn run_grid(
    grid: Grid,
    clouds: &[PointCloud],
    train_cfg: &TrainConfig,
    init_seed: u64,
    input_channels: usize,
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for name in grid.rows() {
        let row = run_variant(name, clouds, train_cfg, init_seed, input_channels)?;
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Table followed by `key=value` lines.
pub fn table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8}{:>10}{:>10}{:>10}", "variant", "mIoU", "OA", "mAcc");
    for r in rows {
        let _ = writeln!(s, "{:<8}{:>10.4}{:>10.4}{:>10.4}", r.name, r.scores.miou, r.scores.oa, r.scores.macc);
    }
    for r in rows {
        let _ = writeln!(s, "{}.miou={}", r.name, r.scores.miou);
        let _ = writeln!(s, "{}.oa={}", r.name, r.scores.oa);
        let _ = writeln!(s, "{}.macc={}", r.name, r.scores.macc);
    }
    s
}
