//! Line-based `key = value` run configuration with dotted keys.
//!
//! ```text
//! # comments start with '#'
//! model.k = 12
//! model.level_divisors = 4, 16, 64, 256, 512
//! variant.fusion = pointwise_adaptive
//! train.epochs = 100
//! ```
//!
//! `variant.preset = B0` (any ablation row) is applied before the other
//! keys, whatever its position in the file.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::model::{Level, ModelConfig, Variant};
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_one<T: FromStr>(value: &str, line: usize) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Parse { line, message: format!("cannot parse `{value}`") })
}

fn parse_list<T: FromStr>(value: &str, line: usize) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_one(v.trim(), line)).collect()
}

fn parse_keyword<T: FromStr<Err = Error>>(value: &str, line: usize) -> Result<T> {
    value.parse::<T>().map_err(|e| Error::Parse { line, message: e.to_string() })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, message: format!("expected `key = value`, got `{body}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse { line, message: format!("duplicate key `{key}`") });
            }
            pairs.push((line, key.to_string(), value.to_string()));
        }

        let mut cfg = RunConfig::default();
        let mut divisors = None;
        let mut dims = None;
        if let Some((line, _, value)) = pairs.iter().find(|(_, k, _)| k == "variant.preset") {
            let preset = ModelConfig::for_preset(value, cfg.model.num_classes, cfg.model.input_channels)
                .map_err(|e| Error::Parse { line: *line, message: e.to_string() })?;
            cfg.model = preset;
        }
        for (line, key, value) in &pairs {
            let (line, value) = (*line, value.as_str());
            let m = &mut cfg.model;
            let v: &mut Variant = &mut m.variant;
            let t = &mut cfg.train;
            match key.as_str() {
                "variant.preset" => {}
                "model.k" => m.k = parse_one(value, line)?,
                "model.input_channels" => m.input_channels = parse_one(value, line)?,
                "model.num_classes" => m.num_classes = parse_one(value, line)?,
                "model.level_divisors" => divisors = Some(parse_list::<usize>(value, line)?),
                "model.level_dims" => dims = Some(parse_list::<usize>(value, line)?),
                "model.head_dims" => m.head_dims = parse_list(value, line)?,
                "model.aug_loss_weights" => m.aug_loss_weights = parse_list(value, line)?,
                "model.mean_aug_loss" => m.mean_aug_loss = parse_one(value, line)?,
                "model.dropout" => m.dropout = parse_one(value, line)?,
                "model.sampler_seed" => m.sampler_seed = parse_one(value, line)?,
                "variant.offset_order" => v.offset_order = parse_keyword(value, line)?,
                "variant.aug_loss" => v.aug_loss = parse_keyword(value, line)?,
                "variant.aggregation" => v.aggregation = parse_keyword(value, line)?,
                "variant.fusion" => v.fusion = parse_keyword(value, line)?,
                "variant.sampler" => v.sampler = parse_keyword(value, line)?,
                "variant.knn_dilation" => v.knn_dilation = parse_one(value, line)?,
                "variant.equal_loss_weights" => v.equal_loss_weights = parse_one(value, line)?,
                "train.epochs" => t.epochs = parse_one(value, line)?,
                "train.lr0" => t.lr0 = parse_one(value, line)?,
                "train.decay" => t.decay = parse_one(value, line)?,
                "train.decay_every" => t.decay_every = parse_one(value, line)?,
                "train.batch_size" => t.batch_size = parse_one(value, line)?,
                "train.seed" => t.seed = parse_one(value, line)?,
                "train.crop_size" => t.crop_size = parse_one(value, line)?,
                "train.crops_per_cloud" => t.crops_per_cloud = parse_one(value, line)?,
                "train.ignore_label" => {
                    t.ignore_label = if value == "none" { None } else { Some(parse_one(value, line)?) }
                }
                _ => return Err(Error::Parse { line, message: format!("unknown key `{key}`") }),
            }
        }
        if divisors.is_some() || dims.is_some() {
            let divisors = divisors.unwrap_or_else(|| cfg.model.levels.iter().map(|l| l.divisor).collect());
            let dims = dims.unwrap_or_else(|| cfg.model.levels.iter().map(|l| l.dim).collect());
            if divisors.len() != dims.len() {
                return Err(Error::Config(format!("{} level divisors for {} level widths", divisors.len(), dims.len())));
            }
            cfg.model.levels = divisors.into_iter().zip(dims).map(|(divisor, dim)| Level { divisor, dim }).collect();
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Every key, in a form [`RunConfig::parse`] reads back exactly.
    pub fn to_text(&self) -> String {
        let mut s = model_to_text(&self.model);
        let t = &self.train;
        let _ = writeln!(s, "train.epochs = {}", t.epochs);
        let _ = writeln!(s, "train.lr0 = {}", t.lr0);
        let _ = writeln!(s, "train.decay = {}", t.decay);
        let _ = writeln!(s, "train.decay_every = {}", t.decay_every);
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(s, "train.crop_size = {}", t.crop_size);
        let _ = writeln!(s, "train.crops_per_cloud = {}", t.crops_per_cloud);
        let _ = writeln!(s, "train.ignore_label = {}", t.ignore_label.map_or("none".to_string(), |l| l.to_string()));
        s
    }
}

/// The `model.*` and `variant.*` keys only.
pub fn model_to_text(m: &ModelConfig) -> String {
    let mut s = String::new();
    let divisors: Vec<usize> = m.levels.iter().map(|l| l.divisor).collect();
    let dims: Vec<usize> = m.levels.iter().map(|l| l.dim).collect();
    let _ = writeln!(s, "model.k = {}", m.k);
    let _ = writeln!(s, "model.input_channels = {}", m.input_channels);
    let _ = writeln!(s, "model.num_classes = {}", m.num_classes);
    let _ = writeln!(s, "model.level_divisors = {}", join(&divisors));
    let _ = writeln!(s, "model.level_dims = {}", join(&dims));
    let _ = writeln!(s, "model.head_dims = {}", join(&m.head_dims));
    let _ = writeln!(s, "model.aug_loss_weights = {}", join(&m.aug_loss_weights));
    let _ = writeln!(s, "model.mean_aug_loss = {}", m.mean_aug_loss);
    let _ = writeln!(s, "model.dropout = {}", m.dropout);
    let _ = writeln!(s, "model.sampler_seed = {}", m.sampler_seed);
    let v = &m.variant;
    let _ = writeln!(s, "variant.offset_order = {}", v.offset_order);
    let _ = writeln!(s, "variant.aug_loss = {}", v.aug_loss);
    let _ = writeln!(s, "variant.aggregation = {}", v.aggregation);
    let _ = writeln!(s, "variant.fusion = {}", v.fusion);
    let _ = writeln!(s, "variant.sampler = {}", v.sampler);
    let _ = writeln!(s, "variant.knn_dilation = {}", v.knn_dilation);
    let _ = writeln!(s, "variant.equal_loss_weights = {}", v.equal_loss_weights);
    s
}

/// Parses text holding only model and variant keys.
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let cfg = RunConfig::parse(text)?;
    Ok(cfg.model)
}
