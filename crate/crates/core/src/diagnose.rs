//! Neighbourhood compactness of raw versus shifted neighbours, per level.

use std::fmt::Write as _;

use crate::data::PointCloud;
use crate::model::{Binder, Model};
use crate::spatial::{neighborhood_stats, NeighborIndex, NeighborhoodStats};
use crate::tensor::Graph;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelStats {
    /// One-based encoder level.
    pub level: usize,
    pub raw_p: NeighborhoodStats,
    pub shifted_p: NeighborhoodStats,
    pub raw_f: NeighborhoodStats,
    pub shifted_f: NeighborhoodStats,
}

impl LevelStats {
    /// Signed change of the mean neighbour-to-centroid distance in 3D.
    pub fn delta_dist_p(&self) -> f64 {
        self.shifted_p.mean_dist - self.raw_p.mean_dist
    }

    pub fn delta_var_p(&self) -> f64 {
        self.shifted_p.variance - self.raw_p.variance
    }

    pub fn delta_dist_f(&self) -> f64 {
        self.shifted_f.mean_dist - self.raw_f.mean_dist
    }

    pub fn delta_var_f(&self) -> f64 {
        self.shifted_f.variance - self.raw_f.variance
    }
}

/// Rows `rows` of a row-major buffer with `width` values per row.
fn take_rows(data: &[f32], width: usize, rows: &[usize]) -> Vec<f32> {
    rows.iter().flat_map(|&r| data[r * width..(r + 1) * width].iter().copied()).collect()
}

/// Eval-mode statistics at every level, measured over the centroids each
/// level keeps.
pub fn diagnose(model: &Model, cloud: &PointCloud) -> Result<Vec<LevelStats>> {
    let geom = model.geometry(&cloud.positions)?;
    let input = cloud.input_features(model.config().input_channels)?;
    let mut g = Graph::new();
    let out = model.forward(&mut g, Binder::new(model.params()), &geom, &input, false, 0)?;
    let mut stats = Vec::with_capacity(out.traces.len());
    for (m, trace) in out.traces.iter().enumerate() {
        let sample = &geom.samples[m];
        let nbrs = &geom.neighbors[m];
        let k = nbrs.k();
        let kept = NeighborIndex::new(sample.iter().flat_map(|&i| nbrs.row(i).iter().copied()).collect(), k)?;

        let space = |values: crate::tensor::Var, shifted: Option<crate::tensor::Var>| -> Result<_> {
            let reference = g.data(values);
            let width = g.shape(values)[1];
            let centroids = take_rows(reference, width, sample);
            let raw = neighborhood_stats(&centroids, width, &kept, reference, None)?;
            let moved = match shifted {
                Some(s) => {
                    let s = take_rows(g.data(s), k * width, sample);
                    neighborhood_stats(&centroids, width, &kept, reference, Some(&s))?
                }
                None => raw,
            };
            Ok((raw, moved))
        };
        let (raw_p, shifted_p) = space(trace.positions, trace.shifted_p)?;
        let (raw_f, shifted_f) = space(trace.features, trace.shifted_f)?;
        stats.push(LevelStats { level: m + 1, raw_p, shifted_p, raw_f, shifted_f });
    }
    Ok(stats)
}

/// Table followed by `key=value` lines.
pub fn report(stats: &[LevelStats]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}",
        "level", "dist_p", "dist_p~", "Δdist_p", "Δvar_p", "dist_f", "dist_f~", "Δdist_f", "Δvar_f"
    );
    for l in stats {
        let _ = writeln!(
            s,
            "{:<6}{:>12.5}{:>12.5}{:>12.5}{:>12.5}{:>12.5}{:>12.5}{:>12.5}{:>12.5}",
            l.level,
            l.raw_p.mean_dist,
            l.shifted_p.mean_dist,
            l.delta_dist_p(),
            l.delta_var_p(),
            l.raw_f.mean_dist,
            l.shifted_f.mean_dist,
            l.delta_dist_f(),
            l.delta_var_f()
        );
    }
    for l in stats {
        let m = l.level;
        let _ = writeln!(s, "level{m}.raw_dist_p={}", l.raw_p.mean_dist);
        let _ = writeln!(s, "level{m}.shifted_dist_p={}", l.shifted_p.mean_dist);
        let _ = writeln!(s, "level{m}.delta_dist_p={}", l.delta_dist_p());
        let _ = writeln!(s, "level{m}.raw_var_p={}", l.raw_p.variance);
        let _ = writeln!(s, "level{m}.shifted_var_p={}", l.shifted_p.variance);
        let _ = writeln!(s, "level{m}.delta_var_p={}", l.delta_var_p());
        let _ = writeln!(s, "level{m}.raw_dist_f={}", l.raw_f.mean_dist);
        let _ = writeln!(s, "level{m}.shifted_dist_f={}", l.shifted_f.mean_dist);
        let _ = writeln!(s, "level{m}.delta_dist_f={}", l.delta_dist_f());
        let _ = writeln!(s, "level{m}.raw_var_f={}", l.raw_f.variance);
        let _ = writeln!(s, "level{m}.shifted_var_f={}", l.shifted_f.variance);
        let _ = writeln!(s, "level{m}.delta_var_f={}", l.delta_var_f());
    }
    s
}
