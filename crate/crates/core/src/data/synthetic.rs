//! Seeded indoor scenes: a floor, walls and labelled primitive objects.

use std::f32::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PointCloud;
use crate::spatial::Point;
use crate::{Error, Result};

/// Class 0 is the floor and class 1 the walls; higher classes cycle through
/// boxes, pillars, spheres and wall boards.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub points: usize,
    pub num_classes: usize,
    /// Room extent along x, y, z in metres.
    pub room: [f32; 3],
    pub objects_per_class: usize,
    /// Half-width of the uniform jitter applied to coordinates.
    pub noise: f32,
    pub color_noise: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            points: 4096,
            num_classes: 6,
            room: [6.0, 5.0, 3.0],
            objects_per_class: 2,
            noise: 0.005,
            color_noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Box { center: [f32; 2], half: [f32; 3] },
    Pillar { center: [f32; 2], radius: f32, height: f32 },
    Sphere { center: Point, radius: f32 },
    Board { wall: usize, along: f32, width: f32, bottom: f32, height: f32 },
}

fn palette(class: usize) -> [f32; 3] {
    const BASE: [[f32; 3]; 8] = [
        [0.55, 0.50, 0.45],
        [0.85, 0.85, 0.80],
        [0.80, 0.25, 0.20],
        [0.20, 0.60, 0.25],
        [0.20, 0.30, 0.80],
        [0.90, 0.75, 0.15],
        [0.60, 0.25, 0.70],
        [0.15, 0.70, 0.75],
    ];
    let b = BASE[class % BASE.len()];
    // darken repeats so larger class counts stay distinguishable
    let shade = 1.0 - 0.3 * (class / BASE.len()) as f32;
    [b[0] * shade, b[1] * shade, b[2] * shade]
}

fn place(class: usize, room: [f32; 3], rng: &mut ChaCha8Rng) -> Shape {
    let margin = 0.6;
    let xy = |rng: &mut ChaCha8Rng| [rng.gen_range(margin..room[0] - margin), rng.gen_range(margin..room[1] - margin)];
    match (class - 2) % 4 {
        0 => Shape::Box {
            center: xy(rng),
            half: [rng.gen_range(0.2..0.45), rng.gen_range(0.2..0.45), rng.gen_range(0.25..0.5)],
        },
        1 => Shape::Pillar { center: xy(rng), radius: rng.gen_range(0.1..0.2), height: room[2] * 0.9 },
        2 => {
            let r = rng.gen_range(0.2..0.35);
            let c = xy(rng);
            Shape::Sphere { center: [c[0], c[1], r + rng.gen_range(0.0..0.4)], radius: r }
        }
        _ => Shape::Board {
            wall: rng.gen_range(0..4),
            along: rng.gen_range(0.2..0.8),
            width: rng.gen_range(0.6..1.2),
            bottom: rng.gen_range(0.8..1.2),
            height: rng.gen_range(0.5..0.9),
        },
    }
}

/// A point on wall `w` (0: y = 0, 1: x = X, 2: y = Y, 3: x = 0) at fraction
/// `t` along it, height `z`, pushed `inset` into the room.
fn wall_point(room: [f32; 3], w: usize, t: f32, z: f32, inset: f32) -> Point {
    match w {
        0 => [t * room[0], inset, z],
        1 => [room[0] - inset, t * room[1], z],
        2 => [t * room[0], room[1] - inset, z],
        _ => [inset, t * room[1], z],
    }
}

fn sample_shape(shape: Shape, room: [f32; 3], rng: &mut ChaCha8Rng) -> Point {
    match shape {
        Shape::Box { center, half } => {
            // top face or one of four sides, weighted by area
            let top = half[0] * half[1];
            let sx = half[0] * half[2];
            let sy = half[1] * half[2];
            let pick = rng.gen_range(0.0..top + 2.0 * (sx + sy));
            let u = rng.gen_range(-1.0f32..1.0);
            let v = rng.gen_range(-1.0f32..1.0);
            let z = (v + 1.0) * half[2];
            if pick < top {
                [center[0] + u * half[0], center[1] + v * half[1], 2.0 * half[2]]
            } else if pick < top + 2.0 * sx {
                let side = if pick < top + sx { -1.0 } else { 1.0 };
                [center[0] + u * half[0], center[1] + side * half[1], z]
            } else {
                let side = if pick < top + 2.0 * sx + sy { -1.0 } else { 1.0 };
                [center[0] + side * half[0], center[1] + u * half[1], z]
            }
        }
        Shape::Pillar { center, radius, height } => {
            let a = rng.gen_range(0.0..TAU);
            [center[0] + radius * a.cos(), center[1] + radius * a.sin(), rng.gen_range(0.0..height)]
        }
        Shape::Sphere { center, radius } => {
            let z: f32 = rng.gen_range(-1.0..1.0);
            let a = rng.gen_range(0.0..TAU);
            let r = (1.0 - z * z).sqrt();
            [center[0] + radius * r * a.cos(), center[1] + radius * r * a.sin(), center[2] + radius * z]
        }
        Shape::Board { wall, along, width, bottom, height } => {
            let span = if wall % 2 == 0 { room[0] } else { room[1] };
            let t = (along * span + rng.gen_range(-0.5..0.5) * width) / span;
            wall_point(room, wall, t.clamp(0.0, 1.0), bottom + rng.gen_range(0.0..height), 0.03)
        }
    }
}

/// Generates a labelled scene. Points are split as evenly as possible
/// across classes, so every class appears when `points ≥ num_classes`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<PointCloud> {
    if spec.num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", spec.num_classes)));
    }
    if spec.points < spec.num_classes {
        return Err(Error::Config(format!("{} points cannot cover {} classes", spec.points, spec.num_classes)));
    }
    if spec.room.iter().any(|&d| !(d.is_finite() && d > 1.5)) {
        return Err(Error::Config(format!("room extent {:?} must exceed 1.5 m on every axis", spec.room)));
    }
    if spec.num_classes > 2 && spec.objects_per_class == 0 {
        return Err(Error::Config("object classes need at least one object".into()));
    }
    if !(spec.noise >= 0.0 && spec.color_noise >= 0.0) {
        return Err(Error::Config("noise levels must be nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let room = spec.room;
    let shapes: Vec<Vec<Shape>> =
        (2..spec.num_classes).map(|c| (0..spec.objects_per_class).map(|_| place(c, room, &mut rng)).collect()).collect();

    let share = spec.points / spec.num_classes;
    let mut positions = Vec::with_capacity(spec.points);
    let mut colors = Vec::with_capacity(spec.points);
    let mut labels = Vec::with_capacity(spec.points);
    for class in 0..spec.num_classes {
        let count = if class == 0 { spec.points - share * (spec.num_classes - 1) } else { share };
        let base = palette(class);
        for i in 0..count {
            let p = match class {
                0 => [rng.gen_range(0.0..room[0]), rng.gen_range(0.0..room[1]), 0.0],
                1 => {
                    let w = rng.gen_range(0..4);
                    wall_point(room, w, rng.gen_range(0.0..1.0), rng.gen_range(0.0..room[2]), 0.0)
                }
                c => {
                    let objs = &shapes[c - 2];
                    sample_shape(objs[i % objs.len()], room, &mut rng)
                }
            };
            let mut jitter = || if spec.noise > 0.0 { rng.gen_range(-spec.noise..=spec.noise) } else { 0.0 };
            let mut p = [p[0] + jitter(), p[1] + jitter(), p[2] + jitter()];
            if class != 0 {
                // only the floor may reach below its own band
                p[2] = p[2].max(spec.noise);
            }
            positions.push(p);
            let mut tint = || if spec.color_noise > 0.0 { rng.gen_range(-spec.color_noise..=spec.color_noise) } else { 0.0 };
            colors.push([
                (base[0] + tint()).clamp(0.0, 1.0),
                (base[1] + tint()).clamp(0.0, 1.0),
                (base[2] + tint()).clamp(0.0, 1.0),
            ]);
            labels.push(class as u32);
        }
    }
    PointCloud::new(positions, Some(colors), Some(labels), spec.num_classes)
}
