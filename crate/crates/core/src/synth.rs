//! Seeded synthetic scenes: planar layouts, spheres and spinning-LiDAR rings.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Floor plus a few walls and boxes.
    Planes,
    /// Several sphere surfaces.
    Spheres,
    /// Beams of a rotating scanner hitting a floor and walls.
    Rings,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::Planes, SceneKind::Spheres, SceneKind::Rings];
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planes" => Ok(Self::Planes),
            "spheres" => Ok(Self::Spheres),
            "rings" => Ok(Self::Rings),
            _ => Err(Error::InvalidArgument(format!("unknown scene kind {s:?}"))),
        }
    }
}

/// Point on the rectangle `origin + s·u + t·v`, `s, t ∈ [0, 1)`.
fn on_rect(rng: &mut impl Rng, origin: [f64; 3], u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let (s, t) = (rng.gen::<f64>(), rng.gen::<f64>());
    [0, 1, 2].map(|i| origin[i] + s * u[i] + t * v[i])
}

fn planes(rng: &mut ChaCha8Rng, points: usize) -> Vec<[f64; 3]> {
    let size = rng.gen_range(8.0..12.0);
    let mut rects = vec![([0.0, 0.0, 0.0], [size, 0.0, 0.0], [0.0, size, 0.0])];
    let walls = rng.gen_range(1..=3);
    for w in 0..walls {
        let h = rng.gen_range(2.0..4.0);
        let x = rng.gen_range(0.0..size);
        rects.push(if w % 2 == 0 {
            ([x, 0.0, 0.0], [0.0, size, 0.0], [0.0, 0.0, h])
        } else {
            ([0.0, x, 0.0], [size, 0.0, 0.0], [0.0, 0.0, h])
        });
    }
    for _ in 0..rng.gen_range(1..=3) {
        let o = [rng.gen_range(0.0..size - 2.0), rng.gen_range(0.0..size - 2.0), 0.0];
        let (a, b, c) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let add = |p: [f64; 3], d: [f64; 3]| [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
        rects.push((add(o, [0.0, 0.0, c]), [a, 0.0, 0.0], [0.0, b, 0.0]));
        rects.push((o, [a, 0.0, 0.0], [0.0, 0.0, c]));
        rects.push((add(o, [0.0, b, 0.0]), [a, 0.0, 0.0], [0.0, 0.0, c]));
        rects.push((o, [0.0, b, 0.0], [0.0, 0.0, c]));
        rects.push((add(o, [a, 0.0, 0.0]), [0.0, b, 0.0], [0.0, 0.0, c]));
    }
    let area = |r: &([f64; 3], [f64; 3], [f64; 3])| {
        let (u, v) = (r.1, r.2);
        let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
    };
    let total: f64 = rects.iter().map(area).sum();
    let mut out = Vec::with_capacity(points);
    for r in &rects {
        let share = ((area(r) / total) * points as f64).round() as usize;
        for _ in 0..share {
            out.push(on_rect(rng, r.0, r.1, r.2));
        }
    }
    out
}

fn spheres(rng: &mut ChaCha8Rng, points: usize) -> Vec<[f64; 3]> {
    let count = rng.gen_range(1..=4);
    let balls: Vec<([f64; 3], f64)> = (0..count)
        .map(|_| ([0; 3].map(|_: u8| rng.gen_range(-6.0..6.0)), rng.gen_range(1.0..4.0)))
        .collect();
    let total: f64 = balls.iter().map(|b| b.1 * b.1).sum();
    let mut out = Vec::with_capacity(points);
    for (c, r) in &balls {
        let share = ((r * r / total) * points as f64).round() as usize;
        for _ in 0..share {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi = rng.gen_range(0.0..TAU);
            let s = (1.0 - z * z).sqrt();
            out.push([c[0] + r * s * phi.cos(), c[1] + r * s * phi.sin(), c[2] + r * z]);
        }
    }
    out
}

fn rings(rng: &mut ChaCha8Rng, points: usize) -> Vec<[f64; 3]> {
    let beams = rng.gen_range(16..=32);
    let height = rng.gen_range(1.5..2.0);
    let wall = rng.gen_range(15.0..30.0);
    let per_beam = (points / beams).max(1);
    let mut out = Vec::with_capacity(points);
    for b in 0..beams {
        // elevations from -25° to +2°
        let elev = (-25.0 + 27.0 * b as f64 / (beams - 1) as f64) * PI / 180.0;
        for a in 0..per_beam {
            let az = TAU * a as f64 / per_beam as f64 + rng.gen_range(-1e-3..1e-3);
            let dir = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
            // first hit among the floor z = -height and the square wall |x|,|y| = wall
            let mut t = f64::INFINITY;
            if dir[2] < 0.0 {
                t = -height / dir[2];
            }
            for axis in 0..2 {
                if dir[axis].abs() > 1e-9 {
                    t = t.min(wall / dir[axis].abs());
                }
            }
            let noise = rng.gen_range(-0.01..0.01);
            out.push(dir.map(|d| d * (t + noise)));
        }
    }
    out
}

/// Generates about `points` points of `kind`; identical for equal seeds.
pub fn generate(kind: SceneKind, points: usize, seed: u64) -> PointCloud<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64) << 56);
    let mut pts = match kind {
        SceneKind::Planes => planes(&mut rng, points),
        SceneKind::Spheres => spheres(&mut rng, points),
        SceneKind::Rings => rings(&mut rng, points),
    };
    if pts.is_empty() {
        pts.push([0.0; 3]);
    }
    PointCloud::new(pts).expect("generated points are finite")
}

/// `count` scenes cycling through all kinds.
pub fn corpus(count: usize, points: usize, seed: u64) -> Vec<PointCloud<f64>> {
    (0..count)
        .map(|i| generate(SceneKind::ALL[i % 3], points, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}
