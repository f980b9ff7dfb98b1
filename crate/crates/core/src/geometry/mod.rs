//! Point clouds, uniform quantization onto an integer grid, and file I/O.

mod io;

pub use io::{load_point_cloud, save_point_cloud, PointFormat};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_DEPTH: u8 = 16;

/// Raw points with real coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<[T; 3]>,
}

impl<T: Scalar> PointCloud<T> {
    /// Rejects non-finite coordinates.
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[T; 3]] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Componentwise minimum and maximum, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([T; 3], [T; 3])> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| U::lit(c.as_f64())))
                .collect(),
        }
    }
}

/// Integer-grid points plus the parameters needed to map them back to space.
///
/// Coordinates are kept sorted lexicographically and free of duplicates, so two
/// clouds holding the same cell set compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    coords: Vec<[u32; 3]>,
    pub offset: [f64; 3],
    pub qs: f64,
    pub depth: u8,
}

impl QuantizedCloud {
    /// Sorts and de-duplicates `coords`, then checks they fit in `depth` bits.
    pub fn new(mut coords: Vec<[u32; 3]>, offset: [f64; 3], qs: f64, depth: u8) -> Result<Self> {
        check_depth(depth)?;
        if !(qs > 0.0 && qs.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quantization step must be positive, got {qs}"
            )));
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("offset must be finite".into()));
        }
        let limit = grid_limit(depth);
        if let Some(c) = coords.iter().flatten().find(|&&c| c > limit) {
            return Err(Error::OutOfBounds { coord: *c, depth });
        }
        coords.sort_unstable();
        coords.dedup();
        Ok(Self {
            coords,
            offset,
            qs,
            depth,
        })
    }

    pub fn coords(&self) -> &[[u32; 3]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Quantization inputs beyond the depth.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuantizeOptions {
    pub qs: Option<f64>,
    pub offset: Option<[f64; 3]>,
}

/// Largest grid coordinate representable at `depth`.
pub fn grid_limit(depth: u8) -> u32 {
    ((1u64 << depth) - 1) as u32
}

fn check_depth(depth: u8) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "depth must be in 1..={MAX_DEPTH}, got {depth}"
        )));
    }
    Ok(())
}

/// Translate by the componentwise minimum and quantize with the smallest step
/// that fits the bounding box into `2^depth` cells per axis.
pub fn quantize<T: Scalar>(pc: &PointCloud<T>, depth: u8, qs: Option<f64>) -> Result<QuantizedCloud> {
    quantize_with(pc, depth, QuantizeOptions { qs, offset: None })
}

pub fn quantize_with<T: Scalar>(
    pc: &PointCloud<T>,
    depth: u8,
    opts: QuantizeOptions,
) -> Result<QuantizedCloud> {
    check_depth(depth)?;
    let (lo, hi) = pc.bounds().ok_or(Error::EmptyInput)?;
    let lo = lo.map(|c| c.as_f64());
    let hi = hi.map(|c| c.as_f64());
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    let cells = grid_limit(depth) as f64;
    let min_qs = extent / cells;

    let qs = match opts.qs {
        Some(qs) => {
            if !(qs > 0.0 && qs.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "quantization step must be positive, got {qs}"
                )));
            }
            if qs < min_qs {
                return Err(Error::InvalidArgument(format!(
                    "quantization step {qs} is below the minimum {min_qs} for depth {depth}"
                )));
            }
            qs
        }
        None if extent == 0.0 => return Err(Error::DegenerateExtent),
        None => min_qs,
    };
    let offset = opts.offset.unwrap_or(lo);

    let limit = grid_limit(depth);
    let mut coords = Vec::with_capacity(pc.count());
    for p in pc.points() {
        let mut cell = [0u32; 3];
        for a in 0..3 {
            // f64::round is half-away-from-zero
            let v = ((p[a].as_f64() - offset[a]) / qs).round();
            if !(0.0..=limit as f64).contains(&v) {
                return Err(Error::OutOfBounds {
                    coord: v.clamp(0.0, u32::MAX as f64) as u32,
                    depth,
                });
            }
            cell[a] = v as u32;
        }
        coords.push(cell);
    }
    QuantizedCloud::new(coords, offset, qs, depth)
}

/// Map grid cells back to space: `coords * qs + offset`.
pub fn dequantize<T: Scalar>(qc: &QuantizedCloud) -> PointCloud<T> {
    let points = qc
        .coords()
        .iter()
        .map(|c| {
            let mut p = [T::zero(); 3];
            for a in 0..3 {
                p[a] = T::lit(c[a] as f64 * qc.qs + qc.offset[a]);
            }
            p
        })
        .collect();
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud<f64> {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn unit_cube_corners_at_depth_one() {
        let qc = quantize(&cloud(&[[0.0; 3], [1.0; 3]]), 1, None).unwrap();
        assert_eq!(qc.qs, 1.0);
        assert_eq!(qc.coords(), &[[0, 0, 0], [1, 1, 1]]);
    }

    #[test]
    fn fixed_offset_and_step_at_depth_twelve() {
        let pc = cloud(&[[-200.0, -200.0, -200.0], [200.0, 0.0, 13.5]]);
        let qs = 400.0 / 4095.0;
        let qc = quantize_with(
            &pc,
            12,
            QuantizeOptions {
                qs: Some(qs),
                offset: Some([-200.0; 3]),
            },
        )
        .unwrap();
        assert!((qc.qs - 0.097680).abs() < 5e-7);
        assert_eq!(qc.coords()[0], [0, 0, 0]);
        assert_eq!(qc.coords()[1][0], 4095);
    }

    #[test]
    fn reconstruction_error_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..1000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let pc = cloud(&pts);
        let qc = quantize(&pc, 10, None).unwrap();
        let mut worst = 0.0f64;
        for p in &pts {
            for a in 0..3 {
                let cell = ((p[a] - qc.offset[a]) / qc.qs).round();
                let rec = cell * qc.qs + qc.offset[a];
                worst = worst.max((rec - p[a]).abs());
            }
        }
        assert!(worst <= qc.qs / 2.0 * (1.0 + 1e-12), "{worst} vs {}", qc.qs / 2.0);
        let limit = grid_limit(10);
        assert!(qc.coords().iter().flatten().all(|&c| c <= limit));
    }

    #[test]
    fn duplicates_merge() {
        let qc = quantize(&cloud(&[[0.0; 3], [0.01, 0.0, 0.0], [1.0; 3]]), 1, None).unwrap();
        assert_eq!(qc.len(), 2);
    }

    #[test]
    fn degenerate_extent() {
        let pc = cloud(&[[3.0; 3], [3.0; 3]]);
        assert!(matches!(quantize(&pc, 4, None), Err(Error::DegenerateExtent)));
        let qc = quantize(&pc, 4, Some(1.0)).unwrap();
        assert_eq!(qc.coords(), &[[0, 0, 0]]);
    }

    #[test]
    fn empty_and_bad_step() {
        let empty = PointCloud::<f64>::new(vec![]).unwrap();
        assert!(matches!(quantize(&empty, 4, None), Err(Error::EmptyInput)));
        let pc = cloud(&[[0.0; 3], [10.0; 3]]);
        assert!(quantize(&pc, 2, Some(1.0)).is_err());
        assert!(quantize(&pc, 0, None).is_err());
        assert!(quantize(&pc, 17, None).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let qc = QuantizedCloud::new(vec![[0, 0, 0]], [1.0; 3], 2.0, 4).unwrap();
        assert_eq!(dequantize::<f64>(&qc).points(), &[[1.0; 3]]);
        let qc = QuantizedCloud::new(vec![[3, 5, 7]], [0.0; 3], 1.0, 4).unwrap();
        assert_eq!(dequantize::<f64>(&qc).points(), &[[3.0, 5.0, 7.0]]);
    }

    #[test]
    fn idempotent_on_grid_points() {
        let qc = QuantizedCloud::new(vec![[0, 0, 0], [3, 1, 2], [7, 7, 7]], [0.0; 3], 1.0, 3).unwrap();
        let pc = dequantize::<f64>(&qc);
        let again = quantize_with(
            &pc,
            3,
            QuantizeOptions {
                qs: Some(1.0),
                offset: Some([0.0; 3]),
            },
        )
        .unwrap();
        assert_eq!(again, qc);
    }
}
