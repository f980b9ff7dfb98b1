//! Geometry distortion and rate metrics.
//!
//! PSNR follows `10 log10(3 r² / MSE)`. D1 and D2 combine the two directions
//! with the larger directional MSE unless [`Aggregate::Mean`] is requested.

mod kdtree;

pub use kdtree::{dist2, KdTree};

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::scalar::{pairwise_sum, Scalar};

pub const DEFAULT_NORMAL_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distortion {
    /// Mean error of reference points against the reconstruction.
    pub forward_mse: f64,
    /// Mean error of reconstructed points against the reference.
    pub backward_mse: f64,
    pub mse: f64,
    /// `+inf` when `mse` is zero.
    pub psnr: f64,
}

impl Distortion {
    fn new(forward_mse: f64, backward_mse: f64, peak: f64, agg: Aggregate) -> Self {
        let mse = match agg {
            Aggregate::Max => forward_mse.max(backward_mse),
            Aggregate::Mean => 0.5 * (forward_mse + backward_mse),
        };
        Self {
            forward_mse,
            backward_mse,
            mse,
            psnr: psnr(mse, peak),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.mse == 0.0
    }
}

pub fn psnr(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (3.0 * peak * peak / mse).log10()
    }
}

fn require_points<T: Scalar>(pc: &PointCloud<T>) -> Result<()> {
    if pc.is_empty() {
        Err(Error::EmptyInput)
    } else {
        Ok(())
    }
}

/// For every point of `from`: index of its nearest point in `to` and the
/// squared distance.
pub fn nearest_neighbors<T: Scalar>(from: &[[T; 3]], to: &[[T; 3]]) -> Vec<(usize, T)> {
    let tree = KdTree::new(to);
    from.par_iter().map(|p| tree.nearest(p).expect("non-empty target")).collect()
}

fn mean_f64(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

fn directional_mse<T: Scalar>(from: &[[T; 3]], to: &[[T; 3]]) -> f64 {
    let d: Vec<f64> = nearest_neighbors(from, to).into_iter().map(|(_, d)| d.as_f64()).collect();
    mean_f64(&d)
}

/// Point-to-point distortion.
pub fn d1<T: Scalar>(reference: &PointCloud<T>, reconstructed: &PointCloud<T>, peak: f64, agg: Aggregate) -> Result<Distortion> {
    require_points(reference)?;
    require_points(reconstructed)?;
    let f = directional_mse(reference.points(), reconstructed.points());
    let b = directional_mse(reconstructed.points(), reference.points());
    Ok(Distortion::new(f, b, peak, agg))
}

/// Mean squared nearest-neighbour distance in both directions, summed.
pub fn chamfer<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<f64> {
    require_points(a)?;
    require_points(b)?;
    Ok(directional_mse(a.points(), b.points()) + directional_mse(b.points(), a.points()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normals {
    /// Unit normals; `None` where the neighbourhood has rank below 2.
    pub normals: Vec<Option<[f64; 3]>>,
    pub degenerate: usize,
}

/// Normal of each point from PCA over the point and its `k` nearest others:
/// the eigenvector of the smallest covariance eigenvalue, sign chosen so the
/// largest-magnitude component is positive.
pub fn estimate_normals<T: Scalar>(pc: &PointCloud<T>, k: usize) -> Result<Normals> {
    if pc.count() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs at least {} points, got {}",
            k + 1,
            pc.count()
        )));
    }
    let pts = pc.points();
    let tree = KdTree::new(pts);
    let normals: Vec<Option<[f64; 3]>> = pts
        .par_iter()
        .map(|p| {
            let nb = tree.k_nearest(p, k + 1);
            let as64 = |i: usize| pts[i].map(|c| c.as_f64());
            let m = nb.len() as f64;
            let mut mean = [0.0; 3];
            for &(i, _) in &nb {
                let q = as64(i);
                for a in 0..3 {
                    mean[a] += q[a] / m;
                }
            }
            let mut cov = Matrix3::<f64>::zeros();
            for &(i, _) in &nb {
                let q = as64(i);
                let d = [q[0] - mean[0], q[1] - mean[1], q[2] - mean[2]];
                for r in 0..3 {
                    for c in 0..3 {
                        cov[(r, c)] += d[r] * d[c] / m;
                    }
                }
            }
            plane_normal(cov)
        })
        .collect();
    let degenerate = normals.iter().filter(|n| n.is_none()).count();
    Ok(Normals { normals, degenerate })
}

const RANK_TOL: f64 = 1e-10;

fn plane_normal(cov: Matrix3<f64>) -> Option<[f64; 3]> {
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, top) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if top <= 0.0 || mid <= RANK_TOL * top {
        return None;
    }
    let v = eig.eigenvectors.column(idx[0]);
    let mut n = [v[0], v[1], v[2]];
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let lead = (0..3).max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).unwrap();
    let sign = if n[lead] < 0.0 { -1.0 } else { 1.0 };
    for c in &mut n {
        *c *= sign / norm;
    }
    Some(n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneDistortion {
    pub distortion: Distortion,
    /// Reference points whose normal fell back to the residual direction.
    pub degenerate_normals: usize,
}

/// Point-to-plane distortion: each nearest-neighbour residual is projected on
/// the unit normal of the reference-side point of the pair. A degenerate
/// normal counts the full squared residual.
pub fn d2<T: Scalar>(
    reference: &PointCloud<T>,
    reconstructed: &PointCloud<T>,
    peak: f64,
    k: usize,
    agg: Aggregate,
) -> Result<PlaneDistortion> {
    require_points(reconstructed)?;
    let normals = estimate_normals(reference, k)?;
    let r = reference.points();
    let c = reconstructed.points();
    let project = |a: &[T; 3], b: &[T; 3], normal: &Option<[f64; 3]>| -> f64 {
        let e = [0, 1, 2].map(|i| b[i].as_f64() - a[i].as_f64());
        match normal {
            Some(n) => {
                let dot = e[0] * n[0] + e[1] * n[1] + e[2] * n[2];
                dot * dot
            }
            None => e[0] * e[0] + e[1] * e[1] + e[2] * e[2],
        }
    };
    let fwd: Vec<f64> = nearest_neighbors(r, c)
        .into_iter()
        .enumerate()
        .map(|(i, (j, _))| project(&r[i], &c[j], &normals.normals[i]))
        .collect();
    let bwd: Vec<f64> = nearest_neighbors(c, r)
        .into_iter()
        .enumerate()
        .map(|(j, (i, _))| project(&r[i], &c[j], &normals.normals[i]))
        .collect();
    Ok(PlaneDistortion {
        distortion: Distortion::new(mean_f64(&fwd), mean_f64(&bwd), peak, agg),
        degenerate_normals: normals.degenerate,
    })
}

/// One rate-distortion sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub file: String,
    pub depth: u8,
    pub bpp: f64,
    pub d1_psnr: f64,
    pub d2_psnr: f64,
    pub chamfer: f64,
}

impl RdPoint {
    pub const CSV_HEADER: &'static str = "file,depth,bpp,d1_psnr,d2_psnr,chamfer";

    pub fn csv_row(&self) -> String {
        let f = |v: f64| match v {
            v if v.is_nan() => "nan".to_string(),
            v if v.is_infinite() => "inf".to_string(),
            v => format!("{v:.6}"),
        };
        format!(
            "{},{},{},{},{},{}",
            self.file.replace(',', "_"),
            self.depth,
            f(self.bpp),
            f(self.d1_psnr),
            f(self.d2_psnr),
            format!("{:.9e}", self.chamfer)
        )
    }
}

/// Compressed bits per original input point.
pub fn bits_per_point(payload_bits: u64, points: usize) -> f64 {
    payload_bits as f64 / points as f64
}

#[cfg(test)]
mod tests;
