//! Per-node learned features reduced to three principal components.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::context::{build_windows, WindowParams};
use crate::error::Result;
use crate::model::Model;
use crate::octree::{node_origins, NodeSequence};
use crate::scalar::Scalar;

/// Eigenvalues at or below this fraction of the largest (or absolute 1e-12)
/// are treated as zero variance.
const VARIANCE_TOL: f64 = 1e-12;

/// Final-layer feature row of every node, taken from the window that predicts it.
pub fn node_features<T: Scalar>(model: &Model<T>, ns: &NodeSequence, window: WindowParams) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ns.len());
    for w in build_windows(ns, window) {
        let trace = model.run_window(&w)?;
        for r in trace.output_rows().collect::<Vec<_>>() {
            out.push(trace.final_features(r).iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}

/// Principal axes of `rows` (descending variance) and the centred
/// projections onto the first `dims` of them. Axes with zero variance project
/// to 0. Each axis is signed so its largest-magnitude entry is positive.
pub fn pca(rows: &[Vec<f64>], dims: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    if rows.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]].max(0.0);
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(dims)
        .map(|&i| {
            if eig.eigenvalues[i] <= (VARIANCE_TOL * largest).max(VARIANCE_TOL) {
                return vec![0.0; d];
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let proj = rows
        .iter()
        .map(|r| {
            axes.iter()
                .map(|a| a.iter().zip(r.iter().zip(&mean)).map(|(w, (v, m))| w * (v - m)).sum())
                .collect()
        })
        .collect();
    (axes, proj)
}

/// One exported node: cell centre in space and its three PCA coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub position: usize,
    pub level: u8,
    pub center: [f64; 3],
    pub pca: [f64; 3],
}

impl EmbeddingRow {
    pub const CSV_HEADER: &'static str = "node,level,x,y,z,pc1,pc2,pc3";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.position,
            self.level,
            self.center[0],
            self.center[1],
            self.center[2],
            self.pca[0],
            self.pca[1],
            self.pca[2]
        )
    }
}

/// Centre of each node's cell in world coordinates.
pub fn cell_centers(ns: &NodeSequence, offset: [f64; 3], qs: f64) -> Vec<[f64; 3]> {
    node_origins(ns)
        .iter()
        .zip(&ns.nodes)
        .map(|(o, n)| {
            let side = (1u64 << (ns.depth - n.level + 1)) as f64;
            [0, 1, 2].map(|i| offset[i] + qs * (o[i] as f64 * side + (side - 1.0) / 2.0))
        })
        .collect()
}

pub fn export_embeddings<T: Scalar>(
    model: &Model<T>,
    ns: &NodeSequence,
    window: WindowParams,
    offset: [f64; 3],
    qs: f64,
) -> Result<Vec<EmbeddingRow>> {
    let feats = node_features(model, ns, window)?;
    let (_, proj) = pca(&feats, 3);
    let centers = cell_centers(ns, offset, qs);
    Ok(proj
        .into_iter()
        .zip(centers)
        .zip(&ns.nodes)
        .enumerate()
        .map(|(i, ((p, center), n))| EmbeddingRow {
            position: i,
            level: n.level,
            center,
            pca: [p[0], p.get(1).copied().unwrap_or(0.0), p.get(2).copied().unwrap_or(0.0)],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::QuantizedCloud;
    use crate::model::{Model32, ModelConfig};
    use crate::octree::build;

    /// Cyclic Jacobi rotations on a dense symmetric matrix.
    fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vkp, vkq) = (row[p], row[q]);
                        row[p] = c * vkp - s * vkq;
                        row[q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let vals = (0..n).map(|i| a[i][i]).collect();
        let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
        (vals, vecs)
    }

    #[test]
    fn projections_match_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 7;
        // distinct variances along random directions keep the axes well separated
        let scales = [5.0, 3.0, 2.0, 1.0, 0.5, 0.25, 0.1];
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..d).map(|j| scales[j] * rng.gen_range(-1.0..1.0) + 0.3 * j as f64).collect())
            .collect();
        let (_, proj) = pca(&rows, 3);

        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n).collect())
            .collect();
        let (vals, vecs) = jacobi(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (c, &k) in order.iter().take(3).enumerate() {
            let mut axis = vecs[k].clone();
            let lead = (0..d).max_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs())).unwrap();
            if axis[lead] < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
            for (r, p) in rows.iter().zip(&proj) {
                let expect: f64 = (0..d).map(|j| axis[j] * (r[j] - mean[j])).sum();
                assert!((p[c] - expect).abs() < 1e-6, "{} vs {expect}", p[c]);
            }
        }
    }

    #[test]
    fn constant_features_project_to_zero() {
        let rows = vec![vec![1.5, -2.0, 3.0, 0.0]; 20];
        let (_, proj) = pca(&rows, 3);
        assert!(proj.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn one_row_per_node() {
        let c = ModelConfig {
            d_occ: 8,
            d_lvl: 3,
            d_oct: 3,
            head_dim: 4,
            ffn_hidden: 8,
            out_hidden: 8,
            n: 8,
            n0: 8,
            ..ModelConfig::desk()
        };
        let model = Model32::new_random(c, 1).unwrap();
        let coords = vec![[0, 0, 0], [3, 1, 2], [7, 7, 7], [4, 0, 5]];
        let qc = QuantizedCloud::new(coords, [1.0, 2.0, 3.0], 0.5, 3).unwrap();
        let ns = build(&qc).unwrap();
        let rows = export_embeddings(&model, &ns, WindowParams::new(8, c.k, 3).unwrap(), qc.offset, qc.qs).unwrap();
        assert_eq!(rows.len(), ns.len());
        // root covers the whole 8-cell grid: centre at offset + qs * 3.5
        assert_eq!(rows[0].center, [2.75, 3.75, 4.75]);
        let leaf_level = rows.iter().filter(|r| r.level == 3).count();
        assert_eq!(leaf_level, ns.nodes.iter().filter(|n| n.level == 3).count());
    }
}
