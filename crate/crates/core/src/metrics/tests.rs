use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{dequantize, quantize};

fn cloud(points: Vec<[f64; 3]>) -> PointCloud<f64> {
    PointCloud::new(points).unwrap()
}

fn random_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [0; 3].map(|_: u8| rng.gen_range(-5.0..5.0))).collect()
}

/// O(n²) oracle: squared distance to the nearest point, first minimum wins.
fn brute_nn(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<(usize, f64)> {
    from.iter()
        .map(|a| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, b) in to.iter().enumerate() {
                let d = (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

fn brute_mse(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let d: Vec<f64> = brute_nn(from, to).into_iter().map(|(_, d)| d).collect();
    pairwise_sum(&d) / d.len() as f64
}

#[test]
fn chamfer_and_d1_match_brute_force() {
    for seed in 0..5 {
        let a = random_points(200, seed);
        let b = random_points(200, seed + 100);
        assert_eq!(nearest_neighbors(&a, &b), brute_nn(&a, &b));
        assert_eq!(nearest_neighbors(&b, &a), brute_nn(&b, &a));
        let (ca, cb) = (cloud(a.clone()), cloud(b.clone()));
        let expect = brute_mse(&a, &b) + brute_mse(&b, &a);
        assert_eq!(chamfer(&ca, &cb).unwrap(), expect);
        let d = d1(&ca, &cb, 1.0, Aggregate::Max).unwrap();
        assert_eq!(d.mse, brute_mse(&a, &b).max(brute_mse(&b, &a)));
        assert_eq!(chamfer(&cb, &ca).unwrap(), chamfer(&ca, &cb).unwrap());
        assert_eq!(d1(&cb, &ca, 1.0, Aggregate::Max).unwrap().mse, d.mse);
    }
}

#[test]
fn identical_clouds_are_exact() {
    let a = cloud(random_points(50, 3));
    let d = d1(&a, &a, 1.0, Aggregate::Max).unwrap();
    assert!(d.is_exact());
    assert_eq!(d.psnr, f64::INFINITY);
    assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    let p = d2(&a, &a, 1.0, 16, Aggregate::Max).unwrap();
    assert_eq!(p.distortion.psnr, f64::INFINITY);
}

#[test]
fn single_point_chamfer() {
    let a = cloud(vec![[0.0, 0.0, 0.0]]);
    let b = cloud(vec![[1.0, 0.0, 0.0]]);
    assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
}

fn min_gap(points: &[[f64; 3]]) -> f64 {
    let mut g = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            g = g.min(dist2(&points[i], &points[j]).sqrt());
        }
    }
    g
}

#[test]
fn translation_gives_closed_form_d1() {
    let a = random_points(200, 4);
    let d = 0.4 * min_gap(&a);
    let b: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + d, p[1], p[2]]).collect();
    for peak in [1.0, 59.70] {
        let r = d1(&cloud(a.clone()), &cloud(b.clone()), peak, Aggregate::Max).unwrap();
        assert!((r.mse - d * d).abs() <= 1e-9 * d * d, "{} vs {}", r.mse, d * d);
        let expect = 10.0 * (3.0 * peak * peak / (d * d)).log10();
        assert!((r.psnr - expect).abs() < 1e-6);
    }
}

fn plane(n: usize) -> Vec<[f64; 3]> {
    (0..n * n).map(|i| [(i % n) as f64, (i / n) as f64, 0.0]).collect()
}

#[test]
fn plane_normals_are_axis_aligned() {
    let normals = estimate_normals(&cloud(plane(20)), 16).unwrap();
    assert_eq!(normals.degenerate, 0);
    for n in normals.normals {
        let n = n.unwrap();
        assert!((n[2] - 1.0).abs() < 1e-9 && n[0].abs() < 1e-9 && n[1].abs() < 1e-9);
    }
}

#[test]
fn plane_d2_in_and_off_plane_shift() {
    let a = plane(30);
    let d = 0.3;
    let inplane: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + d, p[1], p[2]]).collect();
    let offplane: Vec<[f64; 3]> = a.iter().map(|p| [p[0], p[1], p[2] + d]).collect();
    let r = d2(&cloud(a.clone()), &cloud(inplane), 1.0, 16, Aggregate::Max).unwrap();
    assert!(r.distortion.mse <= 0.05 * d * d, "{}", r.distortion.mse);
    let r = d2(&cloud(a.clone()), &cloud(offplane), 1.0, 16, Aggregate::Max).unwrap();
    assert!((r.distortion.mse - d * d).abs() <= 0.05 * d * d, "{}", r.distortion.mse);
}

#[test]
fn collinear_neighbourhoods_fall_back() {
    let line: Vec<[f64; 3]> = (0..30).map(|i| [i as f64, 0.0, 0.0]).collect();
    let shifted: Vec<[f64; 3]> = line.iter().map(|p| [p[0], 0.25, 0.0]).collect();
    let r = d2(&cloud(line.clone()), &cloud(shifted), 1.0, 8, Aggregate::Max).unwrap();
    assert_eq!(r.degenerate_normals, 30);
    assert!((r.distortion.mse - 0.0625).abs() < 1e-12);
}

#[test]
fn too_few_points_for_normals() {
    assert!(estimate_normals(&cloud(random_points(10, 1)), 16).is_err());
}

#[test]
fn mean_aggregation() {
    let a = cloud(vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
    let b = cloud(vec![[0.0, 0.0, 0.0]]);
    let max = d1(&a, &b, 1.0, Aggregate::Max).unwrap();
    let mean = d1(&a, &b, 1.0, Aggregate::Mean).unwrap();
    assert_eq!(max.forward_mse, 50.0);
    assert_eq!(max.backward_mse, 0.0);
    assert_eq!(max.mse, 50.0);
    assert_eq!(mean.mse, 25.0);
}

#[test]
fn csv_row_format() {
    let p = RdPoint {
        file: "a.ply".into(),
        depth: 10,
        bpp: 1.5,
        d1_psnr: f64::INFINITY,
        d2_psnr: 70.25,
        chamfer: 0.0,
    };
    assert_eq!(p.csv_row(), "a.ply,10,1.500000,inf,70.250000,0.000000000e0");
    assert_eq!(bits_per_point(800, 100), 8.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn quantization_error_bounds_d1(depth in 4u8..11, seed in any::<u64>()) {
        let pc = cloud(random_points(300, seed));
        let qc = quantize(&pc, depth, None).unwrap();
        let rec: PointCloud<f64> = dequantize(&qc);
        let d = d1(&pc, &rec, 1.0, Aggregate::Max).unwrap();
        let bound = 3.0 * (qc.qs / 2.0).powi(2);
        prop_assert!(d.forward_mse <= bound * (1.0 + 1e-12));
    }
}
