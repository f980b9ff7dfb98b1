use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{grad_check, grad_check_at};
use super::*;
use crate::context::{build_windows, SlotFeature, WindowParams};
use crate::geometry::QuantizedCloud;
use crate::octree::{build, NodeSequence};

pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_occ: 8,
        d_lvl: 4,
        d_oct: 3,
        max_level: 16,
        k: 3,
        head_dim: 5,
        ffn_hidden: 12,
        out_hidden: 10,
        layers: 2,
        n: 12,
        n0: 5,
    }
}

pub(crate) fn random_sequence(points: usize, depth: u8, seed: u64) -> NodeSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = 1u32 << depth;
    let coords = (0..points)
        .map(|_| [0; 3].map(|_: u32| rng.gen_range(0..limit)))
        .collect();
    build(&QuantizedCloud::new(coords, [0.0; 3], 1.0, depth).unwrap()).unwrap()
}

fn windows(ns: &NodeSequence, c: &ModelConfig) -> Vec<ContextWindow> {
    build_windows(ns, WindowParams::new(c.n, c.k, c.n0).unwrap())
}

#[test]
fn later_rows_do_not_affect_earlier_outputs() {
    let c = tiny_config();
    let model = Model::<f32>::new_random(c, 3).unwrap();
    let ns = random_sequence(40, 5, 1);
    let window = &windows(&ns, &c)[2];
    let run = |rows: &[NodeFeatureRow]| {
        let mut t = model.trace();
        rows.iter().map(|r| t.push_row(r, true).unwrap().unwrap().to_vec()).collect::<Vec<_>>()
    };
    let base = run(&window.rows);
    for j in 1..c.n {
        let mut rows = window.rows.clone();
        rows[j].slots[0] = SlotFeature {
            occupancy: 255,
            level: 9,
            octant: 7,
        };
        let changed = run(&rows);
        for m in 0..j {
            assert_eq!(base[m], changed[m], "row {m} changed after perturbing row {j}");
        }
        assert_ne!(base[j], changed[j]);
    }
}

#[test]
fn whole_window_matches_row_by_row() {
    let c = tiny_config();
    let model = Model::<f32>::new_random(c, 4).unwrap();
    let ns = random_sequence(60, 6, 2);
    for window in windows(&ns, &c) {
        let batch = model.forward(&window).unwrap();
        let mut serial = Vec::new();
        for end in window.first_target_row()..c.n {
            let mut t = model.trace();
            for (r, row) in window.rows[..=end].iter().enumerate() {
                let out = t.push_row(row, r == end).unwrap();
                if r == end {
                    serial.push(out.unwrap().to_vec());
                }
            }
        }
        assert_eq!(batch.len(), serial.len());
        for (b, s) in batch.iter().zip(&serial) {
            assert_eq!(&b.0, s);
        }
    }
}

#[test]
fn attention_is_row_stochastic_and_causal() {
    let c = tiny_config();
    let model = Model::<f64>::new_random(c, 5).unwrap();
    let ns = random_sequence(30, 5, 3);
    let trace = model.run_window(&windows(&ns, &c)[1]).unwrap();
    let n = trace.len();
    for layer in 0..c.layers {
        for head in 0..c.k {
            let a = trace.attention_map(layer, head);
            for m in 0..n {
                let row = &a[m * n..(m + 1) * n];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(row[m + 1..].iter().all(|&w| w == 0.0));
                assert!(row[..=m].iter().all(|&w| w > 0.0));
            }
        }
    }
}

#[test]
fn output_distributions_are_normalized() {
    let c = tiny_config();
    let model = Model::<f32>::new_random(c, 6).unwrap();
    let ns = random_sequence(30, 5, 4);
    for w in windows(&ns, &c) {
        for d in model.forward(&w).unwrap() {
            assert_eq!(d.0.len(), 255);
            let s: f64 = d.0.iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(d.0.iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn full_config_slot_embedding_width() {
    let model = Model::<f32>::new_random(ModelConfig::full(), 0).unwrap();
    let row = NodeFeatureRow {
        slots: vec![
            SlotFeature {
                occupancy: 17,
                level: 3,
                octant: 5,
            },
            SlotFeature {
                occupancy: 200,
                level: 2,
                octant: 0,
            },
            SlotFeature {
                occupancy: 1,
                level: 1,
                octant: 0,
            },
            SlotFeature::PAD,
        ],
    };
    let emb = model.embed(&row).unwrap();
    assert_eq!(emb.len(), 4);
    assert!(emb.iter().all(|v| v.len() == 138));
    assert_eq!(model.config().model_dim(), 552);
}

#[test]
fn out_of_range_indices_are_errors() {
    let c = tiny_config();
    let model = Model::<f32>::new_random(c, 0).unwrap();
    let mut row = NodeFeatureRow::padding(c.k);
    row.slots[1].level = 17;
    assert!(matches!(
        model.embed(&row),
        Err(Error::IndexOutOfRange { table: "level", index: 17, .. })
    ));
    let mut row = NodeFeatureRow::padding(c.k);
    row.slots[0].octant = 9;
    assert!(matches!(
        model.embed(&row),
        Err(Error::IndexOutOfRange { table: "octant", .. })
    ));
    assert!(model.embed(&NodeFeatureRow::padding(c.k + 1)).is_err());
}

#[test]
fn reload_preserves_inference_bitwise() {
    let c = tiny_config();
    let model = Model::<f32>::new_random(c, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.octm");
    model.save(&path).unwrap();
    let loaded = Model::<f32>::load(&path).unwrap();
    assert_eq!(loaded, model);
    let ns = random_sequence(40, 5, 5);
    for w in windows(&ns, &c) {
        assert_eq!(model.forward(&w).unwrap(), loaded.forward(&w).unwrap());
    }
    assert_eq!(model.content_hash(), loaded.content_hash());
}

#[test]
fn gradients_match_finite_differences() {
    let c = tiny_config();
    let ns = random_sequence(50, 5, 6);
    let ws = windows(&ns, &c);
    for seed in 0..3 {
        let model = Model::<f64>::new_random(c, 100 + seed).unwrap();
        let report = grad_check(&model, &ws[seed as usize + 1], 64, seed).unwrap();
        assert!(report.max_relative_error < 1e-4, "seed {seed}: {}", report.max_relative_error);
    }
}

#[test]
fn gradients_match_in_every_tensor() {
    let c = tiny_config();
    let model = Model::<f64>::new_random(c, 7).unwrap();
    let ns = random_sequence(50, 5, 7);
    let window = &windows(&ns, &c)[3];
    let indices: Vec<usize> = model.layout().tensors.iter().map(|t| t.offset + (t.rows * t.cols) / 2).collect();
    let report = grad_check_at(&model, window, &indices).unwrap();
    for (i, a, n) in &report.entries {
        assert!(
            super::gradcheck::relative_error(*a, *n) < 1e-4,
            "param {i}: analytic {a} numeric {n}"
        );
    }
}

#[test]
fn unused_embedding_rows_get_zero_gradient() {
    let c = tiny_config();
    let model = Model::<f64>::new_random(c, 8).unwrap();
    let ns = random_sequence(20, 4, 8);
    let window = &windows(&ns, &c)[0];
    let used: Vec<u8> = window.rows.iter().flat_map(|r| r.slots.iter().map(|s| s.level)).collect();
    let level = (0..=c.max_level as u8).rev().find(|l| !used.contains(l)).unwrap();
    let start = model.layout().emb_lvl + level as usize * c.d_lvl;
    let indices: Vec<usize> = (start..start + c.d_lvl).collect();
    let report = grad_check_at(&model, window, &indices).unwrap();
    for (_, a, n) in report.entries {
        assert_eq!(a, 0.0);
        assert_eq!(n, 0.0);
    }
}

#[test]
fn random_init_is_near_uniform() {
    let c = ModelConfig {
        n: 64,
        n0: 64,
        ..ModelConfig::desk()
    };
    let ns = random_sequence(300, 8, 9);
    let ws = windows(&ns, &c);
    for seed in 0..3 {
        let model = Model::<f32>::new_random(c, seed).unwrap();
        let (nats, count) = model.evaluate(&ws).unwrap();
        let bits = nats / (count as f64 * std::f64::consts::LN_2);
        assert!((bits - 255f64.log2()).abs() < 0.5, "seed {seed}: {bits}");
    }
}

#[test]
fn f32_and_f64_agree() {
    let c = tiny_config();
    let m64 = Model::<f64>::new_random(c, 10).unwrap();
    let m32: Model<f32> = m64.cast();
    let ns = random_sequence(40, 5, 10);
    for w in windows(&ns, &c) {
        for (a, b) in m64.forward(&w).unwrap().iter().zip(m32.forward(&w).unwrap()) {
            for (x, y) in a.0.iter().zip(&b.0) {
                assert!((x - *y as f64).abs() < 1e-5);
            }
        }
    }
}
