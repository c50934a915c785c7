//! Independent reference computations shared by the focused tests and the
//! acceptance run.

use std::collections::BTreeMap;

use ndarray::Array2;
use sentprobe::embedding::{self, SignalSpec};
use sentprobe::labels::{ProbingExample, TaskKind};
use sentprobe::probe::{self, LabeledMatrix, ProbeConfig, ProbeModel};
use sentprobe::robustness::{Dimension, RobustnessRecord};
use sentprobe::seed;

/// Twenty overlapping 2-d points, ten per class.
pub const TINY_X: [[f64; 2]; 20] = [
    [-1.2, 0.3], [-0.8, -0.5], [-1.5, 1.1], [-0.3, 0.2], [0.4, -0.9],
    [-2.0, -0.1], [-0.6, 0.8], [0.1, 0.5], [-1.1, -1.3], [0.9, 0.4],
    [1.0, 0.2], [0.7, -0.4], [1.6, 0.9], [0.2, -0.1], [-0.5, 0.6],
    [2.1, -0.7], [0.9, 1.2], [1.3, -1.0], [-0.2, -0.8], [0.5, 0.3],
];

pub fn tiny_instance() -> LabeledMatrix {
    let x = Array2::from_shape_fn((20, 2), |(i, j)| TINY_X[i][j]);
    let y = (0..20).map(|i| usize::from(i >= 10)).collect();
    LabeledMatrix::new(x, y, 2).unwrap()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// With two classes the penalized multinomial objective depends only on
/// the row difference v = w1 - w0 and bias gap b; its minimum over the
/// remaining directions is 1/4 |v|^2 + C * sum softplus(-s_i (v.x_i + b)).
fn reduced_objective(v: [f64; 2], b: f64, c: f64) -> f64 {
    let loss: f64 = TINY_X
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let s = if i >= 10 { 1.0 } else { -1.0 };
            softplus(-s * (v[0] * x[0] + v[1] * x[1] + b))
        })
        .sum();
    0.25 * (v[0] * v[0] + v[1] * v[1]) + c * loss
}

/// Brute-force minimum of the reduced objective: a 41^3 grid over a box,
/// re-centred on the best point and shrunk fourfold each round.
pub fn grid_search_min(c: f64) -> f64 {
    const N: usize = 41;
    let mut centre = [0.0f64; 3];
    let mut half = 20.0f64;
    let mut best = f64::INFINITY;
    for _ in 0..16 {
        let h = 2.0 * half / (N - 1) as f64;
        let mut arg = centre;
        for i in 0..N {
            let a = centre[0] - half + i as f64 * h;
            for j in 0..N {
                let bb = centre[1] - half + j as f64 * h;
                for k in 0..N {
                    let g = centre[2] - half + k as f64 * h;
                    let f = reduced_objective([a, bb], g, c);
                    if f < best {
                        best = f;
                        arg = [a, bb, g];
                    }
                }
            }
        }
        centre = arg;
        half = 5.0 * h;
    }
    best
}

/// Largest relative error between the analytic gradient and central
/// differences over `instances` random problems; components are compared
/// relative to max(|analytic|, |numeric|, 1e-3).
pub fn gradient_check(instances: usize, k: usize, d: usize, n: usize, step: f64) -> f64 {
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let mut rng = seed::stream(2024, "gradcheck", &inst.to_string());
        let x = Array2::from_shape_fn((n, d), |_| seed::standard_normal(&mut rng));
        let mut y: Vec<usize> = (0..n).map(|_| seed::index(&mut rng, k)).collect();
        y[0] = 0;
        y[1] = 1;
        let data = LabeledMatrix::new(x, y, k).unwrap();
        let params: Vec<f64> = (0..k * d + k).map(|_| 0.5 * seed::standard_normal(&mut rng)).collect();
        let c = 20.0;
        let (_, grad) = probe::objective_and_gradient(&ProbeModel::from_params(&params, k, d), &data, c);
        for i in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[i] += step;
            minus[i] -= step;
            let fp = probe::objective(&ProbeModel::from_params(&plus, k, d), &data, c);
            let fm = probe::objective(&ProbeModel::from_params(&minus, k, d), &data, c);
            let numeric = (fp - fm) / (2.0 * step);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `n` VerbNum examples with balanced labels.
pub fn planted_examples(n: usize) -> Vec<ProbingExample> {
    (0..n)
        .map(|i| {
            let tokens = vec![(format!("w{i}"), "NN".to_string()), ("है".to_string(), "VM".to_string())];
            ProbingExample::new(&format!("p{i}"), "hi", TaskKind::VerbNum, tokens, i % 3)
        })
        .collect()
}

pub struct SignalRun {
    pub accuracies: Vec<f64>,
    pub majority_rate: f64,
}

/// Probes every layer of a planted-signal fixture. With `shuffle_labels`
/// the labels are permuted after the embeddings are generated.
pub fn planted_signal_run(n: usize, dim: u16, layers: u16, signal_layer: usize, shuffle_labels: bool) -> SignalRun {
    use rayon::prelude::*;
    let mut examples = planted_examples(n);
    let signal = SignalSpec { strength: 5.0, layers: vec![signal_layer] };
    let set = embedding::generate_fixture(&examples, "fixture", [0; 32], layers, dim, 7, Some(&signal)).unwrap();
    if shuffle_labels {
        let mut labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        seed::shuffle(&mut seed::stream(7, "test/shuffle-labels", ""), &mut labels);
        for (e, l) in examples.iter_mut().zip(labels) {
            e.label = l;
            e.label_name = e.task.label_names()[l].to_string();
        }
    }
    let mut counts = BTreeMap::new();
    for e in &examples {
        *counts.entry(e.label).or_insert(0usize) += 1;
    }
    let majority_rate = *counts.values().max().unwrap() as f64 / n as f64;
    let cfg = ProbeConfig::default();
    let accuracies = (0..layers as usize)
        .into_par_iter()
        .map(|l| probe::run_probe(&set, &examples, l, &cfg).unwrap().mean_accuracy)
        .collect();
    SignalRun { accuracies, majority_rate }
}

/// Largest gap between a fold's class count and n_c / k over `vectors`
/// random label vectors.
pub fn stratification_max_deviation(vectors: usize) -> f64 {
    let mut worst = 0.0f64;
    for v in 0..vectors {
        let mut rng = seed::stream(99, "test/strat", &v.to_string());
        let k = 2 + seed::index(&mut rng, 9);
        let classes = 2 + seed::index(&mut rng, 7);
        let mut y = Vec::new();
        for c in 0..classes {
            let count = k + seed::index(&mut rng, 60);
            y.extend(std::iter::repeat(c).take(count));
        }
        seed::shuffle(&mut rng, &mut y);
        let folds = probe::stratified_kfold(&y, k, v as u64).unwrap();
        assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; y.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            assert_eq!(f.train.len() + f.test.len(), y.len());
        }
        assert!(seen.iter().all(|&s| s == 1), "every index is tested exactly once");
        for c in 0..classes {
            let n_c = y.iter().filter(|&&l| l == c).count() as f64;
            for f in &folds {
                let in_fold = f.test.iter().filter(|&&i| y[i] == c).count() as f64;
                worst = worst.max((in_fold - n_c / k as f64).abs());
            }
        }
    }
    worst
}

pub fn synthetic_records() -> Vec<RobustnessRecord> {
    let path = super::fixture_path("robustness_records.csv");
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            RobustnessRecord::new(
                &r[0],
                &r[1],
                &r[2],
                r[3].parse().unwrap(),
                r[4].parse().unwrap(),
                r[5].parse().unwrap(),
                r[6].parse().unwrap(),
                r[7].parse().unwrap(),
            )
            .unwrap()
        })
        .collect()
}

/// Largest difference between aggregated tables and the spreadsheet
/// values, plus the number of cells compared.
pub fn spreadsheet_gap() -> (f64, usize) {
    let text = std::fs::read_to_string(super::fixture_path("robustness_expected.json")).unwrap();
    let expected: BTreeMap<String, BTreeMap<String, serde_json::Value>> = serde_json::from_str(&text).unwrap();
    let records = synthetic_records();
    let mut worst = 0.0f64;
    let mut cells = 0;
    for (dims, table) in &expected {
        let dims: Vec<Dimension> = dims.split(',').map(|d| d.parse().unwrap()).collect();
        let got = sentprobe::robustness::aggregate(&records, &dims).unwrap();
        assert_eq!(got.cells.len(), table.len(), "{dims:?}");
        for (key, cell) in &got.cells {
            let key: Vec<String> = key.iter().map(ToString::to_string).collect();
            let want = &table[&key.join("|")];
            worst = worst.max((cell.score - want["score"].as_f64().unwrap()).abs());
            assert_eq!(cell.weight, want["weight"].as_f64().unwrap());
            cells += 1;
        }
    }
    (worst, cells)
}
