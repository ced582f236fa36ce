//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as part of `cargo test`; run it alone with
//! `cargo test -p paaconv-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use paaconv::data::{
    format_cloud, generate_synthetic_room, parse_cloud, read_ply, write_ply, RoomCloud, RoomSpec,
};
use paaconv::geometry::{conv_param_count, tap_index, KernelWeights, PointCloud};
use paaconv::metrics::ConfusionMatrix;
use paaconv::network::{Network, NetworkConfig};
use paaconv::normals::{estimate_normals, KdTree};
use paaconv::ops::atrous_conv_forward;
use paaconv::pipeline::{derive_seeds, evaluate, training_blocks, DataConfig};
use paaconv::training::{train, TrainConfig};
use paaconv::Tensor2D;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_cloud(n: usize, channels: usize, extent: f64, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let positions = random_positions(n, extent, &mut r);
    let features = random_tensor(n, channels, 1.0, &mut r);
    PointCloud::new(positions, features, vec![None; n]).unwrap()
}

/// 1. Every op and a two-block toy network agree with central differences.
fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    let mut reports = op_gradient_suite();
    reports.push(("toy network", toy_network_report()));
    for (name, r) in &reports {
        if !r.ok() {
            failures.push(format!("{name}: {}", r.worst));
        }
        if r.max_rel > worst.0 {
            worst = (r.max_rel, name.to_string());
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} checks, max rel err {:.2e} ({}), {:.1}s",
        reports.len(),
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    );
    if !failures.is_empty() {
        return Err(format!("{detail}; {}", failures.join("; ")));
    }
    check(elapsed < Duration::from_secs(60), detail)
}

/// 2. The conv forward matches a direct 27-offset evaluation.
fn conv_oracle() -> Outcome {
    let mut r = rng(2);
    let mut max_dev = 0.0f64;
    for instance in 0..20 {
        let n = r.random_range(1..=50);
        let (c_in, c_out) = (r.random_range(1..=4), r.random_range(1..=4));
        let stride = instance % 4 + 1;
        let positions = random_positions(n, 0.8, &mut r);
        let features = random_tensor(n, c_in, 1.0, &mut r);
        let kernel = KernelWeights::from_parts(
            c_in,
            c_out,
            random_tensor(27 * c_in, c_out, 1.0, &mut r),
            random_tensor(1, c_out, 1.0, &mut r),
        )
        .unwrap();
        let layout = layout_for(&positions, 0.1);
        let (fast, _) = atrous_conv_forward(&features, &layout, &kernel, stride).unwrap();
        let slow = naive_atrous_conv(&positions, &features, &kernel, stride, 0.1);
        max_dev = max_dev.max(fast.max_abs_diff(&slow));
    }
    check(
        max_dev < 1e-10,
        format!("20 instances, max abs deviation {max_dev:.2e}"),
    )
}

/// 3. A conv layer has the same number of parameters at every stride.
fn parameter_parity() -> Outcome {
    let counts: Vec<usize> = [1, 2, 4, 8]
        .iter()
        .map(|&s| {
            Network::new(NetworkConfig {
                cascade_strides: vec![1],
                cascade_widths: vec![32],
                parallel_strides: vec![s],
                parallel_widths: vec![64],
                ..NetworkConfig::default()
            })
            .unwrap()
            .param_count()
        })
        .collect();
    let layer = conv_param_count(32, 64);
    check(
        counts.windows(2).all(|w| w[0] == w[1]) && layer == 27 * 32 * 64 + 64,
        format!("network totals {counts:?} for strides 1,2,4,8; conv layer {layer}"),
    )
}

// 4. Three points in cells (0,0,0), (1,0,0), (4,0,0) with unit cells, one
// channel, all weights 1, bias 0. At the first point, stride 1 sums cells
// (0,0,0) and (1,0,0): 1 + 10 = 11. Stride 4 sums (0,0,0) and (4,0,0):
// 1 + 100 = 101. Changing the far feature to 999 moves only stride 4
// (to 1000); changing the near feature to 77 moves only stride 1 (to 78).
fn locality() -> Outcome {
    let positions = vec![[0.5, 0.5, 0.5], [1.5, 0.5, 0.5], [4.5, 0.5, 0.5]];
    let layout = layout_for(&positions, 1.0);
    let kernel =
        KernelWeights::from_parts(1, 1, Tensor2D::filled(27, 1, 1.0), Tensor2D::zeros(1, 1))
            .unwrap();
    assert_eq!(tap_index(1, 0, 0), 22);
    let at_first = |feats: [f64; 3], stride: usize| {
        let f = Tensor2D::from_vec(3, 1, feats.to_vec()).unwrap();
        atrous_conv_forward(&f, &layout, &kernel, stride)
            .unwrap()
            .0
            .get(0, 0)
    };
    let (s1, s4) = (
        at_first([1.0, 10.0, 100.0], 1),
        at_first([1.0, 10.0, 100.0], 4),
    );
    let (s1_far, s4_far) = (
        at_first([1.0, 10.0, 999.0], 1),
        at_first([1.0, 10.0, 999.0], 4),
    );
    let (s1_near, s4_near) = (
        at_first([1.0, 77.0, 100.0], 1),
        at_first([1.0, 77.0, 100.0], 4),
    );
    check(
        s1 == 11.0 && s4 == 101.0 && s1_far == s1 && s4_far == 1000.0 && s1_near == 78.0 && s4_near == s4,
        format!("stride 1 -> {s1}, stride 4 -> {s4}; far change: {s1_far}/{s4_far}; near change: {s1_near}/{s4_near}"),
    )
}

/// 5. Output rows equal input rows.
fn resolution() -> Outcome {
    let net = Network::new(NetworkConfig::default()).unwrap();
    let mut shapes = Vec::new();
    for n in [1, 7, 4096] {
        let logits = net.forward(&random_cloud(n, 12, 1.0, n as u64)).unwrap();
        shapes.push((n, logits.rows(), logits.cols()));
    }
    check(
        shapes
            .iter()
            .all(|&(n, rows, cols)| n == rows && cols == 13),
        format!("(n, rows, classes) = {shapes:?}"),
    )
}

/// 6. Permuting a block permutes its logits bit for bit.
fn order_invariance() -> Outcome {
    let net = Network::new(NetworkConfig::default()).unwrap();
    let block = random_cloud(300, 12, 1.0, 6);
    let reference = net.forward(&block).unwrap();
    let mut r = rng(66);
    let mut identical = 0;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..block.len()).collect();
        perm.shuffle(&mut r);
        let logits = net.forward(&block.permuted(&perm)).unwrap();
        let expected = reference.gather_rows(&perm);
        if logits
            .as_slice()
            .iter()
            .zip(expected.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            identical += 1;
        }
    }
    check(
        identical == 10,
        format!("{identical}/10 permutations bitwise identical"),
    )
}

fn overfit_rooms(seed: u64) -> Vec<RoomCloud> {
    let spec = RoomSpec {
        size: [0.98, 0.98, 1.0],
        points: 256,
        classes: 4,
        objects: 1,
        noise: 0.002,
        ..RoomSpec::default()
    };
    derive_seeds(seed, 4)
        .into_iter()
        .map(|s| generate_synthetic_room(&spec, s).unwrap())
        .collect()
}

fn overfit_data() -> DataConfig {
    DataConfig {
        channels: 12,
        points_per_block: 256,
        normal_center: [0.49, 0.49, 0.5],
        ..DataConfig::default()
    }
}

/// 7. Overfit four small rooms, then generalize to four unseen ones.
fn overfit() -> Outcome {
    let start = Instant::now();
    let (train_rooms, held_out) = (overfit_rooms(1), overfit_rooms(2));
    let data = overfit_data();
    let net_cfg = NetworkConfig {
        class_count: 4,
        ..NetworkConfig::default()
    };
    let blocks = training_blocks(&train_rooms, &data, net_cfg.cell_size, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.5,
        batch_size: 2,
        epochs: 200,
        ..TrainConfig::default()
    };
    let state = train(Network::new(net_cfg).unwrap(), &blocks, &cfg).unwrap();
    let elapsed = start.elapsed();
    let reached = state
        .history
        .iter()
        .find(|h| h.train_oa >= 0.99)
        .map(|h| h.epoch);
    let final_oa = state.history.last().unwrap().train_oa;
    let held_oa = evaluate(&state.network, &held_out, &data)
        .unwrap()
        .overall_accuracy()
        .unwrap();
    check(
        reached.is_some() && final_oa >= 0.99 && held_oa >= 0.80 && elapsed < Duration::from_secs(300),
        format!(
            "{} blocks, train OA >= 0.99 first at epoch {reached:?}, final {final_oa:.4}, held-out OA {held_oa:.4}, {:.1}s",
            blocks.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
    dot.acos().to_degrees()
}

/// 8. Normals on a noisy tilted plane, orientation, and exact knn.
fn normals() -> Outcome {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(8);
    let noise = Normal::new(0.0, 1e-3).unwrap();
    // z = 0.3 x + 0.2 y + 1, normal (-0.3, -0.2, 1) / |.|
    let len = (0.09f64 + 0.04 + 1.0).sqrt();
    let truth = [-0.3 / len, -0.2 / len, 1.0 / len];
    let positions: Vec<[f64; 3]> = (0..2000)
        .map(|_| {
            let (x, y): (f64, f64) = (r.random(), r.random());
            [x, y, 0.3 * x + 0.2 * y + 1.0 + noise.sample(&mut r)]
        })
        .collect();
    let center = [0.5, 0.5, 5.0];
    let est = estimate_normals(&positions, 16, center).unwrap();
    let mean_err = est
        .normals
        .iter()
        .map(|n| angle_deg(*n, truth))
        .sum::<f64>()
        / positions.len() as f64;
    let (mut oriented, mut considered) = (0, 0);
    for (n, p) in est.normals.iter().zip(&positions) {
        let d: f64 = (0..3).map(|a| n[a] * (center[a] - p[a])).sum();
        if d != 0.0 {
            considered += 1;
            if d > 0.0 {
                oriented += 1;
            }
        }
    }

    let mut knn_ok = true;
    for trial in 0..3 {
        let cloud = random_positions(500, 1.0, &mut rng(80 + trial));
        let tree = KdTree::build(&cloud).unwrap();
        for (q, k) in [(0usize, 1usize), (17, 8), (250, 16), (499, 40)] {
            let query = cloud[q];
            let mut brute: Vec<(f64, usize)> = cloud
                .iter()
                .enumerate()
                .map(|(i, p)| ((0..3).map(|a| (p[a] - query[a]).powi(2)).sum(), i))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = brute.iter().take(k).map(|x| x.1).collect();
            knn_ok &= tree.knn(query, k).unwrap() == expected;
        }
    }
    check(
        mean_err < 5.0 && oriented == considered && knn_ok,
        format!("mean angular error {mean_err:.3} deg, oriented {oriented}/{considered}, knn exact: {knn_ok}"),
    )
}

/// 9. Confusion-matrix metrics equal a point-by-point count.
fn metrics_oracle() -> Outcome {
    let mut r = rng(9);
    let mut exact = 0;
    for _ in 0..10 {
        let n = r.random_range(1..=10_000);
        let classes = r.random_range(2..=13);
        // leave some classes out of the truth so exclusions are exercised
        let truth_classes = r.random_range(1..=classes);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..truth_classes)).collect();
        let pred: Vec<usize> = (0..n)
            .map(|i| {
                if r.random_bool(0.6) {
                    truth[i]
                } else {
                    r.random_range(0..classes)
                }
            })
            .collect();
        let mut cm = ConfusionMatrix::new(classes);
        cm.accumulate(&truth.iter().map(|&t| Some(t)).collect::<Vec<_>>(), &pred)
            .unwrap();
        let got = (
            cm.overall_accuracy().unwrap(),
            cm.mean_class_accuracy().unwrap().value,
            cm.mean_iou().unwrap().value,
        );
        if got == brute_force_metrics(&truth, &pred, classes) {
            exact += 1;
        }
    }
    let m = |rows: [u64; 4]| ConfusionMatrix::from_counts(2, rows.to_vec()).unwrap();
    let oa = m([3, 1, 1, 3]).overall_accuracy().unwrap();
    let macc = m([3, 1, 2, 2]).mean_class_accuracy().unwrap().value;
    let miou = m([3, 1, 2, 2]).mean_iou().unwrap().value;
    check(
        exact == 10 && oa == 0.75 && macc == 0.625 && (miou - 0.45).abs() < 1e-15,
        format!("{exact}/10 labelings exact; worked values {oa} / {macc} / {miou}"),
    )
}

/// 10. Two identical command-line runs give identical bytes.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let mut all = vec!["paaconv".to_string()];
        all.extend(args.iter().map(|s| s.to_string()));
        paaconv::cli::main_with_args(all)
    };
    let mut codes = vec![run(&[
        "synth",
        "--rooms",
        "2",
        "--classes",
        "4",
        "--points",
        "256",
        "--seed",
        "5",
        "--out",
        &p("data"),
    ])];
    let common_flags = [
        "--classes",
        "4",
        "--epochs",
        "5",
        "--lr",
        "0.5",
        "--batch-size",
        "2",
        "--points-per-block",
        "256",
        "--seed",
        "5",
    ];
    let data = p("data");
    let mut outputs = Vec::new();
    for run_id in ["a", "b"] {
        let ckpt = p(&format!("{run_id}.paac"));
        let mut args = vec!["train", "--data", &data, "--checkpoint", &ckpt];
        args.extend_from_slice(&common_flags);
        codes.push(run(&args));
        let out = p(&format!("metrics_{run_id}"));
        codes.push(run(&[
            "eval",
            "--data",
            &data,
            "--checkpoint",
            &ckpt,
            "--classes",
            "4",
            "--out",
            &out,
        ]));
        let read = |f: String| std::fs::read(f).unwrap_or_default();
        outputs.push([
            read(ckpt.clone()),
            read(format!("{ckpt}.history.csv")),
            read(format!("{out}/metrics.csv")),
            read(format!("{out}/confusion.csv")),
        ]);
    }
    let same = outputs[0] == outputs[1] && outputs[0].iter().all(|b| !b.is_empty());
    check(
        codes.iter().all(|&c| c == 0) && same,
        format!("exit codes {codes:?}; checkpoint, history and metric CSVs identical: {same}"),
    )
}

/// 11. ASCII, checkpoint and PLY round trips.
fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = RoomSpec {
        points: 500,
        ..RoomSpec::default()
    };
    let mut room = generate_synthetic_room(&spec, 11).unwrap();
    room.labels[3] = None;
    let path = dir.path().join("room.txt");
    let text = format_cloud(&room);
    let once = parse_cloud(&text, &path).unwrap();
    let twice = parse_cloud(&format_cloud(&once), &path).unwrap();
    let mut with_normals = room.clone();
    with_normals.normals = Some(
        estimate_normals(&room.positions, 16, [1.0, 1.0, 1.25])
            .unwrap()
            .normals,
    );
    let normals_back = parse_cloud(&format_cloud(&with_normals), &path).unwrap();
    let ascii = once == room && twice == once && normals_back == with_normals;

    let net = Network::new(NetworkConfig {
        seed: 4,
        ..NetworkConfig::default()
    })
    .unwrap();
    let ckpt = dir.path().join("net.paac");
    net.save(&ckpt).unwrap();
    let first = std::fs::read(&ckpt).unwrap();
    Network::load(&ckpt).unwrap().save(&ckpt).unwrap();
    let checkpoint = std::fs::read(&ckpt).unwrap() == first;

    let ply = dir.path().join("room.ply");
    write_ply(&ply, &room.positions, &room.labels).unwrap();
    let back = read_ply(&ply).unwrap();
    let ply_ok = back.positions.len() == room.len()
        && back
            .positions
            .iter()
            .zip(&room.positions)
            .all(|(a, b)| (0..3).all(|k| a[k] == b[k] as f32));
    check(
        ascii && checkpoint && ply_ok,
        format!("ascii lossless: {ascii}, checkpoint byte-identical: {checkpoint}, ply header and body parse: {ply_ok}"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient suite", gradients),
        ("conv oracle equivalence", conv_oracle),
        ("parameter parity across strides", parameter_parity),
        ("locality and receptive field", locality),
        ("resolution preservation", resolution),
        ("order invariance", order_invariance),
        ("overfit experiment", overfit),
        ("normals", normals),
        ("metrics oracle", metrics_oracle),
        ("determinism", determinism),
        ("format round-trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
