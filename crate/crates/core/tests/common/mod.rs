//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use paaconv::geometry::{cell_coordinates, CellLayout, KernelWeights};
use paaconv::ops::{GradTape, Var};
use paaconv::{Result, Tensor2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Entries smaller than this are compared on an absolute scale, where the
/// central-difference truncation error dominates any relative measure.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor2D {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor2D::from_vec(rows, cols, data).unwrap()
}

pub fn random_positions(n: usize, extent: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(0.0..extent)))
        .collect()
}

pub fn layout_for(positions: &[[f64; 3]], cell_size: f64) -> Arc<CellLayout> {
    let (_, cells) = cell_coordinates(positions, cell_size).unwrap();
    Arc::new(CellLayout::from_point_cells(&cells))
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Debug)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.max_rel <= FD_TOLERANCE
    }
}

fn projected(out: &Tensor2D, weights: &Tensor2D) -> f64 {
    out.as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

/// Compares reverse-mode gradients of `sum(R * f(inputs))` (R a fixed random
/// projection, or 1 for a scalar output) against central differences.
pub fn grad_check<F>(inputs: &[Tensor2D], seed: u64, f: F) -> GradReport
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor2D]| -> (GradTape, Var, Vec<Var>) {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        (tape, out, vars)
    };
    let (tape, out, vars) = eval(inputs);
    let shape = tape.value(out).shape();
    let projection = if shape == (1, 1) {
        Tensor2D::filled(1, 1, 1.0)
    } else {
        random_tensor(shape.0, shape.1, 1.0, &mut rng(seed))
    };
    let mut grads = tape.backward_with(out, projection.clone()).unwrap();
    let analytic: Vec<Tensor2D> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take_or_zeros(v, t))
        .collect();

    let mut report = GradReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut values = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let original = input.as_slice()[idx];
            values[which].as_mut_slice()[idx] = original + FD_STEP;
            let (t, o, _) = eval(&values);
            let plus = projected(t.value(o), &projection);
            values[which].as_mut_slice()[idx] = original - FD_STEP;
            let (t, o, _) = eval(&values);
            let minus = projected(t.value(o), &projection);
            values[which].as_mut_slice()[idx] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[which].as_slice()[idx];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst =
                    format!("input {which} entry {idx}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    report
}

/// Direct evaluation of the atrous convolution: for every point, sum over
/// all 27 offsets of the weighted mean feature of the offset cell (zero
/// when empty), plus bias. Cells come from `floor((p - min) / h)`.
pub fn naive_atrous_conv(
    positions: &[[f64; 3]],
    features: &Tensor2D,
    kernel: &KernelWeights,
    stride: usize,
    cell_size: f64,
) -> Tensor2D {
    let mut lo = [f64::INFINITY; 3];
    for p in positions {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
        }
    }
    let cell = |p: &[f64; 3]| -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell_size).floor() as i64)
    };
    let mut members: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        members.entry(cell(p)).or_default().push(i);
    }
    let (c_in, c_out) = (kernel.c_in(), kernel.c_out());
    let s = stride as i64;
    let mut out = Tensor2D::zeros(positions.len(), c_out);
    for (n, p) in positions.iter().enumerate() {
        let home = cell(p);
        for o in 0..c_out {
            let mut acc = kernel.bias.get(0, o);
            for i in -1i64..=1 {
                for j in -1i64..=1 {
                    for k in -1i64..=1 {
                        let tap = ((i + 1) * 9 + (j + 1) * 3 + (k + 1)) as usize;
                        let target = [home[0] + i * s, home[1] + j * s, home[2] + k * s];
                        let Some(m) = members.get(&target) else {
                            continue;
                        };
                        for c in 0..c_in {
                            let mean =
                                m.iter().map(|&q| features.get(q, c)).sum::<f64>() / m.len() as f64;
                            acc += kernel.weight(tap, c, o) * mean;
                        }
                    }
                }
            }
            out.set(n, o, acc);
        }
    }
    out
}

/// Accuracy, mean class accuracy and mean IoU counted point by point,
/// without a confusion matrix.
pub fn brute_force_metrics(truth: &[usize], pred: &[usize], classes: usize) -> (f64, f64, f64) {
    let n = truth.len();
    let oa = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / n as f64;
    let (mut accs, mut ious) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let in_truth = truth.iter().filter(|&&t| t == c).count();
        let hits = truth
            .iter()
            .zip(pred)
            .filter(|(&t, &p)| t == c && p == c)
            .count();
        let union = truth
            .iter()
            .zip(pred)
            .filter(|(&t, &p)| t == c || p == c)
            .count();
        if in_truth > 0 {
            accs.push(hits as f64 / in_truth as f64);
        }
        if union > 0 {
            ious.push(hits as f64 / union as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (oa, mean(&accs), mean(&ious))
}

/// Gradient checks of every differentiable op, each on small random data.
pub fn op_gradient_suite() -> Vec<(&'static str, GradReport)> {
    let mut r = rng(11);
    let n = 20;
    let positions = random_positions(n, 0.4, &mut r);
    let layout = layout_for(&positions, 0.1);
    let feats = random_tensor(n, 3, 1.0, &mut r);
    let conv_w = random_tensor(27 * 3, 4, 0.5, &mut r);
    let conv_b = random_tensor(1, 4, 0.5, &mut r);
    let sa_k = random_tensor(5, 2, 0.8, &mut r);
    let sa_b = random_tensor(1, 1, 0.3, &mut r);
    let c = 4;
    let w1 = random_tensor(c, c, 0.8, &mut r);
    let b1 = random_tensor(1, c, 0.3, &mut r);
    let w2 = random_tensor(c, c, 0.8, &mut r);
    let b2 = random_tensor(1, c, 0.3, &mut r);
    let wide = random_tensor(n, c, 1.0, &mut r);
    let pooled = random_tensor(2, c, 1.0, &mut r);
    let seq = random_tensor(n, 2, 1.0, &mut r);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();

    let mut out = Vec::new();
    for stride in [1, 2, 3] {
        let l = layout.clone();
        out.push((
            ["atrous conv s=1", "atrous conv s=2", "atrous conv s=3"][stride - 1],
            grad_check(
                &[feats.clone(), conv_w.clone(), conv_b.clone()],
                1,
                move |t, v| t.atrous_conv(v[0], v[1], v[2], &l, stride),
            ),
        ));
    }
    out.push((
        "spatial attention",
        grad_check(&[wide.clone(), sa_k.clone(), sa_b.clone()], 2, |t, v| {
            t.spatial_attention(v[0], v[1], v[2])
        }),
    ));
    out.push((
        "channel attention",
        grad_check(
            &[wide.clone(), w1.clone(), b1.clone(), w2.clone(), b2.clone()],
            3,
            |t, v| t.channel_attention(v[0], v[1], v[2], v[3], v[4]),
        ),
    ));
    out.push((
        "channel-attention dense pair",
        grad_check(&[pooled, w1, b1, w2, b2], 4, |t, v| {
            let h = t.linear(v[0], v[1], v[2])?;
            let h = t.relu(h);
            let d = t.linear(h, v[3], v[4])?;
            Ok(t.sum_rows(d))
        }),
    ));
    out.push((
        "1-D conv",
        grad_check(&[seq, sa_k, sa_b], 5, |t, v| t.conv1d(v[0], v[1], v[2])),
    ));
    out.push((
        "activation",
        grad_check(std::slice::from_ref(&wide), 6, |t, v| Ok(t.relu(v[0]))),
    ));
    out.push((
        "sigmoid",
        grad_check(std::slice::from_ref(&wide), 7, |t, v| Ok(t.sigmoid(v[0]))),
    ));
    out.push((
        "softmax cross-entropy",
        grad_check(&[wide], 8, move |t, v| {
            t.softmax_cross_entropy(v[0], &labels)
        }),
    ));
    out
}

/// Gradient check of every parameter of a two-block network (one cascade
/// block, one parallel block) on a 24-point, 5-channel block.
pub fn toy_network_report() -> GradReport {
    use paaconv::geometry::PointCloud;
    use paaconv::network::{Network, NetworkConfig};

    let mut r = rng(21);
    let n = 24;
    let cfg = NetworkConfig {
        in_channels: 5,
        class_count: 3,
        cascade_strides: vec![1],
        cascade_widths: vec![6],
        parallel_strides: vec![2],
        parallel_widths: vec![6],
        cell_size: 0.2,
        seed: 5,
    };
    let mut net = Network::new(cfg).unwrap();
    let positions = random_positions(n, 0.8, &mut r);
    let features = random_tensor(n, 5, 1.0, &mut r);
    let labels = (0..n).map(|i| Some(i % 3)).collect();
    let cloud = PointCloud::new(positions, features, labels).unwrap();
    let block = net.prepare(&cloud).unwrap();
    let analytic = net.loss_and_gradients(&block, 1.0).unwrap().grads;

    let mut report = GradReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (which, g) in analytic.iter().enumerate() {
        for idx in 0..g.len() {
            let original = net.parameters()[which].as_slice()[idx];
            let mut loss_at = |v: f64| {
                net.parameters_mut()[which].as_mut_slice()[idx] = v;
                net.loss_and_gradients(&block, 1.0).unwrap().loss
            };
            let numeric =
                (loss_at(original + FD_STEP) - loss_at(original - FD_STEP)) / (2.0 * FD_STEP);
            net.parameters_mut()[which].as_mut_slice()[idx] = original;
            let a = g.as_slice()[idx];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst =
                    format!("param {which} entry {idx}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    report
}
