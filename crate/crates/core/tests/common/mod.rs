//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;
use voxforge::autodiff::{Tape, Tensor, Var};
use voxforge::voxel::{GridFrame, PointCloud, VoxelGrid};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so exact zeros compare by absolute error.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Like [`random_tensor`] but keeps every entry at least `gap` away from `kinks`.
pub fn tensor_avoiding(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// Largest relative error between tape gradients and central differences of
/// `sum(proj * f(inputs))` over every input element, with a random fixed
/// projection `proj`.
pub fn grad_check<F>(rng: &mut impl Rng, inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let probe = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).shape()
    };
    let proj = random_tensor(rng, &probe, -1.0, 1.0);
    let loss_of = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars);
        let v = out.value();
        v.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars);
    let loss = out.mul(tape.constant(proj.clone())).unwrap().sum();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    let mut xs: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let up = loss_of(&xs);
            xs[k].data_mut()[i] = orig - FD_STEP;
            let down = loss_of(&xs);
            xs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Per-voxel counts by explicit coordinates: (intersection, union, fn, fp).
pub fn naive_counts(recon: &VoxelGrid, truth: &VoxelGrid) -> (u64, u64, u64, u64) {
    let [nx, ny, nz] = truth.dims();
    let (mut i, mut u, mut f_n, mut f_p) = (0, 0, 0, 0);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (r, t) = (recon.get(x, y, z), truth.get(x, y, z));
                i += u64::from(r && t);
                u += u64::from(r || t);
                f_n += u64::from(t && !r);
                f_p += u64::from(r && !t);
            }
        }
    }
    (i, u, f_n, f_p)
}

/// IoU, hit rate and accuracy from the naive counts.
pub fn naive_metrics(recon: &VoxelGrid, truth: &VoxelGrid) -> (f64, f64, f64) {
    let (i, u, f_n, f_p) = naive_counts(recon, truth);
    let u = u as f64;
    (i as f64 / u, 1.0 - f_n as f64 / u, 1.0 - f_p as f64 / u)
}

pub fn random_grid(rng: &mut impl Rng, m: usize, density: f64) -> VoxelGrid {
    let frame = GridFrame::cube(m, [0.0; 3], 1.0).unwrap();
    let occ: Vec<bool> = (0..m * m * m).map(|_| rng.random_bool(density)).collect();
    VoxelGrid::from_bools(frame, &occ).unwrap()
}

fn brute_directed(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = (p - q).norm_squared();
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total
}

/// Double-loop symmetric Chamfer distance (sum of squared nearest distances).
pub fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    brute_directed(a.points(), b.points()) + brute_directed(b.points(), a.points())
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, half: f64) -> PointCloud {
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-half..half)))
        .collect();
    PointCloud::from_arrays(&pts).unwrap()
}

fn pick(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn conv3d_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let (n, c, f, k) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3));
    let stride = pick(rng, 1, 2);
    let pad = pick(rng, 0, k - 1);
    let s = pick(rng, k, k + 3);
    let inputs = [
        random_tensor(rng, &[n, c, s, s, s], -1.0, 1.0),
        random_tensor(rng, &[f, c, k, k, k], -1.0, 1.0),
        random_tensor(rng, &[f], -1.0, 1.0),
    ];
    grad_check(rng, &inputs, |_, v| v[0].conv3d(v[1], v[2], stride, pad).unwrap())
}

fn conv_transpose_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let (n, c, f, k) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 4));
    let stride = pick(rng, 1, 2);
    let pad = pick(rng, 0, (k - 1) / 2);
    let s = pick(rng, 1, 4);
    let inputs = [
        random_tensor(rng, &[n, f, s, s, s], -1.0, 1.0),
        random_tensor(rng, &[f, c, k, k, k], -1.0, 1.0),
        random_tensor(rng, &[c], -1.0, 1.0),
    ];
    grad_check(rng, &inputs, |_, v| v[0].conv3d_transpose(v[1], v[2], stride, pad).unwrap())
}

fn linear_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let (n, i, o) = (pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 8));
    let inputs = [
        random_tensor(rng, &[n, i], -1.0, 1.0),
        random_tensor(rng, &[o, i], -1.0, 1.0),
        random_tensor(rng, &[o], -1.0, 1.0),
    ];
    grad_check(rng, &inputs, |_, v| v[0].linear(v[1], v[2]).unwrap())
}

fn lstm_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use voxforge::autodiff::{lstm_cell, LstmParams, LstmState};
    let (n, i, h) = (pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5));
    let mut inputs = vec![
        random_tensor(rng, &[n, i], -1.0, 1.0),
        random_tensor(rng, &[n, h], -1.0, 1.0),
        random_tensor(rng, &[n, h], -1.0, 1.0),
    ];
    for _ in 0..4 {
        inputs.push(random_tensor(rng, &[h, i + h], -1.0, 1.0));
    }
    for _ in 0..4 {
        inputs.push(random_tensor(rng, &[h], -1.0, 1.0));
    }
    grad_check(rng, &inputs, |_, v| {
        let prev = LstmState { h: v[1], s: v[2] };
        let p = LstmParams {
            w_i: v[3],
            w_f: v[4],
            w_o: v[5],
            w_s: v[6],
            b_i: v[7],
            b_f: v[8],
            b_o: v[9],
            b_s: v[10],
        };
        let next = lstm_cell(v[0], &prev, &p).unwrap();
        next.h.concat_cols(next.s).unwrap()
    })
}

fn activation_instance(rng: &mut rand_chacha::ChaCha8Rng, act: fn(Var<'_>) -> Var<'_>, kinks: &[f64]) -> f64 {
    let (n, k) = (pick(rng, 1, 4), pick(rng, 1, 8));
    let inputs = [tensor_avoiding(rng, &[n, k], -3.0, 3.0, kinks, 1e-3)];
    grad_check(rng, &inputs, |_, v| act(v[0]))
}

fn relu_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    activation_instance(rng, |v| v.relu(), &[0.0])
}

fn sigmoid_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    activation_instance(rng, |v| v.sigmoid(), &[])
}

fn tanh_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    activation_instance(rng, |v| v.tanh(), &[])
}

fn bce_instance(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let (n, k) = (pick(rng, 1, 4), pick(rng, 1, 8));
    let pred = random_tensor(rng, &[n, k], 0.02, 0.98);
    let target = Tensor::from_fn(&[n, k], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let weight = rng
        .random_bool(0.5)
        .then(|| random_tensor(rng, &[n, k], 0.5, 3.0));
    grad_check(rng, &[pred], |_, v| v[0].bce(&target, weight.as_ref()).unwrap())
}

pub type InstanceCheck = fn(&mut rand_chacha::ChaCha8Rng) -> f64;

/// Random-instance gradient checks; each call draws a fresh instance and
/// returns its worst relative error.
pub const PRIMITIVES: [(&str, InstanceCheck); 8] = [
    ("conv3d", conv3d_instance),
    ("conv3d_transpose", conv_transpose_instance),
    ("linear", linear_instance),
    ("lstm_cell", lstm_instance),
    ("relu", relu_instance),
    ("sigmoid", sigmoid_instance),
    ("tanh", tanh_instance),
    ("bce", bce_instance),
];
