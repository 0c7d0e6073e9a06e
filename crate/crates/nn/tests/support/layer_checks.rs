//! Analytic-vs-numeric gradient checks for every layer kind.
//!
//! Each check draws a small random instance from `seed`, builds the scalar
//! `L = Σ c ⊙ layer(x)` with fixed random coefficients `c`, differentiates it
//! on the tape (f32) and compares against central differences of the f64
//! reference implementation. Returns `(tensor name, relative error)` pairs.

#![allow(dead_code)]

use daif_nn::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference as rf;

pub const FD_STEP: f64 = 1e-3;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn weighted_sum(tape: &mut Tape, y: Var, coeff: &[f32]) -> Var {
    let c = tape.constant(Tensor::new(tape.value(y).shape().to_vec(), coeff.to_vec()).unwrap());
    let p = tape.mul(y, c).unwrap();
    tape.sum(p)
}

fn grads_of(tape: &Tape, loss: Var, vars: &[Var]) -> Vec<Vec<f32>> {
    let g = tape.backward(loss).unwrap();
    vars.iter().map(|v| g.input(*v).unwrap().data().to_vec()).collect()
}

/// Numeric gradient of `f(inputs)` w.r.t. input `which`.
fn numeric(inputs: &[Vec<f64>], which: usize, f: &dyn Fn(&[Vec<f64>]) -> f64) -> Vec<f64> {
    let mut work = inputs.to_vec();
    rf::central_diff(&inputs[which], FD_STEP, |p| {
        work[which] = p.to_vec();
        f(&work)
    })
}

fn compare(names: &[&str], analytic: &[Vec<f32>], inputs: &[Vec<f64>], f: &dyn Fn(&[Vec<f64>]) -> f64) -> Vec<(String, f64)> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), rf::rel_err(&analytic[i], &numeric(inputs, i, f))))
        .collect()
}

pub fn check_conv2d(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3);
    let s = rng.random_range(1..=2);
    let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(k..k + 4), rng.random_range(k..k + 4));
    let xs = [n, c, h, w];
    let ws = [o, c, k, k];
    let x = rand_vec(&mut rng, n * c * h * w);
    let wt = rand_vec(&mut rng, o * c * k * k);
    let b = rand_vec(&mut rng, o);
    let (_, ys) = rf::conv2d(&rf::to64(&x), xs, &rf::to64(&wt), ws, &rf::to64(&b), s);
    let coeff = rand_vec(&mut rng, ys.iter().product());

    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(xs.to_vec(), x.clone()).unwrap());
    let wv = tape.input(Tensor::new(ws.to_vec(), wt.clone()).unwrap());
    let bv = tape.input(Tensor::new(vec![o], b.clone()).unwrap());
    let y = tape.conv2d(xv, wv, bv, s).unwrap();
    let loss = weighted_sum(&mut tape, y, &coeff);
    let analytic = grads_of(&tape, loss, &[xv, wv, bv]);

    let c64 = rf::to64(&coeff);
    let f = move |p: &[Vec<f64>]| rf::dot(&rf::conv2d(&p[0], xs, &p[1], ws, &p[2], s).0, &c64);
    compare(&["conv.x", "conv.w", "conv.b"], &analytic, &[rf::to64(&x), rf::to64(&wt), rf::to64(&b)], &f)
}

pub fn check_deconv2d(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=4);
    let s = rng.random_range(1..=2);
    let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let xs = [n, c, h, w];
    let ws = [c, o, k, k];
    let x = rand_vec(&mut rng, n * c * h * w);
    let wt = rand_vec(&mut rng, c * o * k * k);
    let b = rand_vec(&mut rng, o);
    let (_, ys) = rf::deconv2d(&rf::to64(&x), xs, &rf::to64(&wt), ws, &rf::to64(&b), s);
    let coeff = rand_vec(&mut rng, ys.iter().product());

    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(xs.to_vec(), x.clone()).unwrap());
    let wv = tape.input(Tensor::new(ws.to_vec(), wt.clone()).unwrap());
    let bv = tape.input(Tensor::new(vec![o], b.clone()).unwrap());
    let y = tape.deconv2d(xv, wv, bv, s).unwrap();
    let loss = weighted_sum(&mut tape, y, &coeff);
    let analytic = grads_of(&tape, loss, &[xv, wv, bv]);

    let c64 = rf::to64(&coeff);
    let f = move |p: &[Vec<f64>]| rf::dot(&rf::deconv2d(&p[0], xs, &p[1], ws, &p[2], s).0, &c64);
    compare(&["deconv.x", "deconv.w", "deconv.b"], &analytic, &[rf::to64(&x), rf::to64(&wt), rf::to64(&b)], &f)
}

pub fn check_dense(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, inp, out) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
    let x = rand_vec(&mut rng, batch * inp);
    let wt = rand_vec(&mut rng, out * inp);
    let b = rand_vec(&mut rng, out);
    let coeff = rand_vec(&mut rng, batch * out);

    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(vec![batch, inp], x.clone()).unwrap());
    let wv = tape.input(Tensor::new(vec![out, inp], wt.clone()).unwrap());
    let bv = tape.input(Tensor::new(vec![out], b.clone()).unwrap());
    let y = tape.dense(xv, wv, bv).unwrap();
    let loss = weighted_sum(&mut tape, y, &coeff);
    let analytic = grads_of(&tape, loss, &[xv, wv, bv]);

    let c64 = rf::to64(&coeff);
    let f = move |p: &[Vec<f64>]| rf::dot(&rf::dense(&p[0], batch, inp, &p[1], out, &p[2]), &c64);
    compare(&["dense.x", "dense.w", "dense.b"], &analytic, &[rf::to64(&x), rf::to64(&wt), rf::to64(&b)], &f)
}

/// Training-mode (batch statistics) and evaluation-mode batchnorm.
pub fn check_batchnorm(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.random_range(2..=3), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(1..=3), rng.random_range(2..=3));
    let s = h * w;
    let x = rand_vec(&mut rng, n * c * s);
    let gamma: Vec<f32> = (0..c).map(|_| rng.random_range(0.5f32..1.5)).collect();
    let beta = rand_vec(&mut rng, c);
    let rmean = rand_vec(&mut rng, c);
    let rvar: Vec<f32> = (0..c).map(|_| rng.random_range(0.5f32..2.0)).collect();
    let coeff = rand_vec(&mut rng, n * c * s);
    let eps = 1e-5f32;
    let mut out = Vec::new();

    for train in [true, false] {
        let mut tape = Tape::new();
        let xv = tape.input(Tensor::new(vec![n, c, h, w], x.clone()).unwrap());
        let gv = tape.input(Tensor::new(vec![c], gamma.clone()).unwrap());
        let bv = tape.input(Tensor::new(vec![c], beta.clone()).unwrap());
        let stats = if train { None } else { Some((&rmean[..], &rvar[..])) };
        let (y, _, _) = tape.batchnorm(xv, gv, bv, eps, stats).unwrap();
        let loss = weighted_sum(&mut tape, y, &coeff);
        let analytic = grads_of(&tape, loss, &[xv, gv, bv]);

        let c64 = rf::to64(&coeff);
        let (rm, rv) = (rf::to64(&rmean), rf::to64(&rvar));
        let f = move |p: &[Vec<f64>]| {
            let running = if train { None } else { Some((&rm[..], &rv[..])) };
            rf::dot(&rf::batchnorm(&p[0], n, c, s, &p[1], &p[2], eps as f64, running), &c64)
        };
        let names: &[&str] = if train {
            &["bn_train.x", "bn_train.gamma", "bn_train.beta"]
        } else {
            &["bn_eval.x", "bn_eval.gamma", "bn_eval.beta"]
        };
        out.extend(compare(names, &analytic, &[rf::to64(&x), rf::to64(&gamma), rf::to64(&beta)], &f));
    }
    out
}

/// Maxpool on inputs whose window entries are separated by more than the
/// finite-difference step, so no argmax flips.
pub fn check_maxpool(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (planes, k, s) = (rng.random_range(1..=3), 2, 2);
    let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let total = planes * h * w;
    let mut levels: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        let j = rng.random_range(0..=i);
        levels.swap(i, j);
    }
    let x: Vec<f32> = levels.iter().map(|&l| l as f32 * 0.05 - 1.0).collect();
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let coeff = rand_vec(&mut rng, planes * oh * ow);

    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(vec![1, planes, h, w], x.clone()).unwrap());
    let y = tape.maxpool2d(xv, k, s).unwrap();
    let loss = weighted_sum(&mut tape, y, &coeff);
    let analytic = grads_of(&tape, loss, &[xv]);
    let c64 = rf::to64(&coeff);
    let f = move |p: &[Vec<f64>]| rf::dot(&rf::maxpool(&p[0], planes, h, w, k, s), &c64);
    compare(&["maxpool.x"], &analytic, &[rf::to64(&x)], &f)
}

/// Elementwise activations and softmax, inputs kept away from the ReLU kink.
pub fn check_activations(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (rng.random_range(1..=3), rng.random_range(2..=11));
    let x: Vec<f32> = (0..rows * cols)
        .map(|_| {
            let v: f32 = rng.random_range(-2.0..2.0);
            if v.abs() < 0.05 {
                v + 0.1f32.copysign(v)
            } else {
                v
            }
        })
        .collect();
    let coeff = rand_vec(&mut rng, rows * cols);
    let c64 = rf::to64(&coeff);
    let mut out = Vec::new();
    for kind in ["relu", "sigmoid", "softmax"] {
        let mut tape = Tape::new();
        let xv = tape.input(Tensor::new(vec![rows, cols], x.clone()).unwrap());
        let y = match kind {
            "relu" => tape.relu(xv),
            "sigmoid" => tape.sigmoid(xv),
            _ => tape.softmax(xv),
        };
        let loss = weighted_sum(&mut tape, y, &coeff);
        let analytic = grads_of(&tape, loss, &[xv]);
        let c = c64.clone();
        let f = move |p: &[Vec<f64>]| {
            let y = match kind {
                "relu" => rf::relu(&p[0]),
                "sigmoid" => rf::sigmoid(&p[0]),
                _ => p[0].chunks(cols).flat_map(rf::softmax).collect(),
            };
            rf::dot(&y, &c)
        };
        out.extend(compare(&[kind], &analytic, &[rf::to64(&x)], &f));
    }
    out
}
