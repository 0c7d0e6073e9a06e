mod support;

use daif_nn::{Tape, Tensor};
use support::layer_checks::*;
use support::reference as rf;

const TOL: f64 = 1e-4;

fn assert_all(results: Vec<(String, f64)>, seed: u64) {
    for (name, err) in results {
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv2d_matches_finite_differences() {
    for seed in 0..20 {
        assert_all(check_conv2d(seed), seed);
    }
}

#[test]
fn deconv2d_matches_finite_differences() {
    for seed in 0..20 {
        assert_all(check_deconv2d(seed), seed);
    }
}

#[test]
fn dense_matches_finite_differences() {
    for seed in 0..20 {
        assert_all(check_dense(seed), seed);
    }
}

#[test]
fn batchnorm_matches_finite_differences() {
    for seed in 0..20 {
        assert_all(check_batchnorm(seed), seed);
    }
}

#[test]
fn maxpool_and_activations_match_finite_differences() {
    for seed in 0..20 {
        assert_all(check_maxpool(seed), seed);
        assert_all(check_activations(seed), seed);
    }
}

#[test]
fn dense_relu_sum_chain() {
    // loss = Σ relu(x Wᵀ + b), checked against a step-1e-3 central difference.
    let x = vec![0.3f32, -1.2, 0.8, 0.5, 0.1, -0.7];
    let w = vec![0.4f32, -0.2, 0.9, -0.6, 0.3, 0.25, 0.1, 0.8, -0.5, 0.7, -0.9, 0.2];
    let b = vec![0.05f32, -0.1, 0.2, 0.15];
    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(vec![2, 3], x.clone()).unwrap());
    let wv = tape.input(Tensor::new(vec![4, 3], w.clone()).unwrap());
    let bv = tape.input(Tensor::new(vec![4], b.clone()).unwrap());
    let h = tape.dense(xv, wv, bv).unwrap();
    let r = tape.relu(h);
    let loss = tape.sum(r);
    let g = tape.backward(loss).unwrap();

    let f = |xx: &[f64], ww: &[f64], bb: &[f64]| rf::relu(&rf::dense(xx, 2, 3, ww, 4, bb)).iter().sum::<f64>();
    let (x64, w64, b64) = (rf::to64(&x), rf::to64(&w), rf::to64(&b));
    let nx = rf::central_diff(&x64, 1e-3, |p| f(p, &w64, &b64));
    let nw = rf::central_diff(&w64, 1e-3, |p| f(&x64, p, &b64));
    let nb = rf::central_diff(&b64, 1e-3, |p| f(&x64, &w64, p));
    assert!(rf::rel_err(g.input(xv).unwrap().data(), &nx) < 1e-4);
    assert!(rf::rel_err(g.input(wv).unwrap().data(), &nw) < 1e-4);
    assert!(rf::rel_err(g.input(bv).unwrap().data(), &nb) < 1e-4);
}
