//! Naive double-precision reference implementations plus a central
//! finite-difference driver. Written directly from the layer definitions
//! (direct summation / scatter) and deliberately shares no code with the
//! im2col kernels under test.

#![allow(dead_code)]

pub fn conv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64], stride: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [o, wc, k, _] = ws;
    assert_eq!(c, wc);
    let oh = (h - k) / stride + 1;
    let ow = (wd - k) / stride + 1;
    let mut y = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let xv = x[((bi * c + ic) * h + oy * stride + ky) * wd + ox * stride + kx];
                                let wv = w[((oc * c + ic) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (y, [n, o, oh, ow])
}

/// Transposed convolution by scattering every input pixel through the kernel.
pub fn deconv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64], stride: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, wd] = xs;
    let [wc, o, k, _] = ws;
    assert_eq!(c, wc);
    let oh = (h - 1) * stride + k;
    let ow = (wd - 1) * stride + k;
    let mut y = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            for v in &mut y[(bi * o + oc) * oh * ow..(bi * o + oc + 1) * oh * ow] {
                *v = b[oc];
            }
        }
        for ic in 0..c {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x[((bi * c + ic) * h + iy) * wd + ix];
                    for oc in 0..o {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = w[((ic * o + oc) * k + ky) * k + kx];
                                y[((bi * o + oc) * oh + iy * stride + ky) * ow + ix * stride + kx] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    (y, [n, o, oh, ow])
}

pub fn dense(x: &[f64], batch: usize, inp: usize, w: &[f64], out: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for i in 0..batch {
        for j in 0..out {
            y[i * out + j] = b[j] + (0..inp).map(|p| x[i * inp + p] * w[j * inp + p]).sum::<f64>();
        }
    }
    y
}

/// Batch normalization over `(B, C, S)`; `running` = Some((mean, var)) selects evaluation mode.
pub fn batchnorm(x: &[f64], batch: usize, c: usize, s: usize, gamma: &[f64], beta: &[f64], eps: f64, running: Option<(&[f64], &[f64])>) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let vals: Vec<f64> = (0..batch).flat_map(|n| (0..s).map(move |k| (n * c + ch) * s + k)).map(|i| x[i]).collect();
        let (mean, var) = match running {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
                (m, v)
            }
        };
        for n in 0..batch {
            for k in 0..s {
                let i = (n * c + ch) * s + k;
                y[i] = gamma[ch] * (x[i] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    y
}

pub fn maxpool(x: &[f64], planes: usize, h: usize, w: usize, k: usize, s: usize) -> Vec<f64> {
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let mut y = Vec::new();
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x[p * h * w + (oy * s + ky) * w + ox * s + kx]);
                    }
                }
                y.push(m);
            }
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of a scalar function at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖analytic − numeric‖₂ / max(‖numeric‖₂, 1e-8)`.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (*a as f64 - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

pub fn to64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
