//! Raw forward/backward kernels over row-major slices.
//!
//! Convolutions go through im2col/col2im plus a single-precision GEMM. All
//! kernels are unpadded: a convolution with kernel `k` and stride `s` maps
//! `H` to `(H - k) / s + 1`, a transposed convolution maps `H` to
//! `(H - 1) * s + k`.

/// Row-major matrix view: element `(i, j)` lives at `i * row_stride + j * col_stride`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows as isize - 1) as usize * self.row_stride as usize
            + (self.cols as isize - 1) as usize * self.col_stride as usize
    }
}

/// `c = a * b + beta * c` with `c` a contiguous `a.rows x b.cols` matrix.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f32, c: &mut [f32]) {
    assert_eq!(a.cols, b.rows, "gemm inner dims");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!(a.row_stride >= 0 && a.col_stride >= 0 && b.row_stride >= 0 && b.col_stride >= 0);
    assert!(a.max_offset() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: every index touched by sgemm is bounded by `max_offset` (checked
    // above) for the inputs and by `m * n` for the contiguous output.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one unpadded sliding window pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Window {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfold one image `(C, H, W)` into `(C*k*k, H'*W')`.
pub(crate) fn im2col(img: &[f32], g: Window, cols: &mut [f32]) {
    let (oh, ow, k, s) = (g.out_h(), g.out_w(), g.kernel, g.stride);
    let ncols = oh * ow;
    for c in 0..g.channels {
        let plane = &img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..oh {
                    let src_row = &plane[(oy * s + ky) * g.in_w..];
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, v) in d.iter_mut().enumerate() {
                        *v = src_row[ox * s + kx];
                    }
                }
            }
        }
    }
}

/// Fold `(C*k*k, H'*W')` back into an image `(C, H, W)`, accumulating overlaps.
pub(crate) fn col2im_add(cols: &[f32], g: Window, img: &mut [f32]) {
    let (oh, ow, k, s) = (g.out_h(), g.out_w(), g.kernel, g.stride);
    let ncols = oh * ow;
    for c in 0..g.channels {
        let plane = &mut img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..oh {
                    let base = (oy * s + ky) * g.in_w + kx;
                    let sr = &src[oy * ow..(oy + 1) * ow];
                    for (ox, v) in sr.iter().enumerate() {
                        plane[base + ox * s] += *v;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvDims {
    fn window(&self) -> Window {
        Window {
            channels: self.in_c,
            in_h: self.in_h,
            in_w: self.in_w,
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    pub fn out_h(&self) -> usize {
        self.window().out_h()
    }

    pub fn out_w(&self) -> usize {
        self.window().out_w()
    }
}

/// Weights `(O, C, k, k)`, bias `(O)`.
pub(crate) fn conv2d_forward(x: &[f32], w: &[f32], b: &[f32], d: &ConvDims) -> Vec<f32> {
    let g = d.window();
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let in_sz = d.in_c * d.in_h * d.in_w;
    let out_sz = d.out_c * ncols;
    let mut out = vec![0.0; d.batch * out_sz];
    let mut cols = vec![0.0; rows * ncols];
    let wm = MatRef::new(w, d.out_c, rows);
    for n in 0..d.batch {
        im2col(&x[n * in_sz..(n + 1) * in_sz], g, &mut cols);
        let y = &mut out[n * out_sz..(n + 1) * out_sz];
        for (o, chunk) in y.chunks_mut(ncols).enumerate() {
            chunk.fill(b[o]);
        }
        gemm(wm, MatRef::new(&cols, rows, ncols), 1.0, y);
    }
    out
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    d: &ConvDims,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let g = d.window();
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let in_sz = d.in_c * d.in_h * d.in_w;
    let out_sz = d.out_c * ncols;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.out_c];
    let mut cols = vec![0.0; rows * ncols];
    let mut dcols = vec![0.0; rows * ncols];
    let wm = MatRef::new(w, d.out_c, rows);
    for n in 0..d.batch {
        let dyn_ = &dy[n * out_sz..(n + 1) * out_sz];
        for (o, chunk) in dyn_.chunks(ncols).enumerate() {
            db[o] += chunk.iter().sum::<f32>();
        }
        im2col(&x[n * in_sz..(n + 1) * in_sz], g, &mut cols);
        let dym = MatRef::new(dyn_, d.out_c, ncols);
        gemm(dym, MatRef::new(&cols, rows, ncols).t(), 1.0, &mut dw);
        gemm(wm.t(), dym, 0.0, &mut dcols);
        col2im_add(&dcols, g, &mut dx[n * in_sz..(n + 1) * in_sz]);
    }
    (dx, dw, db)
}

/// Transposed convolution. Weights `(C_in, C_out, k, k)`, bias `(C_out)`.
/// `d.in_c`/`d.out_c` are the transposed layer's own input/output channels.
pub(crate) fn deconv2d_forward(x: &[f32], w: &[f32], b: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = deconv_out(d);
    let g = Window {
        channels: d.out_c,
        in_h: oh,
        in_w: ow,
        kernel: d.kernel,
        stride: d.stride,
    };
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    debug_assert_eq!(ncols, d.in_h * d.in_w);
    let in_sz = d.in_c * ncols;
    let out_sz = d.out_c * oh * ow;
    let mut out = vec![0.0; d.batch * out_sz];
    let mut cols = vec![0.0; rows * ncols];
    let wm = MatRef::new(w, d.in_c, rows);
    for n in 0..d.batch {
        gemm(
            wm.t(),
            MatRef::new(&x[n * in_sz..(n + 1) * in_sz], d.in_c, ncols),
            0.0,
            &mut cols,
        );
        let y = &mut out[n * out_sz..(n + 1) * out_sz];
        for (o, chunk) in y.chunks_mut(oh * ow).enumerate() {
            chunk.fill(b[o]);
        }
        col2im_add(&cols, g, y);
    }
    out
}

pub(crate) fn deconv_out(d: &ConvDims) -> (usize, usize) {
    (
        (d.in_h - 1) * d.stride + d.kernel,
        (d.in_w - 1) * d.stride + d.kernel,
    )
}

pub(crate) fn deconv2d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    d: &ConvDims,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (oh, ow) = deconv_out(d);
    let g = Window {
        channels: d.out_c,
        in_h: oh,
        in_w: ow,
        kernel: d.kernel,
        stride: d.stride,
    };
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let in_sz = d.in_c * ncols;
    let out_sz = d.out_c * oh * ow;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.out_c];
    let mut dcols = vec![0.0; rows * ncols];
    let wm = MatRef::new(w, d.in_c, rows);
    for n in 0..d.batch {
        let dyn_ = &dy[n * out_sz..(n + 1) * out_sz];
        for (o, chunk) in dyn_.chunks(oh * ow).enumerate() {
            db[o] += chunk.iter().sum::<f32>();
        }
        im2col(dyn_, g, &mut dcols);
        let dc = MatRef::new(&dcols, rows, ncols);
        let xm = MatRef::new(&x[n * in_sz..(n + 1) * in_sz], d.in_c, ncols);
        gemm(wm, dc, 0.0, &mut dx[n * in_sz..(n + 1) * in_sz]);
        gemm(xm, dc.t(), 1.0, &mut dw);
    }
    (dx, dw, db)
}

/// Max pooling over `(B*C)` planes. Returns the output and the flat argmax
/// index (into the input) of every output element.
pub(crate) fn maxpool_forward(
    x: &[f32],
    planes: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f32>, Vec<usize>) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// Per-channel batch statistics over `(B, C, S)` with `S` spatial elements.
/// Returns `(mean, biased variance)`.
pub(crate) fn channel_stats(x: &[f32], batch: usize, c: usize, s: usize) -> (Vec<f32>, Vec<f32>) {
    let m = (batch * s) as f64;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut acc = 0.0f64;
        for n in 0..batch {
            let off = (n * c + ch) * s;
            acc += x[off..off + s].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mu = acc / m;
        let mut sq = 0.0f64;
        for n in 0..batch {
            let off = (n * c + ch) * s;
            sq += x[off..off + s]
                .iter()
                .map(|&v| {
                    let d = v as f64 - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = mu as f32;
        var[ch] = (sq / m) as f32;
    }
    (mean, var)
}
