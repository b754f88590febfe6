//! Layer kernels. All tensors are NHWC.

use super::tensor::Tensor;
use super::{gemm, Real, View};

/// Upper bound on im2col rows materialized at once.
const IM2COL_ROWS: usize = 4096;

fn samples_per_chunk(h: usize, w: usize) -> usize {
    (IM2COL_ROWS / (h * w)).max(1)
}

/// Fills `col` with the 3x3 zero-padded patches of samples `s0..s1`.
/// Row `r` holds the patch around output pixel `r`, ordered `[ky][kx][c]`.
fn im2col<T: Real>(x: &Tensor<T>, s0: usize, s1: usize, col: &mut [T]) {
    let (h, w, c) = (x.h, x.w, x.c);
    let k = 9 * c;
    let mut r = 0;
    for s in s0..s1 {
        let img = x.sample(s);
        for y in 0..h {
            for xx in 0..w {
                let row = &mut col[r * k..(r + 1) * k];
                for ky in 0..3 {
                    let iy = y as isize + ky as isize - 1;
                    for kx in 0..3 {
                        let ix = xx as isize + kx as isize - 1;
                        let dst = &mut row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            dst.fill(T::zero());
                        } else {
                            let src = (iy as usize * w + ix as usize) * c;
                            dst.copy_from_slice(&img[src..src + c]);
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatters patch gradients back onto the (zero-padded) input grid.
fn col2im<T: Real>(dcol: &[T], s0: usize, s1: usize, h: usize, w: usize, c: usize, dx: &mut [T]) {
    let k = 9 * c;
    let sample_len = h * w * c;
    let mut r = 0;
    for s in s0..s1 {
        let img = &mut dx[s * sample_len..(s + 1) * sample_len];
        for y in 0..h {
            for xx in 0..w {
                let row = &dcol[r * k..(r + 1) * k];
                for ky in 0..3 {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = xx as isize + kx as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = (iy as usize * w + ix as usize) * c;
                        let src = &row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                        for (d, &v) in img[dst..dst + c].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

pub fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], filters: usize) -> Tensor<T> {
    let (h, w, c) = (x.h, x.w, x.c);
    let k = 9 * c;
    let mut out = Tensor::zeros(x.n, h, w, filters);
    let chunk = samples_per_chunk(h, w);
    let mut col = vec![T::zero(); chunk * h * w * k];
    let mut s0 = 0;
    while s0 < x.n {
        let s1 = (s0 + chunk).min(x.n);
        let rows = (s1 - s0) * h * w;
        im2col(x, s0, s1, &mut col[..rows * k]);
        let dst = &mut out.data[s0 * h * w * filters..s1 * h * w * filters];
        for row in dst.chunks_exact_mut(filters) {
            row.copy_from_slice(bias);
        }
        gemm(
            rows,
            k,
            filters,
            T::one(),
            &col[..rows * k],
            View::row_major(k),
            weight,
            View::row_major(filters),
            T::one(),
            dst,
            View::row_major(filters),
        );
        s0 = s1;
    }
    out
}

/// Returns (weight grad, bias grad, input grad if requested).
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Tensor<T>>) {
    let (h, w, c) = (x.h, x.w, x.c);
    let filters = dout.c;
    let k = 9 * c;
    let mut dw = vec![T::zero(); k * filters];
    let mut db = vec![T::zero(); filters];
    for row in dout.data.chunks_exact(filters) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, h, w, c));
    let chunk = samples_per_chunk(h, w);
    let mut col = vec![T::zero(); chunk * h * w * k];
    let mut dcol = if need_dx { vec![T::zero(); chunk * h * w * k] } else { Vec::new() };
    let mut s0 = 0;
    while s0 < x.n {
        let s1 = (s0 + chunk).min(x.n);
        let rows = (s1 - s0) * h * w;
        let g = &dout.data[s0 * h * w * filters..s1 * h * w * filters];
        im2col(x, s0, s1, &mut col[..rows * k]);
        // dW += col^T g
        gemm(
            k,
            rows,
            filters,
            T::one(),
            &col[..rows * k],
            View::transposed(k),
            g,
            View::row_major(filters),
            T::one(),
            &mut dw,
            View::row_major(filters),
        );
        if let Some(dx) = dx.as_mut() {
            // dcol = g W^T
            gemm(
                rows,
                filters,
                k,
                T::one(),
                g,
                View::row_major(filters),
                weight,
                View::transposed(filters),
                T::zero(),
                &mut dcol[..rows * k],
                View::row_major(k),
            );
            col2im(&dcol[..rows * k], s0, s1, h, w, c, &mut dx.data);
        }
        s0 = s1;
    }
    (dw, db, dx)
}

pub fn dense_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], units: usize) -> Tensor<T> {
    let fan_in = x.sample_len();
    let mut out = Tensor::zeros(x.n, 1, 1, units);
    for row in out.data.chunks_exact_mut(units) {
        row.copy_from_slice(bias);
    }
    gemm(
        x.n,
        fan_in,
        units,
        T::one(),
        &x.data,
        View::row_major(fan_in),
        weight,
        View::row_major(units),
        T::one(),
        &mut out.data,
        View::row_major(units),
    );
    out
}

pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Tensor<T>>) {
    let fan_in = x.sample_len();
    let units = dout.c;
    let mut dw = vec![T::zero(); fan_in * units];
    gemm(
        fan_in,
        x.n,
        units,
        T::one(),
        &x.data,
        View::transposed(fan_in),
        &dout.data,
        View::row_major(units),
        T::zero(),
        &mut dw,
        View::row_major(units),
    );
    let mut db = vec![T::zero(); units];
    for row in dout.data.chunks_exact(units) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.n, x.h, x.w, x.c);
        gemm(
            x.n,
            units,
            fan_in,
            T::one(),
            &dout.data,
            View::row_major(units),
            weight,
            View::transposed(units),
            T::zero(),
            &mut dx.data,
            View::row_major(fan_in),
        );
        dx
    });
    (dw, db, dx)
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the
/// window in row-major order. Returns the flat input index of each maximum.
pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (oh, ow, c) = (x.h / 2, x.w / 2, x.c);
    let mut out = Tensor::zeros(x.n, oh, ow, c);
    let mut arg = vec![0u32; out.data.len()];
    let mut o = 0;
    for s in 0..x.n {
        let base = s * x.h * x.w * c;
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let mut best_i = base + ((2 * y) * x.w + 2 * xx) * c + ch;
                    let mut best = x.data[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + ((2 * y + dy) * x.w + 2 * xx + dx) * c + ch;
                        if x.data[i] > best {
                            best = x.data[i];
                            best_i = i;
                        }
                    }
                    out.data[o] = best;
                    arg[o] = best_i as u32;
                    o += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Real>(dout: &Tensor<T>, arg: &[u32], input: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input.n, input.h, input.w, input.c);
    for (&i, &g) in arg.iter().zip(&dout.data) {
        dx.data[i as usize] = dx.data[i as usize] + g;
    }
    dx
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in &mut out.data {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    out
}

/// Gradient is passed where the output is strictly positive.
pub fn relu_backward<T: Real>(out: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = dout.clone();
    for (d, &o) in dx.data.iter_mut().zip(&out.data) {
        if !(o > T::zero()) {
            *d = T::zero();
        }
    }
    dx
}

/// Channel-averaged same-padded correlation of `src` with a `k x k` kernel,
/// then `down x down` average pooling. Output has one channel.
pub fn residual_response<T: Real>(src: &Tensor<T>, kernel: &[T], k: usize, down: usize) -> Tensor<T> {
    let (h, w, c) = (src.h, src.w, src.c);
    let pad = (k / 2) as isize;
    let inv_c = T::one() / T::from_f64(c as f64);
    let (oh, ow) = (h / down, w / down);
    let inv_area = T::one() / T::from_f64((down * down) as f64);
    let mut out = Tensor::zeros(src.n, oh, ow, 1);
    let mut full = vec![T::zero(); h * w];
    for s in 0..src.n {
        let img = src.sample(s);
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let wk = kernel[ky * k + kx];
                        let base = (iy as usize * w + ix as usize) * c;
                        let mut sum_c = T::zero();
                        for ch in 0..c {
                            sum_c = sum_c + img[base + ch];
                        }
                        acc = acc + wk * sum_c;
                    }
                }
                full[y * w + x] = if c > 1 { acc * inv_c } else { acc };
            }
        }
        let dst = &mut out.data[s * oh * ow..(s + 1) * oh * ow];
        if down == 1 {
            dst.copy_from_slice(&full);
            continue;
        }
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..down {
                    for dx in 0..down {
                        acc = acc + full[(oy * down + dy) * w + ox * down + dx];
                    }
                }
                dst[oy * ow + ox] = acc * inv_area;
            }
        }
    }
    out
}

/// Adds a one-channel map to every channel of `feat`.
pub fn broadcast_add<T: Real>(feat: &Tensor<T>, resp: &Tensor<T>) -> Tensor<T> {
    let mut out = feat.clone();
    let c = feat.c;
    for (px, &r) in out.data.chunks_exact_mut(c).zip(&resp.data) {
        for v in px {
            *v = *v + r;
        }
    }
    out
}

/// Gradient of [`residual_response`] followed by [`broadcast_add`] with
/// respect to the response source.
pub fn residual_source_grad<T: Real>(
    dout: &Tensor<T>,
    src_shape: (usize, usize, usize),
    kernel: &[T],
    k: usize,
    down: usize,
) -> Tensor<T> {
    let (h, w, c) = src_shape;
    let (oh, ow) = (dout.h, dout.w);
    let pad = (k / 2) as isize;
    let inv_c = T::one() / T::from_f64(c as f64);
    let inv_area = T::one() / T::from_f64((down * down) as f64);
    let mut dsrc = Tensor::zeros(dout.n, h, w, c);
    let mut dfull = vec![T::zero(); h * w];
    for s in 0..dout.n {
        dfull.iter_mut().for_each(|v| *v = T::zero());
        let g = dout.sample(s);
        for oy in 0..oh {
            for ox in 0..ow {
                let sum: T = g[(oy * ow + ox) * dout.c..(oy * ow + ox + 1) * dout.c].iter().copied().sum();
                let share = if down == 1 { sum } else { sum * inv_area };
                for dy in 0..down {
                    for dx in 0..down {
                        dfull[(oy * down + dy) * w + ox * down + dx] = share;
                    }
                }
            }
        }
        let dst = &mut dsrc.data[s * h * w * c..(s + 1) * h * w * c];
        for y in 0..h {
            for x in 0..w {
                let gy = dfull[y * w + x];
                if gy == T::zero() {
                    continue;
                }
                let gy = if c > 1 { gy * inv_c } else { gy };
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let contrib = gy * kernel[ky * k + kx];
                        let base = (iy as usize * w + ix as usize) * c;
                        for v in &mut dst[base..base + c] {
                            *v = *v + contrib;
                        }
                    }
                }
            }
        }
    }
    dsrc
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits.
pub fn softmax_ce<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> (T, Tensor<T>) {
    let k = logits.c;
    let n = logits.n;
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(n, 1, 1, k);
    let mut loss = T::zero();
    for (i, (row, g)) in logits.data.chunks_exact(k).zip(grad.data.chunks_exact_mut(k)).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        let label = labels[i] as usize;
        loss = loss + (log_z - row[label]);
        for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - log_z).exp();
            *gj = (p - if j == label { T::one() } else { T::zero() }) * inv_n;
        }
    }
    (loss * inv_n, grad)
}

/// Row-wise softmax probabilities.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Vec<Vec<T>> {
    logits
        .data
        .chunks_exact(logits.c)
        .map(|row| {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let s: T = e.iter().copied().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}
