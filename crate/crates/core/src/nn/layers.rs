//! Forward and backward passes for the two layer kinds the localizer uses:
//! stride-2 convolution stages with an optional parameter-free residual
//! shortcut, and fully connected layers.

/// `c = a * b (+ c)` for row-major operands, optionally transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements, and the
    // strides above address them in bounds for the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub residual: bool,
}

impl ConvShape {
    /// Stride 2 with `kernel / 2` zero padding; odd kernels give
    /// `ceil(h / 2) x ceil(w / 2)` outputs.
    pub fn new(c_in: usize, h_in: usize, w_in: usize, c_out: usize, kernel: usize, residual: bool) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        ConvShape {
            c_in,
            h_in,
            w_in,
            c_out,
            kernel,
            h_out: h_in.div_ceil(2),
            w_out: w_in.div_ceil(2),
            residual,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.patch_len()
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.positions()
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }
}

/// Saved activations of one conv stage.
#[derive(Debug, Clone, Default)]
pub struct ConvCache {
    col: Vec<f64>,
    pre: Vec<f64>,
}

fn im2col(s: &ConvShape, x: &[f64]) -> Vec<f64> {
    let pad = (s.kernel / 2) as isize;
    let n = s.positions();
    let mut col = vec![0.0; s.patch_len() * n];
    for ci in 0..s.c_in {
        let plane = &x[ci * s.h_in * s.w_in..(ci + 1) * s.h_in * s.w_in];
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                let row = (ci * s.kernel + ky) * s.kernel + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..s.h_out {
                    let iy = 2 * oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= s.h_in as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w_in..(iy as usize + 1) * s.w_in];
                    for ox in 0..s.w_out {
                        let ix = 2 * ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < s.w_in as isize {
                            dst[oy * s.w_out + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(s: &ConvShape, col: &[f64], dx: &mut [f64]) {
    let pad = (s.kernel / 2) as isize;
    let n = s.positions();
    for ci in 0..s.c_in {
        let plane = &mut dx[ci * s.h_in * s.w_in..(ci + 1) * s.h_in * s.w_in];
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                let row = (ci * s.kernel + ky) * s.kernel + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..s.h_out {
                    let iy = 2 * oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= s.h_in as isize {
                        continue;
                    }
                    for ox in 0..s.w_out {
                        let ix = 2 * ox as isize + kx as isize - pad;
                        if ix >= 0 && ix < s.w_in as isize {
                            plane[iy as usize * s.w_in + ix as usize] += src[oy * s.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 average-pool window of output pixel `(oy, ox)`, clipped to the input.
fn pool_window(s: &ConvShape, oy: usize, ox: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (2 * oy..(2 * oy + 2).min(s.h_in), 2 * ox..(2 * ox + 2).min(s.w_in))
}

/// Shortcut: channel `c` of the output receives the 2x2 average of input
/// channel `c` when it exists, zero otherwise.
fn add_shortcut(s: &ConvShape, x: &[f64], pre: &mut [f64]) {
    for c in 0..s.c_in.min(s.c_out) {
        let plane = &x[c * s.h_in * s.w_in..];
        for oy in 0..s.h_out {
            for ox in 0..s.w_out {
                let (rows, cols) = pool_window(s, oy, ox);
                let count = (rows.len() * cols.len()) as f64;
                let mut sum = 0.0;
                for r in rows {
                    for q in cols.clone() {
                        sum += plane[r * s.w_in + q];
                    }
                }
                pre[(c * s.h_out + oy) * s.w_out + ox] += sum / count;
            }
        }
    }
}

fn shortcut_backward(s: &ConvShape, dpre: &[f64], dx: &mut [f64]) {
    for c in 0..s.c_in.min(s.c_out) {
        for oy in 0..s.h_out {
            for ox in 0..s.w_out {
                let (rows, cols) = pool_window(s, oy, ox);
                let g = dpre[(c * s.h_out + oy) * s.w_out + ox] / (rows.len() * cols.len()) as f64;
                for r in rows {
                    for q in cols.clone() {
                        dx[(c * s.h_in + r) * s.w_in + q] += g;
                    }
                }
            }
        }
    }
}

/// `relu(conv(x) + bias + shortcut(x))`.
pub fn conv_forward(s: &ConvShape, weight: &[f64], bias: &[f64], x: &[f64]) -> (Vec<f64>, ConvCache) {
    debug_assert_eq!(x.len(), s.in_len());
    let col = im2col(s, x);
    let n = s.positions();
    let mut pre = vec![0.0; s.out_len()];
    gemm(s.c_out, s.patch_len(), n, weight, false, &col, false, &mut pre, false);
    for (c, b) in bias.iter().enumerate() {
        pre[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += b);
    }
    if s.residual {
        add_shortcut(s, x, &mut pre);
    }
    let out = pre.iter().map(|v| v.max(0.0)).collect();
    (out, ConvCache { col, pre })
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_dx` is set.
pub fn conv_backward(
    s: &ConvShape,
    weight: &[f64],
    cache: &ConvCache,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let n = s.positions();
    let dpre: Vec<f64> = dout
        .iter()
        .zip(&cache.pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();
    for (c, db) in dbias.iter_mut().enumerate() {
        *db += dpre[c * n..(c + 1) * n].iter().sum::<f64>();
    }
    gemm(s.c_out, n, s.patch_len(), &dpre, false, &cache.col, true, dweight, true);
    if !need_dx {
        return None;
    }
    let mut dcol = vec![0.0; s.patch_len() * n];
    gemm(s.patch_len(), s.c_out, n, weight, true, &dpre, false, &mut dcol, false);
    let mut dx = vec![0.0; s.in_len()];
    col2im(s, &dcol, &mut dx);
    if s.residual {
        shortcut_backward(s, &dpre, &mut dx);
    }
    Some(dx)
}

/// `y = W x + b` with `W` stored row-major as `n_out x n_in`.
pub fn dense_forward(n_in: usize, n_out: usize, weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), n_in);
    (0..n_out)
        .map(|o| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

pub fn dense_backward(
    n_in: usize,
    weight: &[f64],
    x: &[f64],
    dy: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    for (o, g) in dy.iter().enumerate() {
        dbias[o] += g;
        if *g == 0.0 {
            continue;
        }
        let row = &mut dweight[o * n_in..(o + 1) * n_in];
        for (dw, v) in row.iter_mut().zip(x) {
            *dw += g * v;
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![0.0; n_in];
    for (o, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &weight[o * n_in..(o + 1) * n_in];
        for (d, w) in dx.iter_mut().zip(row) {
            *d += g * w;
        }
    }
    Some(dx)
}

pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, p) in grad.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution straight from the definition.
    fn naive_conv(s: &ConvShape, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let pad = (s.kernel / 2) as isize;
        let mut out = vec![0.0; s.out_len()];
        for co in 0..s.c_out {
            for oy in 0..s.h_out {
                for ox in 0..s.w_out {
                    let mut acc = b[co];
                    for ci in 0..s.c_in {
                        for ky in 0..s.kernel {
                            for kx in 0..s.kernel {
                                let iy = 2 * oy as isize + ky as isize - pad;
                                let ix = 2 * ox as isize + kx as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.h_in && (ix as usize) < s.w_in {
                                    acc += w[((co * s.c_in + ci) * s.kernel + ky) * s.kernel + kx]
                                        * x[(ci * s.h_in + iy as usize) * s.w_in + ix as usize];
                                }
                            }
                        }
                    }
                    if s.residual && co < s.c_in {
                        let mut sum = 0.0;
                        let mut count = 0.0;
                        for r in 2 * oy..(2 * oy + 2).min(s.h_in) {
                            for q in 2 * ox..(2 * ox + 2).min(s.w_in) {
                                sum += x[(co * s.h_in + r) * s.w_in + q];
                                count += 1.0;
                            }
                        }
                        acc += sum / count;
                    }
                    out[(co * s.h_out + oy) * s.w_out + ox] = acc.max(0.0);
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v = ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0;
                v - 0.45
            })
            .collect()
    }

    #[test]
    fn im2col_conv_matches_direct_definition() {
        for &(c_in, h, w, c_out, residual) in &[(2, 7, 5, 3, true), (1, 8, 8, 4, false), (3, 4, 6, 2, true)] {
            let s = ConvShape::new(c_in, h, w, c_out, 3, residual);
            let weight = pseudo(s.weight_len(), 1);
            let bias = pseudo(c_out, 2);
            let x = pseudo(s.in_len(), 3);
            let (fast, _) = conv_forward(&s, &weight, &bias, &x);
            let slow = naive_conv(&s, &weight, &bias, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_shape_halves_rounding_up() {
        let s = ConvShape::new(1, 7, 64, 1, 3, true);
        assert_eq!((s.h_out, s.w_out), (4, 32));
    }

    #[test]
    fn dense_forward_and_backward_agree_with_hand_values() {
        let w = [1.0, 2.0, -1.0, 0.5];
        let b = [0.1, -0.2];
        let x = [3.0, -1.0];
        let y = dense_forward(2, 2, &w, &b, &x);
        assert_eq!(y, vec![1.1, -3.7]);
        let mut dw = [0.0; 4];
        let mut db = [0.0; 2];
        let dx = dense_backward(2, &w, &x, &[1.0, 2.0], &mut dw, &mut db, true).unwrap();
        assert_eq!(dw, [3.0, -1.0, 6.0, -2.0]);
        assert_eq!(db, [1.0, 2.0]);
        assert_eq!(dx, vec![-1.0, 3.0]);
    }
}
