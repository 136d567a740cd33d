//! Dense kernels with hand-written adjoints. Feature maps are `[C][H][W]`
//! row-major `f64` slices.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Silu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Silu),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

pub fn activate(act: Activation, pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&v| act.apply(v)).collect()
}

/// `grad *= act'(pre)` in place.
pub fn activate_backward(act: Activation, pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        *g *= act.derivative(p);
    }
}

/// `c (m×n) = a (m×k) · b (k×n)`, optionally accumulating into `c`. `a_t` /
/// `b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe the row-major layouts asserted above; all
    // indices stay inside the slices.
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

/// Unfold 3×3 zero-padded neighbourhoods: row `ci*9 + ky*3 + kx`, column
/// `y*w + x`.
pub fn im2col3(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; channels * 9 * hw];
    for ci in 0..channels {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`], accumulated into `out`.
pub fn col2im3(cols: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for ci in 0..channels {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    match kx {
                        0 => {
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3×3 same-padding convolution. Parameters: weight `[c_out][c_in·9]` then
/// bias `[c_out]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv3 {
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv3 {
    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * 9 + self.c_out
    }

    /// Returns `(output, unfolded input)`; the unfolded input is needed for
    /// the backward pass.
    pub fn forward(&self, p: &[f64], input: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let hw = h * w;
        let k = self.c_in * 9;
        let (weight, bias) = p.split_at(self.c_out * k);
        let cols = im2col3(input, self.c_in, h, w);
        let mut out = vec![0.0; self.c_out * hw];
        for (co, b) in bias.iter().enumerate() {
            out[co * hw..(co + 1) * hw].fill(*b);
        }
        gemm(self.c_out, k, hw, weight, false, &cols, false, &mut out, true);
        (out, cols)
    }

    /// Accumulates parameter gradients into `gp` and returns the input
    /// gradient when `want_input` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &[f64],
        cols: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        gp: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        let k = self.c_in * 9;
        let (gw, gb) = gp.split_at_mut(self.c_out * k);
        gemm(self.c_out, hw, k, grad_out, false, cols, true, gw, true);
        for (co, b) in gb.iter_mut().enumerate() {
            *b += grad_out[co * hw..(co + 1) * hw].iter().sum::<f64>();
        }
        if !want_input {
            return None;
        }
        let weight = &p[..self.c_out * k];
        let mut dcols = vec![0.0; k * hw];
        gemm(k, self.c_out, hw, weight, true, grad_out, false, &mut dcols, false);
        let mut dx = vec![0.0; self.c_in * hw];
        col2im3(&dcols, self.c_in, h, w, &mut dx);
        Some(dx)
    }
}

/// Fully connected layer. Parameters: weight `[out][in]` then bias `[out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn param_count(&self) -> usize {
        self.n_out * self.n_in + self.n_out
    }

    pub fn forward(&self, p: &[f64], input: &[f64]) -> Vec<f64> {
        let (weight, bias) = p.split_at(self.n_out * self.n_in);
        weight
            .chunks_exact(self.n_in)
            .zip(bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn backward(
        &self,
        p: &[f64],
        input: &[f64],
        grad_out: &[f64],
        gp: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (gw, gb) = gp.split_at_mut(self.n_out * self.n_in);
        for ((row, b), g) in gw.chunks_exact_mut(self.n_in).zip(gb.iter_mut()).zip(grad_out) {
            *b += g;
            for (w, x) in row.iter_mut().zip(input) {
                *w += g * x;
            }
        }
        if !want_input {
            return None;
        }
        let weight = &p[..self.n_out * self.n_in];
        let mut dx = vec![0.0; self.n_in];
        for (row, g) in weight.chunks_exact(self.n_in).zip(grad_out) {
            for (d, w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
        Some(dx)
    }
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let src = &input[c * h * w..];
        let dst = &mut out[c * oh * ow..];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                dst[y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; channels * h * w];
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                dx[c * h * w + y * w + x] = 0.25 * grad_out[c * oh * ow + (y / 2) * ow + x / 2];
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling from `h × w`.
pub fn upsample2(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                out[c * oh * ow + y * ow + x] = input[c * h * w + (y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `h × w` is the coarse size.
pub fn upsample2_backward(grad_out: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; channels * h * w];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                dx[c * h * w + (y / 2) * w + x / 2] += grad_out[c * oh * ow + y * ow + x];
            }
        }
    }
    dx
}

/// Adds `bias[c]` to every pixel of channel `c`.
pub fn add_channel_bias(map: &mut [f64], bias: &[f64], hw: usize) {
    for (plane, b) in map.chunks_exact_mut(hw).zip(bias) {
        for v in plane {
            *v += b;
        }
    }
}

pub fn channel_sums(grad: &[f64], hw: usize) -> Vec<f64> {
    grad.chunks_exact(hw).map(|p| p.iter().sum()).collect()
}

/// Standard sinusoidal embedding of the step index: `sin(t·f_i)` for the
/// first half, `cos(t·f_i)` for the second, `f_i = 10000^(-i/half)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive_conv(c: &Conv3, p: &[f64], input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; c.c_out * h * w];
        let bias = &p[c.c_out * c.c_in * 9..];
        for co in 0..c.c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..c.c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += p[co * c.c_in * 9 + ci * 9 + ky * 3 + kx]
                                    * input[ci * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[co * h * w + y * w + x] = acc;
                }
            }
        }
        out
    }

    fn seq(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * 0.37 + seed).sin() * 1.7).fract()).collect()
    }

    #[test]
    fn conv_matches_naive() {
        let c = Conv3 { c_in: 3, c_out: 2 };
        let (h, w) = (5, 4);
        let p = seq(c.param_count(), 0.1);
        let x = seq(3 * h * w, 0.5);
        let (out, _) = c.forward(&p, &x, h, w);
        let want = naive_conv(&c, &p, &x, h, w);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_adjoint_identity() {
        // <conv_lin(x), g> == <x, conv_lin^T(g)> for the bias-free part.
        let c = Conv3 { c_in: 2, c_out: 3 };
        let (h, w) = (4, 6);
        let mut p = seq(c.param_count(), 0.2);
        let nb = c.c_out * c.c_in * 9;
        p[nb..].fill(0.0);
        let x = seq(2 * h * w, 0.9);
        let g = seq(3 * h * w, 1.3);
        let (y, cols) = c.forward(&p, &x, h, w);
        let mut gp = vec![0.0; c.param_count()];
        let dx = c.backward(&p, &cols, &g, h, w, &mut gp, true).unwrap();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // Linear in the weights too.
        let wsum: f64 = gp[..nb].iter().zip(&p[..nb]).map(|(a, b)| a * b).sum();
        assert!((lhs - wsum).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let (c, h, w) = (2, 4, 6);
        let x = seq(c * h * w, 0.3);
        let g = seq(c * (h / 2) * (w / 2), 0.7);
        let lhs: f64 = avg_pool2(&x, c, h, w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&avg_pool2_backward(&g, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let u = seq(c * h * w, 0.4);
        let gu = seq(c * 4 * h * w, 0.8);
        let lhs: f64 = upsample2(&u, c, h, w).iter().zip(&gu).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&upsample2_backward(&gu, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Silu.apply(x + h) - Activation::Silu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Silu.derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a = timestep_embedding(1, 64);
        let b = timestep_embedding(2, 64);
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }
}
