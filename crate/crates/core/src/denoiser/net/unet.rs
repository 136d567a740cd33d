//! Three-level convolutional encoder–decoder with additive skips.
//!
//! ```text
//! x ─conv_in─ h0 ─conv_e1+t─ e1 ─pool─ conv_e2+t ─ e2 ─pool─ conv_e3+t ─ e3 ─conv_mid─ m
//!                            │                      │                                 │
//!                            │                      └──────(+)─ conv_d2+t ─ d2 ─up────┘
//!                            └────────(+)─ conv_d1+t ─ d1 ─up─┘
//! d1 ─conv_out─ ε̂
//! ```
//! Every `+t` is a per-channel bias projected from the sinusoidal step
//! embedding.

use super::ops::{
    activate, activate_backward, add_channel_bias, avg_pool2, avg_pool2_backward, channel_sums,
    timestep_embedding, upsample2, upsample2_backward, Activation, Conv3, Linear,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnetShape {
    pub width: usize,
    pub height: usize,
    pub base_channels: usize,
    pub time_dim: usize,
    pub activation: Activation,
}

struct Layers {
    conv_in: Conv3,
    conv_e1: Conv3,
    conv_e2: Conv3,
    conv_e3: Conv3,
    conv_mid: Conv3,
    conv_d2: Conv3,
    conv_d1: Conv3,
    conv_out: Conv3,
    tp: [Linear; 5],
}

/// Parameter ranges in storage order.
struct Offsets {
    conv_in: std::ops::Range<usize>,
    conv_e1: std::ops::Range<usize>,
    tp1: std::ops::Range<usize>,
    conv_e2: std::ops::Range<usize>,
    tp2: std::ops::Range<usize>,
    conv_e3: std::ops::Range<usize>,
    tp3: std::ops::Range<usize>,
    conv_mid: std::ops::Range<usize>,
    conv_d2: std::ops::Range<usize>,
    tp4: std::ops::Range<usize>,
    conv_d1: std::ops::Range<usize>,
    tp5: std::ops::Range<usize>,
    conv_out: std::ops::Range<usize>,
    total: usize,
}

impl UnetShape {
    fn channels(&self) -> (usize, usize, usize) {
        let c = self.base_channels;
        (c, 2 * c, 4 * c)
    }

    fn layers(&self) -> Layers {
        let (c1, c2, c3) = self.channels();
        let td = self.time_dim;
        Layers {
            conv_in: Conv3 { c_in: 1, c_out: c1 },
            conv_e1: Conv3 { c_in: c1, c_out: c1 },
            conv_e2: Conv3 { c_in: c1, c_out: c2 },
            conv_e3: Conv3 { c_in: c2, c_out: c3 },
            conv_mid: Conv3 { c_in: c3, c_out: c3 },
            conv_d2: Conv3 { c_in: c3, c_out: c2 },
            conv_d1: Conv3 { c_in: c2, c_out: c1 },
            conv_out: Conv3 { c_in: c1, c_out: 1 },
            tp: [
                Linear { n_in: td, n_out: c1 },
                Linear { n_in: td, n_out: c2 },
                Linear { n_in: td, n_out: c3 },
                Linear { n_in: td, n_out: c2 },
                Linear { n_in: td, n_out: c1 },
            ],
        }
    }

    fn offsets(&self) -> Offsets {
        let l = self.layers();
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let conv_in = take(l.conv_in.param_count());
        let conv_e1 = take(l.conv_e1.param_count());
        let tp1 = take(l.tp[0].param_count());
        let conv_e2 = take(l.conv_e2.param_count());
        let tp2 = take(l.tp[1].param_count());
        let conv_e3 = take(l.conv_e3.param_count());
        let tp3 = take(l.tp[2].param_count());
        let conv_mid = take(l.conv_mid.param_count());
        let conv_d2 = take(l.conv_d2.param_count());
        let tp4 = take(l.tp[3].param_count());
        let conv_d1 = take(l.conv_d1.param_count());
        let tp5 = take(l.tp[4].param_count());
        let conv_out = take(l.conv_out.param_count());
        Offsets {
            conv_in,
            conv_e1,
            tp1,
            conv_e2,
            tp2,
            conv_e3,
            tp3,
            conv_mid,
            conv_d2,
            tp4,
            conv_d1,
            tp5,
            conv_out,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.offsets().total
    }

    /// `(parameter range, fan_in, fan_out)` per layer in storage order; each
    /// range ends with the layer's `fan_out` biases.
    pub fn init_plan(&self) -> Vec<(std::ops::Range<usize>, usize, usize)> {
        let l = self.layers();
        let o = self.offsets();
        let conv = |r: std::ops::Range<usize>, c: Conv3| (r, c.c_in * 9, c.c_out);
        let lin = |r: std::ops::Range<usize>, c: Linear| (r, c.n_in, c.n_out);
        vec![
            conv(o.conv_in, l.conv_in),
            conv(o.conv_e1, l.conv_e1),
            lin(o.tp1, l.tp[0]),
            conv(o.conv_e2, l.conv_e2),
            lin(o.tp2, l.tp[1]),
            conv(o.conv_e3, l.conv_e3),
            lin(o.tp3, l.tp[2]),
            conv(o.conv_mid, l.conv_mid),
            conv(o.conv_d2, l.conv_d2),
            lin(o.tp4, l.tp[3]),
            conv(o.conv_d1, l.conv_d1),
            lin(o.tp5, l.tp[4]),
            conv(o.conv_out, l.conv_out),
        ]
    }
}

pub struct Cache {
    emb: Vec<f64>,
    cols_in: Vec<f64>,
    cols_e1: Vec<f64>,
    a1: Vec<f64>,
    cols_e2: Vec<f64>,
    a2: Vec<f64>,
    cols_e3: Vec<f64>,
    a3: Vec<f64>,
    cols_mid: Vec<f64>,
    a4: Vec<f64>,
    cols_d2: Vec<f64>,
    a5: Vec<f64>,
    cols_d1: Vec<f64>,
    a6: Vec<f64>,
    cols_out: Vec<f64>,
}

pub fn forward(shape: &UnetShape, p: &[f64], x: &[f64], t: usize) -> (Vec<f64>, Cache) {
    let l = shape.layers();
    let o = shape.offsets();
    let act = shape.activation;
    let (c1, c2, c3) = shape.channels();
    let (h, w) = (shape.height, shape.width);
    let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
    let emb = timestep_embedding(t, shape.time_dim);

    let (h0, cols_in) = l.conv_in.forward(&p[o.conv_in.clone()], x, h, w);

    let (mut a1, cols_e1) = l.conv_e1.forward(&p[o.conv_e1.clone()], &h0, h, w);
    add_channel_bias(&mut a1, &l.tp[0].forward(&p[o.tp1.clone()], &emb), h * w);
    let e1 = activate(act, &a1);
    let p1 = avg_pool2(&e1, c1, h, w);

    let (mut a2, cols_e2) = l.conv_e2.forward(&p[o.conv_e2.clone()], &p1, h2, w2);
    add_channel_bias(&mut a2, &l.tp[1].forward(&p[o.tp2.clone()], &emb), h2 * w2);
    let e2 = activate(act, &a2);
    let p2 = avg_pool2(&e2, c2, h2, w2);

    let (mut a3, cols_e3) = l.conv_e3.forward(&p[o.conv_e3.clone()], &p2, h4, w4);
    add_channel_bias(&mut a3, &l.tp[2].forward(&p[o.tp3.clone()], &emb), h4 * w4);
    let e3 = activate(act, &a3);

    let (a4, cols_mid) = l.conv_mid.forward(&p[o.conv_mid.clone()], &e3, h4, w4);
    let m = activate(act, &a4);

    let u2 = upsample2(&m, c3, h4, w4);
    let (mut a5, cols_d2) = l.conv_d2.forward(&p[o.conv_d2.clone()], &u2, h2, w2);
    for (a, s) in a5.iter_mut().zip(&e2) {
        *a += s;
    }
    add_channel_bias(&mut a5, &l.tp[3].forward(&p[o.tp4.clone()], &emb), h2 * w2);
    let d2 = activate(act, &a5);

    let u1 = upsample2(&d2, c2, h2, w2);
    let (mut a6, cols_d1) = l.conv_d1.forward(&p[o.conv_d1.clone()], &u1, h, w);
    for (a, s) in a6.iter_mut().zip(&e1) {
        *a += s;
    }
    add_channel_bias(&mut a6, &l.tp[4].forward(&p[o.tp5.clone()], &emb), h * w);
    let d1 = activate(act, &a6);

    let (out, cols_out) = l.conv_out.forward(&p[o.conv_out.clone()], &d1, h, w);
    (
        out,
        Cache {
            emb,
            cols_in,
            cols_e1,
            a1,
            cols_e2,
            a2,
            cols_e3,
            a3,
            cols_mid,
            a4,
            cols_d2,
            a5,
            cols_d1,
            a6,
            cols_out,
        },
    )
}

/// Accumulates `∂L/∂p` into `gp` given `∂L/∂out`.
pub fn backward(shape: &UnetShape, p: &[f64], cache: &Cache, g_out: &[f64], gp: &mut [f64]) {
    let l = shape.layers();
    let o = shape.offsets();
    let act = shape.activation;
    let (c1, c2, _c3) = shape.channels();
    let (h, w) = (shape.height, shape.width);
    let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
    let c = cache;

    let g_d1 = l.conv_out
        .backward(&p[o.conv_out.clone()], &c.cols_out, g_out, h, w, &mut gp[o.conv_out.clone()], true)
        .unwrap();
    let mut g_a6 = g_d1;
    activate_backward(act, &c.a6, &mut g_a6);
    l.tp[4].backward(&p[o.tp5.clone()], &c.emb, &channel_sums(&g_a6, h * w), &mut gp[o.tp5.clone()], false);
    let g_u1 = l.conv_d1
        .backward(&p[o.conv_d1.clone()], &c.cols_d1, &g_a6, h, w, &mut gp[o.conv_d1.clone()], true)
        .unwrap();

    let mut g_a5 = upsample2_backward(&g_u1, c2, h2, w2);
    activate_backward(act, &c.a5, &mut g_a5);
    l.tp[3].backward(&p[o.tp4.clone()], &c.emb, &channel_sums(&g_a5, h2 * w2), &mut gp[o.tp4.clone()], false);
    let g_u2 = l.conv_d2
        .backward(&p[o.conv_d2.clone()], &c.cols_d2, &g_a5, h2, w2, &mut gp[o.conv_d2.clone()], true)
        .unwrap();

    let mut g_a4 = upsample2_backward(&g_u2, 4 * shape.base_channels, h4, w4);
    activate_backward(act, &c.a4, &mut g_a4);
    let mut g_a3 = l.conv_mid
        .backward(&p[o.conv_mid.clone()], &c.cols_mid, &g_a4, h4, w4, &mut gp[o.conv_mid.clone()], true)
        .unwrap();
    activate_backward(act, &c.a3, &mut g_a3);
    l.tp[2].backward(&p[o.tp3.clone()], &c.emb, &channel_sums(&g_a3, h4 * w4), &mut gp[o.tp3.clone()], false);
    let g_p2 = l.conv_e3
        .backward(&p[o.conv_e3.clone()], &c.cols_e3, &g_a3, h4, w4, &mut gp[o.conv_e3.clone()], true)
        .unwrap();

    let mut g_a2 = avg_pool2_backward(&g_p2, c2, h2, w2);
    for (g, s) in g_a2.iter_mut().zip(&g_a5) {
        *g += s;
    }
    activate_backward(act, &c.a2, &mut g_a2);
    l.tp[1].backward(&p[o.tp2.clone()], &c.emb, &channel_sums(&g_a2, h2 * w2), &mut gp[o.tp2.clone()], false);
    let g_p1 = l.conv_e2
        .backward(&p[o.conv_e2.clone()], &c.cols_e2, &g_a2, h2, w2, &mut gp[o.conv_e2.clone()], true)
        .unwrap();

    let mut g_a1 = avg_pool2_backward(&g_p1, c1, h, w);
    for (g, s) in g_a1.iter_mut().zip(&g_a6) {
        *g += s;
    }
    activate_backward(act, &c.a1, &mut g_a1);
    l.tp[0].backward(&p[o.tp1.clone()], &c.emb, &channel_sums(&g_a1, h * w), &mut gp[o.tp1.clone()], false);
    let g_h0 = l.conv_e1
        .backward(&p[o.conv_e1.clone()], &c.cols_e1, &g_a1, h, w, &mut gp[o.conv_e1.clone()], true)
        .unwrap();
    l.conv_in
        .backward(&p[o.conv_in.clone()], &c.cols_in, &g_h0, h, w, &mut gp[o.conv_in.clone()], false);
}
