//! Multilayer perceptron over flattened grids, for low-dimensional oracle
//! tests. The step embedding is concatenated to the input.

use super::ops::{activate, activate_backward, timestep_embedding, Activation, Linear};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub activation: Activation,
}

impl MlpShape {
    fn layers(&self) -> Vec<Linear> {
        let mut widths = vec![self.input_dim + self.time_dim];
        widths.extend(&self.hidden);
        widths.push(self.input_dim);
        widths
            .windows(2)
            .map(|w| Linear { n_in: w[0], n_out: w[1] })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Linear::param_count).sum()
    }

    pub fn init_plan(&self) -> Vec<(std::ops::Range<usize>, usize, usize)> {
        let mut at = 0;
        self.layers()
            .into_iter()
            .map(|l| {
                let r = at..at + l.param_count();
                at = r.end;
                (r, l.n_in, l.n_out)
            })
            .collect()
    }
}

pub struct Cache {
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

pub fn forward(shape: &MlpShape, p: &[f64], x: &[f64], t: usize) -> (Vec<f64>, Cache) {
    let layers = shape.layers();
    let mut h: Vec<f64> = x.to_vec();
    h.extend(timestep_embedding(t, shape.time_dim));
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut at = 0;
    for (i, l) in layers.iter().enumerate() {
        let params = &p[at..at + l.param_count()];
        at += l.param_count();
        let a = l.forward(params, &h);
        inputs.push(std::mem::take(&mut h));
        if i + 1 < layers.len() {
            h = activate(shape.activation, &a);
            pre.push(a);
        } else {
            h = a;
        }
    }
    (h, Cache { inputs, pre })
}

pub fn backward(shape: &MlpShape, p: &[f64], cache: &Cache, g_out: &[f64], gp: &mut [f64]) {
    let layers = shape.layers();
    let mut starts = Vec::with_capacity(layers.len());
    let mut at = 0;
    for l in &layers {
        starts.push(at);
        at += l.param_count();
    }
    let mut g = g_out.to_vec();
    for i in (0..layers.len()).rev() {
        let l = &layers[i];
        let r = starts[i]..starts[i] + l.param_count();
        let want = i > 0;
        let dx = l.backward(&p[r.clone()], &cache.inputs[i], &g, &mut gp[r], want);
        if let Some(mut dx) = dx {
            activate_backward(shape.activation, &cache.pre[i - 1], &mut dx);
            g = dx;
        }
    }
}
