//! Adam with bias correction, and global-norm gradient clipping.

use avsr_autograd::Tensor;
use indexmap::IndexMap;

use crate::params::ParamStore;

pub const BETAS: (f64, f64) = (0.9, 0.999);
pub const EPS: f64 = 1e-8;

/// One Adam update of a flat parameter slice; `t` is the 1-based step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, betas: (f64, f64), eps: f64) {
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one step to every trainable entry of `params` that has a
    /// gradient. Frozen entries are never touched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let names: Vec<String> = params
            .iter()
            .filter(|(n, e)| e.trainable && grads.contains_key(*n))
            .map(|(n, _)| n.to_string())
            .collect();
        for name in names {
            let g = &grads[&name];
            let p = params.get_mut(&name).expect("listed above");
            assert_eq!(p.shape(), g.shape(), "gradient shape for {name}");
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v.entry(name).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), self.step, lr, BETAS, EPS);
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut IndexMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
