//! Temporal mixing blocks inserted after 2D stages, selected by name.

use std::sync::{Arc, OnceLock};

use avsr_autograd::{ops, Graph, Var};

use crate::error::{dim_err, Result};
use crate::nn;
use crate::params::{Bound, Init, ParamStore};
use crate::registry::Registry;
use crate::video::FeatureVolume;

pub const TEMPORAL_GROUP: &str = "temporal";

pub trait TemporalMixer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Registers the block parameters under `prefix` for `channels` features.
    fn init(&self, init: &mut Init<'_>, prefix: &str, channels: usize, kernel: usize);

    fn forward<'g>(&self, p: &Bound<'g>, prefix: &str, x: Var<'g>, frames: usize) -> Var<'g>;

    /// Frames on each side that one block can read; `None` if unbounded.
    fn reach(&self, kernel: usize) -> Option<usize>;
}

/// `x + conv2(relu(conv1(x)))` along T, repeated `blocks` times.
struct ConvRb {
    name: &'static str,
    blocks: usize,
}

impl TemporalMixer for ConvRb {
    fn name(&self) -> &'static str {
        self.name
    }

    fn init(&self, init: &mut Init<'_>, prefix: &str, channels: usize, kernel: usize) {
        for r in 0..self.blocks {
            init.conv1d(&format!("{prefix}.rb{r}.conv1"), channels, channels, kernel, false);
            init.conv1d(&format!("{prefix}.rb{r}.conv2"), channels, channels, kernel, true);
        }
    }

    fn forward<'g>(&self, p: &Bound<'g>, prefix: &str, mut x: Var<'g>, frames: usize) -> Var<'g> {
        for r in 0..self.blocks {
            x = rb(p, &format!("{prefix}.rb{r}"), x, frames);
        }
        x
    }

    fn reach(&self, kernel: usize) -> Option<usize> {
        Some(self.blocks * 2 * (kernel / 2))
    }
}

/// Single-head self-attention over T at every spatial location, with a
/// zero-initialized output projection on a residual branch.
struct Attention;

impl TemporalMixer for Attention {
    fn name(&self) -> &'static str {
        "temporal_attention"
    }

    fn init(&self, init: &mut Init<'_>, prefix: &str, channels: usize, _kernel: usize) {
        for part in ["q", "k", "v"] {
            init.conv2d(&format!("{prefix}.attn.{part}"), channels, channels, 1);
        }
        init.zero_conv2d(&format!("{prefix}.attn.out"), channels, channels, 1);
    }

    fn forward<'g>(&self, p: &Bound<'g>, prefix: &str, x: Var<'g>, frames: usize) -> Var<'g> {
        let q = nn::conv(p, &format!("{prefix}.attn.q"), x, 1);
        let k = nn::conv(p, &format!("{prefix}.attn.k"), x, 1);
        let v = nn::conv(p, &format!("{prefix}.attn.v"), x, 1);
        let a = ops::temporal_attention(q, k, v, frames);
        x.add(nn::conv(p, &format!("{prefix}.attn.out"), a, 1))
    }

    fn reach(&self, _kernel: usize) -> Option<usize> {
        None
    }
}

struct Identity;

impl TemporalMixer for Identity {
    fn name(&self) -> &'static str {
        "none"
    }

    fn init(&self, _init: &mut Init<'_>, _prefix: &str, _channels: usize, _kernel: usize) {}

    fn forward<'g>(&self, _p: &Bound<'g>, _prefix: &str, x: Var<'g>, _frames: usize) -> Var<'g> {
        x
    }

    fn reach(&self, _kernel: usize) -> Option<usize> {
        Some(0)
    }
}

pub fn mixers() -> &'static Registry<dyn TemporalMixer> {
    static REG: OnceLock<Registry<dyn TemporalMixer>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn TemporalMixer> = Registry::new("temporal mode");
        r.register("conv_rb", Arc::new(ConvRb { name: "conv_rb", blocks: 1 }))
            .register("conv_rb_doubled", Arc::new(ConvRb { name: "conv_rb_doubled", blocks: 2 }))
            .register("temporal_attention", Arc::new(Attention))
            .register("none", Arc::new(Identity));
        r
    })
}

pub fn mixer(name: &str) -> Result<Arc<dyn TemporalMixer>> {
    mixers().get(name)
}

fn rb<'g>(p: &Bound<'g>, prefix: &str, x: Var<'g>, frames: usize) -> Var<'g> {
    let h = nn::temporal_conv(p, &format!("{prefix}.conv1"), x, frames).relu();
    x.add(nn::temporal_conv(p, &format!("{prefix}.conv2"), h, frames))
}

/// Applies the residual block stored under `prefix` to a feature volume.
pub fn temporal_rb_forward(params: &ParamStore, prefix: &str, features: &FeatureVolume) -> Result<FeatureVolume> {
    let w = params
        .get(&format!("{prefix}.conv1.w"))
        .ok_or_else(|| dim_err!("no temporal block under '{prefix}'"))?;
    if w.shape()[1] != features.channels() {
        return Err(dim_err!(
            "temporal block '{prefix}' expects {} channels, got {}",
            w.shape()[1],
            features.channels()
        ));
    }
    let g = Graph::new();
    let p = params.bind(&g, false);
    let x = g.constant(features.tensor().clone());
    let out = rb(&p, prefix, x, features.frames());
    Ok(FeatureVolume(out.value().as_ref().clone()))
}
