//! The "2D + 1D" generator: a pruned per-frame residual backbone with
//! temporal blocks inserted after body stages and decoder blocks.

use std::sync::Arc;

use avsr_autograd::{ops, Graph, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::nn;
use crate::params::{Bound, Init, ParamStore};
use crate::temporal::{self, TemporalMixer, TEMPORAL_GROUP};
use crate::video::{ClipBatch, FeatureVolume, ValueRange, VideoClip, CHANNELS};

pub const TAP: &str = "decoder_middle_block";
pub const BODY_GROUP: &str = "body_2d";
pub const DECODER_GROUP: &str = "decoder_2d";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    /// Body stage widths followed by the three decoder widths
    /// (first upsampling block, middle block, second upsampling block).
    pub base_widths: Vec<usize>,
    pub body_prune_fraction: f64,
    pub decoder_prune_fraction: f64,
    pub blocks_per_stage: usize,
    pub temporal_kernel: usize,
    pub temporal_mode: String,
    pub scale_factor: usize,
    pub tap: String,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            base_widths: vec![32, 32, 32, 32, 32, 16],
            body_prune_fraction: 0.25,
            decoder_prune_fraction: 0.5,
            blocks_per_stage: 2,
            temporal_kernel: 3,
            temporal_mode: "conv_rb".into(),
            scale_factor: 4,
            tap: TAP.into(),
        }
    }
}

/// `round(width·(1−fraction))`, never below 4.
pub fn prune_width(width: usize, fraction: f64) -> usize {
    ((width as f64 * (1.0 - fraction)).round() as usize).max(4)
}

/// Channel plan after pruning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widths {
    pub body: Vec<usize>,
    pub up1: usize,
    pub middle: usize,
    pub up2: usize,
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("body_prune_fraction", self.body_prune_fraction),
            ("decoder_prune_fraction", self.decoder_prune_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(config_err!("{name} must lie in [0, 1), got {f}"));
            }
        }
        if self.base_widths.len() < 4 {
            return Err(config_err!(
                "base_widths needs at least one body stage plus three decoder widths, got {}",
                self.base_widths.len()
            ));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(config_err!("temporal_kernel must be odd, got {}", self.temporal_kernel));
        }
        if self.scale_factor != 4 {
            return Err(config_err!("the decoder upsamples by exactly 4, got scale_factor {}", self.scale_factor));
        }
        if self.blocks_per_stage == 0 {
            return Err(config_err!("blocks_per_stage must be ≥ 1"));
        }
        if self.tap != TAP {
            return Err(config_err!("tap must be '{TAP}', got '{}'", self.tap));
        }
        temporal::mixer(&self.temporal_mode)?;
        self.widths().map(|_| ())
    }

    pub fn widths(&self) -> Result<Widths> {
        let prune = |w: usize, f: f64| {
            let p = (w as f64 * (1.0 - f)).round() as usize;
            if p < 4 {
                Err(config_err!("width {w} pruned by {f} leaves {p} channels (< 4)"))
            } else {
                Ok(p)
            }
        };
        let n = self.base_widths.len() - 3;
        let body = self.base_widths[..n]
            .iter()
            .map(|&w| prune(w, self.body_prune_fraction))
            .collect::<Result<Vec<_>>>()?;
        let dec = self.base_widths[n..]
            .iter()
            .map(|&w| prune(w, self.decoder_prune_fraction))
            .collect::<Result<Vec<_>>>()?;
        Ok(Widths {
            body,
            up1: dec[0],
            middle: dec[1],
            up2: dec[2],
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub body_2d: usize,
    pub decoder_2d: usize,
    pub temporal: usize,
    pub total: usize,
}

/// Built generator: configuration plus its named parameters.
#[derive(Clone)]
pub struct Student {
    config: StudentConfig,
    widths: Widths,
    mixer: Arc<dyn TemporalMixer>,
    pub params: ParamStore,
}

/// Graph nodes of one forward pass.
pub struct StudentVars<'g> {
    pub x: Var<'g>,
    pub f: Var<'g>,
}

/// Tensor results of one forward pass over a batch (signed range, unclamped).
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub x_student: ClipBatch,
    pub f_student: ClipBatch,
}

fn body_point(i: usize) -> String {
    format!("temporal.body{i}")
}
const MID_POINT: &str = "temporal.middle";
const UP2_POINT: &str = "temporal.block2";

impl Student {
    pub fn build(config: &StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let widths = config.widths()?;
        let mixer = temporal::mixer(&config.temporal_mode)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
            group: BODY_GROUP.into(),
            trainable: true,
        };
        let k = config.temporal_kernel;

        init.conv2d("body.head", CHANNELS, widths.body[0], 3);
        let mut c = widths.body[0];
        for (i, &w) in widths.body.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                nn::init_resblock(&mut init, &format!("body.stage{i}.block{b}"), c, w);
                c = w;
            }
        }

        let mut dec = init.with_group(DECODER_GROUP, true);
        dec.conv2d("decoder.up1", c, widths.up1, 3);
        nn::init_resblock(&mut dec, "decoder.block1", widths.up1, widths.up1);
        nn::init_resblock(&mut dec, "decoder.middle", widths.up1, widths.middle);
        dec.conv2d("decoder.up2", widths.middle, widths.up2, 3);
        nn::init_resblock(&mut dec, "decoder.block2", widths.up2, widths.up2);
        dec.group_norm("decoder.out_norm", widths.up2);
        dec.conv2d("decoder.out", widths.up2, CHANNELS, 3);

        // Temporal blocks draw from their own stream so the 2D weights do not
        // depend on the temporal mode.
        let mut trng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3a_09c1_d5b2_6f48);
        let mut tinit = Init {
            store: &mut store,
            rng: &mut trng,
            group: TEMPORAL_GROUP.into(),
            trainable: true,
        };
        let mut points: Vec<(String, usize)> =
            widths.body.iter().enumerate().map(|(i, &w)| (body_point(i), w)).collect();
        points.push((MID_POINT.into(), widths.middle));
        points.push((UP2_POINT.into(), widths.up2));
        for (name, c) in &points {
            mixer.init(&mut tinit, name, *c, k);
        }

        Ok(Self {
            config: config.clone(),
            widths,
            mixer,
            params: store,
        })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn widths(&self) -> &Widths {
        &self.widths
    }

    pub fn mixer(&self) -> &dyn TemporalMixer {
        self.mixer.as_ref()
    }

    /// Channels expected at the middle block input (the re-encoding target).
    pub fn middle_in_channels(&self) -> usize {
        self.widths.up1
    }

    pub fn tap_channels(&self) -> usize {
        self.widths.middle
    }

    /// Number of temporal insertion points.
    pub fn insertion_points(&self) -> usize {
        self.widths.body.len() + 2
    }

    fn mix<'g>(&self, p: &Bound<'g>, point: &str, x: Var<'g>, frames: usize, temporal: bool) -> Var<'g> {
        if temporal {
            self.mixer.forward(p, point, x, frames)
        } else {
            x
        }
    }

    /// LR input `[B·T, 3, h, w]` to body features at LR resolution.
    pub fn body<'g>(&self, p: &Bound<'g>, x: Var<'g>, frames: usize, temporal: bool) -> Var<'g> {
        let mut h = nn::conv(p, "body.head", x, 1);
        for i in 0..self.widths.body.len() {
            for b in 0..self.config.blocks_per_stage {
                h = nn::resblock(p, &format!("body.stage{i}.block{b}"), h);
            }
            h = self.mix(p, &body_point(i), h, frames, temporal);
        }
        h
    }

    /// The middle block (2D block plus its temporal block); its output is the tap.
    pub fn middle_block<'g>(&self, p: &Bound<'g>, x: Var<'g>, frames: usize, temporal: bool) -> Var<'g> {
        let h = nn::resblock(p, "decoder.middle", x);
        self.mix(p, MID_POINT, h, frames, temporal)
    }

    /// Body features to the tap at 2× LR resolution.
    pub fn decoder_front<'g>(&self, p: &Bound<'g>, h: Var<'g>, frames: usize, temporal: bool) -> Var<'g> {
        let h = nn::conv(p, "decoder.up1", ops::upsample_nearest2x(h), 1);
        let h = nn::resblock(p, "decoder.block1", h);
        self.middle_block(p, h, frames, temporal)
    }

    /// Tap features to the 3-channel output at 4× LR resolution.
    pub fn decoder_back<'g>(&self, p: &Bound<'g>, f: Var<'g>, frames: usize, temporal: bool) -> Var<'g> {
        let h = nn::conv(p, "decoder.up2", ops::upsample_nearest2x(f), 1);
        let h = nn::resblock(p, "decoder.block2", h);
        let h = self.mix(p, UP2_POINT, h, frames, temporal);
        let h = nn::group_norm(p, "decoder.out_norm", h).relu();
        nn::conv(p, "decoder.out", h, 1)
    }

    pub fn forward_vars<'g>(&self, p: &Bound<'g>, x: Var<'g>, frames: usize, temporal: bool) -> StudentVars<'g> {
        let h = self.body(p, x, frames, temporal);
        let f = self.decoder_front(p, h, frames, temporal);
        let x = self.decoder_back(p, f, frames, temporal);
        StudentVars { x, f }
    }

    fn check_input(&self, x: &ClipBatch) -> Result<()> {
        if x.channels() != CHANNELS {
            return Err(dim_err!("student input needs {CHANNELS} channels, got {}", x.channels()));
        }
        if x.height() < 2 || x.width() < 2 {
            return Err(dim_err!("student input {}×{} is too small", x.height(), x.width()));
        }
        Ok(())
    }

    fn run(&self, x_lr: &ClipBatch, temporal: bool) -> Result<ForwardOutputs> {
        self.check_input(x_lr)?;
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let x = g.constant(x_lr.tensor().clone());
        let out = self.forward_vars(&p, x, x_lr.frames(), temporal);
        Ok(ForwardOutputs {
            x_student: ClipBatch::new(out.x.value().as_ref().clone(), x_lr.frames())?,
            f_student: ClipBatch::new(out.f.value().as_ref().clone(), x_lr.frames())?,
        })
    }

    /// Full forward over a signed-range LR batch.
    pub fn forward(&self, x_lr: &ClipBatch) -> Result<ForwardOutputs> {
        self.run(x_lr, true)
    }

    /// Forward with every temporal block bypassed.
    pub fn forward_2d_only(&self, x_lr: &ClipBatch) -> Result<ForwardOutputs> {
        self.run(x_lr, false)
    }

    /// Single-clip forward: clamped signed-range output clip and tap volume.
    pub fn forward_clip(&self, x_lr: &VideoClip) -> Result<(VideoClip, FeatureVolume)> {
        if x_lr.range() != ValueRange::Signed {
            return Err(dim_err!("student input must be in the signed range"));
        }
        let out = self.forward(&ClipBatch::from_clip(x_lr))?;
        let x = VideoClip::from_clamped(out.x_student.into_tensor(), ValueRange::Signed, x_lr.id())?;
        Ok((x, FeatureVolume(out.f_student.into_tensor())))
    }

    pub fn count_params(&self) -> ParamCounts {
        count_params(&self.params)
    }
}

pub fn count_params(params: &ParamStore) -> ParamCounts {
    let by = params.count_by_group();
    let get = |g: &str| by.get(g).copied().unwrap_or(0);
    let (body_2d, decoder_2d, temporal) = (get(BODY_GROUP), get(DECODER_GROUP), get(TEMPORAL_GROUP));
    ParamCounts {
        body_2d,
        decoder_2d,
        temporal,
        total: body_2d + decoder_2d + temporal,
    }
}
