//! Dual-head discriminators: trainable input adapter, frozen backbone,
//! alternating 2D/1D/2D tail, and two 1×1 heads reading disjoint channel
//! partitions of the tail output.

use std::sync::{Arc, OnceLock};

use avsr_autograd::{ops, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::nn;
use crate::params::{Bound, Init, ParamStore};
use crate::registry::Registry;
use crate::student::Student;
use crate::temporal::{self, TemporalMixer};
use crate::video::{ClipBatch, CHANNELS};

pub const ADAPTER_GROUP: &str = "input_adapter";
pub const BACKBONE_GROUP: &str = "backbone";
pub const TAIL_GROUP: &str = "tail_convs";
pub const HEAD_GROUP: &str = "heads";
const LRELU: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Pixel,
    Feature,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Pixel => "pixel",
            Domain::Feature => "feature",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub domain: Domain,
    pub backbone: String,
    pub tail_channels: usize,
    pub tail_hidden: usize,
    pub head_split: [usize; 2],
    /// Body stages copied into the `frozen_stage1_student_body` backbone.
    #[serde(default = "default_backbone_stages")]
    pub backbone_stages: usize,
}

fn default_backbone_stages() -> usize {
    1
}

impl DiscriminatorConfig {
    pub fn pixel() -> Self {
        Self {
            domain: Domain::Pixel,
            backbone: "frozen_random_pyramid".into(),
            tail_channels: 256,
            tail_hidden: 64,
            head_split: [192, 64],
            backbone_stages: default_backbone_stages(),
        }
    }

    pub fn feature() -> Self {
        Self {
            domain: Domain::Feature,
            backbone: "frozen_stage1_student_body".into(),
            ..Self::pixel()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [d, c] = self.head_split;
        if d + c != self.tail_channels {
            return Err(config_err!(
                "head split {d} + {c} does not sum to tail_channels {}",
                self.tail_channels
            ));
        }
        if self.tail_channels == 0 || self.tail_hidden == 0 {
            return Err(config_err!("tail widths must be positive"));
        }
        backbones().get(&self.backbone).map(|_| ())
    }
}

/// A built, frozen feature extractor.
pub trait BackboneNet: Send + Sync {
    /// Channels and stride of the trainable adapter conv feeding the backbone.
    fn adapter(&self) -> (usize, usize);
    fn out_channels(&self) -> usize;
    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, frames: usize) -> Var<'g>;
}

pub trait DiscBackbone: Send + Sync {
    fn name(&self) -> &'static str;

    /// Registers frozen weights under `backbone.` and returns the network.
    fn build(
        &self,
        cfg: &DiscriminatorConfig,
        init: &mut Init<'_>,
        stage1: Option<&Student>,
    ) -> Result<Arc<dyn BackboneNet>>;
}

/// Three strided 3×3 convs with ReLU at seeded random initialization.
struct RandomPyramid;

const PYRAMID: [(usize, usize); 3] = [(8, 16), (16, 32), (32, 32)];

struct PyramidNet;

impl BackboneNet for PyramidNet {
    fn adapter(&self) -> (usize, usize) {
        (PYRAMID[0].0, 1)
    }

    fn out_channels(&self) -> usize {
        PYRAMID[2].1
    }

    fn forward<'g>(&self, p: &Bound<'g>, mut x: Var<'g>, _frames: usize) -> Var<'g> {
        for i in 0..PYRAMID.len() {
            x = nn::conv(p, &format!("backbone.conv{i}"), x, 2).relu();
        }
        x
    }
}

impl DiscBackbone for RandomPyramid {
    fn name(&self) -> &'static str {
        "frozen_random_pyramid"
    }

    fn build(
        &self,
        _cfg: &DiscriminatorConfig,
        init: &mut Init<'_>,
        _stage1: Option<&Student>,
    ) -> Result<Arc<dyn BackboneNet>> {
        for (i, (ci, co)) in PYRAMID.iter().enumerate() {
            init.conv2d(&format!("backbone.conv{i}"), *ci, *co, 3);
        }
        Ok(Arc::new(PyramidNet))
    }
}

/// Leading body stages of the stage-1 student, temporal blocks included.
struct StudentBody;

struct StudentBodyNet {
    stages: usize,
    blocks: usize,
    mixer: Arc<dyn TemporalMixer>,
    in_channels: usize,
    out_channels: usize,
}

impl BackboneNet for StudentBodyNet {
    fn adapter(&self) -> (usize, usize) {
        (self.in_channels, 2)
    }

    fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn forward<'g>(&self, p: &Bound<'g>, mut x: Var<'g>, frames: usize) -> Var<'g> {
        for i in 0..self.stages {
            for b in 0..self.blocks {
                x = nn::resblock(p, &format!("backbone.body.stage{i}.block{b}"), x);
            }
            x = self.mixer.forward(p, &format!("backbone.temporal.body{i}"), x, frames);
        }
        x
    }
}

impl DiscBackbone for StudentBody {
    fn name(&self) -> &'static str {
        "frozen_stage1_student_body"
    }

    fn build(
        &self,
        cfg: &DiscriminatorConfig,
        init: &mut Init<'_>,
        stage1: Option<&Student>,
    ) -> Result<Arc<dyn BackboneNet>> {
        let student = stage1.ok_or_else(|| usage_err!("the {} backbone needs a stage-1 student", self.name()))?;
        let widths = &student.widths().body;
        let stages = cfg.backbone_stages;
        if stages == 0 || stages > widths.len() {
            return Err(config_err!(
                "backbone_stages must lie in 1..={}, got {stages}",
                widths.len()
            ));
        }
        for i in 0..stages {
            for from in [format!("body.stage{i}."), format!("temporal.body{i}.")] {
                init.store
                    .copy_prefixed(&student.params, &from, &format!("backbone.{from}"), &init.group, false);
            }
        }
        Ok(Arc::new(StudentBodyNet {
            stages,
            blocks: student.config().blocks_per_stage,
            mixer: temporal::mixer(&student.config().temporal_mode)?,
            in_channels: widths[0],
            out_channels: widths[stages - 1],
        }))
    }
}

pub fn backbones() -> &'static Registry<dyn DiscBackbone> {
    static REG: OnceLock<Registry<dyn DiscBackbone>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn DiscBackbone> = Registry::new("discriminator backbone");
        r.register("frozen_random_pyramid", Arc::new(RandomPyramid))
            .register("frozen_stage1_student_body", Arc::new(StudentBody));
        r
    })
}

#[derive(Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    in_channels: usize,
    backbone: Arc<dyn BackboneNet>,
    pub params: ParamStore,
}

/// Graph nodes of the head outputs. Logits hold one value per clip.
pub struct HeadVars<'g> {
    pub detail_map: Option<Var<'g>>,
    pub consistency_map: Option<Var<'g>>,
    pub detail: Var<'g>,
    pub consistency: Var<'g>,
}

/// Head maps (`B·T×1×h'×w'`) and per-clip logits.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub detail_map: Option<Tensor>,
    pub consistency_map: Option<Tensor>,
    pub detail_logits: Vec<f64>,
    pub consistency_logits: Vec<f64>,
}

impl Discriminator {
    /// `in_channels` is the channel count of incoming payloads: 3 for pixels,
    /// the tap width for features.
    pub fn build(
        cfg: &DiscriminatorConfig,
        in_channels: usize,
        seed: u64,
        stage1: Option<&Student>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.domain == Domain::Pixel && in_channels != CHANNELS {
            return Err(config_err!("a pixel discriminator reads {CHANNELS} channels, got {in_channels}"));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
            group: BACKBONE_GROUP.into(),
            trainable: false,
        };
        let backbone = backbones().get(&cfg.backbone)?.build(cfg, &mut init, stage1)?;
        let (adapter_out, _) = backbone.adapter();
        init.with_group(ADAPTER_GROUP, true).conv2d("adapter", in_channels, adapter_out, 3);
        let mut tail = init.with_group(TAIL_GROUP, true);
        tail.conv2d("tail.conv1", backbone.out_channels(), cfg.tail_hidden, 3);
        tail.conv1d("tail.tconv", cfg.tail_hidden, cfg.tail_hidden, 3, false);
        tail.conv2d("tail.conv2", cfg.tail_hidden, cfg.tail_channels, 1);
        let mut heads = init.with_group(HEAD_GROUP, true);
        let [d, c] = cfg.head_split;
        if d > 0 {
            heads.conv2d("head.detail", d, 1, 1);
        }
        if c > 0 {
            heads.conv2d("head.consistency", c, 1, 1);
        }
        Ok(Self {
            config: cfg.clone(),
            in_channels,
            backbone,
            params,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn domain(&self) -> Domain {
        self.config.domain
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn backbone_hash(&self) -> String {
        self.params.hash_where(|e| e.group == BACKBONE_GROUP)
    }

    /// Tail features `[B·T, tail_channels, h', w']`.
    pub fn tail_vars<'g>(&self, p: &Bound<'g>, x: Var<'g>, frames: usize) -> Var<'g> {
        let (_, stride) = self.backbone.adapter();
        let h = nn::conv(p, "adapter", x, stride);
        let h = self.backbone.forward(p, h, frames);
        let h = nn::conv(p, "tail.conv1", h, 1).leaky_relu(LRELU);
        let h = nn::temporal_conv(p, "tail.tconv", h, frames).leaky_relu(LRELU);
        nn::conv(p, "tail.conv2", h, 1).leaky_relu(LRELU)
    }

    /// Heads over given tail features.
    pub fn heads_vars<'g>(&self, p: &Bound<'g>, tail: Var<'g>, frames: usize) -> HeadVars<'g> {
        let clips = tail.shape()[0] / frames;
        let g = tail.graph();
        let [d, c] = self.config.head_split;
        let head = |name: &str, start: usize, len: usize| {
            (len > 0).then(|| nn::conv(p, name, ops::slice_channels(tail, start, len), 1))
        };
        let detail_map = head("head.detail", 0, d);
        let consistency_map = head("head.consistency", d, c);
        let logits = |m: Option<Var<'g>>| match m {
            Some(m) => m.mean_rows(clips),
            None => g.constant(Tensor::zeros([clips])),
        };
        HeadVars {
            detail: logits(detail_map),
            consistency: logits(consistency_map),
            detail_map,
            consistency_map,
        }
    }

    pub fn forward_vars<'g>(&self, p: &Bound<'g>, x: Var<'g>, frames: usize) -> HeadVars<'g> {
        let tail = self.tail_vars(p, x, frames);
        self.heads_vars(p, tail, frames)
    }

    /// Scores a batch from `domain` without recording gradients.
    pub fn forward(&self, domain: Domain, batch: &ClipBatch) -> Result<HeadOutputs> {
        if domain != self.domain() {
            return Err(usage_err!(
                "{} discriminator cannot score a {} sample",
                self.domain().as_str(),
                domain.as_str()
            ));
        }
        if batch.channels() != self.in_channels {
            return Err(usage_err!(
                "{} discriminator expects {} channels, got {}",
                self.domain().as_str(),
                self.in_channels,
                batch.channels()
            ));
        }
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let out = self.forward_vars(&p, g.constant(batch.tensor().clone()), batch.frames());
        let t = |v: Var<'_>| Tensor::clone(&v.value());
        Ok(HeadOutputs {
            detail_map: out.detail_map.map(t),
            consistency_map: out.consistency_map.map(t),
            detail_logits: out.detail.value().data().to_vec(),
            consistency_logits: out.consistency.value().data().to_vec(),
        })
    }
}
