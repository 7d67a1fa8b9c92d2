//! Distillation and adversarial objectives.

use avsr_autograd::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, Domain, HeadVars};
use crate::error::{config_err, dim_err, usage_err, Result};
use crate::nn;
use crate::params::{Bound, Init, ParamStore};
use crate::student::Student;
use crate::teacher::{reencode_features, Encoder};
use crate::video::{assemble_images, repeat_image, shuffle_batch, ClipBatch, ValueRange, CHANNELS};

pub use avsr_autograd::ops::softplus_scalar as softplus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_pixel: f64,
    pub lambda_feature: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pixel: 0.1,
            lambda_feature: 1.0,
            lambda_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("lambda_pixel", self.lambda_pixel),
            ("lambda_feature", self.lambda_feature),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err!("{n} must be a finite value ≥ 0, got {v}"));
            }
        }
        Ok(())
    }
}

fn same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(dim_err!("shape mismatch: {a:?} vs {b:?}"));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    same_shape(&a.shape(), &b.shape())?;
    Ok(a.sub(b).abs().mean())
}

pub fn l1_value(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a.shape(), b.shape())?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64)
}

const DISTS_C: f64 = 1e-6;
const DISTS_GROUP: &str = "dists";
const DISTS_PYRAMID: [(usize, usize, usize); 3] = [(CHANNELS, 8, 1), (8, 16, 2), (16, 16, 2)];

/// Structure/texture distance over a frozen seeded three-scale conv pyramid.
#[derive(Clone, Debug)]
pub struct Dists {
    pub params: ParamStore,
}

impl Dists {
    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
            group: DISTS_GROUP.into(),
            trainable: false,
        };
        for (i, (ci, co, _)) in DISTS_PYRAMID.iter().enumerate() {
            init.conv2d(&format!("dists.conv{i}"), *ci, *co, 3);
        }
        Self { params }
    }

    fn features<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Vec<Var<'g>> {
        let mut out = Vec::with_capacity(DISTS_PYRAMID.len());
        let mut h = x;
        for (i, (_, _, stride)) in DISTS_PYRAMID.iter().enumerate() {
            h = nn::conv(p, &format!("dists.conv{i}"), h, *stride).relu();
            out.push(h);
        }
        out
    }

    /// Distance between `[N, 3, H, W]` frame stacks, averaged over frames.
    pub fn distance<'g>(&self, p: &Bound<'g>, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        same_shape(&a.shape(), &b.shape())?;
        if a.shape()[1] != CHANNELS {
            return Err(dim_err!("dists compares {CHANNELS}-channel frames, got {:?}", a.shape()));
        }
        let g = a.graph();
        let fa = self.features(p, a);
        let fb = self.features(p, b);
        let mut sim: Option<Var<'g>> = None;
        for (x, y) in fa.into_iter().zip(fb) {
            let s = x.shape();
            let rows = s[0] * s[1];
            let mu_x = x.mean_rows(rows);
            let mu_y = y.mean_rows(rows);
            let var_x = x.square().mean_rows(rows).sub(mu_x.square());
            let var_y = y.square().mean_rows(rows).sub(mu_y.square());
            let cov = x.mul(y).mean_rows(rows).sub(mu_x.mul(mu_y));
            let texture = mu_x
                .mul(mu_y)
                .scale(2.0)
                .add_scalar(DISTS_C)
                .div(mu_x.square().add(mu_y.square()).add_scalar(DISTS_C));
            let structure = cov
                .scale(2.0)
                .add_scalar(DISTS_C)
                .div(var_x.add(var_y).add_scalar(DISTS_C));
            let term = texture.mean().add(structure.mean());
            sim = Some(match sim {
                Some(acc) => acc.add(term),
                None => term,
            });
        }
        let terms = 2.0 * DISTS_PYRAMID.len() as f64;
        Ok(g.constant(Tensor::scalar(1.0)).sub(sim.expect("pyramid is non-empty").scale(1.0 / terms)))
    }

    pub fn value(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        Ok(self.distance(&p, g.constant(a.clone()), g.constant(b.clone()))?.item())
    }
}

/// Per-clip head logits of a discriminator on student payloads.
pub struct AdvLogits<'g> {
    pub heads: Vec<Var<'g>>,
}

impl<'g> AdvLogits<'g> {
    /// Logits of the heads the discriminator actually has.
    pub fn from_heads(d: &Discriminator, h: &HeadVars<'g>) -> Self {
        let [dc, cc] = d.config().head_split;
        let mut heads = Vec::new();
        if dc > 0 {
            heads.push(h.detail);
        }
        if cc > 0 {
            heads.push(h.consistency);
        }
        Self { heads }
    }

    /// Mean over heads of the per-clip mean of `softplus(−logit)`; zero when
    /// there are no heads.
    pub fn generator_term(&self, g: &'g Graph) -> Var<'g> {
        if self.heads.is_empty() {
            return g.constant(Tensor::scalar(0.0));
        }
        let n = self.heads.len() as f64;
        let mut acc: Option<Var<'g>> = None;
        for h in &self.heads {
            let t = h.neg().softplus().mean();
            acc = Some(match acc {
                Some(a) => a.add(t),
                None => t,
            });
        }
        acc.unwrap().scale(1.0 / n)
    }
}

/// Graph nodes of every generator loss term.
pub struct GenTerms<'g> {
    pub l1_pixel: Var<'g>,
    pub dists: Var<'g>,
    pub adv_pixel: Var<'g>,
    pub l1_feature: Var<'g>,
    pub adv_feature: Var<'g>,
    pub l_pixel: Var<'g>,
    pub l_feature: Var<'g>,
    pub total: Var<'g>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenLossValues {
    pub l1_pixel: f64,
    pub dists: f64,
    pub adv_pixel: f64,
    pub l1_feature: f64,
    pub adv_feature: f64,
    pub l_pixel: f64,
    pub l_feature: f64,
    pub total: f64,
}

impl GenTerms<'_> {
    pub fn values(&self) -> GenLossValues {
        GenLossValues {
            l1_pixel: self.l1_pixel.item(),
            dists: self.dists.item(),
            adv_pixel: self.adv_pixel.item(),
            l1_feature: self.l1_feature.item(),
            adv_feature: self.adv_feature.item(),
            l_pixel: self.l_pixel.item(),
            l_feature: self.l_feature.item(),
            total: self.total.item(),
        }
    }
}

/// Weighted pixel + feature objective. The adversarial terms are the
/// mean-over-heads `softplus(−logit)` of each domain; `None` drops them.
#[allow(clippy::too_many_arguments)]
pub fn gen_loss<'g>(
    dists: (&Dists, &Bound<'g>),
    x_s: Var<'g>,
    x_t: Var<'g>,
    f_s: Var<'g>,
    f_t: Var<'g>,
    adv_pixel: Option<&AdvLogits<'g>>,
    adv_feature: Option<&AdvLogits<'g>>,
    w: &LossWeights,
) -> Result<GenTerms<'g>> {
    let g = x_s.graph();
    let zero = || g.constant(Tensor::scalar(0.0));
    let l1_pixel = l1(x_s, x_t)?;
    let dist = dists.0.distance(dists.1, x_s, x_t)?;
    let l1_feature = l1(f_s, f_t)?;
    let adv_pixel = adv_pixel.map_or_else(zero, |a| a.generator_term(g));
    let adv_feature = adv_feature.map_or_else(zero, |a| a.generator_term(g));
    let l_pixel = l1_pixel.add(dist).add(adv_pixel.scale(w.lambda_adv));
    let l_feature = l1_feature.add(adv_feature.scale(w.lambda_adv));
    let total = l_pixel.scale(w.lambda_pixel).add(l_feature.scale(w.lambda_feature));
    Ok(GenTerms {
        l1_pixel,
        dists: dist,
        adv_pixel,
        l1_feature,
        adv_feature,
        l_pixel,
        l_feature,
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Student,
    Video,
    VideoShuffled,
    ImageStatic,
    ImageAssembled,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Student => "student",
            SourceTag::Video => "video",
            SourceTag::VideoShuffled => "video_shuffled",
            SourceTag::ImageStatic => "image_static",
            SourceTag::ImageAssembled => "image_assembled",
        }
    }
}

/// A discriminator training sample with detail and consistency labels
/// (`−1` fake, `0` unlabeled, `+1` real).
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub payload: ClipBatch,
    pub domain: Domain,
    pub y_d: i8,
    pub y_c: i8,
    pub tag: SourceTag,
}

impl LabeledSample {
    pub fn new(payload: ClipBatch, domain: Domain, y_d: i8, y_c: i8, tag: SourceTag) -> Result<Self> {
        for y in [y_d, y_c] {
            if !(-1..=1).contains(&y) {
                return Err(usage_err!("label {y} is outside {{−1, 0, 1}}"));
            }
        }
        Ok(Self {
            payload,
            domain,
            y_d,
            y_c,
            tag,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Per-sample `mean_clips[softplus(−y_d·d) + softplus(−y_c·c)]`, reduced over
/// samples. Samples of one domain are scored in a single batched pass.
pub fn disc_loss_vars<'g>(
    g: &'g Graph,
    samples: &[LabeledSample],
    discs: [(&Discriminator, &Bound<'g>); 2],
    reduction: Reduction,
) -> Result<Var<'g>> {
    let mut total: Option<Var<'g>> = None;
    let norm = match reduction {
        Reduction::Mean if !samples.is_empty() => 1.0 / samples.len() as f64,
        _ => 1.0,
    };
    for (d, p) in discs {
        let own: Vec<&LabeledSample> = samples.iter().filter(|s| s.domain == d.domain()).collect();
        if own.is_empty() {
            continue;
        }
        let frames = own[0].payload.frames();
        let (mut yd, mut yc, mut wt) = (Vec::new(), Vec::new(), Vec::new());
        for s in &own {
            if s.payload.frames() != frames {
                return Err(dim_err!("samples of one domain must share the clip length"));
            }
            if s.payload.channels() != d.in_channels() {
                return Err(usage_err!(
                    "{} sample with {} channels routed to a {}-channel discriminator",
                    s.tag.as_str(),
                    s.payload.channels(),
                    d.in_channels()
                ));
            }
            let n = s.payload.clips();
            yd.extend(std::iter::repeat(-(s.y_d as f64)).take(n));
            yc.extend(std::iter::repeat(-(s.y_c as f64)).take(n));
            wt.extend(std::iter::repeat(norm / n as f64).take(n));
        }
        let parts: Vec<&ClipBatch> = own.iter().map(|s| &s.payload).collect();
        let batch = ClipBatch::concat(&parts)?;
        let h = d.forward_vars(p, g.constant(batch.into_tensor()), frames);
        let clips = wt.len();
        let yd = g.constant(Tensor::new([clips], yd));
        let yc = g.constant(Tensor::new([clips], yc));
        let wt = g.constant(Tensor::new([clips], wt));
        let per_clip = h.detail.mul(yd).softplus().add(h.consistency.mul(yc).softplus());
        let term = per_clip.mul(wt).sum();
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

pub fn disc_loss(
    samples: &[LabeledSample],
    d_pixel: &Discriminator,
    d_feature: &Discriminator,
    reduction: Reduction,
) -> Result<f64> {
    let g = Graph::new();
    let pp = d_pixel.params.bind(&g, false);
    let pf = d_feature.params.bind(&g, false);
    Ok(disc_loss_vars(&g, samples, [(d_pixel, &pp), (d_feature, &pf)], reduction)?.item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSetConfig {
    pub include_shuffled: bool,
    /// Detail label for real videos: 0 leaves them unlabeled.
    pub video_detail_label: i8,
    pub pixel_domain: bool,
    pub feature_domain: bool,
}

impl Default for LabelSetConfig {
    fn default() -> Self {
        Self {
            include_shuffled: true,
            video_detail_label: 0,
            pixel_domain: true,
            feature_domain: true,
        }
    }
}

impl LabelSetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1..=1).contains(&self.video_detail_label) {
            return Err(config_err!("video_detail_label must be −1, 0 or 1"));
        }
        if !self.pixel_domain && !self.feature_domain {
            return Err(config_err!("at least one discriminator domain must be enabled"));
        }
        Ok(())
    }
}

/// Inputs of one label set. Every pixel batch is signed range.
pub struct LabelSetInputs<'a> {
    pub x_student: &'a ClipBatch,
    pub f_student: &'a ClipBatch,
    pub video: &'a ClipBatch,
    /// One still per clip for the static pseudo-videos, `3×H×W` each.
    pub image_frames: &'a [Tensor],
    /// `T` unrelated stills per clip for the assembled sequences.
    pub image_sequences: &'a [Vec<Tensor>],
}

/// The curated set: student, video, shuffled video, static and assembled
/// images, each in the pixel domain and re-encoded in the feature domain.
pub fn build_label_set(
    inputs: &LabelSetInputs<'_>,
    seed: u64,
    enc: &Encoder,
    student: &Student,
    cfg: &LabelSetConfig,
) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let frames = inputs.x_student.frames();
    let clips = inputs.x_student.clips();
    if inputs.video.frames() != frames || inputs.video.clips() != clips {
        return Err(usage_err!("video batch does not match the student batch layout"));
    }
    if inputs.image_frames.len() != clips || inputs.image_sequences.len() != clips {
        return Err(usage_err!(
            "need {clips} static frames and {clips} image sequences, got {} and {}",
            inputs.image_frames.len(),
            inputs.image_sequences.len()
        ));
    }
    let statics = inputs
        .image_frames
        .iter()
        .map(|f| repeat_image(f, frames, ValueRange::Signed))
        .collect::<Result<Vec<_>>>()?;
    let assembled = inputs
        .image_sequences
        .iter()
        .map(|fs| {
            if fs.len() != frames {
                return Err(usage_err!("image sequence has {} frames, expected {frames}", fs.len()));
            }
            assemble_images(fs, ValueRange::Signed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pixel: Vec<(ClipBatch, i8, i8, SourceTag)> = vec![
        (inputs.x_student.clone(), -1, -1, SourceTag::Student),
        (inputs.video.clone(), cfg.video_detail_label, 1, SourceTag::Video),
    ];
    if cfg.include_shuffled {
        pixel.push((shuffle_batch(inputs.video, seed), cfg.video_detail_label, -1, SourceTag::VideoShuffled));
    }
    pixel.push((ClipBatch::from_clips(&statics)?, 1, 1, SourceTag::ImageStatic));
    pixel.push((ClipBatch::from_clips(&assembled)?, 1, -1, SourceTag::ImageAssembled));
    for (b, ..) in &pixel {
        if b.tensor().shape() != inputs.x_student.tensor().shape() {
            return Err(usage_err!(
                "pixel payload shape {:?} differs from the student output {:?}",
                b.tensor().shape(),
                inputs.x_student.tensor().shape()
            ));
        }
    }

    let mut out = Vec::with_capacity(2 * pixel.len());
    if cfg.pixel_domain {
        for (b, yd, yc, tag) in &pixel {
            out.push(LabeledSample::new(b.clone(), Domain::Pixel, *yd, *yc, *tag)?);
        }
    }
    if cfg.feature_domain {
        for (b, yd, yc, tag) in &pixel {
            let f = match tag {
                SourceTag::Student => inputs.f_student.clone(),
                _ => reencode_features(b, enc, student)?,
            };
            out.push(LabeledSample::new(f, Domain::Feature, *yd, *yc, *tag)?);
        }
    }
    Ok(out)
}

/// Reference scalar path used by tests: `softplus(−y·logit)` summed over heads.
pub fn sample_term(y_d: i8, y_c: i8, detail: f64, consistency: f64) -> f64 {
    softplus(-(y_d as f64) * detail) + softplus(-(y_c as f64) * consistency)
}
