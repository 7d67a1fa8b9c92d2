//! Fidelity and temporal-consistency metrics, temporal profiles, and
//! evaluation reports.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use avsr_autograd::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Dataset, Split};
use crate::error::{dim_err, format_err, usage_err, AvsrError, Result};
use crate::registry::Registry;
use crate::student::Student;
use crate::video::{degrade, warp_bilinear, ClipBatch, DegradationConfig, FlowField, ValueRange, VideoClip, CHANNELS};

pub const PSNR_CAP: f64 = 99.0;
const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_layout(a: &VideoClip, b: &VideoClip) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(dim_err!("clip shapes differ: {:?} vs {:?}", a.tensor().shape(), b.tensor().shape()));
    }
    Ok(())
}

/// Mean over frames of `10·log10(1/MSE)`, each frame capped at 99 dB.
pub fn psnr(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    same_layout(a, b)?;
    let (a, b) = (a.to_unit(), b.to_unit());
    let n = a.frames();
    let len = a.tensor().numel() / n;
    let total: f64 = (0..n)
        .map(|t| {
            let r = t * len..(t + 1) * len;
            let mse = a.tensor().data()[r.clone()]
                .iter()
                .zip(&b.tensor().data()[r])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / len as f64;
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Window SSIM of two `h×w` planes.
pub(crate) fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, usize) {
    let win = SSIM_WINDOW.min(h).min(w);
    let n = (win * win) as f64;
    let (mut acc, mut count) = (0.0, 0);
    let mut y = 0;
    while y + win <= h {
        let mut x = 0;
        while x + win <= w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for yy in y..y + win {
                for xx in x..x + win {
                    let (p, q) = (a[yy * w + xx], b[yy * w + xx]);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
            x += SSIM_STRIDE;
        }
        y += SSIM_STRIDE;
    }
    (acc, count)
}

/// Mean SSIM over 8×8 windows at stride 4, channels and frames.
pub fn ssim(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    same_layout(a, b)?;
    let (a, b) = (a.to_unit(), b.to_unit());
    let (h, w) = (a.height(), a.width());
    let (mut acc, mut count) = (0.0, 0);
    for (pa, pb) in a.tensor().data().chunks(h * w).zip(b.tensor().data().chunks(h * w)) {
        let (s, c) = ssim_plane(pa, pb, h, w);
        acc += s;
        count += c;
    }
    Ok(acc / count as f64)
}

/// Flow warping error ×10³: per pair, the mean over valid pixels of the
/// channel-summed squared difference between frame `t` and frame `t+1`
/// warped back by the flow; pairs without valid pixels are skipped.
pub fn warping_error(clip: &VideoClip, flow: &FlowField) -> Result<f64> {
    if clip.frames() < 2 {
        return Err(usage_err!("warping error needs at least 2 frames"));
    }
    if flow.pairs() != clip.frames() - 1 || flow.height() != clip.height() || flow.width() != clip.width() {
        return Err(dim_err!(
            "flow {}×{}×{} does not match clip {}×{}×{}",
            flow.pairs(),
            flow.height(),
            flow.width(),
            clip.frames(),
            clip.height(),
            clip.width()
        ));
    }
    let (h, w) = (clip.height(), clip.width());
    let plane = h * w;
    let (mut total, mut pairs) = (0.0, 0);
    for t in 0..flow.pairs() {
        let cur = clip.frame(t);
        let warped = warp_bilinear(&clip.frame(t + 1), flow, t)?;
        let (mut acc, mut valid) = (0.0, 0);
        for y in 0..h {
            for x in 0..w {
                if !flow.is_valid(t, x, y) {
                    continue;
                }
                valid += 1;
                for c in 0..CHANNELS {
                    let i = c * plane + y * w + x;
                    let d = cur.data()[i] - warped.data()[i];
                    acc += d * d;
                }
            }
        }
        if valid > 0 {
            total += acc / valid as f64;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { 1e3 * total / pairs as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileRow {
    Center,
    Index(usize),
}

impl std::str::FromStr for ProfileRow {
    type Err = AvsrError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "center" {
            return Ok(ProfileRow::Center);
        }
        s.parse()
            .map(ProfileRow::Index)
            .map_err(|_| usage_err!("row must be 'center' or a row index, got '{s}'"))
    }
}

/// Width-time slice: a `3×W×T` image whose column `t` is row `row` of frame `t`.
pub fn temporal_profile(clip: &VideoClip, row: ProfileRow) -> Result<Tensor> {
    let (t_len, h, w) = (clip.frames(), clip.height(), clip.width());
    let r = match row {
        ProfileRow::Center => h / 2,
        ProfileRow::Index(r) if r < h => r,
        ProfileRow::Index(r) => return Err(usage_err!("row {r} is outside 0..{h}")),
    };
    let unit = clip.to_unit();
    let mut out = vec![0.0; CHANNELS * w * t_len];
    for t in 0..t_len {
        for c in 0..CHANNELS {
            for x in 0..w {
                out[(c * w + x) * t_len + t] = unit.tensor().data()[((t * CHANNELS + c) * h + r) * w + x];
            }
        }
    }
    Ok(Tensor::new([CHANNELS, w, t_len], out))
}

/// Writes a `3×H×W` unit-range image as 8-bit PNG.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    if img.rank() != 3 || img.shape()[0] != CHANNELS {
        return Err(dim_err!("expected a 3×H×W image, got {:?}", img.shape()));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut buf = vec![0u8; h * w * CHANNELS];
    for c in 0..CHANNELS {
        for i in 0..h * w {
            buf[i * CHANNELS + c] = (img.data()[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let out = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized for the image");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AvsrError::io(dir, e))?;
    }
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| format_err!("{}: {e}", path.display()))
}

/// Anything that maps a signed-range LR batch to a signed-range SR batch.
pub trait SrModel: Send + Sync {
    fn name(&self) -> &str;
    fn upscale(&self, lr: &ClipBatch) -> Result<ClipBatch>;
}

impl SrModel for Student {
    fn name(&self) -> &str {
        "student"
    }

    fn upscale(&self, lr: &ClipBatch) -> Result<ClipBatch> {
        Ok(self.forward(lr)?.x_student)
    }
}

/// Pixel replication by an integer factor.
pub struct NearestUpsample {
    pub scale: usize,
}

pub fn nearest_upsample(x: &Tensor, s: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let mut out = Vec::with_capacity(n * c * h * w * s * s);
    for plane in x.data().chunks(h * w) {
        for y in 0..h * s {
            for xx in 0..w * s {
                out.push(plane[(y / s) * w + xx / s]);
            }
        }
    }
    Tensor::new([n, c, h * s, w * s], out)
}

impl SrModel for NearestUpsample {
    fn name(&self) -> &str {
        "nearest"
    }

    fn upscale(&self, lr: &ClipBatch) -> Result<ClipBatch> {
        ClipBatch::new(nearest_upsample(lr.tensor(), self.scale), lr.frames())
    }
}

type ModelCtor = dyn Fn(Option<&Student>, usize) -> Result<Arc<dyn SrModel>> + Send + Sync;

pub fn sr_models() -> &'static Registry<ModelCtor> {
    static REG: OnceLock<Registry<ModelCtor>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<ModelCtor> = Registry::new("SR model");
        r.register(
            "student",
            Arc::new(|s: Option<&Student>, _| {
                s.map(|s| Arc::new(s.clone()) as Arc<dyn SrModel>)
                    .ok_or_else(|| usage_err!("the student model needs a checkpoint"))
            }),
        )
        .register(
            "nearest",
            Arc::new(|_: Option<&Student>, scale| Ok(Arc::new(NearestUpsample { scale }) as Arc<dyn SrModel>)),
        );
        r
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    /// Absent when no evaluated clip has flow.
    pub e_warp_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub e_warp_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub checkpoint: Option<String>,
    pub model: String,
    pub metrics: Metrics,
    pub per_clip: Vec<ClipMetrics>,
    pub config_echo: Value,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| format_err!("metric report: {e}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| AvsrError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| AvsrError::io(path, e))
    }
}

pub struct EvalOptions<'a> {
    pub degradation: &'a DegradationConfig,
    pub seed: u64,
    pub dataset_label: String,
    pub checkpoint_label: Option<String>,
    pub config_echo: Value,
}

/// Degrades each held-out clip (all clips when none are held out), runs
/// the model, and scores the output against the HR clip.
pub fn evaluate(model: &dyn SrModel, data: &Dataset, opts: &EvalOptions<'_>) -> Result<MetricReport> {
    let mut idx = data.indices(Split::Test);
    if idx.is_empty() {
        idx = (0..data.samples.len()).collect();
    }
    let mut per_clip = Vec::with_capacity(idx.len());
    for i in idx {
        let s = &data.samples[i];
        let lr = degrade(&s.hr, opts.degradation, opts.seed.wrapping_add(i as u64))?.to_signed();
        let sr = model.upscale(&ClipBatch::from_clip(&lr))?;
        if sr.tensor().shape() != s.hr.tensor().shape() {
            return Err(dim_err!(
                "{} produced {:?} for a {:?} target",
                model.name(),
                sr.tensor().shape(),
                s.hr.tensor().shape()
            ));
        }
        let out = VideoClip::from_clamped(sr.into_tensor(), ValueRange::Signed, s.hr.id())?.to_unit();
        let e_warp_star = match &s.flow {
            Some(f) if out.frames() >= 2 => Some(warping_error(&out, f)?),
            _ => None,
        };
        per_clip.push(ClipMetrics {
            clip_id: s.hr.id().to_string(),
            psnr: psnr(&out, &s.hr)?,
            ssim: ssim(&out, &s.hr)?,
            e_warp_star,
        });
    }
    let n = per_clip.len() as f64;
    let warps: Vec<f64> = per_clip.iter().filter_map(|c| c.e_warp_star).collect();
    Ok(MetricReport {
        dataset: opts.dataset_label.clone(),
        checkpoint: opts.checkpoint_label.clone(),
        model: model.name().to_string(),
        metrics: Metrics {
            psnr: per_clip.iter().map(|c| c.psnr).sum::<f64>() / n,
            ssim: per_clip.iter().map(|c| c.ssim).sum::<f64>() / n,
            e_warp_star: (!warps.is_empty()).then(|| warps.iter().sum::<f64>() / warps.len() as f64),
        },
        per_clip,
        config_echo: opts.config_echo.clone(),
    })
}
