//! Video value types, procedural clips, degradations and the label-set
//! construction transforms.

mod curation;
mod degrade;
mod filters;
mod io;
mod synth;

use avsr_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

pub use curation::{assemble_images, repeat_image, shuffle_batch, shuffle_frames, shuffle_permutation};
pub use degrade::{degrade, degrade_batch, DegradationConfig, SeedPolicy};
pub use filters::{area_downsample, gaussian_blur, warp_bilinear};
pub use io::{load_clip, load_flow, save_clip, save_flow, FLOW_MAGIC};
pub use synth::{synth_clip, synth_image, Motion, ProceduralSpec, TextureKind};

/// Colour channels of every clip.
pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[0, 1]`, used for storage and metrics.
    Unit,
    /// `[-1, 1]`, used for network input and output.
    Signed,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Signed => (-1.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueRange::Unit => "unit",
            ValueRange::Signed => "signed",
        }
    }
}

/// A `T×3×H×W` frame sequence with a declared value range.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Tensor,
    range: ValueRange,
    id: String,
}

impl VideoClip {
    pub fn new(frames: Tensor, range: ValueRange, id: impl Into<String>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(dim_err!("clip must be T×C×H×W, got {:?}", frames.shape()));
        }
        let (t, c, _, _) = frames.dims4();
        if t < 1 {
            return Err(dim_err!("clip needs at least one frame"));
        }
        if c != CHANNELS {
            return Err(dim_err!("clip must have {CHANNELS} channels, got {c}"));
        }
        let (lo, hi) = range.bounds();
        if let Some(v) = frames.data().iter().find(|v| !(**v >= lo - 1e-9 && **v <= hi + 1e-9)) {
            return Err(dim_err!("value {v} outside the {} range", range.as_str()));
        }
        Ok(Self {
            frames,
            range,
            id: id.into(),
        })
    }

    /// Wraps unconstrained network output, clamping into `range`.
    pub fn from_clamped(frames: Tensor, range: ValueRange, id: impl Into<String>) -> Result<Self> {
        let (lo, hi) = range.bounds();
        Self::new(frames.map(|v| v.clamp(lo, hi)), range, id)
    }

    pub fn frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }

    /// Frame `t` as a `3×H×W` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        let f = self.frames.narrow_outer(t, 1);
        let shape = f.shape()[1..].to_vec();
        f.reshape(shape)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn to_range(&self, range: ValueRange) -> VideoClip {
        let frames = match (self.range, range) {
            (a, b) if a == b => self.frames.clone(),
            (ValueRange::Unit, ValueRange::Signed) => self.frames.map(|v| v * 2.0 - 1.0),
            (ValueRange::Signed, ValueRange::Unit) => self.frames.map(|v| (v + 1.0) * 0.5),
            _ => unreachable!(),
        };
        VideoClip {
            frames,
            range,
            id: self.id.clone(),
        }
    }

    pub fn to_signed(&self) -> VideoClip {
        self.to_range(ValueRange::Signed)
    }

    pub fn to_unit(&self) -> VideoClip {
        self.to_range(ValueRange::Unit)
    }
}

/// Several equal-length clips stacked frame-major: `[b·t, c, h, w]`.
///
/// Used for pixel clips as well as feature volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBatch {
    data: Tensor,
    frames: usize,
}

impl ClipBatch {
    pub fn new(data: Tensor, frames: usize) -> Result<Self> {
        if data.rank() != 4 {
            return Err(dim_err!("batch must be rank 4, got {:?}", data.shape()));
        }
        if frames == 0 || data.shape()[0] % frames != 0 || data.shape()[0] == 0 {
            return Err(dim_err!(
                "batch of {} frames is not a whole number of {frames}-frame clips",
                data.shape()[0]
            ));
        }
        Ok(Self { data, frames })
    }

    pub fn from_clips(clips: &[VideoClip]) -> Result<Self> {
        let first = clips.first().ok_or_else(|| dim_err!("empty clip list"))?;
        for c in clips {
            if c.tensor().shape() != first.tensor().shape() {
                return Err(dim_err!(
                    "clip {} has shape {:?}, expected {:?}",
                    c.id(),
                    c.tensor().shape(),
                    first.tensor().shape()
                ));
            }
        }
        let parts: Vec<&Tensor> = clips.iter().map(|c| c.tensor()).collect();
        Self::new(Tensor::concat_outer(&parts), first.frames())
    }

    pub fn from_clip(clip: &VideoClip) -> Self {
        Self {
            data: clip.tensor().clone(),
            frames: clip.frames(),
        }
    }

    pub fn concat(parts: &[&ClipBatch]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| dim_err!("empty batch list"))?;
        if parts.iter().any(|p| p.frames != first.frames) {
            return Err(dim_err!("cannot concatenate batches with different clip lengths"));
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &p.data).collect();
        if tensors.iter().any(|t| t.shape()[1..] != first.data.shape()[1..]) {
            return Err(dim_err!("cannot concatenate batches with different frame shapes"));
        }
        Self::new(Tensor::concat_outer(&tensors), first.frames)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn clips(&self) -> usize {
        self.data.shape()[0] / self.frames
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Clip `i` as a `t×c×h×w` tensor.
    pub fn clip(&self, i: usize) -> Tensor {
        self.data.narrow_outer(i * self.frames, self.frames)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.map(f),
            frames: self.frames,
        }
    }
}

/// Spatio-temporal activations `T×C×h×w` of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume(pub Tensor);

impl FeatureVolume {
    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Per-pixel displacement from frame `t+1` back to frame `t`, `(T−1)×2×H×W`,
/// channel 0 horizontal and channel 1 vertical, plus the in-frame mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    displacements: Tensor,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(displacements: Tensor, valid: Vec<bool>) -> Result<Self> {
        if displacements.rank() != 4 || displacements.shape()[1] != 2 {
            return Err(dim_err!("flow must be (T−1)×2×H×W, got {:?}", displacements.shape()));
        }
        let (n, _, h, w) = displacements.dims4();
        if valid.len() != n * h * w {
            return Err(dim_err!("validity mask has {} entries, expected {}", valid.len(), n * h * w));
        }
        if !displacements.is_finite() {
            return Err(dim_err!("flow contains non-finite displacements"));
        }
        Ok(Self { displacements, valid })
    }

    /// Builds the mask from the displacements: a pixel is valid when its
    /// source location lies inside the frame.
    pub fn from_displacements(displacements: Tensor) -> Result<Self> {
        if displacements.rank() != 4 || displacements.shape()[1] != 2 {
            return Err(dim_err!("flow must be (T−1)×2×H×W, got {:?}", displacements.shape()));
        }
        let (n, _, h, w) = displacements.dims4();
        let d = displacements.data();
        let mut valid = Vec::with_capacity(n * h * w);
        for t in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let dx = d[((t * 2) * h + y) * w + x];
                    let dy = d[((t * 2 + 1) * h + y) * w + x];
                    let (sx, sy) = (x as f64 + dx, y as f64 + dy);
                    valid.push(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64);
                }
            }
        }
        Self::new(displacements, valid)
    }

    pub fn pairs(&self) -> usize {
        self.displacements.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.displacements.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.displacements.shape()[3]
    }

    pub fn displacements(&self) -> &Tensor {
        &self.displacements
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Displacement `(dx, dy)` of pair `t` at pixel `(x, y)`.
    pub fn at(&self, t: usize, x: usize, y: usize) -> (f64, f64) {
        let (h, w) = (self.height(), self.width());
        let d = self.displacements.data();
        (d[((t * 2) * h + y) * w + x], d[((t * 2 + 1) * h + y) * w + x])
    }

    pub fn is_valid(&self, t: usize, x: usize, y: usize) -> bool {
        self.valid[(t * self.height() + y) * self.width() + x]
    }
}
