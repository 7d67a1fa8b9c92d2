//! Procedural datasets, on-disk layout, and batch sampling.

use std::fs;
use std::path::{Path, PathBuf};

use avsr_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, format_err, usage_err, AvsrError, Result};
use crate::video::{
    degrade, load_clip, load_flow, save_clip, save_flow, synth_clip, synth_image, ClipBatch, DegradationConfig,
    FlowField, Motion, ProceduralSpec, TextureKind, ValueRange, VideoClip,
};

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const FLOW_FILE: &str = "flow.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Motion of generated clips; `Mixed` cycles translate, rotate and static.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionChoice {
    Static,
    Translate,
    RotateTexture,
    Mixed,
}

impl std::str::FromStr for MotionChoice {
    type Err = AvsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "translate" => Ok(Self::Translate),
            "rotate_texture" | "rotate" => Ok(Self::RotateTexture),
            "mixed" => Ok(Self::Mixed),
            _ => Err(config_err!("unknown motion '{s}' (known: static, translate, rotate_texture, mixed)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub motion: MotionChoice,
    /// Trailing clips held out for evaluation.
    pub test_clips: usize,
}

impl GenDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 {
            return Err(config_err!("need at least one clip"));
        }
        if self.test_clips > self.clips {
            return Err(config_err!("test_clips {} exceeds clips {}", self.test_clips, self.clips));
        }
        if self.frames < 2 && self.motion != MotionChoice::Static {
            return Err(config_err!("motion needs at least 2 frames: flow is undefined for a single frame"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub dir: String,
    pub split: Split,
    pub motion: Motion,
    pub velocity: [f64; 2],
    pub has_flow: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: GenDataConfig,
    pub clips: Vec<ClipEntry>,
}

/// HR clip (unit range) with its ground-truth flow when one exists.
#[derive(Clone, Debug)]
pub struct Sample {
    pub entry: ClipEntry,
    pub hr: VideoClip,
    pub flow: Option<FlowField>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

fn spec_for(cfg: &GenDataConfig, i: usize) -> ProceduralSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0xd134_2543_de82_ef95));
    let motion = match cfg.motion {
        MotionChoice::Static => Motion::Static,
        MotionChoice::Translate => Motion::Translate,
        MotionChoice::RotateTexture => Motion::RotateTexture,
        MotionChoice::Mixed => [Motion::Translate, Motion::RotateTexture, Motion::Static][i % 3],
    };
    let limit = cfg.height.min(cfg.width) as f64 / 4.0;
    let velocity = match motion {
        Motion::Static => [0.0, 0.0],
        // integer steps keep the ground-truth warp exact
        Motion::Translate => loop {
            let v = [rng.gen_range(-2i32..=2) as f64, rng.gen_range(-2i32..=2) as f64];
            if v != [0.0, 0.0] && v[0].hypot(v[1]) <= limit {
                break v;
            }
        },
        Motion::RotateTexture => [if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.5), 0.0],
    };
    ProceduralSpec {
        motion,
        velocity,
        texture: TextureKind::ALL[i % TextureKind::ALL.len()],
        frames: cfg.frames,
        height: cfg.height,
        width: cfg.width,
    }
}

fn clip_dir(i: usize) -> String {
    format!("clip_{i:04}")
}

impl Dataset {
    /// Synthesizes the dataset in memory; clip `i` depends only on `(seed, i)`.
    pub fn generate(cfg: &GenDataConfig) -> Result<Self> {
        cfg.validate()?;
        let mut entries = Vec::with_capacity(cfg.clips);
        let mut samples = Vec::with_capacity(cfg.clips);
        for i in 0..cfg.clips {
            let spec = spec_for(cfg, i);
            let (hr, flow) = synth_clip(&spec, cfg.seed.wrapping_add(i as u64))?;
            let entry = ClipEntry {
                id: hr.id().to_string(),
                dir: clip_dir(i),
                split: if i + cfg.test_clips >= cfg.clips { Split::Test } else { Split::Train },
                motion: spec.motion,
                velocity: spec.velocity,
                has_flow: cfg.frames >= 2,
            };
            entries.push(entry.clone());
            samples.push(Sample {
                entry,
                hr,
                flow: (cfg.frames >= 2).then_some(flow),
            });
        }
        Ok(Self {
            manifest: DatasetManifest {
                generator: cfg.clone(),
                clips: entries,
            },
            samples,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| AvsrError::io(dir, e))?;
        for s in &self.samples {
            let d = dir.join(&s.entry.dir);
            save_clip(&s.hr, &d)?;
            if let Some(f) = &s.flow {
                save_flow(f, &d.join(FLOW_FILE))?;
            }
        }
        let path = dir.join(DATASET_MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| AvsrError::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| AvsrError::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| format_err!("{}: {e}", path.display()))?;
        let mut samples = Vec::with_capacity(manifest.clips.len());
        for entry in &manifest.clips {
            let d: PathBuf = dir.join(&entry.dir);
            let hr = load_clip(&d)?;
            let flow_path = d.join(FLOW_FILE);
            let flow = if entry.has_flow { Some(load_flow(&flow_path)?) } else { None };
            samples.push(Sample {
                entry: entry.clone(),
                hr,
                flow,
            });
        }
        Ok(Self { manifest, samples })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].entry.split == split).collect()
    }

    pub fn frames(&self) -> usize {
        self.manifest.generator.frames
    }
}

/// A sampled HR/LR training pair, both signed range.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub hr: ClipBatch,
    pub lr: ClipBatch,
}

fn signed(t: &Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

fn train_pool(data: &Dataset, frames: usize) -> Result<Vec<usize>> {
    let pool = data.indices(Split::Train);
    if pool.is_empty() {
        return Err(usage_err!("dataset has no training clips"));
    }
    if frames == 0 || frames > data.frames() {
        return Err(usage_err!(
            "cannot draw {frames}-frame windows from {}-frame clips",
            data.frames()
        ));
    }
    Ok(pool)
}

/// A random `frames`-long temporal window of a random training clip.
fn draw_window(data: &Dataset, pool: &[usize], rng: &mut ChaCha8Rng, frames: usize) -> Result<VideoClip> {
    let s = &data.samples[pool[rng.gen_range(0..pool.len())]];
    let start = rng.gen_range(0..=s.hr.frames() - frames);
    VideoClip::new(s.hr.tensor().narrow_outer(start, frames), ValueRange::Unit, s.hr.id())
}

/// Draws `clips` training windows with replacement and degrades each with a
/// fresh seed from `rng`.
pub fn sample_pairs(
    data: &Dataset,
    rng: &mut ChaCha8Rng,
    clips: usize,
    frames: usize,
    deg: &DegradationConfig,
) -> Result<PairBatch> {
    let pool = train_pool(data, frames)?;
    let mut hr = Vec::with_capacity(clips);
    let mut lr = Vec::with_capacity(clips);
    for _ in 0..clips {
        let clip = draw_window(data, &pool, rng, frames)?;
        let seed: u64 = rng.gen();
        lr.push(degrade(&clip, deg, seed)?.to_signed());
        hr.push(clip.to_signed());
    }
    Ok(PairBatch {
        hr: ClipBatch::from_clips(&hr)?,
        lr: ClipBatch::from_clips(&lr)?,
    })
}

/// Draws `clips` HR training windows (signed range) for the curated label set.
/// Static clips are skipped when any training clip moves: their shuffled copy
/// would equal the original while carrying the opposite consistency label.
pub fn sample_videos(data: &Dataset, rng: &mut ChaCha8Rng, clips: usize, frames: usize) -> Result<ClipBatch> {
    let mut pool = train_pool(data, frames)?;
    let moving: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| data.samples[i].entry.motion != Motion::Static)
        .collect();
    if !moving.is_empty() {
        pool = moving;
    }
    let picked = (0..clips)
        .map(|_| draw_window(data, &pool, rng, frames).map(|c| c.to_signed()))
        .collect::<Result<Vec<_>>>()?;
    ClipBatch::from_clips(&picked)
}

/// One high-detail still, signed range.
pub fn sample_image(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Tensor {
    signed(&synth_image(height, width, rng.gen()))
}

/// Static-frame and assembled-sequence image inputs for `clips` clips.
pub fn sample_image_sets(
    rng: &mut ChaCha8Rng,
    clips: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> (Vec<Tensor>, Vec<Vec<Tensor>>) {
    let statics = (0..clips).map(|_| sample_image(rng, height, width)).collect();
    let seqs = (0..clips)
        .map(|_| (0..frames).map(|_| sample_image(rng, height, width)).collect())
        .collect();
    (statics, seqs)
}

/// Signed-range LR version of one clip under a given degradation.
pub fn lr_of(clip: &VideoClip, deg: &DegradationConfig, seed: u64) -> Result<VideoClip> {
    if clip.range() != ValueRange::Unit {
        return Err(usage_err!("lr_of expects a unit-range clip"));
    }
    Ok(degrade(clip, deg, seed)?.to_signed())
}
