//! Single-order synthetic degradation: blur → area downsample → Gaussian
//! noise → uniform quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::video::{area_downsample, gaussian_blur, ClipBatch, ValueRange, VideoClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Parameters depend only on the seed.
    Fixed,
    /// The clip id is mixed into the seed.
    PerClip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationConfig {
    pub blur_sigma_range: [f64; 2],
    pub scale_factor: usize,
    pub noise_sigma_range: [f64; 2],
    pub quantization_levels_range: [u32; 2],
    pub order_seed_policy: SeedPolicy,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_sigma_range: [0.2, 1.2],
            scale_factor: 4,
            noise_sigma_range: [0.0, 0.02],
            quantization_levels_range: [64, 256],
            order_seed_policy: SeedPolicy::PerClip,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_factor < 1 {
            return Err(config_err!("scale_factor must be ≥ 1"));
        }
        let [b0, b1] = self.blur_sigma_range;
        let [n0, n1] = self.noise_sigma_range;
        let [q0, q1] = self.quantization_levels_range;
        if !(b0 >= 0.0 && b0 <= b1) {
            return Err(config_err!("blur_sigma_range must be a non-empty range of non-negative values"));
        }
        if !(n0 >= 0.0 && n0 <= n1) {
            return Err(config_err!("noise_sigma_range must be a non-empty range of non-negative values"));
        }
        if q0 < 2 || q0 > q1 {
            return Err(config_err!("quantization_levels_range must be a non-empty range with at least 2 levels"));
        }
        Ok(())
    }

    /// No blur, noise or visible quantization; only the resize remains.
    pub fn clean(scale_factor: usize) -> Self {
        Self {
            blur_sigma_range: [0.0, 0.0],
            scale_factor,
            noise_sigma_range: [0.0, 0.0],
            quantization_levels_range: [1 << 24, 1 << 24],
            order_seed_policy: SeedPolicy::Fixed,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn clip_seed(seed: u64, id: &str, policy: SeedPolicy) -> u64 {
    match policy {
        SeedPolicy::Fixed => seed,
        // FNV-1a over the id
        SeedPolicy::PerClip => id.bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        }),
    }
}

/// Synthesizes the LR counterpart (unit range) of a unit-range HR clip.
pub fn degrade(hr: &VideoClip, cfg: &DegradationConfig, seed: u64) -> Result<VideoClip> {
    cfg.validate()?;
    if hr.range() != ValueRange::Unit {
        return Err(dim_err!("degrade expects a unit-range clip"));
    }
    let s = cfg.scale_factor;
    if hr.height() % s != 0 || hr.width() % s != 0 {
        return Err(dim_err!(
            "{}×{} is not divisible by scale factor {s}",
            hr.height(),
            hr.width()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(seed, hr.id(), cfg.order_seed_policy));
    let sigma_blur = draw(&mut rng, cfg.blur_sigma_range);
    let sigma_noise = draw(&mut rng, cfg.noise_sigma_range);
    let [q0, q1] = cfg.quantization_levels_range;
    let levels = if q1 > q0 { rng.gen_range(q0..=q1) } else { q0 };

    let blurred = gaussian_blur(hr.tensor(), sigma_blur);
    let mut lr = area_downsample(&blurred, s)?;
    if sigma_noise > 0.0 {
        let normal = Normal::new(0.0, sigma_noise).map_err(|e| config_err!("noise sigma: {e}"))?;
        for v in lr.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let steps = (levels - 1) as f64;
    for v in lr.data_mut() {
        *v = ((v.clamp(0.0, 1.0) * steps).round() / steps).clamp(0.0, 1.0);
    }
    VideoClip::new(lr, ValueRange::Unit, hr.id())
}

/// Degrades every clip of a unit-range batch with its own derived seed.
pub fn degrade_batch(hr: &ClipBatch, cfg: &DegradationConfig, seeds: &[u64]) -> Result<ClipBatch> {
    if seeds.len() != hr.clips() {
        return Err(dim_err!("{} seeds for {} clips", seeds.len(), hr.clips()));
    }
    let mut out = Vec::with_capacity(hr.clips());
    for (i, &seed) in seeds.iter().enumerate() {
        let clip = VideoClip::new(hr.clip(i), ValueRange::Unit, format!("batch-{i}"))?;
        out.push(degrade(&clip, &DegradationConfig { order_seed_policy: SeedPolicy::Fixed, ..cfg.clone() }, seed)?);
    }
    ClipBatch::from_clips(&out)
}
