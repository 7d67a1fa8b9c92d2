//! Seeded procedural textures and clips with exact ground-truth motion.

use avsr_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::video::{FlowField, ValueRange, VideoClip, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Static,
    Translate,
    /// Rotation about the frame centre; the angular step is chosen so that
    /// a point at half the smaller frame extent moves `|velocity|` pixels per
    /// frame (clockwise for negative horizontal velocity).
    RotateTexture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Checker,
    PerlinLike,
    SinusoidMix,
    RandomBlobs,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [
        TextureKind::Checker,
        TextureKind::PerlinLike,
        TextureKind::SinusoidMix,
        TextureKind::RandomBlobs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TextureKind::Checker => "checker",
            TextureKind::PerlinLike => "perlin_like",
            TextureKind::SinusoidMix => "sinusoid_mix",
            TextureKind::RandomBlobs => "random_blobs",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralSpec {
    pub motion: Motion,
    /// Pixels per frame, `(x, y)`.
    pub velocity: [f64; 2],
    pub texture: TextureKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl ProceduralSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 1 {
            return Err(config_err!("procedural clip needs at least one frame"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(config_err!("procedural clip must be at least 8×8, got {}×{}", self.height, self.width));
        }
        let speed = self.velocity[0].hypot(self.velocity[1]);
        let limit = self.height.min(self.width) as f64 / 4.0;
        if !speed.is_finite() || speed > limit {
            return Err(config_err!("velocity magnitude {speed} exceeds {limit} px/frame"));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform `[0, 1)` value keyed by the seed and a list of integers.
fn hash01(seed: u64, keys: &[i64]) -> f64 {
    let mut h = splitmix(seed);
    for &k in keys {
        h = splitmix(h ^ k as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

trait Texture {
    fn sample(&self, x: f64, y: f64) -> [f64; 3];
}

struct Checker {
    cell: f64,
    colors: [[f64; 3]; 2],
}

impl Texture for Checker {
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let parity = ((x / self.cell).floor() + (y / self.cell).floor()).rem_euclid(2.0);
        self.colors[(parity > 0.5) as usize]
    }
}

/// Smoothly interpolated lattice noise, summed over octaves.
struct ValueNoise {
    seed: u64,
    scale: f64,
    octaves: usize,
}

impl ValueNoise {
    fn octave(&self, x: f64, y: f64, channel: i64, octave: i64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v = |dx: i64, dy: i64| hash01(self.seed, &[channel, octave, ix + dx, iy + dy]);
        let top = v(0, 0) * (1.0 - sx) + v(1, 0) * sx;
        let bottom = v(0, 1) * (1.0 - sx) + v(1, 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }

    fn value(&self, x: f64, y: f64, channel: i64) -> f64 {
        let (mut acc, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0 / self.scale);
        for o in 0..self.octaves {
            acc += amp * self.octave(x * freq, y * freq, channel, o as i64);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        acc / norm
    }
}

impl Texture for ValueNoise {
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        std::array::from_fn(|c| 0.1 + 0.8 * self.value(x, y, c as i64))
    }
}

struct SinusoidMix {
    /// Per channel: (amplitude, kx, ky, phase).
    waves: [[(f64, f64, f64, f64); 3]; 3],
}

impl SinusoidMix {
    fn new(seed: u64, min_period: f64, max_period: f64) -> Self {
        let waves = std::array::from_fn(|c| {
            std::array::from_fn(|i| {
                let key = |k: i64| hash01(seed, &[c as i64, i as i64, k]);
                let period = min_period + (max_period - min_period) * key(0);
                let angle = std::f64::consts::TAU * key(1);
                let k = std::f64::consts::TAU / period;
                (0.5 + 0.5 * key(2), k * angle.cos(), k * angle.sin(), std::f64::consts::TAU * key(3))
            })
        });
        Self { waves }
    }
}

impl Texture for SinusoidMix {
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        std::array::from_fn(|c| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for &(a, kx, ky, ph) in &self.waves[c] {
                acc += a * (kx * x + ky * y + ph).sin();
                norm += a;
            }
            0.5 + 0.4 * acc / norm
        })
    }
}

/// Gaussian blobs, one per lattice cell, so the pattern extends everywhere.
struct RandomBlobs {
    seed: u64,
    cell: f64,
    background: [f64; 3],
}

impl Texture for RandomBlobs {
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let (cx, cy) = ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64);
        let mut acc = [0.0; 3];
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                let key = |k: i64| hash01(self.seed, &[gx, gy, k]);
                let px = (gx as f64 + key(0)) * self.cell;
                let py = (gy as f64 + key(1)) * self.cell;
                let r = self.cell * (0.2 + 0.3 * key(2));
                let weight = (-((x - px).powi(2) + (y - py).powi(2)) / (2.0 * r * r)).exp();
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += weight * (key(3 + c as i64) - 0.5);
                }
            }
        }
        std::array::from_fn(|c| (self.background[c] + 0.6 * acc[c]).clamp(0.1, 0.9))
    }
}

/// High-frequency mixture used for still "detail-rich" images.
struct DetailMix {
    noise: ValueNoise,
    waves: SinusoidMix,
    checker: Checker,
    weights: [f64; 3],
}

impl Texture for DetailMix {
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let n = self.noise.sample(x, y);
        let s = self.waves.sample(x, y);
        let c = self.checker.sample(x, y);
        let norm: f64 = self.weights.iter().sum();
        std::array::from_fn(|i| {
            let v = (self.weights[0] * n[i] + self.weights[1] * s[i] + self.weights[2] * c[i]) / norm;
            (0.5 + 1.6 * (v - 0.5)).clamp(0.05, 0.95)
        })
    }
}

fn color(seed: u64, key: i64) -> [f64; 3] {
    std::array::from_fn(|c| 0.15 + 0.7 * hash01(seed, &[key, c as i64]))
}

fn build_texture(kind: TextureKind, seed: u64) -> Box<dyn Texture> {
    match kind {
        TextureKind::Checker => Box::new(Checker {
            cell: 4.0 + (6.0 * hash01(seed, &[1])).floor(),
            colors: [color(seed, 2), color(seed, 3)],
        }),
        TextureKind::PerlinLike => Box::new(ValueNoise {
            seed,
            scale: 12.0 + 8.0 * hash01(seed, &[1]),
            octaves: 3,
        }),
        TextureKind::SinusoidMix => Box::new(SinusoidMix::new(seed, 6.0, 24.0)),
        TextureKind::RandomBlobs => Box::new(RandomBlobs {
            seed,
            cell: 10.0 + 6.0 * hash01(seed, &[1]),
            background: color(seed, 2),
        }),
    }
}

fn render(tex: &dyn Texture, height: usize, width: usize, mut coords: impl FnMut(f64, f64) -> (f64, f64), out: &mut [f64]) {
    let plane = height * width;
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = coords(x as f64, y as f64);
            let rgb = tex.sample(sx, sy);
            for c in 0..CHANNELS {
                out[c * plane + y * width + x] = rgb[c];
            }
        }
    }
}

/// Renders a procedural HR clip (unit range) and its exact flow.
pub fn synth_clip(spec: &ProceduralSpec, seed: u64) -> Result<(VideoClip, FlowField)> {
    spec.validate()?;
    let (t_len, h, w) = (spec.frames, spec.height, spec.width);
    let tex = build_texture(spec.texture, seed);
    let [vx, vy] = spec.velocity;
    let centre = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let omega = {
        let speed = vx.hypot(vy);
        let sign = if vx < 0.0 { -1.0 } else { 1.0 };
        sign * speed / (h.min(w) as f64 / 2.0)
    };
    let frame_len = CHANNELS * h * w;
    let mut data = vec![0.0; t_len * frame_len];
    for (t, out) in data.chunks_mut(frame_len).enumerate() {
        let t = t as f64;
        match spec.motion {
            Motion::Static => render(tex.as_ref(), h, w, |x, y| (x, y), out),
            Motion::Translate => render(tex.as_ref(), h, w, |x, y| (x - vx * t, y - vy * t), out),
            Motion::RotateTexture => {
                let (s, c) = (-omega * t).sin_cos();
                render(
                    tex.as_ref(),
                    h,
                    w,
                    |x, y| {
                        let (dx, dy) = (x - centre.0, y - centre.1);
                        (centre.0 + c * dx - s * dy, centre.1 + s * dx + c * dy)
                    },
                    out,
                )
            }
        }
    }
    let pairs = t_len - 1;
    let mut flow = vec![0.0; pairs * 2 * h * w];
    for t in 0..pairs {
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = match spec.motion {
                    Motion::Static => (0.0, 0.0),
                    Motion::Translate => (vx, vy),
                    Motion::RotateTexture => {
                        let (s, c) = omega.sin_cos();
                        let (px, py) = (x as f64 - centre.0, y as f64 - centre.1);
                        (c * px - s * py - px, s * px + c * py - py)
                    }
                };
                flow[((t * 2) * h + y) * w + x] = dx;
                flow[((t * 2 + 1) * h + y) * w + x] = dy;
            }
        }
    }
    let id = format!(
        "{}-{}-{seed}",
        spec.texture.as_str(),
        match spec.motion {
            Motion::Static => "static",
            Motion::Translate => "translate",
            Motion::RotateTexture => "rotate",
        }
    );
    let clip = VideoClip::new(Tensor::new([t_len, CHANNELS, h, w], data), ValueRange::Unit, id)?;
    let flow = FlowField::from_displacements(Tensor::new([pairs, 2, h, w], flow))?;
    Ok((clip, flow))
}

/// A single high-detail still (`3×h×w`, unit range) from a texture family
/// distinct from, and finer than, the video textures.
pub fn synth_image(height: usize, width: usize, seed: u64) -> Tensor {
    let key = |k: i64| hash01(seed, &[0x1_3a6e, k]);
    let tex = DetailMix {
        noise: ValueNoise {
            seed: splitmix(seed ^ 0x5eed),
            scale: 2.0 + 2.0 * key(0),
            octaves: 2,
        },
        waves: SinusoidMix::new(splitmix(seed ^ 0xa11), 2.5, 5.0),
        checker: Checker {
            cell: 2.0 + key(1).round(),
            colors: [color(seed, 11), color(seed, 12)],
        },
        weights: [0.2 + key(2), 0.2 + key(3), 0.2 + key(4)],
    };
    let offset = (1000.0 * key(5), 1000.0 * key(6));
    let mut data = vec![0.0; CHANNELS * height * width];
    render(&tex, height, width, |x, y| (x + offset.0, y + offset.1), &mut data);
    Tensor::new([CHANNELS, height, width], data)
}
