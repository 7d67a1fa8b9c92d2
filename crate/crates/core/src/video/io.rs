//! Clip directories (`frame_NNNN.png` + `manifest.json`) and the binary
//! flow sidecar.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use avsr_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, AvsrError, Result};
use crate::video::{FlowField, ValueRange, VideoClip, CHANNELS};

pub const FLOW_MAGIC: &[u8; 8] = b"AVSRFLW1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipManifest {
    clip_id: String,
    frames: usize,
    height: usize,
    width: usize,
    value_range: ValueRange,
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AvsrError::io(dir, e))?;
    let unit = clip.to_unit();
    let (h, w) = (clip.height(), clip.width());
    for t in 0..clip.frames() {
        let frame = unit.frame(t);
        let mut buf = vec![0u8; h * w * CHANNELS];
        for c in 0..CHANNELS {
            for i in 0..h * w {
                buf[i * CHANNELS + c] = (frame.data()[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized for the frame");
        let path = dir.join(frame_name(t));
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| format_err!("{}: {e}", path.display()))?;
    }
    let manifest = ClipManifest {
        clip_id: clip.id().to_string(),
        frames: clip.frames(),
        height: h,
        width: w,
        value_range: clip.range(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| AvsrError::io(path, e))
}

pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => format_err!("{}: missing clip manifest", path.display()),
        _ => AvsrError::io(&path, e),
    })?;
    let manifest: ClipManifest =
        serde_json::from_str(&text).map_err(|e| format_err!("{}: {e}", path.display()))?;
    let on_disk = fs::read_dir(dir)
        .map_err(|e| AvsrError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.starts_with("frame_") && name.ends_with(".png")
        })
        .count();
    if on_disk != manifest.frames {
        return Err(format_err!(
            "{}: manifest lists {} frames but {on_disk} frame files exist",
            dir.display(),
            manifest.frames
        ));
    }
    let (h, w) = (manifest.height, manifest.width);
    let mut data = Vec::with_capacity(manifest.frames * CHANNELS * h * w);
    for t in 0..manifest.frames {
        let path = dir.join(frame_name(t));
        let img = image::open(&path)
            .map_err(|e| format_err!("{}: {e}", path.display()))?
            .to_rgb8();
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(format_err!(
                "{}: frame is {}×{}, manifest says {w}×{h}",
                path.display(),
                img.width(),
                img.height()
            ));
        }
        let raw = img.as_raw();
        for c in 0..CHANNELS {
            data.extend((0..h * w).map(|i| raw[i * CHANNELS + c] as f64 / 255.0));
        }
    }
    let unit = VideoClip::new(
        Tensor::new([manifest.frames, CHANNELS, h, w], data),
        ValueRange::Unit,
        manifest.clip_id,
    )?;
    Ok(unit.to_range(manifest.value_range))
}

pub fn save_flow(flow: &FlowField, path: &Path) -> Result<()> {
    let (n, h, w) = (flow.pairs(), flow.height(), flow.width());
    let mut bytes = Vec::with_capacity(20 + flow.displacements().numel() * 4);
    bytes.extend_from_slice(FLOW_MAGIC);
    for v in [n, h, w] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in flow.displacements().data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| AvsrError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| AvsrError::io(path, e))
}

pub fn load_flow(path: &Path) -> Result<FlowField> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AvsrError::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != FLOW_MAGIC {
        return Err(format_err!("{}: not a flow file", path.display()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (word(0), word(1), word(2));
    let count = n * 2 * h * w;
    if bytes.len() != 20 + 4 * count {
        return Err(format_err!(
            "{}: expected {count} displacements, file holds {} bytes of payload",
            path.display(),
            bytes.len() - 20
        ));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FlowField::from_displacements(Tensor::new([n, 2, h, w], data))
}
