use avsr_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, dim_err, Result};
use crate::video::{ClipBatch, ValueRange, VideoClip};

/// Uniform random permutation of `0..frames`, never the identity when
/// `frames ≥ 2`.
pub fn shuffle_permutation(frames: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..frames).collect();
    if frames < 2 {
        return order;
    }
    loop {
        order.shuffle(&mut rng);
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            return order;
        }
    }
}

pub fn shuffle_frames(clip: &VideoClip, seed: u64) -> VideoClip {
    let order = shuffle_permutation(clip.frames(), seed);
    VideoClip::new(clip.tensor().gather_outer(&order), clip.range(), format!("{}-shuffled", clip.id()))
        .expect("permuted clip keeps the range contract")
}

/// Shuffles each clip of a batch with an independent permutation.
pub fn shuffle_batch(batch: &ClipBatch, seed: u64) -> ClipBatch {
    let t = batch.frames();
    let mut order = Vec::with_capacity(batch.clips() * t);
    for i in 0..batch.clips() {
        let perm = shuffle_permutation(t, seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
        order.extend(perm.into_iter().map(|p| i * t + p));
    }
    ClipBatch::new(batch.tensor().gather_outer(&order), t).expect("same layout")
}

fn check_frame(frame: &Tensor) -> Result<()> {
    if frame.rank() != 3 {
        return Err(dim_err!("a frame must be C×H×W, got {:?}", frame.shape()));
    }
    Ok(())
}

/// Static pseudo-video: `frames` bit-identical copies of `frame`.
pub fn repeat_image(frame: &Tensor, frames: usize, range: ValueRange) -> Result<VideoClip> {
    if frames < 1 {
        return Err(config_err!("repeat_image needs T ≥ 1"));
    }
    check_frame(frame)?;
    let mut shape = vec![frames];
    shape.extend_from_slice(frame.shape());
    let mut data = Vec::with_capacity(frames * frame.numel());
    for _ in 0..frames {
        data.extend_from_slice(frame.data());
    }
    VideoClip::new(Tensor::new(shape, data), range, "static")
}

/// Stacks unrelated frames into a clip, in the given order.
pub fn assemble_images(frames: &[Tensor], range: ValueRange) -> Result<VideoClip> {
    let first = frames.first().ok_or_else(|| dim_err!("assemble_images needs at least one frame"))?;
    check_frame(first)?;
    if let Some(bad) = frames.iter().find(|f| f.shape() != first.shape()) {
        return Err(dim_err!("frame shape {:?} differs from {:?}", bad.shape(), first.shape()));
    }
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(frames.len() * first.numel());
    for f in frames {
        data.extend_from_slice(f.data());
    }
    VideoClip::new(Tensor::new(shape, data), range, "assembled")
}
