use avsr_autograd::Tensor;

use crate::error::{dim_err, Result};
use crate::video::FlowField;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur of every `h×w` plane of a rank-4 tensor, with
/// edge replication. `sigma <= 0` returns the input unchanged.
pub fn gaussian_blur(x: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return x.clone();
    }
    let (_, _, h, w) = x.dims4();
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut out = x.clone();
    let mut tmp = vec![0.0; h * w];
    for plane in out.data_mut().chunks_mut(h * w) {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = (xx as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * plane[y * w + sx];
                }
                tmp[y * w + xx] = acc;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[sy * w + xx];
                }
                plane[y * w + xx] = acc;
            }
        }
    }
    out
}

/// Mean over non-overlapping `s×s` blocks of every plane.
pub fn area_downsample(x: &Tensor, s: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(dim_err!("{h}×{w} is not divisible by scale factor {s}"));
    }
    if s == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / s, w / s);
    let norm = 1.0 / (s * s) as f64;
    let mut out = vec![0.0; n * c * ho * wo];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for y in 0..h {
            for xx in 0..w {
                dst[(y / s) * wo + xx / s] += plane[y * w + xx] * norm;
            }
        }
    }
    Ok(Tensor::new([n, c, ho, wo], out))
}

/// Bilinear sample of an `h×w` plane at a location known to be in-frame.
fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor().clamp(0.0, (w - 1) as f64) as usize;
    let y0 = y.floor().clamp(0.0, (h - 1) as f64) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Warps `frame` (`c×h×w`) by pair `t` of `flow`: output pixel `p` reads
/// `frame(p + flow_t(p))`. Pixels outside the validity mask are zero.
pub fn warp_bilinear(frame: &Tensor, flow: &FlowField, t: usize) -> Result<Tensor> {
    if frame.rank() != 3 {
        return Err(dim_err!("warp expects a c×h×w frame, got {:?}", frame.shape()));
    }
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    if (h, w) != (flow.height(), flow.width()) {
        return Err(dim_err!("flow is {}×{}, frame is {h}×{w}", flow.height(), flow.width()));
    }
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            if !flow.is_valid(t, x, y) {
                continue;
            }
            let (dx, dy) = flow.at(t, x, y);
            for ch in 0..c {
                let plane = &frame.data()[ch * h * w..(ch + 1) * h * w];
                out[(ch * h + y) * w + x] = bilinear(plane, w, h, x as f64 + dx, y as f64 + dy);
            }
        }
    }
    Ok(Tensor::new([c, h, w], out))
}
