use crate::gemm::{gemm, Mat};
use crate::graph::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

impl Geometry {
    /// Output columns `ox` whose input column `ox·stride + kj − pad` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image `c_in×h×w` into `(c_in·kh·kw) × (ho·wo)` columns.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (o, v) in out_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + s.len()].iter_mut().zip(s) {
                            *d += *v;
                        }
                    } else {
                        for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(s) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation with zero padding.
///
/// `x: [n, c_in, h, w]`, `weight: [c_out, c_in, kh, kw]`, `bias: [c_out]`.
pub fn conv2d<'g>(x: Var<'g>, weight: Var<'g>, bias: Option<Var<'g>>, stride: usize, pad: usize) -> Var<'g> {
    let xv = x.value();
    let wv = weight.value();
    let (n, c_in, h, w) = xv.dims4();
    let (c_out, wc_in, kh, kw) = wv.dims4();
    assert_eq!(c_in, wc_in, "conv2d: input has {c_in} channels, weight expects {wc_in}");
    assert!(stride >= 1);
    assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d: kernel larger than padded input");
    let geo = Geometry {
        c_in,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
    };
    let k = c_in * kh * kw;
    let p = geo.ho * geo.wo;
    let in_len = c_in * h * w;
    let mut out = vec![0.0; n * c_out * p];
    let mut cols = if geo.pointwise() { Vec::new() } else { vec![0.0; k * p] };
    let bv = bias.map(|b| b.value());
    if let Some(b) = &bv {
        assert_eq!(b.shape(), [c_out], "conv2d: bias shape");
    }
    for i in 0..n {
        let xi = &xv.data()[i * in_len..(i + 1) * in_len];
        let cols_ref: &[f64] = if geo.pointwise() {
            xi
        } else {
            im2col(xi, &geo, &mut cols);
            &cols
        };
        let oi = &mut out[i * c_out * p..(i + 1) * c_out * p];
        if let Some(b) = &bv {
            for (o, chunk) in oi.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        gemm(
            c_out,
            k,
            p,
            1.0,
            Mat::row_major(wv.data(), k),
            Mat::row_major(cols_ref, p),
            if bv.is_some() { 1.0 } else { 0.0 },
            oi,
            p,
            1,
        );
    }
    let out = Tensor::new([n, c_out, geo.ho, geo.wo], out);
    let mut parents = vec![x, weight];
    parents.extend(bias);
    let has_bias = bias.is_some();
    x.graph().push_op(
        out,
        &parents,
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dx = needs[0].then(|| vec![0.0; n * in_len]);
            let mut dw = needs[1].then(|| vec![0.0; c_out * k]);
            let mut cols = vec![0.0; k * p];
            for i in 0..n {
                let gi = &gd[i * c_out * p..(i + 1) * c_out * p];
                if let Some(dw) = dw.as_mut() {
                    let xi = &xv.data()[i * in_len..(i + 1) * in_len];
                    let cols_ref: &[f64] = if geo.pointwise() {
                        xi
                    } else {
                        im2col(xi, &geo, &mut cols);
                        &cols
                    };
                    gemm(
                        c_out,
                        p,
                        k,
                        1.0,
                        Mat::row_major(gi, p),
                        Mat::transposed(cols_ref, p),
                        1.0,
                        dw,
                        k,
                        1,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    let dxi = &mut dx[i * in_len..(i + 1) * in_len];
                    if geo.pointwise() {
                        gemm(
                            k,
                            c_out,
                            p,
                            1.0,
                            Mat::transposed(wv.data(), k),
                            Mat::row_major(gi, p),
                            1.0,
                            dxi,
                            p,
                            1,
                        );
                    } else {
                        gemm(
                            k,
                            c_out,
                            p,
                            1.0,
                            Mat::transposed(wv.data(), k),
                            Mat::row_major(gi, p),
                            0.0,
                            &mut cols,
                            p,
                            1,
                        );
                        col2im(&cols, &geo, dxi);
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new([n, c_in, h, w], d)),
                dw.map(|d| Tensor::new([c_out, c_in, kh, kw], d)),
            ];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut db = vec![0.0; c_out];
                    for i in 0..n {
                        for (o, chunk) in gd[i * c_out * p..(i + 1) * c_out * p].chunks(p).enumerate() {
                            db[o] += chunk.iter().sum::<f64>();
                        }
                    }
                    Tensor::new([c_out], db)
                }));
            }
            grads
        }),
    )
}

/// Nearest-neighbour ×2 spatial upsampling of `[n, c, h, w]`.
pub fn upsample_nearest2x(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * h2 * w2];
    for (plane, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
        for y in 0..h2 {
            let src = &plane[(y / 2) * w..(y / 2 + 1) * w];
            for (xo, d) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    x.graph().push_op(
        Tensor::new([n, c, h2, w2], out),
        &[x],
        Box::new(move |g, _| {
            let mut dx = vec![0.0; n * c * h * w];
            for (gp, dst) in g.data().chunks(h2 * w2).zip(dx.chunks_mut(h * w)) {
                for y in 0..h2 {
                    for xo in 0..w2 {
                        dst[(y / 2) * w + xo / 2] += gp[y * w2 + xo];
                    }
                }
            }
            vec![Some(Tensor::new([n, c, h, w], dx))]
        }),
    )
}

/// Channel range `[start, start + len)` of `[n, c, h, w]`.
pub fn slice_channels(x: Var<'_>, start: usize, len: usize) -> Var<'_> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4();
    assert!(start + len <= c, "slice_channels: {start}+{len} exceeds {c} channels");
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for i in 0..n {
        let base = (i * c + start) * plane;
        out.extend_from_slice(&xv.data()[base..base + len * plane]);
    }
    x.graph().push_op(
        Tensor::new([n, len, h, w], out),
        &[x],
        Box::new(move |g, _| {
            let mut dx = vec![0.0; n * c * plane];
            for i in 0..n {
                let base = (i * c + start) * plane;
                dx[base..base + len * plane]
                    .copy_from_slice(&g.data()[i * len * plane..(i + 1) * len * plane]);
            }
            vec![Some(Tensor::new([n, c, h, w], dx))]
        }),
    )
}
