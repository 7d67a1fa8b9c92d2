//! Operators mixing information along the frame axis.
//!
//! Frame-major batches are laid out as `[b·t, c, h, w]`: clip `i`, frame `j`
//! lives at leading index `i·t + j`.

use crate::gemm::{gemm, Mat};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Source frame for tap `k` of a kernel centred at `t`, with edge replication.
#[inline]
fn replicate(t: usize, k: usize, radius: usize, frames: usize) -> usize {
    (t + k).saturating_sub(radius).min(frames - 1)
}

/// 1D convolution along frames at every spatial location, replicate padding.
///
/// `x: [b·frames, c_in, h, w]`, `weight: [c_out, c_in, k]` with odd `k`,
/// `bias: [c_out]`.
pub fn temporal_conv<'g>(x: Var<'g>, weight: Var<'g>, bias: Option<Var<'g>>, frames: usize) -> Var<'g> {
    let xv = x.value();
    let wv = weight.value();
    let (bt, c_in, h, w) = xv.dims4();
    let ws = wv.shape().to_vec();
    assert_eq!(ws.len(), 3, "temporal_conv: weight must be [c_out, c_in, k]");
    let (c_out, k) = (ws[0], ws[2]);
    assert_eq!(ws[1], c_in, "temporal_conv: input has {c_in} channels, weight expects {}", ws[1]);
    assert!(k % 2 == 1, "temporal_conv: kernel size must be odd");
    assert!(frames > 0 && bt % frames == 0, "temporal_conv: {bt} frames not divisible by clip length {frames}");
    let radius = k / 2;
    let p = h * w;
    let in_len = c_in * p;
    let out_len = c_out * p;
    let bv = bias.map(|b| b.value());
    let mut out = vec![0.0; bt * out_len];
    for (i, oi) in out.chunks_mut(out_len).enumerate() {
        if let Some(b) = &bv {
            for (o, chunk) in oi.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        let (clip, t) = (i / frames, i % frames);
        for tap in 0..k {
            let src = clip * frames + replicate(t, tap, radius, frames);
            gemm(
                c_out,
                c_in,
                p,
                1.0,
                Mat {
                    data: &wv.data()[tap..],
                    rs: c_in * k,
                    cs: k,
                },
                Mat::row_major(&xv.data()[src * in_len..(src + 1) * in_len], p),
                1.0,
                oi,
                p,
                1,
            );
        }
    }
    let mut parents = vec![x, weight];
    parents.extend(bias);
    let has_bias = bias.is_some();
    x.graph().push_op(
        Tensor::new([bt, c_out, h, w], out),
        &parents,
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dx = needs[0].then(|| vec![0.0; bt * in_len]);
            let mut dw = needs[1].then(|| vec![0.0; c_out * c_in * k]);
            for i in 0..bt {
                let gi = &gd[i * out_len..(i + 1) * out_len];
                let (clip, t) = (i / frames, i % frames);
                for tap in 0..k {
                    let src = clip * frames + replicate(t, tap, radius, frames);
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            c_in,
                            c_out,
                            p,
                            1.0,
                            Mat {
                                data: &wv.data()[tap..],
                                rs: k,
                                cs: c_in * k,
                            },
                            Mat::row_major(gi, p),
                            1.0,
                            &mut dx[src * in_len..(src + 1) * in_len],
                            p,
                            1,
                        );
                    }
                    if let Some(dw) = dw.as_mut() {
                        gemm(
                            c_out,
                            p,
                            c_in,
                            1.0,
                            Mat::row_major(gi, p),
                            Mat::transposed(&xv.data()[src * in_len..(src + 1) * in_len], p),
                            1.0,
                            &mut dw[tap..],
                            c_in * k,
                            k,
                        );
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new([bt, c_in, h, w], d)),
                dw.map(|d| Tensor::new([c_out, c_in, k], d)),
            ];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut db = vec![0.0; c_out];
                    for gi in gd.chunks(out_len) {
                        for (o, chunk) in gi.chunks(p).enumerate() {
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

/// Single-head softmax attention over frames at every spatial location.
///
/// `q`, `k`, `v` are `[b·frames, c, h, w]`; scores are scaled by `1/√c`.
pub fn temporal_attention<'g>(q: Var<'g>, k: Var<'g>, v: Var<'g>, frames: usize) -> Var<'g> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let (bt, c, h, w) = qv.dims4();
    assert_eq!(kv.shape(), qv.shape(), "temporal_attention: key shape");
    assert_eq!(vv.shape(), qv.shape(), "temporal_attention: value shape");
    assert!(frames > 0 && bt % frames == 0);
    let clips = bt / frames;
    let p = h * w;
    let scale = 1.0 / (c as f64).sqrt();
    let idx = move |clip: usize, t: usize, ch: usize, j: usize| ((clip * frames + t) * c + ch) * p + j;

    // attn[clip][t][s][j]
    let mut attn = vec![0.0; clips * frames * frames * p];
    let mut out = vec![0.0; bt * c * p];
    for clip in 0..clips {
        let a = &mut attn[clip * frames * frames * p..(clip + 1) * frames * frames * p];
        for t in 0..frames {
            for s in 0..frames {
                let row = &mut a[(t * frames + s) * p..(t * frames + s + 1) * p];
                for ch in 0..c {
                    let qs = &qv.data()[idx(clip, t, ch, 0)..idx(clip, t, ch, 0) + p];
                    let ks = &kv.data()[idx(clip, s, ch, 0)..idx(clip, s, ch, 0) + p];
                    for j in 0..p {
                        row[j] += qs[j] * ks[j];
                    }
                }
            }
            for j in 0..p {
                let mut mx = f64::NEG_INFINITY;
                for s in 0..frames {
                    mx = mx.max(a[(t * frames + s) * p + j] * scale);
                }
                let mut z = 0.0;
                for s in 0..frames {
                    let e = (a[(t * frames + s) * p + j] * scale - mx).exp();
                    a[(t * frames + s) * p + j] = e;
                    z += e;
                }
                for s in 0..frames {
                    a[(t * frames + s) * p + j] /= z;
                }
            }
            for s in 0..frames {
                for ch in 0..c {
                    let o = idx(clip, t, ch, 0);
                    let vs = idx(clip, s, ch, 0);
                    for j in 0..p {
                        out[o + j] += a[(t * frames + s) * p + j] * vv.data()[vs + j];
                    }
                }
            }
        }
    }
    q.graph().push_op(
        Tensor::new([bt, c, h, w], out),
        &[q, k, v],
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dq = vec![0.0; bt * c * p];
            let mut dk = vec![0.0; bt * c * p];
            let mut dv = vec![0.0; bt * c * p];
            let mut ds = vec![0.0; frames * frames * p];
            for clip in 0..clips {
                let a = &attn[clip * frames * frames * p..(clip + 1) * frames * frames * p];
                ds.fill(0.0);
                // dA[t][s] = <g_t, v_s>; dv_s += A[t][s] g_t
                for t in 0..frames {
                    for s in 0..frames {
                        let da = &mut ds[(t * frames + s) * p..(t * frames + s + 1) * p];
                        let arow = &a[(t * frames + s) * p..(t * frames + s + 1) * p];
                        for ch in 0..c {
                            let go = idx(clip, t, ch, 0);
                            let vs = idx(clip, s, ch, 0);
                            for j in 0..p {
                                da[j] += gd[go + j] * vv.data()[vs + j];
                                dv[vs + j] += arow[j] * gd[go + j];
                            }
                        }
                    }
                }
                // softmax backward, in place: ds = A ⊙ (dA − Σ_s A dA)
                for t in 0..frames {
                    for j in 0..p {
                        let mut dot = 0.0;
                        for s in 0..frames {
                            let e = (t * frames + s) * p + j;
                            dot += a[e] * ds[e];
                        }
                        for s in 0..frames {
                            let e = (t * frames + s) * p + j;
                            ds[e] = a[e] * (ds[e] - dot) * scale;
                        }
                    }
                }
                for t in 0..frames {
                    for s in 0..frames {
                        let d = &ds[(t * frames + s) * p..(t * frames + s + 1) * p];
                        for ch in 0..c {
                            let qt = idx(clip, t, ch, 0);
                            let ks = idx(clip, s, ch, 0);
                            for j in 0..p {
                                dq[qt + j] += d[j] * kv.data()[ks + j];
                                dk[ks + j] += d[j] * qv.data()[qt + j];
                            }
                        }
                    }
                }
            }
            let shape = [bt, c, h, w];
            vec![
                needs[0].then(|| Tensor::new(shape, dq)),
                needs[1].then(|| Tensor::new(shape, dk)),
                needs[2].then(|| Tensor::new(shape, dv)),
            ]
        }),
    )
}
