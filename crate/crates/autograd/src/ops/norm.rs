use crate::graph::Var;
use crate::tensor::Tensor;

/// Group normalization over `[n, c, h, w]` with per-channel affine `gamma`, `beta`.
pub fn group_norm<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>, groups: usize, eps: f64) -> Var<'g> {
    let xv = x.value();
    let (gv, bv) = (gamma.value(), beta.value());
    let (n, c, h, w) = xv.dims4();
    assert!(groups > 0 && c % groups == 0, "group_norm: {c} channels not divisible into {groups} groups");
    assert_eq!(gv.shape(), [c]);
    assert_eq!(bv.shape(), [c]);
    let cg = c / groups;
    let plane = h * w;
    let m = cg * plane;
    let mut stats = Vec::with_capacity(n * groups);
    let mut out = vec![0.0; xv.numel()];
    for i in 0..n {
        for gi in 0..groups {
            let base = (i * c + gi * cg) * plane;
            let seg = &xv.data()[base..base + m];
            let mean = seg.iter().sum::<f64>() / m as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            stats.push((mean, rstd));
            for ch in 0..cg {
                let cc = gi * cg + ch;
                let (ga, be) = (gv.data()[cc], bv.data()[cc]);
                let off = base + ch * plane;
                for j in off..off + plane {
                    out[j] = (xv.data()[j] - mean) * rstd * ga + be;
                }
            }
        }
    }
    x.graph().push_op(
        Tensor::new([n, c, h, w], out),
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut dx = needs[0].then(|| vec![0.0; n * c * plane]);
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut dxhat = vec![0.0; m];
            let mut xhat = vec![0.0; m];
            for i in 0..n {
                for gi in 0..groups {
                    let (mean, rstd) = stats[i * groups + gi];
                    let base = (i * c + gi * cg) * plane;
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for ch in 0..cg {
                        let cc = gi * cg + ch;
                        let ga = gv.data()[cc];
                        for j in 0..plane {
                            let idx = ch * plane + j;
                            let xh = (xv.data()[base + idx] - mean) * rstd;
                            let gy = gd[base + idx];
                            xhat[idx] = xh;
                            dgamma[cc] += gy * xh;
                            dbeta[cc] += gy;
                            let dxh = gy * ga;
                            dxhat[idx] = dxh;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh;
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let mean_d = sum_dxhat / m as f64;
                        let mean_dx = sum_dxhat_xhat / m as f64;
                        for idx in 0..m {
                            dx[base + idx] = rstd * (dxhat[idx] - mean_d - xhat[idx] * mean_dx);
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::new([n, c, h, w], d)),
                needs[1].then(|| Tensor::new([c], dgamma)),
                needs[2].then(|| Tensor::new([c], dbeta)),
            ]
        }),
    )
}
