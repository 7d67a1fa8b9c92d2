//! Layer forward helpers over bound parameters.

use avsr_autograd::ops;
use avsr_autograd::Var;

use crate::params::{Bound, Init};

pub const GN_EPS: f64 = 1e-5;

/// Largest group count ≤ 4 that divides `channels`.
pub fn gn_groups(channels: usize) -> usize {
    (1..=4).rev().find(|g| channels % g == 0).unwrap_or(1)
}

pub fn conv<'g>(p: &Bound<'g>, name: &str, x: Var<'g>, stride: usize) -> Var<'g> {
    let w = p.get(&format!("{name}.w"));
    let k = w.shape()[2];
    ops::conv2d(x, w, Some(p.get(&format!("{name}.b"))), stride, k / 2)
}

pub fn group_norm<'g>(p: &Bound<'g>, name: &str, x: Var<'g>) -> Var<'g> {
    let c = x.shape()[1];
    ops::group_norm(
        x,
        p.get(&format!("{name}.g")),
        p.get(&format!("{name}.b")),
        gn_groups(c),
        GN_EPS,
    )
}

pub fn temporal_conv<'g>(p: &Bound<'g>, name: &str, x: Var<'g>, frames: usize) -> Var<'g> {
    ops::temporal_conv(
        x,
        p.get(&format!("{name}.w")),
        Some(p.get(&format!("{name}.b"))),
        frames,
    )
}

/// Pre-activation residual block: `x + conv(relu(gn(conv(relu(gn(x))))))`,
/// with a 1×1 projection on the skip path when widths differ.
pub fn init_resblock(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize) {
    init.group_norm(&format!("{name}.norm1"), c_in);
    init.conv2d(&format!("{name}.conv1"), c_in, c_out, 3);
    init.group_norm(&format!("{name}.norm2"), c_out);
    init.conv2d(&format!("{name}.conv2"), c_out, c_out, 3);
    if c_in != c_out {
        init.conv2d(&format!("{name}.skip"), c_in, c_out, 1);
    }
}

pub fn resblock<'g>(p: &Bound<'g>, name: &str, x: Var<'g>) -> Var<'g> {
    let h = group_norm(p, &format!("{name}.norm1"), x).relu();
    let h = conv(p, &format!("{name}.conv1"), h, 1);
    let h = group_norm(p, &format!("{name}.norm2"), h).relu();
    let h = conv(p, &format!("{name}.conv2"), h, 1);
    let skip = match p.try_get(&format!("{name}.skip.w")) {
        Some(_) => conv(p, &format!("{name}.skip"), x, 1),
        None => x,
    };
    skip.add(h)
}
