use avsr_autograd::{Graph, Tensor};
use avsr_core::params::ParamStore;
use avsr_core::student::{prune_width, Student, StudentConfig};
use avsr_core::temporal::{mixers, temporal_rb_forward, TEMPORAL_GROUP};
use avsr_core::video::{shuffle_permutation, ClipBatch, FeatureVolume, ValueRange, VideoClip};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(clips: usize, frames: usize, size: usize, seed: u64) -> ClipBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = clips * frames * 3 * size * size;
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ClipBatch::new(Tensor::new([clips * frames, 3, size, size], data), frames).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn randomize_temporal(s: &mut Student, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = s
        .params
        .iter()
        .filter(|(_, e)| e.group == TEMPORAL_GROUP)
        .map(|(n, _)| n.to_string())
        .collect();
    for n in names {
        for v in s.params.get_mut(&n).unwrap().data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

#[test]
fn prune_width_examples() {
    assert_eq!(prune_width(64, 0.25), 48);
    assert_eq!(prune_width(64, 0.5), 32);
    for w in [4, 7, 32, 100] {
        assert_eq!(prune_width(w, 0.0), w);
    }
    assert_eq!(prune_width(6, 0.9), 4);
}

#[test]
fn width_underflow_is_config_error() {
    let cfg = StudentConfig {
        base_widths: vec![4, 4, 4, 4, 4, 4],
        decoder_prune_fraction: 0.5,
        ..Default::default()
    };
    assert_eq!(Student::build(&cfg, 0).err().unwrap().code(), "E_CONFIG");
    let even_kernel = StudentConfig {
        temporal_kernel: 2,
        ..Default::default()
    };
    assert_eq!(Student::build(&even_kernel, 0).err().unwrap().code(), "E_CONFIG");
    let unknown = StudentConfig {
        temporal_mode: "lstm".into(),
        ..Default::default()
    };
    assert_eq!(Student::build(&unknown, 0).err().unwrap().code(), "E_CONFIG");
}

#[test]
fn temporal_conv2_is_zero_at_init() {
    let s = Student::build(&StudentConfig::default(), 3).unwrap();
    let mut seen = 0;
    for (name, e) in s.params.iter() {
        if e.group == TEMPORAL_GROUP && name.contains(".conv2.") {
            seen += 1;
            assert!(e.tensor.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    assert_eq!(seen, 2 * s.insertion_points());
}

#[test]
fn temporal_mode_none_has_no_temporal_params() {
    let cfg = StudentConfig {
        temporal_mode: "none".into(),
        ..Default::default()
    };
    let s = Student::build(&cfg, 0).unwrap();
    assert_eq!(s.count_params().temporal, 0);
    assert!(s.params.iter().all(|(_, e)| e.group != TEMPORAL_GROUP));
}

#[test]
fn build_is_deterministic_and_2d_weights_ignore_temporal_mode() {
    let cfg = StudentConfig::default();
    let a = Student::build(&cfg, 5).unwrap();
    let b = Student::build(&cfg, 5).unwrap();
    assert_eq!(a.params, b.params);
    let plain = Student::build(
        &StudentConfig {
            temporal_mode: "none".into(),
            ..Default::default()
        },
        5,
    )
    .unwrap();
    for (n, e) in plain.params.iter() {
        assert_eq!(a.params.get(n).unwrap(), &e.tensor);
    }
}

#[test]
fn temporal_channels_match_preceding_block() {
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let w = s.widths().clone();
    for (i, &c) in w.body.iter().enumerate() {
        assert_eq!(s.params.get(&format!("temporal.body{i}.rb0.conv1.w")).unwrap().shape(), &[c, c, 3]);
    }
    assert_eq!(s.params.get("temporal.middle.rb0.conv1.w").unwrap().shape(), &[w.middle, w.middle, 3]);
    assert_eq!(s.params.get("temporal.block2.rb0.conv2.w").unwrap().shape(), &[w.up2, w.up2, 3]);
}

#[test]
fn counts_by_group() {
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let c = s.count_params();
    assert_eq!(c.total, c.body_2d + c.decoder_2d + c.temporal);
    assert_eq!(c.total, s.params.total());
    assert!(c.temporal > 0);
    assert!(c.temporal as f64 / c.total as f64 <= 0.15);
    assert!(c.body_2d + c.decoder_2d < c.total);

    let doubled = Student::build(
        &StudentConfig {
            temporal_mode: "conv_rb_doubled".into(),
            ..Default::default()
        },
        0,
    )
    .unwrap()
    .count_params();
    assert_eq!(doubled.temporal, 2 * c.temporal);
    assert_eq!(doubled.body_2d, c.body_2d);
}

#[test]
fn count_oracle_from_shapes() {
    // independent recount from the configured widths
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let w = s.widths().clone();
    let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
    let gn = |c: usize| 2 * c;
    let block = |ci: usize, co: usize| gn(ci) + conv(ci, co, 3) + gn(co) + conv(co, co, 3) + if ci != co { conv(ci, co, 1) } else { 0 };
    let mut body = conv(3, w.body[0], 3);
    let mut prev = w.body[0];
    for &c in &w.body {
        body += block(prev, c) + block(c, c);
        prev = c;
    }
    let decoder = conv(prev, w.up1, 3)
        + block(w.up1, w.up1)
        + block(w.up1, w.middle)
        + conv(w.middle, w.up2, 3)
        + block(w.up2, w.up2)
        + gn(w.up2)
        + conv(w.up2, 3, 3);
    let rb = |c: usize| 2 * (c * c * 3 + c);
    let temporal: usize = w.body.iter().map(|&c| rb(c)).sum::<usize>() + rb(w.middle) + rb(w.up2);
    let got = s.count_params();
    assert_eq!((got.body_2d, got.decoder_2d, got.temporal), (body, decoder, temporal));
}

#[test]
fn output_shapes() {
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let out = s.forward(&random_batch(1, 5, 16, 0)).unwrap();
    assert_eq!(out.x_student.tensor().shape(), &[5, 3, 64, 64]);
    assert_eq!(out.f_student.frames(), 5);
    assert_eq!(out.f_student.channels(), s.tap_channels());
    assert_eq!(out.f_student.height(), 32);
}

#[test]
fn zero_init_equivalence() {
    let s = Student::build(&StudentConfig::default(), 1).unwrap();
    let x = random_batch(2, 4, 8, 1);
    let a = s.forward(&x).unwrap();
    let b = s.forward_2d_only(&x).unwrap();
    assert!(max_diff(a.x_student.tensor(), b.x_student.tensor()) <= 1e-6);
    assert!(max_diff(a.f_student.tensor(), b.f_student.tensor()) <= 1e-6);
}

#[test]
fn zero_init_equivalence_for_every_mixer() {
    for mode in mixers().names() {
        let cfg = StudentConfig {
            temporal_mode: mode.to_string(),
            ..Default::default()
        };
        let s = Student::build(&cfg, 2).unwrap();
        let x = random_batch(1, 3, 8, 2);
        let a = s.forward(&x).unwrap();
        let b = s.forward_2d_only(&x).unwrap();
        assert!(max_diff(a.x_student.tensor(), b.x_student.tensor()) <= 1e-6, "{mode}");
    }
}

#[test]
fn static_input_gives_identical_frames() {
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let one = random_batch(1, 1, 8, 4);
    let data: Vec<f64> = (0..4).flat_map(|_| one.tensor().data().to_vec()).collect();
    let x = ClipBatch::new(Tensor::new([4, 3, 8, 8], data), 4).unwrap();
    let out = s.forward(&x).unwrap().x_student;
    for t in 1..4 {
        assert_eq!(out.tensor().narrow_outer(t, 1), out.tensor().narrow_outer(0, 1));
    }
}

#[test]
fn forward_2d_only_commutes_with_frame_permutation() {
    let mut s = Student::build(&StudentConfig::default(), 0).unwrap();
    randomize_temporal(&mut s, 1, 0.3);
    let x = random_batch(1, 5, 8, 5);
    let perm = shuffle_permutation(5, 3);
    let shuffled = ClipBatch::new(x.tensor().gather_outer(&perm), 5).unwrap();
    let a = s.forward_2d_only(&shuffled).unwrap().x_student;
    let b = s.forward_2d_only(&x).unwrap().x_student.tensor().gather_outer(&perm);
    assert!(max_diff(a.tensor(), &b) <= 1e-6);
    // trained temporal blocks break the equivariance
    let a = s.forward(&shuffled).unwrap().x_student;
    let b = s.forward(&x).unwrap().x_student.tensor().gather_outer(&perm);
    assert!(max_diff(a.tensor(), &b) > 1e-4);
}

#[test]
fn temporal_locality_matches_receptive_field() {
    let mut s = Student::build(&StudentConfig::default(), 0).unwrap();
    randomize_temporal(&mut s, 2, 0.3);
    let reach = s.mixer().reach(3).unwrap() * s.insertion_points();
    let frames = reach + 3;
    let x = random_batch(1, frames, 4, 6);
    let mut bumped = x.tensor().clone();
    for v in bumped.data_mut()[..3 * 16].iter_mut() {
        *v = -*v;
    }
    let a = s.forward(&x).unwrap().x_student;
    let b = s.forward(&ClipBatch::new(bumped, frames).unwrap()).unwrap().x_student;
    for t in 0..frames {
        let d = max_diff(&a.tensor().narrow_outer(t, 1), &b.tensor().narrow_outer(t, 1));
        if t > reach {
            assert_eq!(d, 0.0, "frame {t} beyond reach {reach} changed");
        }
        if t == 0 || t == reach {
            assert!(d > 0.0, "frame {t} inside the receptive field did not change");
        }
    }
}

#[test]
fn tap_consistency() {
    let mut s = Student::build(&StudentConfig::default(), 0).unwrap();
    randomize_temporal(&mut s, 3, 0.2);
    let x = random_batch(1, 3, 8, 7);
    let out = s.forward(&x).unwrap();
    let g = Graph::new();
    let p = s.params.bind(&g, false);
    let h = s.body(&p, g.constant(x.tensor().clone()), 3, true);
    let f = s.decoder_front(&p, h, 3, true);
    assert!(max_diff(&f.value(), out.f_student.tensor()) <= 1e-6);
    let back = s.decoder_back(&p, g.constant(out.f_student.tensor().clone()), 3, true);
    assert!(max_diff(&back.value(), out.x_student.tensor()) <= 1e-6);
}

#[test]
fn forward_clip_checks_range_and_clamps() {
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let x = random_batch(1, 2, 8, 8);
    let unit = VideoClip::new(x.tensor().map(|v| (v + 1.0) / 2.0), ValueRange::Unit, "u").unwrap();
    assert_eq!(s.forward_clip(&unit).unwrap_err().code(), "E_DIMENSION");
    let (out, f) = s.forward_clip(&unit.to_signed()).unwrap();
    assert!(out.tensor().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(f.frames(), 2);
    let bad = ClipBatch::new(Tensor::zeros([2, 4, 8, 8]), 2).unwrap();
    assert_eq!(s.forward(&bad).unwrap_err().code(), "E_DIMENSION");
}

fn rb_params(c: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let mut rand = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect())
    };
    for conv in ["conv1", "conv2"] {
        p.insert(format!("blk.{conv}.w"), rand(vec![c, c, 3]), TEMPORAL_GROUP, true);
        p.insert(format!("blk.{conv}.b"), rand(vec![c]), TEMPORAL_GROUP, true);
    }
    p
}

/// Direct 1D convolution along T with edge replication.
fn conv_t(x: &[f64], t_len: usize, c: usize, hw: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for t in 0..t_len {
        for o in 0..c {
            for s in 0..hw {
                let mut acc = b.data()[o];
                for i in 0..c {
                    for k in 0..3 {
                        let src = (t as isize + k as isize - 1).clamp(0, t_len as isize - 1) as usize;
                        acc += w.data()[(o * c + i) * 3 + k] * x[(src * c + i) * hw + s];
                    }
                }
                out[(t * c + o) * hw + s] = acc;
            }
        }
    }
    out
}

#[test]
fn temporal_rb_matches_direct_convolution() {
    let (t_len, c, hw) = (5, 4, 6);
    let p = rb_params(c, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<f64> = (0..t_len * c * hw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fv = FeatureVolume(Tensor::new([t_len, c, 2, 3], x.clone()));
    let got = temporal_rb_forward(&p, "blk", &fv).unwrap();
    let h: Vec<f64> = conv_t(&x, t_len, c, hw, p.get("blk.conv1.w").unwrap(), p.get("blk.conv1.b").unwrap())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let r = conv_t(&h, t_len, c, hw, p.get("blk.conv2.w").unwrap(), p.get("blk.conv2.b").unwrap());
    let want: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
    assert_eq!(got.tensor().shape(), &[t_len, c, 2, 3]);
    assert!(max_diff(got.tensor(), &Tensor::new([t_len, c, 2, 3], want)) <= 1e-6);
}

#[test]
fn temporal_rb_single_frame_and_zero_branch() {
    let c = 3;
    let p = rb_params(c, 1);
    let x = Tensor::new([1, c, 2, 2], (0..12).map(|i| i as f64 / 12.0).collect());
    let out = temporal_rb_forward(&p, "blk", &FeatureVolume(x.clone())).unwrap();
    assert_eq!(out.tensor().shape(), &[1, c, 2, 2]);
    let h: Vec<f64> = conv_t(x.data(), 1, c, 4, p.get("blk.conv1.w").unwrap(), p.get("blk.conv1.b").unwrap())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let r = conv_t(&h, 1, c, 4, p.get("blk.conv2.w").unwrap(), p.get("blk.conv2.b").unwrap());
    let want: Vec<f64> = x.data().iter().zip(&r).map(|(a, b)| a + b).collect();
    assert!(max_diff(out.tensor(), &Tensor::new([1, c, 2, 2], want)) <= 1e-12);

    let mut zero = rb_params(c, 2);
    for n in ["blk.conv2.w", "blk.conv2.b"] {
        zero.get_mut(n).unwrap().data_mut().fill(0.0);
    }
    let fv = FeatureVolume(Tensor::new([4, c, 2, 2], (0..48).map(|i| (i as f64).sin()).collect()));
    assert_eq!(temporal_rb_forward(&zero, "blk", &fv).unwrap().tensor(), fv.tensor());

    let wrong = FeatureVolume(Tensor::zeros([2, c + 1, 2, 2]));
    assert_eq!(temporal_rb_forward(&p, "blk", &wrong).unwrap_err().code(), "E_DIMENSION");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn zero_init_equivalence_on_random_inputs(seed in any::<u64>(), frames in 1usize..5) {
        let s = Student::build(&StudentConfig::default(), seed).unwrap();
        let x = random_batch(1, frames, 4, seed);
        let a = s.forward(&x).unwrap();
        let b = s.forward_2d_only(&x).unwrap();
        prop_assert!(max_diff(a.x_student.tensor(), b.x_student.tensor()) <= 1e-6);
    }
}
