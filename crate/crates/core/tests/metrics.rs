use avsr_autograd::Tensor;
use avsr_core::data::{Dataset, GenDataConfig, MotionChoice};
use avsr_core::metrics::{
    evaluate, nearest_upsample, psnr, save_png, sr_models, ssim, temporal_profile, warping_error, EvalOptions,
    MetricReport, NearestUpsample, ProfileRow,
};
use avsr_core::student::{Student, StudentConfig};
use avsr_core::video::{
    degrade, shuffle_frames, shuffle_permutation, synth_clip, DegradationConfig, Motion, ProceduralSpec, TextureKind,
    ValueRange, VideoClip,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clip(motion: Motion, v: [f64; 2], frames: usize, size: usize, seed: u64) -> (VideoClip, avsr_core::video::FlowField) {
    let spec = ProceduralSpec {
        motion,
        velocity: v,
        texture: TextureKind::ALL[seed as usize % 4],
        frames,
        height: size,
        width: size,
    };
    synth_clip(&spec, seed).unwrap()
}

fn with_data(c: &VideoClip, mut f: impl FnMut(usize, f64) -> f64) -> VideoClip {
    let data = c.tensor().data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
    VideoClip::new(Tensor::new(c.tensor().shape().to_vec(), data), ValueRange::Unit, c.id()).unwrap()
}

fn binary_checker(frames: usize, size: usize, cell: usize) -> VideoClip {
    let mut data = Vec::with_capacity(frames * 3 * size * size);
    for _ in 0..frames * 3 {
        for y in 0..size {
            for x in 0..size {
                data.push(((x / cell + y / cell) % 2) as f64);
            }
        }
    }
    VideoClip::new(Tensor::new([frames, 3, size, size], data), ValueRange::Unit, "bin").unwrap()
}

#[test]
fn psnr_examples() {
    let (x, _) = clip(Motion::Static, [0.0, 0.0], 2, 16, 0);
    assert_eq!(psnr(&x, &x).unwrap(), 99.0);
    let base = VideoClip::new(Tensor::full([2, 3, 8, 8], 0.5), ValueRange::Unit, "g").unwrap();
    let off = with_data(&base, |_, v| v + 0.1);
    assert!((psnr(&base, &off).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn psnr_matches_per_frame_oracle() {
    let (a, _) = clip(Motion::Translate, [1.0, 0.0], 3, 16, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = with_data(&a, |_, v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0));
    let n = 3 * 16 * 16;
    let mut acc = 0.0;
    for t in 0..3 {
        let mse: f64 = (0..n)
            .map(|i| (a.tensor().data()[t * n + i] - b.tensor().data()[t * n + i]).powi(2))
            .sum::<f64>()
            / n as f64;
        acc += -10.0 * mse.log10();
    }
    assert!((psnr(&a, &b).unwrap() - acc / 3.0).abs() <= 1e-6);
}

#[test]
fn ssim_identity_and_binary_inverse() {
    let (x, _) = clip(Motion::Static, [0.0, 0.0], 2, 16, 2);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    // every 8×8 window of a 2-px binary checker holds equal halves of 0 and 1
    let c = binary_checker(2, 16, 2);
    let inv = with_data(&c, |_, v| 1.0 - v);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let oracle = ((2.0 * 0.25 + c1) * (2.0 * -0.25 + c2)) / ((0.5 + c1) * (0.5 + c2));
    let got = ssim(&c, &inv).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    assert!((got + 1.0).abs() < 4e-3);
}

#[test]
fn ssim_decreases_with_noise() {
    let (x, _) = clip(Motion::Static, [0.0, 0.0], 2, 32, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f64> = (0..x.tensor().numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let values: Vec<f64> = [0.0, 0.02, 0.05, 0.1]
        .iter()
        .map(|s| ssim(&x, &with_data(&x, |i, v| (v + s * noise[i]).clamp(0.0, 1.0))).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn shape_mismatch_is_dimension_error() {
    let (a, _) = clip(Motion::Static, [0.0, 0.0], 2, 16, 0);
    let (b, _) = clip(Motion::Static, [0.0, 0.0], 3, 16, 0);
    assert_eq!(psnr(&a, &b).unwrap_err().code(), "E_DIMENSION");
    assert_eq!(ssim(&a, &b).unwrap_err().code(), "E_DIMENSION");
}

#[test]
fn warping_error_examples() {
    let (s, f) = clip(Motion::Static, [0.0, 0.0], 4, 16, 4);
    assert_eq!(warping_error(&s, &f).unwrap(), 0.0);
    let (t, f) = clip(Motion::Translate, [2.0, -1.0], 5, 16, 5);
    assert!(warping_error(&t, &f).unwrap() <= 1e-6);
    let shuffled = shuffle_frames(&t, 1);
    assert!(warping_error(&shuffled, &f).unwrap() > warping_error(&t, &f).unwrap());
    let (one, _) = clip(Motion::Static, [0.0, 0.0], 1, 16, 0);
    assert_eq!(warping_error(&one, &f).unwrap_err().code(), "E_USAGE");
    let (wrong, _) = clip(Motion::Static, [0.0, 0.0], 3, 16, 0);
    assert_eq!(warping_error(&wrong, &f).unwrap_err().code(), "E_DIMENSION");
}

#[test]
fn warping_error_oracle() {
    // direct evaluation with integer shifts, no interpolation needed
    let (c, f) = clip(Motion::Translate, [1.0, 0.0], 3, 16, 6);
    let noisy = with_data(&c, |i, v| (v + 0.01 * ((i * 7919) % 13) as f64 / 13.0).min(1.0));
    let (h, w) = (16, 16);
    let mut total = 0.0;
    for t in 0..2 {
        let (mut acc, mut n) = (0.0, 0);
        for y in 0..h {
            for x in 0..w - 1 {
                n += 1;
                for ch in 0..3 {
                    let a = noisy.tensor().data()[((t * 3 + ch) * h + y) * w + x];
                    let b = noisy.tensor().data()[(((t + 1) * 3 + ch) * h + y) * w + x + 1];
                    acc += (a - b).powi(2);
                }
            }
        }
        total += acc / n as f64;
    }
    let want = 1e3 * total / 2.0;
    assert!((warping_error(&noisy, &f).unwrap() - want).abs() <= 1e-9 * want.max(1.0));
}

#[test]
fn temporal_profile_examples() {
    let (s, _) = clip(Motion::Static, [0.0, 0.0], 4, 16, 7);
    let p = temporal_profile(&s, ProfileRow::Center).unwrap();
    assert_eq!(p.shape(), &[3, 16, 4]);
    for c in 0..3 {
        for x in 0..16 {
            let row = &p.data()[(c * 16 + x) * 4..(c * 16 + x + 1) * 4];
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }
    let (t, _) = clip(Motion::Translate, [1.0, 0.0], 5, 16, 8);
    let p = temporal_profile(&t, ProfileRow::Index(3)).unwrap();
    for c in 0..3 {
        for x in 1..16 {
            for k in 1..5 {
                if x >= k {
                    assert_eq!(p.data()[(c * 16 + x) * 5 + k], p.data()[(c * 16 + x - 1) * 5 + k - 1]);
                }
            }
        }
    }
    assert_eq!(temporal_profile(&t, ProfileRow::Index(16)).unwrap_err().code(), "E_USAGE");
    assert_eq!("center".parse::<ProfileRow>().unwrap(), ProfileRow::Center);
    assert_eq!("7".parse::<ProfileRow>().unwrap(), ProfileRow::Index(7));
    assert!("middle".parse::<ProfileRow>().is_err());
}

#[test]
fn profile_of_shuffled_clip_permutes_columns() {
    let (t, _) = clip(Motion::Translate, [1.0, 1.0], 5, 16, 9);
    let order = shuffle_permutation(5, 4);
    let shuffled = VideoClip::new(t.tensor().gather_outer(&order), ValueRange::Unit, "s").unwrap();
    let (a, b) = (temporal_profile(&t, ProfileRow::Center).unwrap(), temporal_profile(&shuffled, ProfileRow::Center).unwrap());
    for r in 0..3 * 16 {
        for (k, &o) in order.iter().enumerate() {
            assert_eq!(b.data()[r * 5 + k], a.data()[r * 5 + o]);
        }
    }
}

#[test]
fn profile_png_is_lossless_8bit() {
    let (t, _) = clip(Motion::Translate, [1.0, 0.0], 4, 16, 10);
    let p = temporal_profile(&t, ProfileRow::Center).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/profile.png");
    save_png(&p, &path).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    assert_eq!((img.width(), img.height()), (4, 16));
    let px = img.get_pixel(2, 5);
    for c in 0..3 {
        let v = p.data()[(c * 16 + 5) * 4 + 2];
        assert_eq!(px[c], (v * 255.0).round() as u8);
    }
}

fn eval_data(frames: usize, motion: MotionChoice) -> Dataset {
    Dataset::generate(&GenDataConfig {
        clips: 3,
        frames,
        height: 16,
        width: 16,
        seed: 1,
        motion,
        test_clips: 2,
    })
    .unwrap()
}

fn options(deg: &DegradationConfig) -> EvalOptions<'_> {
    EvalOptions {
        degradation: deg,
        seed: 0,
        dataset_label: "mem".into(),
        checkpoint_label: None,
        config_echo: serde_json::json!({"degradation": deg}),
    }
}

#[test]
fn nearest_baseline_matches_oracle() {
    let data = eval_data(3, MotionChoice::Translate);
    let deg = DegradationConfig::clean(4);
    let report = evaluate(&NearestUpsample { scale: 4 }, &data, &options(&deg)).unwrap();
    assert_eq!(report.per_clip.len(), 2);
    for (k, i) in [1usize, 2].into_iter().enumerate() {
        let hr = &data.samples[i].hr;
        let lr = degrade(hr, &deg, i as u64).unwrap();
        let up = VideoClip::new(nearest_upsample(lr.tensor(), 4), ValueRange::Unit, "up").unwrap();
        assert!((report.per_clip[k].psnr - psnr(&up, hr).unwrap()).abs() < 1e-9);
        assert!(report.per_clip[k].e_warp_star.is_some());
    }
    let mean = (report.per_clip[0].psnr + report.per_clip[1].psnr) / 2.0;
    assert!((report.metrics.psnr - mean).abs() < 1e-12);
}

#[test]
fn report_round_trip_and_determinism() {
    let data = eval_data(3, MotionChoice::Mixed);
    let deg = DegradationConfig::default();
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let model = sr_models().get("student").unwrap()(Some(&s), 4).unwrap();
    let a = evaluate(model.as_ref(), &data, &options(&deg)).unwrap();
    let b = evaluate(model.as_ref(), &data, &options(&deg)).unwrap();
    assert_eq!(a, b);
    assert_eq!(MetricReport::from_json(&a.to_json()).unwrap(), a);
    let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    for k in ["dataset", "checkpoint", "metrics", "per_clip", "config_echo"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert!(a.metrics.ssim <= 1.0 && a.metrics.ssim >= -1.0);
    assert!(sr_models().get("student").unwrap()(None, 4).is_err());
}

#[test]
fn missing_flow_marks_metric_absent() {
    let data = eval_data(1, MotionChoice::Static);
    let deg = DegradationConfig::clean(4);
    let report = evaluate(&NearestUpsample { scale: 4 }, &data, &options(&deg)).unwrap();
    assert!(report.metrics.e_warp_star.is_none());
    assert!(report.per_clip.iter().all(|c| c.e_warp_star.is_none()));
    assert!(report.to_json().contains("\"e_warp_star\": null"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psnr_ssim_invariant_under_joint_permutation(seed in 0u64..500, pseed in any::<u64>()) {
        let (a, _) = clip(Motion::Translate, [1.0, 0.0], 4, 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = with_data(&a, |_, v| (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0));
        let order = shuffle_permutation(4, pseed);
        let pa = VideoClip::new(a.tensor().gather_outer(&order), ValueRange::Unit, "a").unwrap();
        let pb = VideoClip::new(b.tensor().gather_outer(&order), ValueRange::Unit, "b").unwrap();
        prop_assert!((psnr(&a, &b).unwrap() - psnr(&pa, &pb).unwrap()).abs() < 1e-9);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&pa, &pb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn metric_ranges(seed in 0u64..500, sigma in 0.0f64..0.3) {
        let (a, f) = clip(Motion::RotateTexture, [1.0, 0.0], 3, 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = with_data(&a, |_, v| (v + sigma * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0));
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!(psnr(&a, &b).unwrap() <= 99.0);
        prop_assert!(warping_error(&b, &f).unwrap() >= 0.0);
    }
}

