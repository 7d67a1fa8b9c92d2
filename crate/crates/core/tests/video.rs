use avsr_autograd::Tensor;
use avsr_core::video::{
    area_downsample, assemble_images, degrade, gaussian_blur, load_clip, load_flow, repeat_image, save_clip, save_flow,
    shuffle_batch, shuffle_frames, shuffle_permutation, synth_clip, synth_image, warp_bilinear, ClipBatch,
    DegradationConfig, Motion, ProceduralSpec, SeedPolicy, TextureKind, ValueRange, VideoClip,
};
use avsr_core::AvsrError;
use proptest::prelude::*;

fn spec(motion: Motion, velocity: [f64; 2], texture: TextureKind, frames: usize, size: usize) -> ProceduralSpec {
    ProceduralSpec {
        motion,
        velocity,
        texture,
        frames,
        height: size,
        width: size,
    }
}

fn frame_eq(a: &Tensor, b: &Tensor) -> bool {
    a.data() == b.data()
}

#[test]
fn static_clip_frames_identical_and_flow_zero() {
    let (clip, flow) = synth_clip(&spec(Motion::Static, [0.0, 0.0], TextureKind::Checker, 4, 16), 7).unwrap();
    for t in 1..4 {
        assert!(frame_eq(&clip.frame(0), &clip.frame(t)));
    }
    assert!(flow.displacements().data().iter().all(|&d| d == 0.0));
    assert!(flow.valid().iter().all(|&v| v));
}

#[test]
fn translate_shifts_one_pixel_right() {
    let (clip, flow) = synth_clip(&spec(Motion::Translate, [1.0, 0.0], TextureKind::PerlinLike, 3, 16), 3).unwrap();
    let (h, w) = (16, 16);
    for t in 0..2 {
        let (a, b) = (clip.frame(t), clip.frame(t + 1));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w - 1 {
                    assert!(flow.is_valid(t, x, y));
                    assert_eq!(b.data()[(c * h + y) * w + x + 1], a.data()[(c * h + y) * w + x]);
                }
                assert!(!flow.is_valid(t, w - 1, y));
            }
        }
    }
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    for tex in TextureKind::ALL {
        let s = spec(Motion::RotateTexture, [1.0, 0.0], tex, 3, 16);
        let (a, fa) = synth_clip(&s, 11).unwrap();
        let (b, fb) = synth_clip(&s, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        let (c, _) = synth_clip(&s, 12).unwrap();
        assert_ne!(a.tensor().data(), c.tensor().data(), "{tex:?}");
        assert!(a.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn synth_rejects_bad_specs() {
    let too_fast = spec(Motion::Translate, [5.0, 0.0], TextureKind::Checker, 3, 16);
    assert!(matches!(synth_clip(&too_fast, 0), Err(AvsrError::Config(_))));
    let tiny = spec(Motion::Static, [0.0, 0.0], TextureKind::Checker, 3, 4);
    assert!(matches!(synth_clip(&tiny, 0), Err(AvsrError::Config(_))));
    let empty = spec(Motion::Static, [0.0, 0.0], TextureKind::Checker, 0, 16);
    assert!(matches!(synth_clip(&empty, 0), Err(AvsrError::Config(_))));
}

#[test]
fn gt_flow_warps_exactly_for_integer_translation() {
    for (i, v) in [[1.0, 0.0], [-2.0, 1.0], [0.0, -1.0], [2.0, 2.0]].into_iter().enumerate() {
        let tex = TextureKind::ALL[i];
        let (clip, flow) = synth_clip(&spec(Motion::Translate, v, tex, 4, 16), i as u64).unwrap();
        for t in 0..3 {
            let warped = warp_bilinear(&clip.frame(t + 1), &flow, t).unwrap();
            let cur = clip.frame(t);
            for y in 0..16 {
                for x in 0..16 {
                    if flow.is_valid(t, x, y) {
                        for c in 0..3 {
                            let i = (c * 16 + y) * 16 + x;
                            assert!((warped.data()[i] - cur.data()[i]).abs() <= 1e-6);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn rotation_flow_is_small_and_mostly_valid() {
    let (clip, flow) = synth_clip(&spec(Motion::RotateTexture, [1.0, 0.0], TextureKind::SinusoidMix, 3, 32), 1).unwrap();
    assert_eq!(flow.pairs(), 2);
    let valid = flow.valid().iter().filter(|&&v| v).count();
    assert!(valid as f64 > 0.8 * flow.valid().len() as f64);
    assert_ne!(clip.frame(0).data(), clip.frame(1).data());
}

fn checker_unit(frames: usize, size: usize) -> VideoClip {
    synth_clip(&spec(Motion::Static, [0.0, 0.0], TextureKind::Checker, frames, size), 5).unwrap().0
}

#[test]
fn degrade_identity_limit() {
    let clip = checker_unit(2, 16);
    let cfg = DegradationConfig {
        blur_sigma_range: [0.0, 0.0],
        scale_factor: 1,
        noise_sigma_range: [0.0, 0.0],
        quantization_levels_range: [256, 256],
        order_seed_policy: SeedPolicy::Fixed,
    };
    let lr = degrade(&clip, &cfg, 9).unwrap();
    for (a, b) in lr.tensor().data().iter().zip(clip.tensor().data()) {
        assert!((a - b).abs() <= 1.0 / 255.0);
    }
}

#[test]
fn degrade_shape_and_determinism() {
    let clip = checker_unit(3, 64);
    let cfg = DegradationConfig::default();
    let a = degrade(&clip, &cfg, 1).unwrap();
    assert_eq!(a.tensor().shape(), &[3, 3, 16, 16]);
    assert_eq!(a, degrade(&clip, &cfg, 1).unwrap());
    assert_ne!(a.tensor().data(), degrade(&clip, &cfg, 2).unwrap().tensor().data());
}

#[test]
fn degrade_rejects_indivisible_size() {
    let clip = checker_unit(1, 18);
    let err = degrade(&clip, &DegradationConfig::default(), 0).unwrap_err();
    assert_eq!(err.code(), "E_DIMENSION");
}

#[test]
fn degrade_noise_variance_matches_configured_sigma() {
    let sigma = 0.05;
    let cfg = DegradationConfig {
        blur_sigma_range: [0.0, 0.0],
        scale_factor: 2,
        noise_sigma_range: [sigma, sigma],
        quantization_levels_range: [1 << 20, 1 << 20],
        order_seed_policy: SeedPolicy::Fixed,
    };
    // mid-grey texture keeps the clamp inactive
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for k in 0..10 {
        let data = vec![0.5; 3 * 3 * 32 * 32];
        let clip = VideoClip::new(Tensor::new([3, 3, 32, 32], data), ValueRange::Unit, format!("grey{k}")).unwrap();
        let clean = area_downsample(clip.tensor(), 2).unwrap();
        let lr = degrade(&clip, &cfg, 100 + k).unwrap();
        for (a, b) in lr.tensor().data().iter().zip(clean.data()) {
            let d = a - b;
            n += 1;
            sum += d;
            sq += d * d;
        }
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.2, "variance {var}");
}

#[test]
fn degrade_without_noise_preserves_mean_of_blur_downsample() {
    let cfg = DegradationConfig {
        blur_sigma_range: [0.7, 0.7],
        scale_factor: 4,
        noise_sigma_range: [0.0, 0.0],
        quantization_levels_range: [1 << 24, 1 << 24],
        order_seed_policy: SeedPolicy::PerClip,
    };
    let clip = synth_clip(&spec(Motion::Static, [0.0, 0.0], TextureKind::RandomBlobs, 2, 32), 4).unwrap().0;
    let lr = degrade(&clip, &cfg, 0).unwrap();
    let reference = area_downsample(&gaussian_blur(clip.tensor(), 0.7), 4).unwrap();
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.numel() as f64;
    assert!((mean(lr.tensor()) - mean(&reference)).abs() <= 1e-6);
}

#[test]
fn shuffle_t1_is_identity() {
    let clip = checker_unit(1, 8);
    assert_eq!(shuffle_frames(&clip, 3).tensor(), clip.tensor());
}

#[test]
fn shuffle_static_pseudo_video_is_bit_identical() {
    let f = synth_image(8, 8, 1);
    let clip = repeat_image(&f, 5, ValueRange::Unit).unwrap();
    assert_eq!(shuffle_frames(&clip, 9).tensor(), clip.tensor());
}

#[test]
fn shuffle_t3_never_identity_over_many_seeds() {
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..300 {
        let p = shuffle_permutation(3, seed);
        assert_ne!(p, vec![0, 1, 2]);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        seen.insert(p);
    }
    // all five non-identity permutations of three frames occur
    assert_eq!(seen.len(), 5);
}

#[test]
fn shuffle_batch_permutes_clips_independently() {
    let clips: Vec<VideoClip> = (0..4)
        .map(|i| assemble_images(&(0..4).map(|k| synth_image(8, 8, 10 * i + k)).collect::<Vec<_>>(), ValueRange::Unit).unwrap())
        .collect();
    let batch = ClipBatch::from_clips(&clips).unwrap();
    let out = shuffle_batch(&batch, 1);
    let mut orders = Vec::new();
    for i in 0..4 {
        let original: Vec<Tensor> = (0..4).map(|t| clips[i].frame(t)).collect();
        let shuffled = out.clip(i);
        let mut order = Vec::new();
        for t in 0..4 {
            let f = shuffled.narrow_outer(t, 1);
            let k = original.iter().position(|o| o.data() == f.data()).expect("frame from the same clip");
            order.push(k);
        }
        assert_ne!(order, vec![0, 1, 2, 3]);
        orders.push(order);
    }
    assert!(orders.iter().any(|o| o != &orders[0]));
}

#[test]
fn repeat_and_assemble() {
    let f = synth_image(8, 8, 2);
    let one = repeat_image(&f, 1, ValueRange::Unit).unwrap();
    assert_eq!(one.frames(), 1);
    assert_eq!(one.frame(0), f);
    let many = repeat_image(&f, 25, ValueRange::Unit).unwrap();
    assert!((0..25).all(|t| many.frame(t) == f));
    assert!(matches!(repeat_image(&f, 0, ValueRange::Unit), Err(AvsrError::Config(_))));

    let same = assemble_images(&vec![f.clone(); 5], ValueRange::Unit).unwrap();
    assert_eq!(same.tensor(), repeat_image(&f, 5, ValueRange::Unit).unwrap().tensor());
    let distinct: Vec<Tensor> = (0..25).map(|k| synth_image(8, 8, k)).collect();
    let clip = assemble_images(&distinct, ValueRange::Unit).unwrap();
    for a in 0..25 {
        for b in a + 1..25 {
            assert_ne!(clip.frame(a), clip.frame(b));
        }
    }
    let bad = [f.clone(), synth_image(8, 16, 0)];
    assert_eq!(assemble_images(&bad, ValueRange::Unit).unwrap_err().code(), "E_DIMENSION");
}

#[test]
fn clip_round_trip_within_8bit() {
    let dir = tempfile::tempdir().unwrap();
    let clip = synth_clip(&spec(Motion::Translate, [1.0, 1.0], TextureKind::SinusoidMix, 3, 16), 2).unwrap().0;
    save_clip(&clip, dir.path()).unwrap();
    let back = load_clip(dir.path()).unwrap();
    assert_eq!(back.id(), clip.id());
    assert_eq!(back.tensor().shape(), clip.tensor().shape());
    for (a, b) in back.tensor().data().iter().zip(clip.tensor().data()) {
        assert!((a - b).abs() <= 1.0 / 255.0);
    }
}

#[test]
fn clip_load_endpoints_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = vec![0.0; 3 * 8 * 8];
    for v in data.iter_mut().skip(1).step_by(2) {
        *v = 1.0;
    }
    let clip = VideoClip::new(Tensor::new([1, 3, 8, 8], data.clone()), ValueRange::Unit, "ends").unwrap();
    save_clip(&clip, dir.path()).unwrap();
    assert_eq!(load_clip(dir.path()).unwrap().tensor().data(), &data[..]);
}

#[test]
fn clip_load_detects_missing_frames() {
    let dir = tempfile::tempdir().unwrap();
    save_clip(&checker_unit(3, 8), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("frame_0002.png")).unwrap();
    assert_eq!(load_clip(dir.path()).unwrap_err().code(), "E_FORMAT");
    let empty = tempfile::tempdir().unwrap();
    assert!(load_clip(empty.path()).is_err());
}

#[test]
fn flow_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (_, flow) = synth_clip(&spec(Motion::RotateTexture, [1.0, 0.0], TextureKind::Checker, 3, 16), 0).unwrap();
    let path = dir.path().join("flow.bin");
    save_flow(&flow, &path).unwrap();
    let back = load_flow(&path).unwrap();
    for (a, b) in back.displacements().data().iter().zip(flow.displacements().data()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"AVSRFLW1");
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(load_flow(&path).unwrap_err().code(), "E_FORMAT");
    std::fs::write(&path, b"NOTAFLOW00000000000000").unwrap();
    assert_eq!(load_flow(&path).unwrap_err().code(), "E_FORMAT");
}

#[test]
fn range_conversion_round_trip() {
    let clip = checker_unit(2, 8);
    let signed = clip.to_signed();
    assert_eq!(signed.range(), ValueRange::Signed);
    assert!(signed.tensor().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let back = signed.to_unit();
    for (a, b) in back.tensor().data().iter().zip(clip.tensor().data()) {
        assert!((a - b).abs() < 1e-15);
    }
    let out_of_range = Tensor::new([1, 3, 8, 8], vec![1.5; 192]);
    assert!(VideoClip::new(out_of_range, ValueRange::Unit, "x").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shuffle_preserves_frame_multiset(frames in 1usize..7, seed in any::<u64>()) {
        let imgs: Vec<Tensor> = (0..frames).map(|k| synth_image(8, 8, k as u64)).collect();
        let clip = assemble_images(&imgs, ValueRange::Unit).unwrap();
        let out = shuffle_frames(&clip, seed);
        let key = |c: &VideoClip| {
            let mut v: Vec<Vec<u64>> = (0..c.frames()).map(|t| c.frame(t).data().iter().map(|x| x.to_bits()).collect()).collect();
            v.sort();
            v
        };
        prop_assert_eq!(key(&out), key(&clip));
        if frames >= 2 {
            prop_assert_ne!(out.tensor(), clip.tensor());
        }
    }

    #[test]
    fn degrade_is_pure_in_seed(seed in any::<u64>()) {
        let clip = checker_unit(2, 16);
        let cfg = DegradationConfig::default();
        prop_assert_eq!(degrade(&clip, &cfg, seed).unwrap(), degrade(&clip, &cfg, seed).unwrap());
    }

    #[test]
    fn integer_translation_warp_exact_for_any_content(vx in -2i32..=2, vy in -2i32..=2, seed in 0u64..1000, tex in 0usize..4) {
        let (clip, flow) = synth_clip(&spec(Motion::Translate, [vx as f64, vy as f64], TextureKind::ALL[tex], 3, 16), seed).unwrap();
        for t in 0..2 {
            let warped = warp_bilinear(&clip.frame(t + 1), &flow, t).unwrap();
            let cur = clip.frame(t);
            for y in 0..16 {
                for x in 0..16 {
                    if flow.is_valid(t, x, y) {
                        for c in 0..3 {
                            let i = (c * 16 + y) * 16 + x;
                            prop_assert!((warped.data()[i] - cur.data()[i]).abs() <= 1e-6);
                        }
                    }
                }
            }
        }
    }
}
