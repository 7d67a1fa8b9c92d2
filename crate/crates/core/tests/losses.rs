use std::f64::consts::LN_2;

use avsr_autograd::{Graph, Tensor};
use avsr_core::discriminator::{Discriminator, DiscriminatorConfig, Domain};
use avsr_core::losses::{
    build_label_set, disc_loss, disc_loss_vars, gen_loss, l1, l1_value, sample_term, softplus, AdvLogits, Dists,
    LabelSetConfig, LabelSetInputs, LabeledSample, LossWeights, Reduction, SourceTag,
};
use avsr_core::student::{Student, StudentConfig};
use avsr_core::teacher::Encoder;
use avsr_core::video::{gaussian_blur, synth_clip, synth_image, ClipBatch, Motion, ProceduralSpec, TextureKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn checker(frames: usize, size: usize) -> Tensor {
    let spec = ProceduralSpec {
        motion: Motion::Static,
        velocity: [0.0, 0.0],
        texture: TextureKind::Checker,
        frames,
        height: size,
        width: size,
    };
    synth_clip(&spec, 0).unwrap().0.to_signed().into_tensor()
}

#[test]
fn softplus_values() {
    assert!((softplus(0.0) - LN_2).abs() <= 1e-12);
    assert!((softplus(100.0) - 100.0).abs() < 1e-12);
    let tiny = softplus(-100.0);
    assert!(tiny >= 0.0 && (tiny - (-100.0f64).exp()).abs() < 1e-50);
    assert!(softplus(1000.0).is_finite());
}

#[test]
fn l1_examples() {
    let x = random(&[2, 3, 4, 4], 0, 1.0);
    assert_eq!(l1_value(&x, &x).unwrap(), 0.0);
    assert_eq!(l1_value(&Tensor::full([2, 5], 1.0), &Tensor::zeros([2, 5])).unwrap(), 1.0);
    let y = random(&[2, 3, 4, 4], 1, 1.0);
    let oracle: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.numel() as f64;
    let g = Graph::new();
    let v = l1(g.constant(x.clone()), g.constant(y.clone())).unwrap().item();
    assert!((v - oracle).abs() <= 1e-9);
    assert_eq!(l1_value(&x, &Tensor::zeros([3])).unwrap_err().code(), "E_DIMENSION");
}

#[test]
fn dists_identity_symmetry_and_ordering() {
    let d = Dists::new(3);
    let x = checker(2, 16);
    assert!(d.value(&x, &x).unwrap().abs() <= 1e-7);
    let y = random(&[2, 3, 16, 16], 4, 1.0);
    assert!((d.value(&x, &y).unwrap() - d.value(&y, &x).unwrap()).abs() <= 1e-7);

    let z = random(&[2, 3, 16, 16], 5, 1.0);
    let neg = z.map(|v| -v);
    let noisy = z.zip_map(&random(&[2, 3, 16, 16], 6, 1e-3), |a, b| a + b);
    assert!(d.value(&z, &neg).unwrap() > d.value(&z, &noisy).unwrap());
    assert_eq!(d.value(&x, &Tensor::zeros([2, 3, 8, 8])).unwrap_err().code(), "E_DIMENSION");
}

#[test]
fn dists_monotone_under_blur() {
    let d = Dists::new(3);
    let x = checker(2, 32);
    let values: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&s| d.value(&x, &gaussian_blur(&x, s)).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]), "{values:?}");
}

fn zero_logits<'g>(g: &'g Graph, clips: usize, heads: usize) -> AdvLogits<'g> {
    AdvLogits {
        heads: (0..heads).map(|_| g.constant(Tensor::zeros([clips]))).collect(),
    }
}

#[test]
fn gen_loss_identity_case() {
    let dists = Dists::new(0);
    let g = Graph::new();
    let p = dists.params.bind(&g, false);
    let x = g.constant(random(&[3, 3, 16, 16], 1, 1.0));
    let f = g.constant(random(&[3, 8, 8, 8], 2, 1.0));
    let (ap, af) = (zero_logits(&g, 1, 2), zero_logits(&g, 1, 2));
    let t = gen_loss((&dists, &p), x, x, f, f, Some(&ap), Some(&af), &LossWeights::default()).unwrap();
    assert!((t.total.item() - 1.1 * LN_2).abs() <= 1e-9);

    let w0 = LossWeights {
        lambda_adv: 0.0,
        ..Default::default()
    };
    let y = g.constant(random(&[3, 3, 16, 16], 3, 1.0));
    let with = gen_loss((&dists, &p), x, y, f, f, Some(&ap), Some(&af), &w0).unwrap().values();
    let without = gen_loss((&dists, &p), x, y, f, f, None, None, &w0).unwrap().values();
    assert_eq!(with.total, without.total);
    assert!((without.total - 0.1 * (without.l1_pixel + without.dists) - without.l1_feature).abs() <= 1e-12);
}

#[test]
fn gen_loss_term_bookkeeping_and_gradient() {
    let dists = Dists::new(1);
    let xs = random(&[2, 3, 8, 8], 1, 1.0);
    let xt = random(&[2, 3, 8, 8], 2, 1.0);
    let fs = random(&[2, 4, 4, 4], 3, 1.0);
    let ft = random(&[2, 4, 4, 4], 4, 1.0);
    let logits = Tensor::new([1], vec![0.3]);
    let w = LossWeights::default();
    let eval = |xs: &Tensor| {
        let g = Graph::new();
        let p = dists.params.bind(&g, false);
        let x = g.leaf(xs.clone(), true);
        let adv = AdvLogits {
            heads: vec![g.constant(logits.clone()), g.constant(logits.map(|v| -v))],
        };
        let t = gen_loss((&dists, &p), x, g.constant(xt.clone()), g.constant(fs.clone()), g.constant(ft.clone()), Some(&adv), Some(&adv), &w).unwrap();
        let v = t.values();
        let grad = g.backward(t.total).get(x).unwrap().clone();
        (v, grad)
    };
    let (v, grad) = eval(&xs);
    assert!((v.l_pixel - (v.l1_pixel + v.dists + v.adv_pixel)).abs() <= 1e-9);
    assert!((v.l_feature - (v.l1_feature + v.adv_feature)).abs() <= 1e-9);
    assert!((v.total - (0.1 * v.l_pixel + v.l_feature)).abs() <= 1e-9);
    let adv = (softplus(-0.3) + softplus(0.3)) / 2.0;
    assert!((v.adv_pixel - adv).abs() <= 1e-12);
    for term in [v.l1_pixel, v.dists, v.adv_pixel, v.l1_feature, v.adv_feature] {
        assert!(term >= 0.0 && term.is_finite());
    }
    for idx in [0, 17, 150, 383] {
        let h = 1e-4;
        let mut a = xs.clone();
        a.data_mut()[idx] += h;
        let mut b = xs.clone();
        b.data_mut()[idx] -= h;
        let fd = (eval(&a).0.total - eval(&b).0.total) / (2.0 * h);
        let an = grad.data()[idx];
        assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-4), "idx {idx}: fd {fd} analytic {an}");
    }
}

fn flat_heads(split: [usize; 2]) -> Discriminator {
    let cfg = DiscriminatorConfig {
        tail_channels: split[0] + split[1],
        head_split: split,
        ..DiscriminatorConfig::pixel()
    };
    let mut d = Discriminator::build(&cfg, 3, 1, None).unwrap();
    for n in ["head.detail.w", "head.detail.b", "head.consistency.w", "head.consistency.b"] {
        if let Some(t) = d.params.get_mut(n) {
            t.data_mut().fill(0.0);
        }
    }
    d
}

fn feature_disc() -> (Student, Discriminator) {
    let s = Student::build(&StudentConfig::default(), 0).unwrap();
    let d = Discriminator::build(&DiscriminatorConfig::feature(), s.tap_channels(), 2, Some(&s)).unwrap();
    (s, d)
}

fn pixel_sample(y_d: i8, y_c: i8, seed: u64) -> LabeledSample {
    let payload = ClipBatch::new(random(&[3, 3, 16, 16], seed, 1.0), 3).unwrap();
    LabeledSample::new(payload, Domain::Pixel, y_d, y_c, SourceTag::Video).unwrap()
}

#[test]
fn disc_loss_constants() {
    let (_, f) = feature_disc();
    let p = flat_heads([192, 64]);
    assert_eq!(disc_loss(&[], &p, &f, Reduction::Mean).unwrap(), 0.0);
    let one = [pixel_sample(-1, -1, 0)];
    assert!((disc_loss(&one, &p, &f, Reduction::Sum).unwrap() - 2.0 * LN_2).abs() <= 1e-12);
    assert!((disc_loss(&one, &p, &f, Reduction::Mean).unwrap() - 2.0 * LN_2).abs() <= 1e-12);
    let three = [pixel_sample(-1, -1, 0), pixel_sample(0, 1, 1), pixel_sample(1, -1, 2)];
    let sum = disc_loss(&three, &p, &f, Reduction::Sum).unwrap();
    let mean = disc_loss(&three, &p, &f, Reduction::Mean).unwrap();
    assert!((sum - 6.0 * LN_2).abs() <= 1e-12);
    assert!((mean - 2.0 * LN_2).abs() <= 1e-12);
}

#[test]
fn invalid_labels_are_usage_errors() {
    let payload = ClipBatch::new(Tensor::zeros([1, 3, 8, 8]), 1).unwrap();
    let err = LabeledSample::new(payload, Domain::Pixel, 2, 0, SourceTag::Video).unwrap_err();
    assert_eq!(err.code(), "E_USAGE");
}

#[test]
fn disc_loss_matches_scalar_reference() {
    let (_, f) = feature_disc();
    let p = flat_heads([192, 64]);
    let mut p = p;
    p.params.get_mut("head.detail.b").unwrap().data_mut()[0] = 0.4;
    p.params.get_mut("head.consistency.b").unwrap().data_mut()[0] = -0.7;
    let samples = [pixel_sample(-1, 1, 0), pixel_sample(0, -1, 1), pixel_sample(1, 0, 2)];
    let got = disc_loss(&samples, &p, &f, Reduction::Sum).unwrap();
    let want: f64 = samples.iter().map(|s| sample_term(s.y_d, s.y_c, 0.4, -0.7)).sum();
    assert!((got - want).abs() <= 1e-12);
}

#[test]
fn unlabeled_detail_gives_exactly_zero_head_gradient() {
    let (_, f) = feature_disc();
    let p = Discriminator::build(&DiscriminatorConfig::pixel(), 3, 9, None).unwrap();
    let samples = [pixel_sample(0, 1, 3), pixel_sample(0, -1, 4)];
    let g = Graph::new();
    let pp = p.params.bind(&g, true);
    let pf = f.params.bind(&g, true);
    let loss = disc_loss_vars(&g, &samples, [(&p, &pp), (&f, &pf)], Reduction::Mean).unwrap();
    let grads = pp.gradients(&g.backward(loss));
    for n in ["head.detail.w", "head.detail.b"] {
        assert!(grads[n].data().iter().all(|&v| v == 0.0), "{n}");
    }
    assert!(grads["head.consistency.w"].data().iter().any(|&v| v != 0.0));
}

#[test]
fn loss_decreases_as_logits_move_toward_labels() {
    let (_, f) = feature_disc();
    for (y_d, y_c) in [(1, 1), (-1, -1), (1, -1), (-1, 1)] {
        let samples = [pixel_sample(y_d, y_c, 5)];
        let mut d = flat_heads([192, 64]);
        let base = disc_loss(&samples, &d, &f, Reduction::Mean).unwrap();
        d.params.get_mut("head.detail.b").unwrap().data_mut()[0] = 0.1 * y_d as f64;
        let moved_d = disc_loss(&samples, &d, &f, Reduction::Mean).unwrap();
        d.params.get_mut("head.consistency.b").unwrap().data_mut()[0] = 0.1 * y_c as f64;
        let moved_both = disc_loss(&samples, &d, &f, Reduction::Mean).unwrap();
        assert!(moved_d < base && moved_both < moved_d);
    }
}

struct Fixture {
    student: Student,
    encoder: Encoder,
    x_s: ClipBatch,
    f_s: ClipBatch,
    video: ClipBatch,
    statics: Vec<Tensor>,
    seqs: Vec<Vec<Tensor>>,
}

fn fixture() -> Fixture {
    let student = Student::build(&StudentConfig::default(), 0).unwrap();
    let encoder = Encoder::for_student(&student, 1);
    let lr = ClipBatch::new(random(&[3, 3, 4, 4], 1, 1.0), 3).unwrap();
    let out = student.forward(&lr).unwrap();
    let video = ClipBatch::new(random(&[3, 3, 16, 16], 2, 1.0), 3).unwrap();
    let sig = |t: Tensor| t.map(|v| 2.0 * v - 1.0);
    Fixture {
        statics: vec![sig(synth_image(16, 16, 3))],
        seqs: vec![(0..3).map(|k| sig(synth_image(16, 16, 10 + k))).collect()],
        student,
        encoder,
        x_s: out.x_student,
        f_s: out.f_student,
        video,
    }
}

fn label_set(fx: &Fixture, cfg: &LabelSetConfig) -> Vec<LabeledSample> {
    let inputs = LabelSetInputs {
        x_student: &fx.x_s,
        f_student: &fx.f_s,
        video: &fx.video,
        image_frames: &fx.statics,
        image_sequences: &fx.seqs,
    };
    build_label_set(&inputs, 5, &fx.encoder, &fx.student, cfg).unwrap()
}

#[test]
fn label_set_has_the_ten_curated_samples() {
    let fx = fixture();
    let set = label_set(&fx, &LabelSetConfig::default());
    assert_eq!(set.len(), 10);
    let mut labels: Vec<(i8, i8)> = set.iter().map(|s| (s.y_d, s.y_c)).collect();
    labels.sort();
    let mut want = vec![(-1, -1), (0, 1), (0, -1), (1, 1), (1, -1)];
    want.extend(want.clone());
    want.sort();
    assert_eq!(labels, want);
    for domain in [Domain::Pixel, Domain::Feature] {
        let tags: Vec<SourceTag> = set.iter().filter(|s| s.domain == domain).map(|s| s.tag).collect();
        assert_eq!(tags.len(), 5);
    }
    let student_f = set.iter().find(|s| s.domain == Domain::Feature && s.tag == SourceTag::Student).unwrap();
    assert_eq!(student_f.payload.tensor(), fx.f_s.tensor());
    let static_px = set.iter().find(|s| s.domain == Domain::Pixel && s.tag == SourceTag::ImageStatic).unwrap();
    let shuffled = avsr_core::video::shuffle_batch(&static_px.payload, 77);
    assert_eq!(shuffled.tensor(), static_px.payload.tensor());
    let feature_shapes: Vec<&[usize]> = set
        .iter()
        .filter(|s| s.domain == Domain::Feature)
        .map(|s| s.payload.tensor().shape())
        .collect();
    assert!(feature_shapes.iter().all(|s| *s == fx.f_s.tensor().shape()));
}

#[test]
fn label_set_ablation_switches() {
    let fx = fixture();
    let no_shuffle = label_set(
        &fx,
        &LabelSetConfig {
            include_shuffled: false,
            ..Default::default()
        },
    );
    assert_eq!(no_shuffle.len(), 8);
    assert!(no_shuffle.iter().all(|s| s.tag != SourceTag::VideoShuffled));
    let real = label_set(
        &fx,
        &LabelSetConfig {
            video_detail_label: 1,
            ..Default::default()
        },
    );
    assert!(real
        .iter()
        .filter(|s| matches!(s.tag, SourceTag::Video | SourceTag::VideoShuffled))
        .all(|s| s.y_d == 1));
    let feature_only = label_set(
        &fx,
        &LabelSetConfig {
            pixel_domain: false,
            ..Default::default()
        },
    );
    assert_eq!(feature_only.len(), 5);
    assert!(feature_only.iter().all(|s| s.domain == Domain::Feature));
}

#[test]
fn label_set_rejects_missing_payloads() {
    let fx = fixture();
    let inputs = LabelSetInputs {
        x_student: &fx.x_s,
        f_student: &fx.f_s,
        video: &fx.video,
        image_frames: &[],
        image_sequences: &fx.seqs,
    };
    let err = build_label_set(&inputs, 0, &fx.encoder, &fx.student, &LabelSetConfig::default()).unwrap_err();
    assert_eq!(err.code(), "E_USAGE");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softplus_is_positive_and_satisfies_reflection(x in -700.0f64..700.0) {
        let s = softplus(x);
        prop_assert!(s >= 0.0 && s.is_finite());
        prop_assert!((s - softplus(-x) - x).abs() <= 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn sample_terms_are_nonnegative(yd in -1i8..=1, yc in -1i8..=1, d in -50.0f64..50.0, c in -50.0f64..50.0) {
        let v = sample_term(yd, yc, d, c);
        prop_assert!(v >= 0.0 && v.is_finite());
    }
}
