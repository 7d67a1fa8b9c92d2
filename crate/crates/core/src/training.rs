//! Two-stage training: distillation without adversaries, then alternating
//! generator and dual-discriminator updates.

use std::io::Write;
use std::path::Path;

use avsr_autograd::{Graph, Tensor};
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, StageConfig};
use crate::data::{sample_image_sets, sample_pairs, sample_videos, Dataset, PairBatch};
use crate::discriminator::{Discriminator, Domain};
use crate::error::{format_err, usage_err, AvsrError, Result};
use crate::losses::{
    build_label_set, disc_loss_vars, gen_loss, AdvLogits, Dists, GenLossValues, LabelSetInputs, LabeledSample,
};
use crate::optim::{clip_global_norm, AdamState};
use crate::student::Student;
use crate::teacher::{build_teacher, reencode_features, Encoder, Teacher};
use crate::video::{ClipBatch, CHANNELS};

const STUDENT: &str = "student";
const ENCODER: &str = "encoder";
const D_PIXEL: &str = "d_pixel";
const D_FEATURE: &str = "d_feature";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: u8,
    pub iteration: u64,
    pub lr_generator: f64,
    pub gen: GenLossValues,
    pub disc: Option<f64>,
}

#[derive(Clone)]
pub struct Discriminators {
    pub pixel: Discriminator,
    pub feature: Discriminator,
    pub opt_pixel: AdamState,
    pub opt_feature: AdamState,
}

pub struct Targets {
    pub x_teacher: ClipBatch,
    pub f_teacher: ClipBatch,
}

/// Result of [`Trainer::generator_pass`].
pub struct GeneratorPass {
    pub values: GenLossValues,
    pub grads: IndexMap<String, Tensor>,
    pub x_student: ClipBatch,
    pub f_student: ClipBatch,
}

/// Everything mutable in a run, plus the frozen measurement networks.
pub struct Trainer {
    pub config: ExperimentConfig,
    pub stage: u8,
    pub iteration: u64,
    pub student: Student,
    pub encoder: Encoder,
    pub dists: Dists,
    pub teacher: std::sync::Arc<dyn Teacher>,
    pub opt_student: AdamState,
    pub discs: Option<Discriminators>,
    pub rng: ChaCha8Rng,
    pub history: Vec<StepLog>,
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(AvsrError::NonFinite(format!("{what} is {v}")))
    }
}

impl Trainer {
    /// Fresh stage-1 run.
    pub fn new_stage1(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seeds = config.seeds();
        let student = Student::build(&config.student, seeds.student)?;
        Ok(Self {
            encoder: Encoder::for_student(&student, seeds.encoder),
            dists: Dists::new(seeds.dists),
            teacher: build_teacher(&config.teacher)?,
            student,
            opt_student: AdamState::new(),
            discs: None,
            rng: ChaCha8Rng::seed_from_u64(config.stage_seed(1)),
            history: Vec::new(),
            stage: 1,
            iteration: 0,
            config: config.clone(),
        })
    }

    /// Stage-2 run initialized from a finished stage-1 student. The feature
    /// discriminator backbone is a frozen copy of that student's body.
    pub fn new_stage2(config: &ExperimentConfig, stage1: &Student) -> Result<Self> {
        let mut t = Self::new_stage1(config)?;
        if stage1.config() != &config.student {
            return Err(usage_err!("stage-1 student was built with a different student configuration"));
        }
        t.student = stage1.clone();
        let seeds = config.seeds();
        let pixel = Discriminator::build(&config.d_pixel, CHANNELS, seeds.d_pixel, None)?;
        let feature = Discriminator::build(&config.d_feature, t.student.tap_channels(), seeds.d_feature, Some(stage1))?;
        t.discs = Some(Discriminators {
            pixel,
            feature,
            opt_pixel: AdamState::new(),
            opt_feature: AdamState::new(),
        });
        t.stage = 2;
        t.rng = ChaCha8Rng::seed_from_u64(config.stage_seed(2));
        Ok(t)
    }

    pub fn stage_config(&self) -> &StageConfig {
        self.config.stage(self.stage)
    }

    pub fn lr_generator(&self) -> f64 {
        let s = self.stage_config();
        StageConfig::lr_at(s.lr_generator, self.iteration, s.iterations)
    }

    pub fn lr_discriminator(&self) -> f64 {
        let s = self.stage_config();
        StageConfig::lr_at(s.lr_discriminator, self.iteration, s.iterations)
    }

    /// Hashes of every frozen array: encoder, perceptual pyramid and both
    /// discriminator backbones.
    pub fn frozen_hashes(&self) -> Vec<(String, String)> {
        let mut out = vec![
            (ENCODER.to_string(), self.encoder.params.frozen_hash()),
            ("dists".to_string(), self.dists.params.frozen_hash()),
        ];
        if let Some(d) = &self.discs {
            out.push((D_PIXEL.into(), d.pixel.params.frozen_hash()));
            out.push((D_FEATURE.into(), d.feature.params.frozen_hash()));
        }
        out
    }

    fn sample(&mut self, data: &Dataset) -> Result<PairBatch> {
        let s = self.stage_config().clone();
        sample_pairs(data, &mut self.rng, s.batch_clips, s.frames_per_clip, &self.config.degradation)
    }

    /// One optimization step of the current stage.
    pub fn step(&mut self, data: &Dataset) -> Result<StepLog> {
        let batch = self.sample(data)?;
        let log = match self.stage {
            1 => self.stage1_step(&batch)?,
            _ => self.stage2_step(&batch, data)?,
        };
        self.iteration += 1;
        self.history.push(log.clone());
        Ok(log)
    }

    /// Distillation loss of the current student on a batch, without updating.
    pub fn distill_loss(&self, batch: &PairBatch, temporal: bool) -> Result<GenLossValues> {
        let x_t = self.teacher.forward(&batch.hr, &batch.lr)?;
        let f_t = reencode_features(&x_t, &self.encoder, &self.student)?;
        let g = Graph::new();
        let ps = self.student.params.bind(&g, false);
        let pd = self.dists.params.bind(&g, false);
        let out = self
            .student
            .forward_vars(&ps, g.constant(batch.lr.tensor().clone()), batch.lr.frames(), temporal);
        let terms = gen_loss(
            (&self.dists, &pd),
            out.x,
            g.constant(x_t.into_tensor()),
            out.f,
            g.constant(f_t.into_tensor()),
            None,
            None,
            &self.config.losses,
        )?;
        Ok(terms.values())
    }

    /// Generator objective and its student gradients on a batch. In stage 2
    /// the adversarial terms come from the current discriminators, whose
    /// parameters are held fixed.
    pub fn generator_pass(&self, batch: &PairBatch) -> Result<GeneratorPass> {
        let targets = self.targets(batch)?;
        self.generator_pass_with(batch, &targets)
    }

    /// Teacher pixels and their re-encoded feature tap. Both are constants for
    /// the generator: the student middle block used here carries no gradient.
    pub fn targets(&self, batch: &PairBatch) -> Result<Targets> {
        let x_teacher = self.teacher.forward(&batch.hr, &batch.lr)?;
        let f_teacher = reencode_features(&x_teacher, &self.encoder, &self.student)?;
        Ok(Targets { x_teacher, f_teacher })
    }

    pub fn generator_pass_with(&self, batch: &PairBatch, targets: &Targets) -> Result<GeneratorPass> {
        let frames = batch.lr.frames();
        let label_cfg = &self.config.label_set;
        let discs = self.discs.as_ref().filter(|_| self.stage == 2);
        let g = Graph::new();
        let ps = self.student.params.bind(&g, true);
        let pd = self.dists.params.bind(&g, false);
        let out = self.student.forward_vars(&ps, g.constant(batch.lr.tensor().clone()), frames, true);
        let adv_pixel = match discs {
            Some(d) if label_cfg.pixel_domain => {
                let p = d.pixel.params.bind(&g, false);
                let h = d.pixel.forward_vars(&p, out.x, frames);
                Some(AdvLogits::from_heads(&d.pixel, &h))
            }
            _ => None,
        };
        let adv_feature = match discs {
            Some(d) if label_cfg.feature_domain => {
                let p = d.feature.params.bind(&g, false);
                let h = d.feature.forward_vars(&p, out.f, frames);
                Some(AdvLogits::from_heads(&d.feature, &h))
            }
            _ => None,
        };
        let terms = gen_loss(
            (&self.dists, &pd),
            out.x,
            g.constant(targets.x_teacher.tensor().clone()),
            out.f,
            g.constant(targets.f_teacher.tensor().clone()),
            adv_pixel.as_ref(),
            adv_feature.as_ref(),
            &self.config.losses,
        )?;
        let values = terms.values();
        check_finite("generator loss", values.total)?;
        let grads = g.backward(terms.total);
        Ok(GeneratorPass {
            values,
            grads: ps.gradients(&grads),
            x_student: ClipBatch::new(Tensor::clone(&out.x.value()), frames)?,
            f_student: ClipBatch::new(Tensor::clone(&out.f.value()), frames)?,
        })
    }

    fn stage1_step(&mut self, batch: &PairBatch) -> Result<StepLog> {
        let lr = self.lr_generator();
        let mut pass = self.generator_pass(batch)?;
        self.apply_student(&mut pass.grads, lr)?;
        Ok(StepLog {
            stage: 1,
            iteration: self.iteration,
            lr_generator: lr,
            gen: pass.values,
            disc: None,
        })
    }

    fn apply_student(&mut self, grads: &mut IndexMap<String, Tensor>, lr: f64) -> Result<()> {
        if let Some(c) = self.stage_config().grad_clip {
            check_finite("generator gradient norm", clip_global_norm(grads, c))?;
        }
        self.opt_student.step(&mut self.student.params, grads, lr);
        Ok(())
    }

    fn stage2_step(&mut self, batch: &PairBatch, data: &Dataset) -> Result<StepLog> {
        let lr_g = self.lr_generator();
        let lr_d = self.lr_discriminator();
        let mut pass = self.generator_pass(batch)?;
        self.apply_student(&mut pass.grads, lr_g)?;
        let d_loss = self.curated_disc_step(&pass.x_student, &pass.f_student, data, lr_d)?;
        Ok(StepLog {
            stage: 2,
            iteration: self.iteration,
            lr_generator: lr_g,
            gen: pass.values,
            disc: Some(d_loss),
        })
    }

    /// Discriminator update against the frozen student. The generator half of
    /// a stage-2 iteration is skipped and the iteration counter is untouched.
    pub fn disc_only_step(&mut self, data: &Dataset) -> Result<f64> {
        let batch = self.sample(data)?;
        let out = self.student.forward(&batch.lr)?;
        let lr = self.lr_discriminator();
        self.curated_disc_step(&out.x_student, &out.f_student, data, lr)
    }

    /// Builds the curated label set around detached student payloads and
    /// updates both discriminators on it.
    fn curated_disc_step(&mut self, x_s: &ClipBatch, f_s: &ClipBatch, data: &Dataset, lr: f64) -> Result<f64> {
        let (clips, frames) = (x_s.clips(), x_s.frames());
        let label_cfg = self.config.label_set.clone();
        let video = sample_videos(data, &mut self.rng, clips, frames)?;
        let (statics, seqs) = sample_image_sets(&mut self.rng, clips, frames, x_s.height(), x_s.width());
        let shuffle_seed: u64 = rand::Rng::gen(&mut self.rng);
        let samples = build_label_set(
            &LabelSetInputs {
                x_student: x_s,
                f_student: f_s,
                video: &video,
                image_frames: &statics,
                image_sequences: &seqs,
            },
            shuffle_seed,
            &self.encoder,
            &self.student,
            &label_cfg,
        )?;
        self.disc_step(&samples, lr)
    }

    /// One update of both discriminators on a labeled set; returns the loss.
    pub fn disc_step(&mut self, samples: &[LabeledSample], lr: f64) -> Result<f64> {
        let reduction = self.config.disc_reduction;
        let clip = self.stage_config().grad_clip;
        let discs = self.discs.as_mut().ok_or_else(|| usage_err!("stage 2 needs discriminators"))?;
        let (loss, mut gp, mut gf) = {
            let g = Graph::new();
            let pp = discs.pixel.params.bind(&g, true);
            let pf = discs.feature.params.bind(&g, true);
            let loss = disc_loss_vars(&g, samples, [(&discs.pixel, &pp), (&discs.feature, &pf)], reduction)?;
            let value = loss.item();
            check_finite("discriminator loss", value)?;
            if !loss.requires_grad() {
                return Ok(value);
            }
            let grads = g.backward(loss);
            (value, pp.gradients(&grads), pf.gradients(&grads))
        };
        if let Some(c) = clip {
            let mut all: IndexMap<String, Tensor> = IndexMap::new();
            for (k, v) in gp.drain(..) {
                all.insert(format!("p/{k}"), v);
            }
            for (k, v) in gf.drain(..) {
                all.insert(format!("f/{k}"), v);
            }
            check_finite("discriminator gradient norm", clip_global_norm(&mut all, c))?;
            for (k, v) in all {
                match k.split_once('/') {
                    Some(("p", n)) => gp.insert(n.to_string(), v),
                    Some((_, n)) => gf.insert(n.to_string(), v),
                    None => unreachable!(),
                };
            }
        }
        discs.opt_pixel.step(&mut discs.pixel.params, &gp, lr);
        discs.opt_feature.step(&mut discs.feature.params, &gf, lr);
        Ok(loss)
    }

    /// Runs the remaining iterations of the configured schedule, appending a
    /// JSON line per logged step to `log` and checkpointing periodically.
    pub fn run(&mut self, data: &Dataset, out_dir: Option<&Path>, mut log: Option<&mut dyn Write>) -> Result<()> {
        let before = self.frozen_hashes();
        let s = self.stage_config().clone();
        while self.iteration < s.iterations {
            let entry = self.step(data)?;
            let logged = entry.iteration % s.log_every.max(1) == 0 || self.iteration == s.iterations;
            if let (Some(w), true) = (log.as_deref_mut(), logged) {
                writeln!(w, "{}", serde_json::to_string(&entry).expect("log serializes"))
                    .map_err(|e| AvsrError::io("<log>", e))?;
            }
            if let Some(dir) = out_dir {
                if s.checkpoint_every > 0 && self.iteration % s.checkpoint_every == 0 && self.iteration < s.iterations {
                    self.checkpoint()
                        .save(&dir.join(format!("stage{}_iter{:06}.ckpt", self.stage, self.iteration)))?;
                }
            }
        }
        assert_eq!(self.frozen_hashes(), before, "a frozen parameter group changed during training");
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join(format!("stage{}.ckpt", self.stage)))?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "stage": self.stage,
            "iteration": self.iteration,
            "config": self.config,
            "config_toml": self.config.to_toml(),
            "frozen_hashes": self.frozen_hashes().into_iter().collect::<IndexMap<_, _>>(),
        });
        let mut c = Checkpoint::new(meta);
        c.put_store(STUDENT, &self.student.params);
        c.put_store(ENCODER, &self.encoder.params);
        c.put_adam("adam/student", &self.opt_student);
        if let Some(d) = &self.discs {
            c.put_store(D_PIXEL, &d.pixel.params);
            c.put_store(D_FEATURE, &d.feature.params);
            c.put_adam("adam/d_pixel", &d.opt_pixel);
            c.put_adam("adam/d_feature", &d.opt_feature);
        }
        c.put_rng("rng", &self.rng);
        c
    }

    /// Restores a run saved by [`Trainer::checkpoint`]. The experiment
    /// configuration is taken from the checkpoint itself.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = checkpoint_config(ckpt)?;
        let stage = ckpt.metadata["stage"]
            .as_u64()
            .ok_or_else(|| format_err!("checkpoint metadata lacks 'stage'"))? as u8;
        let iteration = ckpt.metadata["iteration"]
            .as_u64()
            .ok_or_else(|| format_err!("checkpoint metadata lacks 'iteration'"))?;
        let mut t = Self::new_stage1(&config)?;
        ckpt.restore_into(STUDENT, &mut t.student.params)?;
        ckpt.restore_into(ENCODER, &mut t.encoder.params)?;
        t.opt_student = ckpt.adam("adam/student")?;
        if stage == 2 {
            if !ckpt.has_prefix(D_PIXEL) || !ckpt.has_prefix(D_FEATURE) {
                return Err(format_err!("stage-2 checkpoint lacks discriminator arrays"));
            }
            let mut pixel = Discriminator::build(&config.d_pixel, CHANNELS, config.seeds().d_pixel, None)?;
            let mut feature =
                Discriminator::build(&config.d_feature, t.student.tap_channels(), config.seeds().d_feature, Some(&t.student))?;
            ckpt.restore_into(D_PIXEL, &mut pixel.params)?;
            ckpt.restore_into(D_FEATURE, &mut feature.params)?;
            t.discs = Some(Discriminators {
                pixel,
                feature,
                opt_pixel: ckpt.adam("adam/d_pixel")?,
                opt_feature: ckpt.adam("adam/d_feature")?,
            });
        }
        t.stage = stage;
        t.iteration = iteration;
        t.rng = ckpt.rng("rng")?;
        Ok(t)
    }

    /// Scores a batch with the discriminator of `domain`.
    pub fn discriminator(&self, domain: Domain) -> Option<&Discriminator> {
        self.discs.as_ref().map(|d| match domain {
            Domain::Pixel => &d.pixel,
            Domain::Feature => &d.feature,
        })
    }
}

/// The experiment configuration echoed into a checkpoint.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<ExperimentConfig> {
    let v = ckpt
        .metadata
        .get("config")
        .ok_or_else(|| format_err!("checkpoint metadata lacks the config echo"))?;
    serde_json::from_value(v.clone()).map_err(|e| format_err!("checkpoint config echo: {e}"))
}

/// Student weights of any checkpoint, rebuilt with its echoed configuration.
pub fn student_from_checkpoint(ckpt: &Checkpoint) -> Result<Student> {
    let config = checkpoint_config(ckpt)?;
    let mut s = Student::build(&config.student, config.seeds().student)?;
    ckpt.restore_into(STUDENT, &mut s.params)?;
    Ok(s)
}
