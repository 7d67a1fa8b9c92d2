//! Experiment configuration (TOML) and named ablation profiles.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{config_err, AvsrError, Result};
use crate::losses::{LabelSetConfig, LossWeights, Reduction};
use crate::registry::Registry;
use crate::student::StudentConfig;
use crate::teacher::TeacherConfig;
use crate::video::DegradationConfig;

pub const SEED_ENV: &str = "AVSR_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub iterations: u64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub batch_clips: usize,
    pub frames_per_clip: usize,
    /// Training RNG seed; derived from the experiment seed when absent.
    pub seed: Option<u64>,
    /// Global-norm gradient clip for both players; `None` disables it.
    pub grad_clip: Option<f64>,
    pub log_every: u64,
    /// Periodic checkpoint interval; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl StageConfig {
    pub fn stage1() -> Self {
        Self {
            iterations: 500,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            batch_clips: 4,
            frames_per_clip: 5,
            seed: None,
            grad_clip: Some(1.0),
            log_every: 10,
            checkpoint_every: 0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            iterations: 300,
            lr_generator: 1e-5,
            ..Self::stage1()
        }
    }

    pub fn validate(&self, stage: u8) -> Result<()> {
        if self.iterations < 1 {
            return Err(config_err!("stage{stage}.iterations must be ≥ 1"));
        }
        if !(self.lr_generator > 0.0) || !(self.lr_discriminator > 0.0) {
            return Err(config_err!("stage{stage} learning rates must be > 0"));
        }
        if self.batch_clips < 1 || self.frames_per_clip < 1 {
            return Err(config_err!("stage{stage} needs at least one clip of one frame per batch"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(config_err!("stage{stage}.grad_clip must be > 0"));
            }
        }
        Ok(())
    }

    /// Learning rate at 0-based iteration `i`: halved once from ⌈N/2⌉ on.
    pub fn lr_at(base: f64, i: u64, iterations: u64) -> f64 {
        if i >= iterations.div_ceil(2) {
            base * 0.5
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub stage1_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub profile: Option<String>,
    pub seed: u64,
    pub student: StudentConfig,
    pub d_pixel: DiscriminatorConfig,
    pub d_feature: DiscriminatorConfig,
    pub stage1: StageConfig,
    #[serde(deserialize_with = "stage2_over_defaults")]
    pub stage2: StageConfig,
    pub degradation: DegradationConfig,
    pub losses: LossWeights,
    pub disc_reduction: Reduction,
    pub teacher: TeacherConfig,
    pub label_set: LabelSetConfig,
    pub data: DataConfig,
}

/// A partial `[stage2]` table fills in stage-2 defaults, not stage-1 ones.
fn stage2_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    use serde::de::Error;
    let given = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(StageConfig::stage2()).expect("stage config serializes");
    match (&mut base, given) {
        (serde_json::Value::Object(b), serde_json::Value::Object(g)) => b.extend(g),
        (_, other) => return Err(D::Error::custom(format!("stage2 must be a table, got {other}"))),
    }
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            profile: None,
            seed: 0,
            student: StudentConfig::default(),
            d_pixel: DiscriminatorConfig::pixel(),
            d_feature: DiscriminatorConfig::feature(),
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            degradation: DegradationConfig::default(),
            losses: LossWeights::default(),
            disc_reduction: Reduction::Mean,
            teacher: TeacherConfig::default(),
            label_set: LabelSetConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Per-component seeds derived from the experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub student: u64,
    pub encoder: u64,
    pub dists: u64,
    pub d_pixel: u64,
    pub d_feature: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| config_err!("{}", e.to_string().trim()))?;
        if let Some(p) = cfg.profile.clone() {
            apply_profile(&mut cfg, &p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AvsrError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            AvsrError::Config(m) => config_err!("{}: {m}", path.display()),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the `AVSR_SEED` override when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| config_err!("{SEED_ENV}='{v}' is not an unsigned integer"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        self.d_pixel.validate()?;
        self.d_feature.validate()?;
        self.stage1.validate(1)?;
        self.stage2.validate(2)?;
        self.degradation.validate()?;
        if self.degradation.scale_factor != self.student.scale_factor {
            return Err(config_err!(
                "degradation.scale_factor {} differs from student.scale_factor {}",
                self.degradation.scale_factor,
                self.student.scale_factor
            ));
        }
        self.losses.validate()?;
        self.label_set.validate()?;
        if self.teacher.sigma < 0.0 {
            return Err(config_err!("teacher.sigma must be ≥ 0"));
        }
        crate::teacher::teachers().get(&self.teacher.kind)?;
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            student: s,
            encoder: s.wrapping_add(1),
            dists: s.wrapping_add(2),
            d_pixel: s.wrapping_add(3),
            d_feature: s.wrapping_add(4),
        }
    }

    pub fn stage(&self, stage: u8) -> &StageConfig {
        if stage == 1 {
            &self.stage1
        } else {
            &self.stage2
        }
    }

    pub fn stage_seed(&self, stage: u8) -> u64 {
        self.stage(stage)
            .seed
            .unwrap_or_else(|| self.seed.wrapping_add(100 * stage as u64))
    }
}

type ProfileFn = dyn Fn(&mut ExperimentConfig) + Send + Sync;

fn split(cfg: &mut ExperimentConfig, d: usize, c: usize) {
    for disc in [&mut cfg.d_pixel, &mut cfg.d_feature] {
        disc.tail_channels = d + c;
        disc.head_split = [d, c];
    }
}

pub fn profiles() -> &'static Registry<ProfileFn> {
    static REG: OnceLock<Registry<ProfileFn>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<ProfileFn> = Registry::new("ablation profile");
        r.register("tab2_2d", Arc::new(|c: &mut ExperimentConfig| c.student.temporal_mode = "none".into()))
            .register("tab2_2d1d", Arc::new(|c: &mut ExperimentConfig| c.student.temporal_mode = "conv_rb".into()))
            .register("tab3_single_head", Arc::new(|c: &mut ExperimentConfig| split(c, 256, 0)))
            .register(
                "tab3_single_domain",
                Arc::new(|c: &mut ExperimentConfig| {
                    c.label_set.pixel_domain = false;
                    c.label_set.feature_domain = true;
                }),
            )
            .register(
                "tab5_temporal_attention",
                Arc::new(|c: &mut ExperimentConfig| c.student.temporal_mode = "temporal_attention".into()),
            )
            .register(
                "tab5_conv_rb_doubled",
                Arc::new(|c: &mut ExperimentConfig| c.student.temporal_mode = "conv_rb_doubled".into()),
            )
            .register("tab6_split_100_0", Arc::new(|c: &mut ExperimentConfig| split(c, 256, 0)))
            .register("tab6_split_75_25", Arc::new(|c: &mut ExperimentConfig| split(c, 192, 64)))
            .register("tab6_split_50_50", Arc::new(|c: &mut ExperimentConfig| split(c, 128, 128)))
            .register("tab6_split_25_75", Arc::new(|c: &mut ExperimentConfig| split(c, 64, 192)))
            .register("tab6_split_0_100", Arc::new(|c: &mut ExperimentConfig| split(c, 0, 256)))
            .register(
                "tab7_no_shuffled",
                Arc::new(|c: &mut ExperimentConfig| c.label_set.include_shuffled = false),
            )
            .register(
                "tab7_video_detail_real",
                Arc::new(|c: &mut ExperimentConfig| c.label_set.video_detail_label = 1),
            )
            .register("tab8_no_adv", Arc::new(|c: &mut ExperimentConfig| c.losses.lambda_adv = 0.0))
            .register(
                "tab8_gt_teacher",
                Arc::new(|c: &mut ExperimentConfig| {
                    c.teacher.kind = "gt_oracle".into();
                    c.teacher.sigma = 0.0;
                }),
            )
            .register(
                "paper_faithful",
                Arc::new(|c: &mut ExperimentConfig| {
                    c.stage1.grad_clip = None;
                    c.stage2.grad_clip = None;
                    c.stage2.lr_discriminator = 1e-7;
                }),
            );
        r
    })
}

pub fn apply_profile(cfg: &mut ExperimentConfig, name: &str) -> Result<()> {
    profiles().get(name)?(cfg);
    cfg.profile = Some(name.to_string());
    Ok(())
}
