use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use avsr_core::checkpoint::Checkpoint;
use avsr_core::config::{apply_profile, ExperimentConfig};
use avsr_core::data::{Dataset, GenDataConfig};
use avsr_core::metrics::{evaluate, save_png, sr_models, temporal_profile, EvalOptions, ProfileRow};
use avsr_core::student::Student;
use avsr_core::training::{checkpoint_config, student_from_checkpoint, Trainer};
use avsr_core::video::load_clip;
use avsr_core::{AvsrError, Result};
use log::{info, warn};
use serde_json::json;

use crate::{EvalArgs, GenDataArgs, ParamsArgs, ProfileArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> AvsrError {
    AvsrError::Usage(msg.into())
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = GenDataConfig {
        clips: a.clips,
        frames: a.frames,
        height: a.size[0],
        width: a.size[1],
        seed: a.seed,
        motion: a.motion.parse()?,
        test_clips: a.test_clips,
    };
    let data = Dataset::generate(&cfg)?;
    data.save(&a.out)?;
    info!(
        "wrote {} clips ({} test) of {}×{}×{} to {}",
        cfg.clips,
        cfg.test_clips,
        cfg.frames,
        cfg.height,
        cfg.width,
        a.out.display()
    );
    Ok(())
}

/// Config file (or defaults), then `--profile`, then `AVSR_SEED`.
fn fresh_config(path: Option<&Path>, profile: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = profile {
        apply_profile(&mut cfg, name)?;
        cfg.validate()?;
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn stage_of(ckpt: &Checkpoint, path: &Path) -> Result<u8> {
    ckpt.metadata["stage"]
        .as_u64()
        .map(|s| s as u8)
        .ok_or_else(|| AvsrError::Format(format!("{}: metadata lacks 'stage'", path.display())))
}

fn stage2_from(stage1_path: &Path, cfg: Option<ExperimentConfig>) -> Result<Trainer> {
    let ckpt = Checkpoint::load(stage1_path)?;
    if stage_of(&ckpt, stage1_path)? != 1 {
        return Err(usage(format!(
            "{} is not a stage-1 checkpoint; stage 2 starts from the output of stage 1",
            stage1_path.display()
        )));
    }
    let mut cfg = match cfg {
        Some(c) => c,
        None => checkpoint_config(&ckpt)?,
    };
    let student = student_from_checkpoint(&ckpt)?;
    cfg.data.stage1_checkpoint = Some(stage1_path.to_path_buf());
    Trainer::new_stage2(&cfg, &student)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let given = a.config.is_some() || a.profile.is_some();
    let (mut trainer, resumed) = match (&a.resume, a.stage) {
        (Some(path), stage) => {
            let ckpt = Checkpoint::load(path)?;
            match (stage_of(&ckpt, path)?, stage) {
                (s, t) if s == t => {
                    if given {
                        warn!("resuming with the configuration echoed in {}; --config/--profile ignored", path.display());
                    }
                    (Trainer::from_checkpoint(&ckpt)?, true)
                }
                (1, 2) => {
                    let cfg = if given {
                        Some(fresh_config(a.config.as_deref(), a.profile.as_deref())?)
                    } else {
                        None
                    };
                    (stage2_from(path, cfg)?, false)
                }
                (s, t) => {
                    return Err(usage(format!(
                        "{} is a stage-{s} checkpoint and cannot resume stage {t}",
                        path.display()
                    )))
                }
            }
        }
        (None, 1) => (Trainer::new_stage1(&fresh_config(a.config.as_deref(), a.profile.as_deref())?)?, false),
        (None, _) => {
            let cfg = fresh_config(a.config.as_deref(), a.profile.as_deref())?;
            let path = cfg.data.stage1_checkpoint.clone().ok_or_else(|| {
                usage("stage 2 needs a stage-1 checkpoint: set data.stage1_checkpoint in the config or pass --resume")
            })?;
            (stage2_from(&path, Some(cfg))?, false)
        }
    };

    let data_dir: PathBuf = match (&a.data, &trainer.config.data.dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(usage("no dataset: pass --data or set data.dir in the config")),
    };
    let data = Dataset::load(&data_dir)?;
    trainer.config.data.dir = Some(data_dir);

    fs::create_dir_all(&a.out).map_err(|e| AvsrError::io(&a.out, e))?;
    let stage = trainer.stage;
    let cfg_path = a.out.join(format!("stage{stage}_config.toml"));
    fs::write(&cfg_path, trainer.config.to_toml()).map_err(|e| AvsrError::io(&cfg_path, e))?;
    let log_path = a.out.join(format!("stage{stage}_log.jsonl"));
    let file = if resumed {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| AvsrError::io(&log_path, e))?;

    let total = trainer.stage_config().iterations;
    info!(
        "stage {stage}: iterations {}..{total}, {} clips from {}",
        trainer.iteration,
        data.samples.len(),
        trainer.config.data.dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default()
    );
    let mut tee = Tee { file, echo: io::stderr() };
    trainer.run(&data, Some(&a.out), Some(&mut tee))?;
    tee.flush().map_err(|e| AvsrError::io(&log_path, e))?;
    info!("wrote {}", a.out.join(format!("stage{stage}.ckpt")).display());
    Ok(())
}

/// Writes the loss log to disk and mirrors it on stderr.
struct Tee {
    file: File,
    echo: io::Stderr,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        let _ = self.echo.write_all(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = a.ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = match &ckpt {
        Some(c) => checkpoint_config(c)?,
        None => ExperimentConfig::default(),
    };
    let student = ckpt.as_ref().map(student_from_checkpoint).transpose()?;
    let ctor = sr_models().get(&a.model)?;
    let model = ctor(student.as_ref(), cfg.student.scale_factor).map_err(|e| match e {
        AvsrError::Usage(m) => usage(format!("{m} (pass --ckpt)")),
        other => other,
    })?;
    let data = Dataset::load(&a.data)?;
    let echo = json!({
        "command": "eval",
        "ckpt": a.ckpt,
        "data": a.data,
        "model": a.model,
        "seed": a.seed,
        "degradation": cfg.degradation,
    });
    let report = evaluate(
        model.as_ref(),
        &data,
        &EvalOptions {
            degradation: &cfg.degradation,
            seed: a.seed,
            dataset_label: a.data.display().to_string(),
            checkpoint_label: a.ckpt.as_ref().map(|p| p.display().to_string()),
            config_echo: echo,
        },
    )?;
    report.save(&a.report)?;
    let m = &report.metrics;
    let warp = m.e_warp_star.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    info!(
        "{} on {} clips: psnr {:.3} ssim {:.4} e_warp* {warp}",
        report.model,
        report.per_clip.len(),
        m.psnr,
        m.ssim
    );
    Ok(())
}

pub fn profile(a: ProfileArgs) -> Result<()> {
    let row: ProfileRow = a.row.parse()?;
    let clip = load_clip(&a.video)?;
    let img = temporal_profile(&clip, row)?;
    save_png(&img, &a.out)?;
    info!("wrote {}×{} profile to {}", img.shape()[2], img.shape()[1], a.out.display());
    Ok(())
}

pub fn params(a: ParamsArgs) -> Result<()> {
    let student = match &a.ckpt {
        Some(p) => student_from_checkpoint(&Checkpoint::load(p)?)?,
        None => {
            let cfg = fresh_config(a.config.as_deref(), a.profile.as_deref())?;
            Student::build(&cfg.student, cfg.seeds().student)?
        }
    };
    let c = student.count_params();
    let fraction = c.temporal as f64 / c.total.max(1) as f64;
    if a.json {
        let mut v = serde_json::to_value(c).expect("counts serialize");
        v["temporal_fraction"] = json!(fraction);
        println!("{v}");
    } else {
        println!("body_2d            {}", c.body_2d);
        println!("decoder_2d         {}", c.decoder_2d);
        println!("temporal           {}", c.temporal);
        println!("total              {}", c.total);
        println!("temporal_fraction  {fraction:.4}");
    }
    Ok(())
}
