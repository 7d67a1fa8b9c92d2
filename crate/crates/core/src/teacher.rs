//! Teacher oracles and the frozen encoder used to re-encode teacher pixels
//! into the student's tap feature space.

use std::sync::{Arc, OnceLock};

use avsr_autograd::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::nn;
use crate::params::{Bound, Init, ParamStore};
use crate::registry::Registry;
use crate::student::Student;
use crate::video::{gaussian_blur, ClipBatch, CHANNELS};

pub const ENCODER_GROUP: &str = "encoder";
const ENCODER_HIDDEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Registered teacher name: `gt_oracle` or `gt_smoothed`.
    pub kind: String,
    /// Blur strength for `gt_smoothed`.
    pub sigma: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            kind: "gt_oracle".into(),
            sigma: 0.0,
        }
    }
}

pub trait Teacher: Send + Sync {
    fn name(&self) -> &'static str;

    /// Target pixels (signed range) for a signed-range HR/LR batch pair.
    fn forward(&self, x_hr: &ClipBatch, x_lr: &ClipBatch) -> Result<ClipBatch>;
}

pub struct GtOracle;

impl Teacher for GtOracle {
    fn name(&self) -> &'static str {
        "gt_oracle"
    }

    fn forward(&self, x_hr: &ClipBatch, _x_lr: &ClipBatch) -> Result<ClipBatch> {
        Ok(x_hr.clone())
    }
}

pub struct GtSmoothed {
    pub sigma: f64,
}

impl Teacher for GtSmoothed {
    fn name(&self) -> &'static str {
        "gt_smoothed"
    }

    fn forward(&self, x_hr: &ClipBatch, _x_lr: &ClipBatch) -> Result<ClipBatch> {
        ClipBatch::new(gaussian_blur(x_hr.tensor(), self.sigma), x_hr.frames())
    }
}

type TeacherCtor = dyn Fn(&TeacherConfig) -> Arc<dyn Teacher> + Send + Sync;

pub fn teachers() -> &'static Registry<TeacherCtor> {
    static REG: OnceLock<Registry<TeacherCtor>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<TeacherCtor> = Registry::new("teacher");
        r.register("gt_oracle", Arc::new(|_: &TeacherConfig| Arc::new(GtOracle) as Arc<dyn Teacher>))
            .register(
                "gt_smoothed",
                Arc::new(|c: &TeacherConfig| Arc::new(GtSmoothed { sigma: c.sigma }) as Arc<dyn Teacher>),
            );
        r
    })
}

pub fn build_teacher(cfg: &TeacherConfig) -> Result<Arc<dyn Teacher>> {
    if !(cfg.sigma >= 0.0) {
        return Err(config_err!("teacher sigma must be ≥ 0, got {}", cfg.sigma));
    }
    Ok(teachers().get(&cfg.kind)?(cfg))
}

/// Frozen two-stage conv stack mapping HR pixels to the middle-block input
/// space at half the HR resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub params: ParamStore,
    out_channels: usize,
}

impl Encoder {
    pub fn build(out_channels: usize, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
            group: ENCODER_GROUP.into(),
            trainable: false,
        };
        init.conv2d("encoder.conv1", CHANNELS, ENCODER_HIDDEN, 3);
        init.conv2d("encoder.conv2", ENCODER_HIDDEN, out_channels, 3);
        Self { params, out_channels }
    }

    pub fn for_student(student: &Student, seed: u64) -> Self {
        Self::build(student.middle_in_channels(), seed)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let h = nn::conv(p, "encoder.conv1", x, 2).relu();
        nn::conv(p, "encoder.conv2", h, 1)
    }
}

/// `middle_block(enc(x_teacher))` with the student's current middle-block
/// weights, evaluated outside any training graph so no gradient reaches
/// either the encoder or the student through this path.
pub fn reencode_features(x_teacher: &ClipBatch, enc: &Encoder, student: &Student) -> Result<ClipBatch> {
    if x_teacher.channels() != CHANNELS {
        return Err(dim_err!("teacher pixels need {CHANNELS} channels, got {}", x_teacher.channels()));
    }
    if x_teacher.height() % 4 != 0 || x_teacher.width() % 4 != 0 {
        return Err(dim_err!(
            "teacher frames {}×{} are not divisible by the scale factor 4",
            x_teacher.height(),
            x_teacher.width()
        ));
    }
    if enc.out_channels() != student.middle_in_channels() {
        return Err(dim_err!(
            "encoder emits {} channels, middle block expects {}",
            enc.out_channels(),
            student.middle_in_channels()
        ));
    }
    let g = Graph::new();
    let pe = enc.params.bind(&g, false);
    let ps = student.params.bind(&g, false);
    let x = g.constant(x_teacher.tensor().clone());
    let z = enc.forward(&pe, x);
    let f = student.middle_block(&ps, z, x_teacher.frames(), true);
    ClipBatch::new(Tensor::clone(&f.value()), x_teacher.frames())
}
