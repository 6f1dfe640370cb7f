//! Guided Euler sampling from noise to motion.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfm::{field_denominator, Objective};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::motion_data::{write_motion_file, ConditionId, FeatureSlice, MotionSequence};
use crate::predictor::Model;
use crate::rng;

/// Anything that maps `(x_t, t, c)` to a network output.
pub trait Predictor: Sync {
    fn predict(&self, xt: &Matrix, t: f64, condition: ConditionId) -> Result<Matrix>;

    /// Condition id standing for ∅.
    fn null_condition(&self) -> ConditionId;

    /// What the output regresses.
    fn objective(&self) -> Objective {
        Objective::TargetPrediction
    }
}

impl Predictor for Model {
    fn predict(&self, xt: &Matrix, t: f64, condition: ConditionId) -> Result<Matrix> {
        Model::predict(self, xt, t, condition)
    }

    fn null_condition(&self) -> ConditionId {
        Model::null_condition(self)
    }

    fn objective(&self) -> Objective {
        self.header.cfm.objective
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Euler steps `M`; the step size is `1/M`.
    pub steps: usize,
    pub guidance_scale: f64,
    pub sigma_min: f64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: 100,
            guidance_scale: 2.5,
            sigma_min: 0.0,
            frames: 120,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("guidance_scale {} must be >= 0", self.guidance_scale)));
        }
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(Error::InvalidConfig(format!("sigma_min {} outside [0, 1)", self.sigma_min)));
        }
        if self.frames < 2 {
            return Err(Error::InvalidConfig("frames must be at least 2".into()));
        }
        Ok(())
    }
}

/// `G(x, t, ∅) + s·(G(x, t, c) − G(x, t, ∅))`. At `s = 1` only the
/// conditional branch runs and at `s = 0` only the unconditional one.
pub fn guided_predict<P: Predictor + ?Sized>(
    predictor: &P,
    xt: &Matrix,
    t: f64,
    condition: ConditionId,
    scale: f64,
) -> Result<Matrix> {
    if scale == 1.0 {
        return predictor.predict(xt, t, condition);
    }
    let uncond = predictor.predict(xt, t, predictor.null_condition())?;
    if scale == 0.0 {
        return Ok(uncond);
    }
    let cond = predictor.predict(xt, t, condition)?;
    let mut out = uncond;
    for (u, c) in out.as_mut_slice().iter_mut().zip(cond.as_slice()) {
        *u += scale * (c - *u);
    }
    Ok(out)
}

/// Velocity implied by a network output at `(x, t)`.
pub fn velocity(output: &Matrix, x: &Matrix, t: f64, sigma_min: f64, objective: Objective) -> Result<Matrix> {
    match objective {
        Objective::VectorFieldPrediction => Ok(output.clone()),
        Objective::TargetPrediction => {
            let k = 1.0 - sigma_min;
            let den = field_denominator(t, sigma_min)?;
            let mut u = output.clone();
            for (g, xv) in u.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *g = (*g - k * xv) / den;
            }
            Ok(u)
        }
    }
}

/// Integrates from `x0` at `t = 0` with `M` explicit Euler steps at
/// `t_i = i/M`, `i = 0..M−1`.
pub fn euler_integrate<P: Predictor + ?Sized>(
    predictor: &P,
    x0: Matrix,
    condition: ConditionId,
    config: &SampleConfig,
) -> Result<Matrix> {
    config.validate()?;
    let m = config.steps;
    let h = 1.0 / m as f64;
    let objective = predictor.objective();
    let mut x = x0;
    for i in 0..m {
        let t = i as f64 / m as f64;
        let out = guided_predict(predictor, &x, t, condition, config.guidance_scale)?;
        let u = velocity(&out, &x, t, config.sigma_min, objective)?;
        for (xv, uv) in x.as_mut_slice().iter_mut().zip(u.as_slice()) {
            *xv += h * uv;
        }
        if !x.is_finite() {
            return Err(Error::SamplingDiverged { step: i });
        }
    }
    Ok(x)
}

/// Standard-normal start state for `seed`.
pub fn initial_noise(frames: usize, dim: usize, seed: u64) -> Matrix {
    let mut r = rng::seeded(seed);
    Matrix::from_fn(frames, dim, |_, _| StandardNormal.sample(&mut r))
}

/// Samples one motion in normalized feature space.
pub fn sample_normalized<P: Predictor + ?Sized>(
    predictor: &P,
    dim: usize,
    condition: ConditionId,
    config: &SampleConfig,
) -> Result<Matrix> {
    config.validate()?;
    euler_integrate(predictor, initial_noise(config.frames, dim, config.seed), condition, config)
}

/// Maps normalized features back to motion units. Contact features are
/// clamped to `[0, 1]` but otherwise left continuous.
pub fn to_motion(model: &Model, normalized: &Matrix) -> Result<MotionSequence> {
    let layout = model.header.pose_layout()?;
    let mut frames = model.norm.denormalize(normalized);
    let contacts = layout.range(FeatureSlice::FootContacts);
    for r in 0..frames.rows() {
        for v in &mut frames.row_mut(r)[contacts.clone()] {
            *v = v.clamp(0.0, 1.0);
        }
    }
    MotionSequence::new(frames, model.header.fps, layout)
}

/// Draws noise with `config.seed`, integrates and denormalizes.
pub fn euler_sample(model: &Model, condition: ConditionId, config: &SampleConfig) -> Result<MotionSequence> {
    if condition.0 > model.header.prompts.len() {
        return Err(Error::InvalidInput(format!("unknown condition {condition}")));
    }
    if config.frames > model.header.predictor.max_frames {
        return Err(Error::InvalidConfig(format!(
            "{} frames exceed the model's max_frames {}",
            config.frames, model.header.predictor.max_frames
        )));
    }
    let x = sample_normalized(model, model.header.feature_dim, condition, config)?;
    to_motion(model, &x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedMotion {
    pub condition: ConditionId,
    pub prompt: String,
    pub seed: u64,
    pub motion: MotionSequence,
}

/// Samples `count` motions per condition. Sample `k` of the flattened
/// request list uses seed `sub_seed(config.seed, k)`, so results do not
/// depend on scheduling.
pub fn generate_batch(model: &Model, requests: &[(ConditionId, usize)], config: &SampleConfig) -> Result<Vec<GeneratedMotion>> {
    let jobs: Vec<(ConditionId, u64)> = requests
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat(c).take(n))
        .enumerate()
        .map(|(k, c)| (c, rng::sub_seed(config.seed, k as u64)))
        .collect();
    jobs.par_iter()
        .map(|&(condition, seed)| {
            let cfg = SampleConfig {
                seed,
                ..config.clone()
            };
            let prompt = model
                .header
                .prompts
                .get(condition.0)
                .cloned()
                .unwrap_or_default();
            Ok(GeneratedMotion {
                condition,
                prompt,
                seed,
                motion: euler_sample(model, condition, &cfg)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedEntry {
    pub motion_path: String,
    pub condition_id: ConditionId,
    pub prompt: String,
    pub seed: u64,
    pub config: SampleConfig,
}

/// Writes `motions/NNNNNN.fmot` and `manifest.json` under `dir`.
pub fn write_generated(samples: &[GeneratedMotion], config: &SampleConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let motions = dir.join("motions");
    std::fs::create_dir_all(&motions).map_err(|e| Error::io(&motions, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("motions/{i:06}.fmot");
        write_motion_file(&s.motion, dir.join(&rel))?;
        entries.push(GeneratedEntry {
            motion_path: rel,
            condition_id: s.condition,
            prompt: s.prompt.clone(),
            seed: s.seed,
            config: SampleConfig {
                seed: s.seed,
                ..config.clone()
            },
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&entries)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
