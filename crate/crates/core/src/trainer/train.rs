use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cfm::{make_training_batch, CfmConfig, Objective, TimeDraw, TrainingItem};
use crate::error::{Error, Result};
use crate::motion_data::{Dataset, NormStats};
use crate::predictor::{backward, Model, ModelHeader, ModelShape, PredictorConfig, PredictorParams};
use crate::rng;

use super::adamw::{adamw_step, AdamWConfig, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    /// Probability of replacing a sample's condition with ∅.
    pub condition_dropout_prob: f64,
    pub objective: Objective,
    pub sigma_min: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 2000,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            epsilon: 1e-8,
            condition_dropout_prob: 0.1,
            objective: Objective::TargetPrediction,
            sigma_min: 0.0,
            grad_clip: Some(1.0),
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {}", self.weight_decay));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.condition_dropout_prob) {
            return bad(format!("condition_dropout_prob {} outside [0, 1]", self.condition_dropout_prob));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        self.cfm().validate()
    }

    pub fn cfm(&self) -> CfmConfig {
        CfmConfig {
            sigma_min: self.sigma_min,
            objective: self.objective,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            epsilon: self.epsilon,
        }
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    /// Final model, or the last finite one when training diverged.
    pub model: Model,
    /// Mean batch loss at every completed step, before that step's update.
    pub losses: Vec<f64>,
    /// Step and loss at which training stopped early.
    pub diverged: Option<(usize, f64)>,
}

impl TrainRun {
    /// The model, or a divergence error if training stopped early.
    pub fn into_model(self) -> Result<Model> {
        match self.diverged {
            Some((step, loss)) => Err(Error::Divergence { step, loss }),
            None => Ok(self.model),
        }
    }
}

/// Normalized training clips for every motion in `dataset`.
pub fn training_items(dataset: &Dataset, norm: &NormStats) -> Vec<TrainingItem> {
    dataset
        .iter()
        .map(|(m, c)| TrainingItem {
            frames: norm.normalize_sequence(m),
            condition: c,
        })
        .collect()
}

/// Initial network and header for `dataset`, before any update.
pub fn init_model(dataset: &Dataset, predictor: &PredictorConfig, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    predictor.validate()?;
    let layout = dataset
        .layout()
        .ok_or_else(|| Error::InvalidInput("cannot train on an empty dataset".into()))?
        .clone();
    if let Some(m) = dataset.motions.iter().find(|m| m.layout() != &layout || m.fps() != dataset.fps().unwrap()) {
        return Err(Error::InvalidInput(format!(
            "dataset mixes layouts or frame rates ({} joints at {} fps)",
            m.layout().joint_count(),
            m.fps()
        )));
    }
    if let Some(m) = dataset.motions.iter().find(|m| m.frame_count() > predictor.max_frames) {
        return Err(Error::InvalidInput(format!(
            "a clip has {} frames, more than max_frames {}",
            m.frame_count(),
            predictor.max_frames
        )));
    }
    let shape = ModelShape {
        feature_dim: layout.feature_dim(),
        condition_rows: dataset.vocab.table_rows(),
    };
    let mut init_rng = rng::stream(config.seed, 0);
    let params = PredictorParams::init(predictor, &shape, &mut init_rng)?;
    let norm = NormStats::fit(&dataset.motions)?;
    Ok(Model {
        header: ModelHeader {
            predictor: predictor.clone(),
            cfm: config.cfm(),
            feature_dim: layout.feature_dim(),
            joint_count: layout.joint_count(),
            fps: dataset.fps().unwrap(),
            prompts: dataset.vocab.prompts().to_vec(),
            train: Some(serde_json::to_value(config)?),
        },
        params,
        norm,
    })
}

fn clip_gradient(grad: &mut [f64], clip: Option<f64>) {
    if let Some(c) = clip {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > c {
            let s = c / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Minimizes the flow-matching loss on `dataset` with AdamW.
///
/// Each step draws a batch, swaps each sample's condition for ∅ with
/// probability `condition_dropout_prob`, and applies one update. A
/// non-finite loss stops training and returns the last finite model.
pub fn train(dataset: &Dataset, predictor: &PredictorConfig, config: &TrainConfig) -> Result<TrainRun> {
    train_with_progress(dataset, predictor, config, |_, _| {})
}

/// [`train`] with a callback receiving `(step, loss)` every `log_every` steps.
pub fn train_with_progress(
    dataset: &Dataset,
    predictor: &PredictorConfig,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainRun> {
    let mut model = init_model(dataset, predictor, config)?;
    let items = training_items(dataset, &model.norm);
    let null = dataset.vocab.null_id();
    let cfm = config.cfm();
    let adamw = config.adamw();
    let mut state = OptimizerState::new(model.params.len());
    let mut batch_rng = rng::stream(config.seed, 1);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = make_training_batch(&items, config.batch_size, &cfm, TimeDraw::Uniform, &mut batch_rng)?;
        for s in &mut batch {
            if batch_rng.gen::<f64>() < config.condition_dropout_prob {
                s.condition = null;
            }
        }
        let (loss, mut grad) = match backward(&model.params, predictor, &batch, &cfm) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                return Ok(TrainRun {
                    model,
                    losses,
                    diverged: Some((step, f64::NAN)),
                })
            }
            Err(e) => return Err(e),
        };
        let diverged = |losses| TrainRun {
            model: model.clone(),
            losses,
            diverged: Some((step, loss)),
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Ok(diverged(losses));
        }
        clip_gradient(&mut grad, config.grad_clip);
        let mut next = model.params.flat().to_vec();
        adamw_step(&mut next, &grad, &mut state, &adamw)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(diverged(losses));
        }
        model.params.flat_mut().copy_from_slice(&next);
        losses.push(loss);
        if step % config.log_every == 0 || step + 1 == config.steps {
            progress(step, loss);
        }
    }
    Ok(TrainRun {
        model,
        losses,
        diverged: None,
    })
}

/// Mean of the first and of the last `window` losses.
pub fn smoothed_endpoints(losses: &[f64], window: usize) -> Option<(f64, f64)> {
    if losses.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(losses.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
}

/// `step,loss` rows every `log_every` steps plus the final step.
pub fn write_loss_csv(losses: &[f64], log_every: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,loss\n");
    for (step, loss) in losses.iter().enumerate() {
        if step % log_every.max(1) == 0 || step + 1 == losses.len() {
            out.push_str(&format!("{step},{loss}\n"));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
