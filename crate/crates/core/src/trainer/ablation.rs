//! Target prediction against vector-field prediction under a shared budget.

use serde::{Deserialize, Serialize};

use crate::cfm::Objective;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, jitter, EvalConfig, MetricReport, Reference};
use crate::motion_data::Dataset;
use crate::predictor::{Model, PredictorConfig};
use crate::sampler::SampleConfig;

use super::train::{smoothed_endpoints, train, TrainConfig, TrainRun};

pub const ARMS: [Objective; 2] = [Objective::TargetPrediction, Objective::VectorFieldPrediction];

pub fn arm_name(objective: Objective) -> &'static str {
    match objective {
        Objective::TargetPrediction => "target",
        Objective::VectorFieldPrediction => "vector_field",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub arm: String,
    pub jitter: f64,
    /// `|jitter − reference jitter|`.
    pub jitter_gap: f64,
    pub fid: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Training stopped early on a non-finite loss; the row then describes
    /// the last finite model.
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct AblationArm {
    pub seed: u64,
    pub objective: Objective,
    pub model: Model,
    pub losses: Vec<f64>,
    pub report: MetricReport,
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub reference_jitter: f64,
    pub rows: Vec<AblationRow>,
    pub arms: Vec<AblationArm>,
}

/// Window used to smooth the loss curve endpoints.
pub fn loss_window(steps: usize) -> usize {
    (steps / 20).clamp(1, 100)
}

impl AblationRun {
    /// `(target, vector_field)` rows for `seed`.
    pub fn pair(&self, seed: u64) -> Option<(&AblationRow, &AblationRow)> {
        let find = |o| self.rows.iter().find(|r| r.seed == seed && r.arm == arm_name(o));
        Some((find(Objective::TargetPrediction)?, find(Objective::VectorFieldPrediction)?))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# reference_jitter={}\nseed,arm,jitter,jitter_gap,fid,initial_loss,final_loss,diverged\n", self.reference_jitter);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.seed, r.arm, r.jitter, r.jitter_gap, r.fid, r.initial_loss, r.final_loss, r.diverged as u8
            ));
        }
        out
    }
}

/// Trains both objectives for every seed with otherwise identical settings
/// and evaluates each model against `test`. The metric key of the jitter is
/// taken from `eval`.
pub fn run_ablation(
    train_set: &Dataset,
    test_set: &Dataset,
    predictor: &PredictorConfig,
    config: &TrainConfig,
    seeds: &[u64],
    sample: &SampleConfig,
    eval: &EvalConfig,
) -> Result<AblationRun> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    eval.validate()?;
    let reference = Reference::new(test_set, &eval.embedder)?;
    let reference_jitter = test_set
        .motions
        .iter()
        .map(|m| jitter(m, eval.jitter_order))
        .sum::<Result<f64>>()?
        / test_set.len() as f64;
    let mut rows = Vec::new();
    let mut arms = Vec::new();
    for &seed in seeds {
        for objective in ARMS {
            let cfg = TrainConfig {
                seed,
                objective,
                ..config.clone()
            };
            let run = train(train_set, predictor, &cfg)?;
            let diverged = run.diverged.is_some();
            let TrainRun { model, losses, .. } = run;
            let report = evaluate_model(&reference, &model, sample, eval)?;
            let jit = report.mean(eval.jitter_key())?;
            let (initial_loss, final_loss) = smoothed_endpoints(&losses, loss_window(losses.len())).unwrap_or((f64::NAN, f64::NAN));
            rows.push(AblationRow {
                seed,
                arm: arm_name(objective).to_string(),
                jitter: jit,
                jitter_gap: (jit - reference_jitter).abs(),
                fid: report.mean("fid")?,
                initial_loss,
                final_loss,
                diverged,
            });
            arms.push(AblationArm {
                seed,
                objective,
                model,
                losses,
                report,
            });
        }
    }
    Ok(AblationRun {
        reference_jitter,
        rows,
        arms,
    })
}
