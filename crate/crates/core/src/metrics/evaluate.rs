//! Repeated-trial evaluation of generated motions against a reference set.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_data::{ConditionId, Dataset, MotionSequence, NormStats};
use crate::predictor::checkpoint::Model;
use crate::rng;
use crate::sampler::{generate_batch, initial_noise, to_motion, SampleConfig};

use super::embed::{prompt_centroids, Embedder, EmbedderSpec};
use super::frechet::frechet_distance;
use super::jitter::{jitter, JitterOrder};
use super::retrieval::{diversity, mm_dist, mmodality, r_precision_curve};

pub const R_PRECISION_TOP: usize = 3;
const MMODALITY_STREAM: u64 = 0x6d6d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: usize,
    pub jitter_order: JitterOrder,
    pub diversity_pairs: usize,
    pub r_precision_batch: usize,
    /// Samples drawn per prompt for MModality; 0 skips it.
    pub mmodality_samples: usize,
    pub mmodality_pairs: usize,
    pub embedder: EmbedderSpec,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 20,
            jitter_order: JitterOrder::Jerk,
            diversity_pairs: 300,
            r_precision_batch: 32,
            mmodality_samples: 30,
            mmodality_pairs: 10,
            embedder: EmbedderSpec::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.diversity_pairs == 0 {
            return Err(Error::InvalidConfig("diversity_pairs must be at least 1".into()));
        }
        if self.r_precision_batch <= R_PRECISION_TOP {
            return Err(Error::InvalidConfig(format!("r_precision_batch must exceed {R_PRECISION_TOP}")));
        }
        if self.mmodality_samples == 1 || (self.mmodality_samples > 0 && self.mmodality_pairs == 0) {
            return Err(Error::InvalidConfig("MModality needs at least 2 samples and 1 pair per prompt".into()));
        }
        self.embedder.validate()
    }

    pub fn jitter_key(&self) -> &'static str {
        match self.jitter_order {
            JitterOrder::Acceleration => "jitter_acceleration",
            JitterOrder::Jerk => "jitter_jerk",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub trials: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            trials: values.len(),
        }
    }
}

/// Metric name to summary, plus the per-trial values behind each summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricSummary>,
    #[serde(skip)]
    pub per_trial: Vec<BTreeMap<String, f64>>,
}

impl MetricReport {
    fn from_trials(per_trial: Vec<BTreeMap<String, f64>>) -> Self {
        let mut metrics = BTreeMap::new();
        if let Some(first) = per_trial.first() {
            for key in first.keys() {
                let values: Vec<f64> = per_trial.iter().map(|t| t[key]).collect();
                metrics.insert(key.clone(), MetricSummary::of(&values));
            }
        }
        MetricReport { metrics, per_trial }
    }

    pub fn get(&self, metric: &str) -> Option<MetricSummary> {
        self.metrics.get(metric).copied()
    }

    pub fn mean(&self, metric: &str) -> Result<f64> {
        self.get(metric)
            .map(|m| m.mean)
            .ok_or_else(|| Error::InvalidInput(format!("report has no metric {metric}")))
    }

    /// `{metric: {mean, std, trials}}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.metrics)?)
    }

    /// One row per trial, one column per per-trial metric.
    pub fn trials_csv(&self) -> String {
        let keys: Vec<&String> = self.per_trial.first().map(|t| t.keys().collect()).unwrap_or_default();
        let mut out = String::from("trial");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for (i, t) in self.per_trial.iter().enumerate() {
            out.push_str(&i.to_string());
            for k in &keys {
                out.push_str(&format!(",{}", t[*k]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}_trials.csv"));
        std::fs::write(&csv, self.trials_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Reference embeddings and the prompt centroids used as text embeddings.
pub struct Reference {
    embedder: Box<dyn Embedder>,
    motion_embeddings: Vec<Vec<f64>>,
    text_embeddings: Vec<Vec<f64>>,
    conditions: Vec<ConditionId>,
    lengths: Vec<usize>,
}

impl Reference {
    /// Fits the embedder normalization on `dataset` and embeds it.
    pub fn new(dataset: &Dataset, spec: &EmbedderSpec) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidInput("reference dataset is empty".into()));
        }
        let embedder = spec.build(&NormStats::fit(&dataset.motions)?)?;
        let motion_embeddings = embedder.embed_all(&dataset.motions)?;
        let text_embeddings = prompt_centroids(&motion_embeddings, &dataset.conditions, dataset.vocab.len())?;
        Ok(Reference {
            embedder,
            motion_embeddings,
            text_embeddings,
            conditions: dataset.conditions.clone(),
            lengths: dataset.motions.iter().map(MotionSequence::frame_count).collect(),
        })
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// One request per reference motion: its condition and length.
    pub fn requests(&self) -> Vec<(ConditionId, usize)> {
        self.conditions.iter().copied().zip(self.lengths.iter().copied()).collect()
    }

    fn text_for(&self, conditions: &[ConditionId]) -> Result<Vec<Vec<f64>>> {
        conditions
            .iter()
            .map(|c| {
                self.text_embeddings
                    .get(c.0)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("condition {c} has no reference prompt")))
            })
            .collect()
    }
}

fn mean_jitter(motions: &[MotionSequence], order: JitterOrder) -> Result<f64> {
    let sum = motions.iter().map(|m| jitter(m, order)).sum::<Result<f64>>()?;
    Ok(sum / motions.len() as f64)
}

/// Metrics of one motion set in one trial.
fn trial_metrics(
    reference: &Reference,
    motions: &[MotionSequence],
    conditions: &[ConditionId],
    config: &EvalConfig,
    rng: &mut rng::Rng,
) -> Result<BTreeMap<String, f64>> {
    if motions.len() != conditions.len() {
        return Err(Error::Shape("motion and condition counts differ".into()));
    }
    let emb = reference.embedder.embed_all(motions)?;
    let text = reference.text_for(conditions)?;
    let mut out = BTreeMap::new();
    out.insert("fid".to_string(), frechet_distance(&emb, &reference.motion_embeddings)?);
    out.insert(config.jitter_key().to_string(), mean_jitter(motions, config.jitter_order)?);
    out.insert("diversity".to_string(), diversity(&emb, config.diversity_pairs, rng)?);
    out.insert("mm_dist".to_string(), mm_dist(&text, &emb)?);
    let curve = r_precision_curve(&text, &emb, R_PRECISION_TOP, config.r_precision_batch, rng)?;
    for (k, v) in curve.into_iter().enumerate() {
        out.insert(format!("r_precision_top{}", k + 1), v);
    }
    Ok(out)
}

fn mmodality_summary(reference: &Reference, groups: Vec<Vec<MotionSequence>>, config: &EvalConfig) -> Result<MetricSummary> {
    let emb = groups
        .iter()
        .map(|g| reference.embedder.embed_all(g))
        .collect::<Result<Vec<_>>>()?;
    let mut r = rng::stream(config.seed, MMODALITY_STREAM);
    Ok(MetricSummary::of(&[mmodality(&emb, config.mmodality_pairs, &mut r)?]))
}

/// Evaluates a fixed motion set. Only the sampled metrics vary across trials.
pub fn evaluate_motions(
    reference: &Reference,
    motions: &[MotionSequence],
    conditions: &[ConditionId],
    config: &EvalConfig,
) -> Result<MetricReport> {
    config.validate()?;
    let per_trial = (0..config.trials)
        .map(|t| {
            let mut r = rng::stream(rng::sub_seed(config.seed, t as u64), 0);
            trial_metrics(reference, motions, conditions, config, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::from_trials(per_trial);
    if config.mmodality_samples > 0 {
        let mut groups: BTreeMap<ConditionId, Vec<MotionSequence>> = BTreeMap::new();
        for (m, c) in motions.iter().zip(conditions) {
            let g = groups.entry(*c).or_default();
            if g.len() < config.mmodality_samples {
                g.push(m.clone());
            }
        }
        let groups: Vec<_> = groups.into_values().filter(|g| g.len() >= 2).collect();
        if !groups.is_empty() {
            report.metrics.insert("mmodality".into(), mmodality_summary(reference, groups, config)?);
        }
    }
    Ok(report)
}

/// Regenerates a motion for every reference motion in each trial, with the
/// trial's sub-seed, then evaluates. MModality draws its own samples once.
pub fn evaluate_model(reference: &Reference, model: &Model, sample: &SampleConfig, config: &EvalConfig) -> Result<MetricReport> {
    config.validate()?;
    sample.validate()?;
    let requests = reference.requests();
    let conditions: Vec<ConditionId> = requests.iter().map(|r| r.0).collect();
    let mut per_trial = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let trial_seed = rng::sub_seed(config.seed, t as u64);
        let motions = generate_requests(model, &requests, sample, rng::sub_seed(trial_seed, 1))?;
        let mut r = rng::stream(trial_seed, 0);
        per_trial.push(trial_metrics(reference, &motions, &conditions, config, &mut r)?);
    }
    let mut report = MetricReport::from_trials(per_trial);
    if config.mmodality_samples > 0 {
        let frames = sample.frames.min(model.header.predictor.max_frames);
        let groups = (0..model.header.prompts.len())
            .map(|c| {
                let req = [(ConditionId(c), config.mmodality_samples)];
                let cfg = SampleConfig {
                    frames,
                    seed: rng::sub_seed(rng::sub_seed(config.seed, MMODALITY_STREAM), c as u64),
                    ..sample.clone()
                };
                Ok(generate_batch(model, &req, &cfg)?.into_iter().map(|g| g.motion).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        report.metrics.insert("mmodality".into(), mmodality_summary(reference, groups, config)?);
    }
    Ok(report)
}

/// One sample per `(condition, frames)` request, sample `k` seeded with
/// `sub_seed(seed, k)`.
pub fn generate_requests(
    model: &Model,
    requests: &[(ConditionId, usize)],
    sample: &SampleConfig,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    use rayon::prelude::*;
    requests
        .par_iter()
        .enumerate()
        .map(|(k, &(c, frames))| {
            let cfg = SampleConfig {
                frames,
                seed: rng::sub_seed(seed, k as u64),
                ..sample.clone()
            };
            crate::sampler::euler_sample(model, c, &cfg)
        })
        .collect()
}

/// Standard-normal features mapped through the model's denormalization: the
/// untrained baseline for distribution metrics.
pub fn noise_motions(model: &Model, requests: &[(ConditionId, usize)], seed: u64) -> Result<Vec<MotionSequence>> {
    requests
        .iter()
        .enumerate()
        .map(|(k, &(_, frames))| to_motion(model, &initial_noise(frames, model.header.feature_dim, rng::sub_seed(seed, k as u64))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_data::{generate_synthetic_dataset, GeneratorSpec};

    fn small_dataset(seed: u64) -> Dataset {
        let spec = GeneratorSpec {
            sequences_per_family: 10,
            ..Default::default()
        };
        generate_synthetic_dataset(&spec, seed).unwrap()
    }

    fn quick() -> EvalConfig {
        EvalConfig {
            trials: 3,
            diversity_pairs: 50,
            r_precision_batch: 8,
            mmodality_samples: 5,
            mmodality_pairs: 4,
            ..Default::default()
        }
    }

    #[test]
    fn ground_truth_against_itself() {
        let data = small_dataset(1);
        let reference = Reference::new(&data, &EmbedderSpec::default()).unwrap();
        let report = evaluate_motions(&reference, &data.motions, &data.conditions, &quick()).unwrap();
        assert!(report.mean("fid").unwrap() < 1e-6);
        assert_eq!(report.mean("jitter_jerk").unwrap(), mean_jitter(&data.motions, JitterOrder::Jerk).unwrap());
        assert_eq!(report.get("jitter_jerk").unwrap().std, 0.0);
        assert_eq!(report.get("fid").unwrap().trials, 3);
        let r1 = report.mean("r_precision_top1").unwrap();
        let r3 = report.mean("r_precision_top3").unwrap();
        assert!(r1 <= r3);
        assert!(report.get("mmodality").unwrap().mean > 0.0);
    }

    #[test]
    fn single_trial_has_zero_deviation_and_reports_are_reproducible() {
        let data = small_dataset(2);
        let reference = Reference::new(&data, &EmbedderSpec::default()).unwrap();
        let cfg = EvalConfig { trials: 1, ..quick() };
        let a = evaluate_motions(&reference, &data.motions, &data.conditions, &cfg).unwrap();
        assert!(a.metrics.values().all(|m| m.std == 0.0 && m.trials == 1));
        let b = evaluate_motions(&reference, &data.motions, &data.conditions, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.trials_csv(), b.trials_csv());
        assert!(a.trials_csv().starts_with("trial,diversity,fid,jitter_jerk,mm_dist,r_precision_top1"));
    }

    #[test]
    fn acceleration_order_is_labelled() {
        let data = small_dataset(3);
        let reference = Reference::new(&data, &EmbedderSpec::default()).unwrap();
        let cfg = EvalConfig {
            jitter_order: JitterOrder::Acceleration,
            ..quick()
        };
        let report = evaluate_motions(&reference, &data.motions, &data.conditions, &cfg).unwrap();
        assert!(report.get("jitter_acceleration").is_some());
        assert!(report.get("jitter_jerk").is_none());
    }

    #[test]
    fn a_different_set_scores_worse() {
        let data = small_dataset(4);
        let reference = Reference::new(&data, &EmbedderSpec::default()).unwrap();
        let other = small_dataset(5);
        let cfg = quick();
        let same = evaluate_motions(&reference, &data.motions, &data.conditions, &cfg).unwrap();
        let held = evaluate_motions(&reference, &other.motions, &other.conditions, &cfg).unwrap();
        assert!(held.mean("fid").unwrap() > same.mean("fid").unwrap());
    }

    #[test]
    fn invalid_configs() {
        assert!(EvalConfig { trials: 0, ..quick() }.validate().is_err());
        assert!(EvalConfig { r_precision_batch: 3, ..quick() }.validate().is_err());
        assert!(EvalConfig { mmodality_samples: 1, ..quick() }.validate().is_err());
        let data = small_dataset(6);
        let reference = Reference::new(&data, &EmbedderSpec::default()).unwrap();
        assert!(evaluate_motions(&reference, &data.motions, &data.conditions[1..], &quick()).is_err());
    }

    #[test]
    fn model_evaluation_is_seeded() {
        use crate::predictor::PredictorConfig;
        use crate::trainer::{init_model, TrainConfig};
        let spec = GeneratorSpec {
            sequences_per_family: 3,
            min_frames: 20,
            max_frames: 30,
            ..Default::default()
        };
        let data = generate_synthetic_dataset(&spec, 7).unwrap();
        let predictor = PredictorConfig {
            hidden_dim: 8,
            layer_count: 1,
            max_frames: 30,
            ..PredictorConfig::frame_mlp()
        };
        let model = init_model(&data, &predictor, &TrainConfig::default()).unwrap();
        let reference = Reference::new(&data, &EmbedderSpec::default()).unwrap();
        let sample = SampleConfig {
            steps: 3,
            frames: 25,
            ..Default::default()
        };
        let cfg = EvalConfig {
            trials: 2,
            mmodality_samples: 3,
            ..quick()
        };
        let a = evaluate_model(&reference, &model, &sample, &cfg).unwrap();
        let b = evaluate_model(&reference, &model, &sample, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.per_trial[0]["fid"], a.per_trial[1]["fid"]);
        assert_eq!(a.get("mmodality").unwrap().trials, 1);

        let noise = noise_motions(&model, &reference.requests(), 0).unwrap();
        assert_eq!(noise.len(), data.len());
        assert_eq!(noise[0].frame_count(), data.motions[0].frame_count());
    }

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.trials), (2.0, 1.0, 2));
    }
}
