//! Fixed motion featurizers used by the distribution metrics.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_data::{ConditionId, MotionSequence, NormStats};
use crate::rng;

pub const DEFAULT_EMBED_DIM: usize = 32;

/// Maps a motion to a fixed-length vector.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, motion: &MotionSequence) -> Result<Vec<f64>>;

    fn embed_all(&self, motions: &[MotionSequence]) -> Result<Vec<Vec<f64>>> {
        motions.iter().map(|m| self.embed(m)).collect()
    }
}

/// Per-feature mean, standard deviation and mean absolute first difference of
/// the normalized frames, concatenated. Length `3·D`.
pub fn temporal_stats(norm: &NormStats, motion: &MotionSequence) -> Result<Vec<f64>> {
    let d = norm.dim();
    if motion.frames().cols() != d {
        return Err(Error::Shape(format!("motion has {} features, embedder expects {d}", motion.frames().cols())));
    }
    let x = norm.normalize_sequence(motion);
    let n = x.rows() as f64;
    let mut mean = vec![0.0; d];
    x.col_sums_acc(&mut mean);
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for r in 0..x.rows() {
        for (c, v) in x.row(r).iter().enumerate() {
            var[c] += (v - mean[c]).powi(2) / n;
            if r > 0 {
                diff[c] += (v - x.get(r - 1, c)).abs();
            }
        }
    }
    if x.rows() > 1 {
        diff.iter_mut().for_each(|s| *s /= n - 1.0);
    }
    let mut out = mean;
    out.extend(var.into_iter().map(f64::sqrt));
    out.extend(diff);
    Ok(out)
}

/// `3D × k` matrix with orthonormal columns, from the QR factor of a seeded
/// Gaussian matrix.
pub fn orthonormal_projection(rows: usize, cols: usize, seed: u64) -> Result<DMatrix<f64>> {
    if cols == 0 || cols > rows {
        return Err(Error::InvalidConfig(format!("cannot project {rows} features onto {cols} orthonormal directions")));
    }
    let mut r = rng::stream(seed, 0x0e3b);
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
    let qr = g.qr();
    let mut q = qr.q();
    // Fix the sign ambiguity of QR so the map depends only on the seed.
    let diag = qr.r().diagonal();
    for (j, s) in diag.iter().enumerate() {
        if *s < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Temporal statistics followed by a fixed random orthogonal projection.
#[derive(Clone, Debug)]
pub struct TemporalStats {
    norm: NormStats,
    projection: DMatrix<f64>,
}

impl TemporalStats {
    pub fn new(norm: NormStats, output_dim: usize, seed: u64) -> Result<Self> {
        let projection = orthonormal_projection(3 * norm.dim(), output_dim, seed)?;
        Ok(TemporalStats { norm, projection })
    }
}

impl Embedder for TemporalStats {
    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    fn embed(&self, motion: &MotionSequence) -> Result<Vec<f64>> {
        let s = temporal_stats(&self.norm, motion)?;
        Ok((0..self.dim()).map(|j| self.projection.column(j).iter().zip(&s).map(|(a, b)| a * b).sum()).collect())
    }
}

/// Caller-supplied linear map `W · stats + b` on the temporal statistics,
/// standing in for a trained contrastive encoder.
#[derive(Clone, Debug)]
pub struct LinearEmbedder {
    norm: NormStats,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearEmbedder {
    /// `weights` is row-major `output_dim × 3D`.
    pub fn new(norm: NormStats, output_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let cols = 3 * norm.dim();
        if output_dim == 0 || weights.len() != output_dim * cols || bias.len() != output_dim {
            return Err(Error::InvalidConfig(format!(
                "linear embedder needs {output_dim}×{cols} weights and {output_dim} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedder parameters".into()));
        }
        Ok(LinearEmbedder { norm, weights, bias })
    }
}

impl Embedder for LinearEmbedder {
    fn dim(&self) -> usize {
        self.bias.len()
    }

    fn embed(&self, motion: &MotionSequence) -> Result<Vec<f64>> {
        let s = temporal_stats(&self.norm, motion)?;
        Ok(self
            .weights
            .chunks_exact(s.len())
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(&s).map(|(a, x)| a * x).sum::<f64>())
            .collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    TemporalStats,
    LearnedContrastive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub output_dim: usize,
    /// Seed of the projection for `TemporalStats`.
    pub seed: u64,
    /// Row-major weights then biases for `LearnedContrastive`.
    pub parameters: Vec<f64>,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            kind: EmbedderKind::TemporalStats,
            output_dim: DEFAULT_EMBED_DIM,
            seed: 0,
            parameters: Vec::new(),
        }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.output_dim > crate::predictor::MAX_WIDTH {
            return Err(Error::InvalidConfig(format!("embedder output_dim {}", self.output_dim)));
        }
        if self.kind == EmbedderKind::TemporalStats && !self.parameters.is_empty() {
            return Err(Error::InvalidConfig("TemporalStats takes no parameters".into()));
        }
        Ok(())
    }

    /// Builds the embedder over features normalized with `norm`.
    pub fn build(&self, norm: &NormStats) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::TemporalStats => Box::new(TemporalStats::new(norm.clone(), self.output_dim, self.seed)?),
            EmbedderKind::LearnedContrastive => {
                let w = self.output_dim * 3 * norm.dim();
                if self.parameters.len() != w + self.output_dim {
                    return Err(Error::InvalidConfig(format!(
                        "LearnedContrastive needs {} parameters, got {}",
                        w + self.output_dim,
                        self.parameters.len()
                    )));
                }
                Box::new(LinearEmbedder::new(
                    norm.clone(),
                    self.output_dim,
                    self.parameters[..w].to_vec(),
                    self.parameters[w..].to_vec(),
                )?)
            }
        })
    }
}

/// Text-side embedding of each prompt: the centroid of its motions' embeddings.
pub fn prompt_centroids(embeddings: &[Vec<f64>], conditions: &[ConditionId], prompt_count: usize) -> Result<Vec<Vec<f64>>> {
    if embeddings.len() != conditions.len() {
        return Err(Error::Shape("embedding and condition counts differ".into()));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; prompt_count];
    let mut counts = vec![0usize; prompt_count];
    for (e, c) in embeddings.iter().zip(conditions) {
        let row = sums
            .get_mut(c.0)
            .ok_or_else(|| Error::InvalidInput(format!("condition {} outside {prompt_count} prompts", c.0)))?;
        row.iter_mut().zip(e).for_each(|(s, v)| *s += v);
        counts[c.0] += 1;
    }
    if let Some(p) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("prompt {p} has no reference motions")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect())
}
