use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::layout::PoseLayout;
use super::sequence::MotionSequence;

/// Lower bound applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score statistics over every frame of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean and population standard deviation of every feature, pooled over
    /// all frames of all sequences.
    pub fn fit<'a>(motions: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let motions: Vec<&MotionSequence> = motions.into_iter().collect();
        for m in &motions {
            let f = m.frames();
            if sum.is_empty() {
                sum = vec![0.0; f.cols()];
            } else if sum.len() != f.cols() {
                return Err(Error::Shape("sequences disagree on feature dimension".into()));
            }
            f.col_sums_acc(&mut sum);
            count += f.rows();
        }
        if count == 0 {
            return Err(Error::InvalidInput("cannot fit normalization on an empty dataset".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for m in &motions {
            for r in 0..m.frame_count() {
                for ((v, x), mu) in var.iter_mut().zip(m.frames().row(r)).zip(&mean) {
                    *v += (x - mu) * (x - mu);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, frames: &Matrix) -> Matrix {
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        out
    }

    pub fn denormalize(&self, frames: &Matrix) -> Matrix {
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = *x * s + m;
            }
        }
        out
    }

    pub fn normalize_sequence(&self, motion: &MotionSequence) -> Matrix {
        self.normalize(motion.frames())
    }

    /// Maps normalized features back to a motion sequence.
    pub fn denormalize_sequence(&self, frames: &Matrix, fps: f64, layout: PoseLayout) -> Result<MotionSequence> {
        MotionSequence::new(self.denormalize(frames), fps, layout)
    }
}
