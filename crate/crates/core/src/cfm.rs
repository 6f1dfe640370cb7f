//! Conditional flow matching along the linear Gaussian path.
//!
//! With `σ = σ_min`, a noise draw `x0` is carried towards a data sample `x1` by
//!
//! ```text
//! ψ_t(x0) = (1 − (1 − σ)t)·x0 + t·x1
//! ```
//!
//! whose conditional velocity, written in terms of the current state, is
//!
//! ```text
//! u_t(x_t | x1) = (x1 − (1 − σ)·x_t) / (1 − (1 − σ)t)
//! ```
//!
//! A network can learn either quantity. Predicting `x1` directly and
//! recovering `u_t` algebraically at sampling time is the target-prediction
//! objective; regressing `u_t` itself is the vector-field objective.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::motion_data::ConditionId;
use crate::rng::{self, Rng};

/// Smallest admissible `1 − (1 − σ_min)t`.
pub const DENOMINATOR_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Regress the clean sample `x1`.
    #[default]
    TargetPrediction,
    /// Regress the conditional vector field `u_t(x_t | x1)`.
    VectorFieldPrediction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfmConfig {
    pub sigma_min: f64,
    pub objective: Objective,
}

impl Default for CfmConfig {
    fn default() -> Self {
        CfmConfig {
            sigma_min: 0.0,
            objective: Objective::TargetPrediction,
        }
    }
}

impl CfmConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sigma(self.sigma_min)
    }
}

fn validate_sigma(sigma_min: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sigma_min) {
        return Err(Error::InvalidConfig(format!("sigma_min must lie in [0, 1), got {sigma_min}")));
    }
    Ok(())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vector lengths {} and {} differ", a.len(), b.len())));
    }
    Ok(())
}

/// `ψ_t(x0) = (1 − (1 − σ_min)t)·x0 + t·x1`.
pub fn flow_interpolate(x0: &[f64], x1: &[f64], t: f64, sigma_min: f64) -> Result<Vec<f64>> {
    check_lengths(x0, x1)?;
    // Written as 1 − t + σt so both endpoints are exact in floating point.
    let a = 1.0 - t + sigma_min * t;
    Ok(x0.iter().zip(x1).map(|(p, q)| a * p + t * q).collect())
}

/// `u_t(x_t | x1) = (x1 − (1 − σ_min)x_t) / (1 − (1 − σ_min)t)`.
pub fn conditional_vector_field(xt: &[f64], x1: &[f64], t: f64, sigma_min: f64) -> Result<Vec<f64>> {
    check_lengths(xt, x1)?;
    let k = 1.0 - sigma_min;
    let denominator = field_denominator(t, sigma_min)?;
    Ok(x1.iter().zip(xt).map(|(q, x)| (q - k * x) / denominator).collect())
}

/// `1 − (1 − σ_min)t`, or a singularity error when it falls below
/// [`DENOMINATOR_EPS`].
pub fn field_denominator(t: f64, sigma_min: f64) -> Result<f64> {
    let denominator = 1.0 - (1.0 - sigma_min) * t;
    if denominator <= DENOMINATOR_EPS {
        return Err(Error::Singularity { t, denominator });
    }
    Ok(denominator)
}

/// One normalized training clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    pub frames: Matrix,
    pub condition: ConditionId,
}

/// A point on the conditional path, padded to the batch's longest clip.
/// Rows at and beyond `valid_frames` are zero padding and never reach the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub x0: Matrix,
    pub x1: Matrix,
    pub xt: Matrix,
    pub t: f64,
    pub condition: ConditionId,
    pub valid_frames: usize,
}

impl FlowSample {
    pub fn new(x0: Matrix, x1: Matrix, t: f64, sigma_min: f64, condition: ConditionId, valid_frames: usize) -> Result<Self> {
        if x0.rows() != x1.rows() || x0.cols() != x1.cols() {
            return Err(Error::Shape("x0 and x1 shapes differ".into()));
        }
        if valid_frames == 0 || valid_frames > x1.rows() {
            return Err(Error::Shape(format!(
                "valid frame count {valid_frames} outside 1..={}",
                x1.rows()
            )));
        }
        let xt = Matrix::from_vec(
            x0.rows(),
            x0.cols(),
            flow_interpolate(x0.as_slice(), x1.as_slice(), t, sigma_min)?,
        )?;
        Ok(FlowSample {
            x0,
            x1,
            xt,
            t,
            condition,
            valid_frames,
        })
    }

    /// Per-frame mask: true for real frames.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.x1.rows()).map(|r| r < self.valid_frames).collect()
    }

    pub fn valid_xt(&self) -> Matrix {
        self.xt.top_rows(self.valid_frames)
    }

    /// Regression target over the valid frames for `config.objective`.
    pub fn target(&self, config: &CfmConfig) -> Result<Matrix> {
        let x1 = self.x1.top_rows(self.valid_frames);
        match config.objective {
            Objective::TargetPrediction => Ok(x1),
            Objective::VectorFieldPrediction => {
                let xt = self.valid_xt();
                let u = conditional_vector_field(xt.as_slice(), x1.as_slice(), self.t, config.sigma_min)?;
                Matrix::from_vec(x1.rows(), x1.cols(), u)
            }
        }
    }
}

/// How `t` is drawn for each sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeDraw {
    Uniform,
    Fixed(f64),
}

/// Draws `batch_size` clips uniformly with replacement and places each at a
/// random point of its conditional path.
///
/// `t ∼ U[0, 1)`; under the vector-field objective the draw is restricted to
/// the region where the field denominator exceeds [`DENOMINATOR_EPS`]. Noise
/// for each sample comes from a child stream seeded by the batch generator,
/// so a batch depends only on the state of `rng`.
pub fn make_training_batch(
    data: &[TrainingItem],
    batch_size: usize,
    config: &CfmConfig,
    time: TimeDraw,
    rng: &mut Rng,
) -> Result<Vec<FlowSample>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot draw a batch from an empty dataset".into()));
    }
    config.validate()?;
    let picks: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..data.len())).collect();
    let max_frames = picks.iter().map(|&i| data[i].frames.rows()).max().unwrap_or(0);
    let t_max = match config.objective {
        Objective::TargetPrediction => 1.0,
        Objective::VectorFieldPrediction => (1.0 - DENOMINATOR_EPS) / (1.0 - config.sigma_min),
    };
    let mut batch = Vec::with_capacity(batch_size);
    for &i in &picks {
        let item = &data[i];
        let t = match time {
            TimeDraw::Uniform => rng.gen::<f64>() * t_max,
            TimeDraw::Fixed(t) => t,
        };
        let child: u64 = rng.gen();
        let mut noise = rng::seeded(child);
        let d = item.frames.cols();
        let valid = item.frames.rows();
        let x0 = Matrix::from_fn(max_frames, d, |r, _| if r < valid { noise.sample(StandardNormal) } else { 0.0 });
        let mut x1 = Matrix::zeros(max_frames, d);
        x1.as_mut_slice()[..item.frames.as_slice().len()].copy_from_slice(item.frames.as_slice());
        batch.push(FlowSample::new(x0, x1, t, config.sigma_min, item.condition, item.frames.rows())?);
    }
    Ok(batch)
}

/// Mean squared error between `prediction` and the objective's target over
/// the valid frames, with its gradient with respect to `prediction`.
///
/// `prediction` may hold only the valid rows or the full padded block.
pub fn cfm_loss_and_grad(prediction: &Matrix, sample: &FlowSample, config: &CfmConfig) -> Result<(f64, Matrix)> {
    if prediction.cols() != sample.x1.cols() || prediction.rows() < sample.valid_frames {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, sample needs at least {}x{}",
            prediction.rows(),
            prediction.cols(),
            sample.valid_frames,
            sample.x1.cols()
        )));
    }
    let target = sample.target(config)?;
    let count = target.as_slice().len() as f64;
    let mut grad = Matrix::zeros(target.rows(), target.cols());
    let mut loss = 0.0;
    let pred = &prediction.as_slice()[..target.as_slice().len()];
    for ((g, p), y) in grad.as_mut_slice().iter_mut().zip(pred).zip(target.as_slice()) {
        let e = p - y;
        loss += e * e;
        *g = 2.0 * e / count;
    }
    Ok((loss / count, grad))
}

pub fn cfm_loss(prediction: &Matrix, sample: &FlowSample, config: &CfmConfig) -> Result<f64> {
    cfm_loss_and_grad(prediction, sample, config).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolation_examples() {
        let x0 = [0.7, -1.3];
        let x1 = [2.0, 4.0];
        assert_eq!(flow_interpolate(&x0, &x1, 0.0, 0.3).unwrap(), x0.to_vec());
        assert_eq!(flow_interpolate(&x0, &x1, 1.0, 0.0).unwrap(), x1.to_vec());
        assert_eq!(flow_interpolate(&[0.0, 0.0], &x1, 0.5, 0.0).unwrap(), vec![1.0, 2.0]);
        let v = flow_interpolate(&[1.0], &[3.0], 0.5, 0.1).unwrap();
        assert!((v[0] - 2.05).abs() < 1e-15);
        assert!(flow_interpolate(&[1.0], &[1.0, 2.0], 0.5, 0.0).is_err());
    }

    #[test]
    fn field_examples() {
        let x0 = [0.4, -2.0, 1.5];
        let x1 = [1.0, 3.0, -0.5];
        for t in [0.0, 0.25, 0.9] {
            let xt = flow_interpolate(&x0, &x1, t, 0.0).unwrap();
            let u = conditional_vector_field(&xt, &x1, t, 0.0).unwrap();
            for i in 0..3 {
                assert!((u[i] - (x1[i] - x0[i])).abs() < 1e-12);
            }
        }
        let u = conditional_vector_field(&[2.05], &[3.0], 0.5, 0.1).unwrap();
        // (3 − 0.9·2.05) / 0.55 = 1.155 / 0.55, which also equals x1 − 0.9·x0
        // for the x0 = 1 that produced x_t = 2.05.
        assert!((u[0] - 2.1).abs() < 1e-12);
    }

    #[test]
    fn field_is_singular_at_the_endpoint() {
        assert!(matches!(
            conditional_vector_field(&[1.0], &[1.0], 1.0, 0.0),
            Err(Error::Singularity { .. })
        ));
        assert!(conditional_vector_field(&[1.0], &[1.0], 1.0, 0.1).is_ok());
    }

    fn item(rows: usize, d: usize, v: f64, c: usize) -> TrainingItem {
        TrainingItem {
            frames: Matrix::from_fn(rows, d, |r, k| v + r as f64 * 0.1 + k as f64),
            condition: ConditionId(c),
        }
    }

    #[test]
    fn forced_times_hit_the_endpoints() {
        let data = vec![item(5, 3, 1.0, 0)];
        let cfg = CfmConfig::default();
        let b = make_training_batch(&data, 1, &cfg, TimeDraw::Fixed(0.0), &mut rng::seeded(1)).unwrap();
        assert_eq!(b[0].xt, b[0].x0);
        let b = make_training_batch(&data, 1, &cfg, TimeDraw::Fixed(1.0), &mut rng::seeded(1)).unwrap();
        assert_eq!(b[0].xt, b[0].x1);
    }

    #[test]
    fn batches_are_reproducible_and_padded() {
        let data = vec![item(5, 3, 1.0, 0), item(9, 3, -1.0, 1), item(2, 3, 0.0, 2)];
        let cfg = CfmConfig::default();
        let a = make_training_batch(&data, 8, &cfg, TimeDraw::Uniform, &mut rng::seeded(9)).unwrap();
        let b = make_training_batch(&data, 8, &cfg, TimeDraw::Uniform, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        let longest = a.iter().map(|s| s.valid_frames).max().unwrap();
        for s in &a {
            assert_eq!(s.x1.rows(), longest);
            assert!((0.0..1.0).contains(&s.t));
            assert!(s.x1.as_slice()[s.valid_frames * 3..].iter().all(|&v| v == 0.0));
            let m = s.mask();
            assert_eq!(m.iter().filter(|&&v| v).count(), s.valid_frames);
        }
        assert!(make_training_batch(&[], 2, &cfg, TimeDraw::Uniform, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn loss_examples() {
        let data = vec![item(3, 2, 0.5, 0)];
        let tp = CfmConfig::default();
        let vf = CfmConfig {
            objective: Objective::VectorFieldPrediction,
            ..tp
        };
        let s = &make_training_batch(&data, 1, &tp, TimeDraw::Fixed(0.3), &mut rng::seeded(2)).unwrap()[0];
        assert_eq!(cfm_loss(&s.x1, s, &tp).unwrap(), 0.0);
        let mut field = s.x1.clone();
        for (f, n) in field.as_mut_slice().iter_mut().zip(s.x0.as_slice()) {
            *f -= n;
        }
        assert!(cfm_loss(&field, s, &vf).unwrap() < 1e-24);

        let x1 = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let x0 = Matrix::from_vec(1, 1, vec![0.3]).unwrap();
        let s = FlowSample::new(x0, x1, 0.4, 0.0, ConditionId(0), 1).unwrap();
        let zero = Matrix::zeros(1, 1);
        assert_eq!(cfm_loss(&zero, &s, &tp).unwrap(), 4.0);
    }

    #[test]
    fn padded_frames_do_not_affect_loss() {
        let x1 = Matrix::from_fn(4, 2, |r, c| (r * 2 + c) as f64);
        let x0 = Matrix::from_fn(4, 2, |r, c| (r + c) as f64 * 0.1);
        let s = FlowSample::new(x0, x1, 0.5, 0.0, ConditionId(0), 2).unwrap();
        let mut p = Matrix::from_fn(4, 2, |r, c| (r * c) as f64);
        let cfg = CfmConfig::default();
        let a = cfm_loss(&p, &s, &cfg).unwrap();
        p.set(3, 1, 1e9);
        assert_eq!(cfm_loss(&p, &s, &cfg).unwrap(), a);
    }

    #[test]
    fn vector_field_batches_avoid_the_singularity() {
        let data = vec![item(2, 1, 0.0, 0)];
        let cfg = CfmConfig {
            sigma_min: 0.0,
            objective: Objective::VectorFieldPrediction,
        };
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let b = make_training_batch(&data, 4, &cfg, TimeDraw::Uniform, &mut r).unwrap();
            for s in &b {
                assert!(s.target(&cfg).is_ok());
            }
        }
    }

    proptest! {
        #[test]
        fn field_matches_path_derivative(
            x0 in proptest::collection::vec(-5.0f64..5.0, 6),
            x1 in proptest::collection::vec(-5.0f64..5.0, 6),
            t in 0.0f64..0.99,
            sigma in 0.0f64..0.5,
        ) {
            let xt = flow_interpolate(&x0, &x1, t, sigma).unwrap();
            let u = conditional_vector_field(&xt, &x1, t, sigma).unwrap();
            for i in 0..6 {
                let d = -(1.0 - sigma) * x0[i] + x1[i];
                prop_assert!((u[i] - d).abs() < 1e-9);
            }
        }

        #[test]
        fn endpoint_identities(
            x0 in proptest::collection::vec(-5.0f64..5.0, 4),
            x1 in proptest::collection::vec(-5.0f64..5.0, 4),
            sigma in 0.0f64..0.9,
        ) {
            prop_assert_eq!(flow_interpolate(&x0, &x1, 0.0, sigma).unwrap(), x0.clone());
            let end = flow_interpolate(&x0, &x1, 1.0, sigma).unwrap();
            for i in 0..4 {
                prop_assert!((end[i] - (sigma * x0[i] + x1[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_is_nonnegative_and_zero_only_at_target(
            p in proptest::collection::vec(-3.0f64..3.0, 6),
            y in proptest::collection::vec(-3.0f64..3.0, 6),
        ) {
            let x1 = Matrix::from_vec(3, 2, y).unwrap();
            let s = FlowSample::new(Matrix::zeros(3, 2), x1.clone(), 0.5, 0.0, ConditionId(0), 3).unwrap();
            let pred = Matrix::from_vec(3, 2, p).unwrap();
            let cfg = CfmConfig::default();
            let l = cfm_loss(&pred, &s, &cfg).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, pred == x1);
        }
    }
}
