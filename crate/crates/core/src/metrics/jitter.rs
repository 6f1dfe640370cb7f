use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_data::{FeatureSlice, MotionSequence};

/// Finite-difference order used by [`jitter`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterOrder {
    Acceleration,
    #[default]
    Jerk,
}

impl JitterOrder {
    pub fn order(self) -> usize {
        match self {
            JitterOrder::Acceleration => 2,
            JitterOrder::Jerk => 3,
        }
    }

    fn stencil(self) -> &'static [f64] {
        match self {
            JitterOrder::Acceleration => &[1.0, -2.0, 1.0],
            JitterOrder::Jerk => &[-1.0, 3.0, -3.0, 1.0],
        }
    }
}

/// Mean Euclidean norm of the `order`-th forward difference of every
/// root-relative joint position, in units per second^order.
pub fn jitter(motion: &MotionSequence, order: JitterOrder) -> Result<f64> {
    let stencil = order.stencil();
    let n = motion.frame_count();
    if n < stencil.len() {
        return Err(Error::TooFewFrames {
            needed: stencil.len(),
            got: n,
        });
    }
    let range = motion.layout().range(FeatureSlice::JointPositions);
    let frames = motion.frames();
    let joints = range.len() / 3;
    let windows = n + 1 - stencil.len();
    let mut total = 0.0;
    for k in 0..windows {
        for j in 0..joints {
            let mut d = [0.0f64; 3];
            for (i, w) in stencil.iter().enumerate() {
                let row = &frames.row(k + i)[range.start + 3 * j..range.start + 3 * j + 3];
                for a in 0..3 {
                    d[a] += w * row[a];
                }
            }
            total += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        }
    }
    let scale = motion.fps().powi(order.order() as i32);
    Ok(total / (windows * joints) as f64 * scale)
}

/// Rescales a jitter measured on dataset B into the spatial units of
/// dataset A: `(range_a / range_b) · jitter_b`.
pub fn jitter_scale(jitter_b: f64, range_a: f64, range_b: f64) -> Result<f64> {
    if !(range_a > 0.0 && range_b > 0.0) {
        return Err(Error::InvalidInput(format!(
            "ranges must be positive, got {range_a} and {range_b}"
        )));
    }
    Ok(range_a / range_b * jitter_b)
}

/// Mean per-sequence maximum joint coordinate minus mean per-sequence
/// minimum, over the joint-position slice.
pub fn position_range<'a>(motions: impl IntoIterator<Item = &'a MotionSequence>) -> Result<f64> {
    let mut max_sum = 0.0;
    let mut min_sum = 0.0;
    let mut count = 0usize;
    for m in motions {
        let range = m.layout().range(FeatureSlice::JointPositions);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..m.frame_count() {
            for &v in &m.frames().row(r)[range.clone()] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        max_sum += hi;
        min_sum += lo;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("no motions".into()));
    }
    Ok((max_sum - min_sum) / count as f64)
}
