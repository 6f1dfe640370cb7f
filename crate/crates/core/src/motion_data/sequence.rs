use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::layout::{FeatureSlice, PoseLayout};

/// A motion clip: `N × D` features sampled at `fps`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Matrix,
    fps: f64,
    layout: PoseLayout,
}

impl MotionSequence {
    pub fn new(frames: Matrix, fps: f64, layout: PoseLayout) -> Result<Self> {
        if frames.cols() != layout.feature_dim() {
            return Err(Error::Shape(format!(
                "frames have {} features, layout expects {}",
                frames.cols(),
                layout.feature_dim()
            )));
        }
        if frames.rows() < 2 {
            return Err(Error::TooFewFrames {
                needed: 2,
                got: frames.rows(),
            });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = frames.as_slice().iter().position(|v| !v.is_finite()) {
            let d = layout.feature_dim();
            return Err(Error::NonFinite(format!("frame {} feature {}", i / d, i % d)));
        }
        let contacts = layout.range(FeatureSlice::FootContacts);
        for r in 0..frames.rows() {
            if let Some(v) = frames.row(r)[contacts.clone()]
                .iter()
                .find(|v| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::InvalidInput(format!(
                    "foot contact {v} outside [0, 1] at frame {r}"
                )));
            }
        }
        Ok(MotionSequence {
            frames,
            fps,
            layout,
        })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn layout(&self) -> &PoseLayout {
        &self.layout
    }

    pub fn slice(&self, frame: usize, slice: FeatureSlice) -> &[f64] {
        &self.frames.row(frame)[self.layout.range(slice)]
    }

    /// Local positions of the non-root joints at `frame`, as `[x, y, z]`.
    pub fn joint_positions(&self, frame: usize) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.slice(frame, FeatureSlice::JointPositions)
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
    }

    /// World-space positions of every joint, root first, at every frame.
    ///
    /// The root heading and planar position are integrated from the
    /// per-frame root velocities (given in the root's own frame), starting at
    /// the origin facing +Z. Local joint offsets are rotated by the heading.
    pub fn global_joint_positions(&self) -> Vec<Vec<[f64; 3]>> {
        let dt = 1.0 / self.fps;
        let av = self.layout.range(FeatureSlice::RootAngularVelocity).start;
        let vx = self.layout.range(FeatureSlice::RootVelocityX).start;
        let vz = self.layout.range(FeatureSlice::RootVelocityZ).start;
        let h = self.layout.range(FeatureSlice::RootHeight).start;
        let (mut heading, mut x, mut z) = (0.0f64, 0.0, 0.0);
        let mut out = Vec::with_capacity(self.frame_count());
        for k in 0..self.frame_count() {
            let row = self.frames.row(k);
            let (s, c) = heading.sin_cos();
            let mut joints = Vec::with_capacity(self.layout.joint_count());
            joints.push([x, row[h], z]);
            joints.extend(self.joint_positions(k).map(|l| [x + l[0] * c + l[2] * s, l[1], z - l[0] * s + l[2] * c]));
            out.push(joints);
            x += (c * row[vx] + s * row[vz]) * dt;
            z += (-s * row[vx] + c * row[vz]) * dt;
            heading += row[av] * dt;
        }
        out
    }

    /// Rounds every feature to single precision, the resolution of the
    /// motion file format.
    pub fn quantized(mut self) -> Self {
        for v in self.frames.as_mut_slice() {
            *v = *v as f32 as f64;
        }
        self.fps = self.fps as f32 as f64;
        self
    }
}
