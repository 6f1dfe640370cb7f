use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named feature groups of a pose vector, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSlice {
    RootAngularVelocity,
    RootVelocityX,
    RootVelocityZ,
    RootHeight,
    JointPositions,
    JointVelocities,
    JointRotations,
    FootContacts,
}

impl FeatureSlice {
    pub const ALL: [FeatureSlice; 8] = [
        FeatureSlice::RootAngularVelocity,
        FeatureSlice::RootVelocityX,
        FeatureSlice::RootVelocityZ,
        FeatureSlice::RootHeight,
        FeatureSlice::JointPositions,
        FeatureSlice::JointVelocities,
        FeatureSlice::JointRotations,
        FeatureSlice::FootContacts,
    ];

    fn width(self, joint_count: usize) -> usize {
        let local = joint_count - 1;
        match self {
            FeatureSlice::RootAngularVelocity
            | FeatureSlice::RootVelocityX
            | FeatureSlice::RootVelocityZ
            | FeatureSlice::RootHeight => 1,
            FeatureSlice::JointPositions => 3 * local,
            // Velocities include the root joint, as in the HumanML3D layout.
            FeatureSlice::JointVelocities => 3 * joint_count,
            FeatureSlice::JointRotations => 6 * local,
            FeatureSlice::FootContacts => 4,
        }
    }
}

/// Per-frame feature layout for a skeleton with `joint_count` joints.
///
/// Positions and rotations cover the `J − 1` non-root joints, velocities
/// cover all `J` joints, giving `D = 8 + 12(J − 1) + 3J`: 263 for 22 joints
/// and 251 for 21.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr", into = "LayoutRepr")]
pub struct PoseLayout {
    joint_count: usize,
    offsets: [usize; 8],
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    joint_count: usize,
}

impl TryFrom<LayoutRepr> for PoseLayout {
    type Error = Error;
    fn try_from(r: LayoutRepr) -> Result<Self> {
        PoseLayout::new(r.joint_count)
    }
}

impl From<PoseLayout> for LayoutRepr {
    fn from(l: PoseLayout) -> Self {
        LayoutRepr {
            joint_count: l.joint_count,
        }
    }
}

impl PoseLayout {
    pub const MAX_JOINTS: usize = 1024;

    pub fn new(joint_count: usize) -> Result<Self> {
        if !(2..=Self::MAX_JOINTS).contains(&joint_count) {
            return Err(Error::InvalidConfig(format!(
                "joint count must be in 2..={}, got {joint_count}",
                Self::MAX_JOINTS
            )));
        }
        let mut offsets = [0usize; 8];
        let mut cursor = 0;
        for (slot, slice) in offsets.iter_mut().zip(FeatureSlice::ALL) {
            *slot = cursor;
            cursor += slice.width(joint_count);
        }
        Ok(PoseLayout {
            joint_count,
            offsets,
            feature_dim: cursor,
        })
    }

    /// Rebuilds a layout from stored offsets, rejecting any that disagree
    /// with the canonical layout for `joint_count`.
    pub fn from_offsets(joint_count: usize, offsets: [usize; 8]) -> Result<Self> {
        let layout = PoseLayout::new(joint_count)?;
        if layout.offsets != offsets {
            return Err(Error::Malformed(format!(
                "slice offsets {offsets:?} do not match the layout for {joint_count} joints"
            )));
        }
        Ok(layout)
    }

    #[inline]
    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    #[inline]
    pub fn local_joint_count(&self) -> usize {
        self.joint_count - 1
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn offsets(&self) -> [usize; 8] {
        self.offsets
    }

    pub fn range(&self, slice: FeatureSlice) -> Range<usize> {
        let i = FeatureSlice::ALL.iter().position(|s| *s == slice).unwrap();
        let end = if i + 1 < 8 {
            self.offsets[i + 1]
        } else {
            self.feature_dim
        };
        self.offsets[i]..end
    }

    /// Root velocity in the XZ plane (two features).
    pub fn root_xz(&self) -> Range<usize> {
        self.range(FeatureSlice::RootVelocityX).start..self.range(FeatureSlice::RootVelocityZ).end
    }

    pub fn slices(&self) -> impl Iterator<Item = (FeatureSlice, Range<usize>)> + '_ {
        FeatureSlice::ALL.into_iter().map(|s| (s, self.range(s)))
    }
}
