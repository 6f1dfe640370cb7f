//! Motion feature representation, synthetic data, normalization and files.

pub mod contacts;
pub mod io;
pub mod layout;
pub mod norm;
pub mod sequence;
pub mod synth;
pub mod vocab;

pub use contacts::derive_foot_contacts;
pub use io::{read_dataset, read_motion_file, read_motion_set, write_dataset, write_motion_file, ManifestEntry};
pub use layout::{FeatureSlice, PoseLayout};
pub use norm::NormStats;
pub use sequence::MotionSequence;
pub use synth::{generate_synthetic_dataset, Dataset, FamilyKind, FamilySpec, GeneratorSpec};
pub use vocab::{ConditionId, ConditionVocab};
