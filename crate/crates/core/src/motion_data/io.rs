//! Motion files and dataset manifests.
//!
//! Motion file layout (little-endian):
//!
//! ```text
//! "FMOT"  version:u32=1  N:u32  D:u32  fps:f32
//! J:u32  offsets:[u32; 8]
//! payload: N×D f32, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::layout::PoseLayout;
use super::sequence::MotionSequence;
use super::synth::Dataset;
use super::vocab::{ConditionId, ConditionVocab};

pub const MOTION_MAGIC: [u8; 4] = *b"FMOT";
pub const MOTION_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 4 + 8 * 4;

pub fn encode_motion(motion: &MotionSequence) -> Vec<u8> {
    let f = motion.frames();
    let layout = motion.layout();
    let mut out = Vec::with_capacity(HEADER_LEN + f.as_slice().len() * 4);
    out.extend_from_slice(&MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(f.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(motion.fps() as f32).to_le_bytes());
    out.extend_from_slice(&(layout.joint_count() as u32).to_le_bytes());
    for o in layout.offsets() {
        out.extend_from_slice(&(o as u32).to_le_bytes());
    }
    for v in f.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn check_magic(found: &[u8], expected: [u8; 4]) -> Result<()> {
    if found != expected {
        return Err(Error::BadMagic {
            expected,
            found: found.to_vec(),
        });
    }
    Ok(())
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionSequence> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4.min(bytes.len()))?;
    check_magic(magic, MOTION_MAGIC)?;
    let version = r.u32()?;
    if version != MOTION_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let fps = r.f32()?;
    let joints = r.u32()? as usize;
    let mut offsets = [0usize; 8];
    for o in &mut offsets {
        *o = r.u32()? as usize;
    }
    let payload = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Malformed(format!("frame count {n} × dimension {d} overflows")))?;
    if r.remaining() != payload {
        return Err(Error::Truncated {
            expected: HEADER_LEN + payload,
            found: bytes.len(),
        });
    }
    if !fps.is_finite() {
        return Err(Error::NonFinite("fps".into()));
    }
    let layout = PoseLayout::from_offsets(joints, offsets)?;
    if layout.feature_dim() != d {
        return Err(Error::Malformed(format!(
            "header dimension {d} does not match layout dimension {}",
            layout.feature_dim()
        )));
    }
    let data: Vec<f64> = r
        .take(payload)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MotionSequence::new(Matrix::from_vec(n, d, data)?, fps as f64, layout)
}

pub fn write_motion_file(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_motion(motion)).map_err(|e| Error::io(path, e))
}

pub fn read_motion_file(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_motion(&bytes)
}

/// One line of a dataset manifest; `motion_path` is relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub motion_path: String,
    pub condition_id: usize,
    pub prompt: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    Ok(serde_json::from_str(text)?)
}

/// Rebuilds the vocabulary implied by manifest entries. Ids must be dense
/// and each id must always carry the same prompt.
pub fn vocab_from_manifest(entries: &[ManifestEntry]) -> Result<ConditionVocab> {
    let k = entries.iter().map(|e| e.condition_id + 1).max().unwrap_or(0);
    let mut prompts: Vec<Option<String>> = vec![None; k];
    for e in entries {
        match &prompts[e.condition_id] {
            None => prompts[e.condition_id] = Some(e.prompt.clone()),
            Some(p) if *p == e.prompt => {}
            Some(p) => {
                return Err(Error::Malformed(format!(
                    "condition {} has prompts {p:?} and {:?}",
                    e.condition_id, e.prompt
                )))
            }
        }
    }
    let prompts = prompts
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::Malformed(format!("condition id {i} is unused"))))
        .collect::<Result<Vec<_>>>()?;
    ConditionVocab::new(prompts)
}

/// Writes `motions/NNNNNN.fmot` files and `manifest.json` under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let motions_dir = dir.join("motions");
    fs::create_dir_all(&motions_dir).map_err(|e| Error::io(&motions_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (m, c)) in dataset.iter().enumerate() {
        let rel = format!("motions/{i:06}.fmot");
        write_motion_file(m, dir.join(&rel))?;
        entries.push(ManifestEntry {
            motion_path: rel,
            condition_id: c.0,
            prompt: dataset.vocab.prompt(c).unwrap_or_default().to_string(),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&entries)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Resolves `path` to a manifest: either the file itself or `manifest.json`
/// inside a directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Reads the manifest entries and motions under `path` without requiring
/// the condition ids to cover a whole vocabulary.
pub fn read_motion_set(path: impl AsRef<Path>) -> Result<(Vec<ManifestEntry>, Vec<MotionSequence>)> {
    let manifest = manifest_path(path.as_ref());
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let entries = parse_manifest(&text)?;
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no motions", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let motions = entries
        .iter()
        .map(|e| read_motion_file(base.join(&e.motion_path)))
        .collect::<Result<Vec<_>>>()?;
    Ok((entries, motions))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let (entries, motions) = read_motion_set(path)?;
    let vocab = vocab_from_manifest(&entries)?;
    Ok(Dataset {
        motions,
        conditions: entries.iter().map(|e| ConditionId(e.condition_id)).collect(),
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_data::layout::FeatureSlice;
    use proptest::prelude::*;

    fn random_motion(n: usize, joints: usize, seed: u64) -> MotionSequence {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        let layout = PoseLayout::new(joints).unwrap();
        let d = layout.feature_dim();
        let cf = layout.range(FeatureSlice::FootContacts);
        let m = Matrix::from_fn(n, d, |_, c| {
            if cf.contains(&c) {
                rng.gen_range(0.0..=1.0)
            } else {
                rng.gen_range(-10.0..10.0)
            }
        });
        MotionSequence::new(m, 20.0, layout).unwrap().quantized()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = random_motion(17, 5, 3);
        let bytes = encode_motion(&m);
        let back = decode_motion(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_motion(&back), bytes);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode_motion(&random_motion(3, 2, 1));
        bytes[0] = b'X';
        assert!(matches!(decode_motion(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn inconsistent_length_is_truncation() {
        let mut bytes = encode_motion(&random_motion(4, 3, 1));
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(decode_motion(&bytes), Err(Error::Truncated { .. })));
        let mut bytes = encode_motion(&random_motion(4, 3, 1));
        bytes[8] = 9; // N = 9 frames but payload holds 4
        assert!(matches!(decode_motion(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = encode_motion(&random_motion(3, 2, 1));
        let at = HEADER_LEN;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_motion(&bytes), Err(Error::NonFinite(_))));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = encode_motion(&random_motion(3, 2, 1));
        bytes[4] = 2;
        assert!(matches!(decode_motion(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn dataset_round_trip() {
        use crate::motion_data::synth::{generate_synthetic_dataset, GeneratorSpec};
        let spec = GeneratorSpec {
            sequences_per_family: 2,
            ..GeneratorSpec::default()
        };
        let data = generate_synthetic_dataset(&spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.motions, data.motions);
        assert_eq!(back.conditions, data.conditions);
        assert_eq!(back.vocab, data.vocab);
    }

    #[test]
    fn manifest_prompts_must_agree() {
        let entries = vec![
            ManifestEntry { motion_path: "a".into(), condition_id: 0, prompt: "x".into() },
            ManifestEntry { motion_path: "b".into(), condition_id: 0, prompt: "y".into() },
        ];
        assert!(vocab_from_manifest(&entries).is_err());
        let gap = vec![ManifestEntry { motion_path: "a".into(), condition_id: 1, prompt: "x".into() }];
        assert!(vocab_from_manifest(&gap).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_motion(&bytes);
        }

        #[test]
        fn encode_decode_identity(n in 2usize..20, j in 2usize..6, seed in any::<u64>()) {
            let m = random_motion(n, j, seed);
            prop_assert_eq!(decode_motion(&encode_motion(&m)).unwrap(), m);
        }
    }
}
