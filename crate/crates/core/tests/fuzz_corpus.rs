//! Replays the checked-in fuzz corpus through the same decoders and checks
//! the fuzz targets run against: no panics, and accepted inputs round-trip.

use std::path::PathBuf;

use cfm_motion::cli::config::{apply_override, RunConfig};
use cfm_motion::cli::parse_points_csv;
use cfm_motion::metrics::{mahalanobis_fidj, OutlierRule};
use cfm_motion::motion_data::io::{decode_motion, encode_motion, parse_manifest, vocab_from_manifest};
use cfm_motion::predictor::{decode_checkpoint, encode_checkpoint};

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files.into_iter().map(|p| (p.clone(), std::fs::read(&p).unwrap())).collect()
}

/// Every prefix and a handful of single-byte corruptions of `bytes`.
fn mutations(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = (0..bytes.len()).step_by(7).map(|n| bytes[..n].to_vec()).collect();
    for i in (0..bytes.len()).step_by(bytes.len() / 50 + 1) {
        let mut m = bytes.to_vec();
        m[i] ^= 0xff;
        out.push(m);
    }
    out.push(bytes.to_vec());
    out
}

#[test]
fn motion_files() {
    let mut accepted = 0;
    for (_, bytes) in corpus("motion_file") {
        for m in mutations(&bytes) {
            if let Ok(motion) = decode_motion(&m) {
                assert_eq!(decode_motion(&encode_motion(&motion)).unwrap(), motion);
                accepted += 1;
            }
        }
    }
    assert!(accepted > 0);
}

#[test]
fn checkpoints() {
    let mut accepted = 0;
    for (_, bytes) in corpus("checkpoint") {
        for m in mutations(&bytes) {
            if let Ok(model) = decode_checkpoint(&m) {
                assert_eq!(decode_checkpoint(&encode_checkpoint(&model).unwrap()).unwrap(), model);
                accepted += 1;
            }
        }
    }
    assert!(accepted > 0);
}

#[test]
fn manifests() {
    for (_, bytes) in corpus("manifest") {
        for m in mutations(&bytes) {
            let Ok(text) = std::str::from_utf8(&m) else { continue };
            if let Ok(entries) = parse_manifest(text) {
                let _ = vocab_from_manifest(&entries);
            }
        }
    }
}

#[test]
fn run_configs() {
    let mut valid = 0;
    for (_, bytes) in corpus("run_config") {
        for m in mutations(&bytes) {
            let Ok(text) = std::str::from_utf8(&m) else { continue };
            let (doc, overrides) = text.split_once('\0').unwrap_or((text, ""));
            let Ok(mut tree) = serde_json::from_str::<serde_json::Value>(doc) else { continue };
            for line in overrides.lines() {
                let _ = apply_override(&mut tree, line);
            }
            if let Ok(config) = serde_json::from_value::<RunConfig>(tree) {
                if config.validate().is_ok() {
                    valid += 1;
                }
            }
        }
    }
    assert!(valid > 0);
}

#[test]
fn points_csvs() {
    for (_, bytes) in corpus("points_csv") {
        for m in mutations(&bytes) {
            let Ok(text) = std::str::from_utf8(&m) else { continue };
            if let Ok(mut points) = parse_points_csv(text) {
                if let Some(gt) = points.pop() {
                    for rule in [OutlierRule::Mahalanobis, OutlierRule::MadZScore, OutlierRule::None] {
                        let _ = mahalanobis_fidj(&points, &gt, rule);
                    }
                }
            }
        }
    }
}
