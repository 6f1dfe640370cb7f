#![no_main]

use cfm_motion::cli::config::{apply_override, RunConfig};
use libfuzzer_sys::fuzz_target;

// Input: a JSON document, optionally followed by a NUL byte and one
// `path=value` override per line.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (doc, overrides) = text.split_once('\0').unwrap_or((text, ""));
    let Ok(mut tree) = serde_json::from_str::<serde_json::Value>(doc) else { return };
    for line in overrides.lines() {
        let _ = apply_override(&mut tree, line);
    }
    if let Ok(config) = serde_json::from_value::<RunConfig>(tree) {
        let _ = config.validate();
    }
});
