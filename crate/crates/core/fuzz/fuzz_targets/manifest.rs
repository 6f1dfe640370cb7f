#![no_main]

use cfm_motion::motion_data::io::{parse_manifest, vocab_from_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_manifest(text) {
        if let Ok(vocab) = vocab_from_manifest(&entries) {
            for e in &entries {
                assert_eq!(vocab.prompt(cfm_motion::motion_data::ConditionId(e.condition_id)), Some(e.prompt.as_str()));
            }
        }
    }
});
