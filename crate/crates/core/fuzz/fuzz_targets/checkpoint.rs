#![no_main]

use cfm_motion::predictor::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&model).expect("decoded model encodes");
        assert_eq!(decode_checkpoint(&bytes).expect("re-encoded checkpoint decodes"), model);
    }
});
