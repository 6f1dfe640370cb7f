#![no_main]

use cfm_motion::motion_data::io::{decode_motion, encode_motion};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(motion) = decode_motion(data) {
        // Anything accepted must re-encode to a file that decodes identically.
        let again = decode_motion(&encode_motion(&motion)).expect("re-encoded motion decodes");
        assert_eq!(again, motion);
    }
});
