#![no_main]

use cfm_motion::cli::parse_points_csv;
use cfm_motion::metrics::{mahalanobis_fidj, OutlierRule};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mut points) = parse_points_csv(text) {
        if let Some(gt) = points.pop() {
            for rule in [OutlierRule::Mahalanobis, OutlierRule::MadZScore, OutlierRule::None] {
                let _ = mahalanobis_fidj(&points, &gt, rule);
            }
        }
    }
});
