#![no_main]

use drec_core::data::parse_libfm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_libfm(text) {
        for r in rows {
            assert!(r.label.is_finite());
            assert!(r.features.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }
});
