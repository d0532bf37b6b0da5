#![no_main]

use drec_core::data::{parse_interactions, Separator, UirtOptions};
use libfuzzer_sys::fuzz_target;

// The first byte picks the parser options, the rest is the file body.
fuzz_target!(|data: &[u8]| {
    let Some((&mode, body)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(body) else { return };
    let separator = match mode % 4 {
        0 => None,
        1 => Some(Separator::Tab),
        2 => Some(Separator::Comma),
        _ => Some(Separator::Whitespace),
    };
    let opts = UirtOptions {
        separator,
        has_header: mode & 4 != 0,
    };
    if let Ok(table) = parse_interactions(text, &opts) {
        for x in table.interactions() {
            assert!(x.user < table.n_users() && x.item < table.n_items());
            assert!(x.rating.is_finite());
        }
    }
});
