#![no_main]

use libfuzzer_sys::fuzz_target;
use wavfusion::oracle::{compare, MarginBatch};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(batch) = MarginBatch::parse(text) {
        let _ = compare(&batch, 0.5);
    }
});
