#![no_main]

use libfuzzer_sys::fuzz_target;
use wavfusion::data::feature_file;

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = feature_file::decode(data) {
        // Anything accepted must re-encode to the same bytes.
        let again = feature_file::encode(&seq).expect("decoded sequence encodes");
        assert_eq!(again, data);
    }
});
