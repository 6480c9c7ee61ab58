#![no_main]

use libfuzzer_sys::fuzz_target;
use wavfusion::fusion::checkpoint;

fuzz_target!(|data: &[u8]| {
    let _ = checkpoint::decode(data);
});
