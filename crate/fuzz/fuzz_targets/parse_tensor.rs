#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = corrdiff::tensor::from_cdt_bytes(data);
});
