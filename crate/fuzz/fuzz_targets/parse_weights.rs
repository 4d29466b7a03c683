#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = corrdiff::nn::weights_from_bytes(data);
    let _ = corrdiff::score::TinyScoreNet::from_bytes(data);
    let _ = corrdiff::latent::TinyMlpAutoencoder::from_bytes(data);
});
