#![no_main]

use libfuzzer_sys::fuzz_target;

use corrdiff::latent::{range_decode, ChannelParams};

// Input layout: [n_lo, n_hi, mean_bits (2), scale_bits (2), payload...].
// The first six bytes pick a latent length and one channel's entropy
// parameters; the rest is the coded payload under test.
fuzz_target!(|data: &[u8]| {
    if data.len() < 6 {
        return;
    }
    let n = (u16::from_le_bytes([data[0], data[1]]) % 2048) as usize;
    let mean_bits = u16::from_le_bytes([data[2], data[3]]);
    let scale_bits = u16::from_le_bytes([data[4], data[5]]);
    let Ok(params) = ChannelParams::from_bits(mean_bits, scale_bits) else {
        return;
    };
    let _ = range_decode(&data[6..], &[n], &[params]);
});
