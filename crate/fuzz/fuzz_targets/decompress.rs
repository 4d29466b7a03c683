#![no_main]

use libfuzzer_sys::fuzz_target;

// Whole-pipeline decode. A stream only reaches the sampler if its checksum
// holds, so most inputs exercise reject paths; the size guard keeps the few
// that survive from requesting arbitrarily large rollouts.
fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = corrdiff::bitstream::parse(data) {
        let elements: usize = stream.signal_shape.iter().product();
        if elements > 4096 || stream.t_steps > 64 {
            return;
        }
        let _ = corrdiff_cli::pipeline::decompress_bytes(data, 1.0, None);
    }
});
