//! Regenerates the checked-in fuzz corpus seeds under `fuzz/corpus/`.
//!
//! ```text
//! cargo run -p corrdiff-cli --example gen_fuzz_corpus
//! ```

use corrdiff::latent::{range_encode, ChannelParams, LatentCode, TinyMlpAutoencoder};
use corrdiff::rng::DetRng;
use corrdiff::score::TinyScoreNet;
use corrdiff::tensor::{to_cdt_bytes, Tensor};
use corrdiff_cli::pipeline::{compress_tensor, CodecOptions};
use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let write = |target: &str, name: &str, bytes: &[u8]| {
        let dir = root.join(target);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(name), bytes).unwrap();
    };

    let mut rng = DetRng::new(0xC0);
    let small = Tensor::new(vec![24], rng.normal_vec(24)).unwrap();
    let image = Tensor::new(vec![8, 8], rng.normal_vec(64)).unwrap();

    // Valid streams at two shapes and both schedules.
    let out1 = compress_tensor(&small, &CodecOptions::default(), None).unwrap();
    write("parse_stream", "seed-vec.crdf", &out1.stream_bytes);
    write("decompress", "seed-vec.crdf", &out1.stream_bytes);
    let opts2 = CodecOptions {
        schedule: corrdiff::schedule::ScheduleKind::VpLinearBeta,
        keep_ratio: 0.5,
        seed: 3,
        ..CodecOptions::default()
    };
    let out2 = compress_tensor(&image, &opts2, None).unwrap();
    write("parse_stream", "seed-image.crdf", &out2.stream_bytes);
    write("decompress", "seed-image.crdf", &out2.stream_bytes);

    // Tensor files.
    write("parse_tensor", "seed-vec.cdt", &to_cdt_bytes(&small));
    write("parse_tensor", "seed-image.cdt", &to_cdt_bytes(&image));

    // Weight files for both trainable models.
    write("parse_weights", "seed-score.cdw", &TinyScoreNet::new(6, 3, 4, 8, 1).to_bytes());
    write(
        "parse_weights",
        "seed-autoencoder.cdw",
        &TinyMlpAutoencoder::new(vec![6], 3, 8, 2).unwrap().to_bytes(),
    );

    // Coded latent with the harness prefix [n, mean_bits, scale_bits].
    let params = ChannelParams::from_f64(0.5, 2.0).unwrap();
    let values: Vec<i32> = (0..32).map(|_| (2.0 * rng.normal()).round() as i32).collect();
    let code = LatentCode::new(values, vec![32], vec![params]).unwrap();
    let payload = range_encode(&code).unwrap();
    let mut seeded = Vec::new();
    seeded.extend_from_slice(&32u16.to_le_bytes());
    seeded.extend_from_slice(&params.mean_bits().to_le_bytes());
    seeded.extend_from_slice(&params.scale_bits().to_le_bytes());
    seeded.extend_from_slice(&payload);
    write("range_decode", "seed-latent.bin", &seeded);

    println!("wrote fuzz corpus seeds to {}", root.display());
}
