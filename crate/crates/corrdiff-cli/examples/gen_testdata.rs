//! Regenerates the bundled synthetic tensors under `testdata/`.
//!
//! Run from the repository root:
//!
//! ```text
//! cargo run -p corrdiff-cli --example gen_testdata
//! ```

use corrdiff::rng::DetRng;
use corrdiff::tensor::{write_cdt_file, Tensor};
use std::path::Path;

fn sine_mix(n: usize, seed: u64) -> Tensor {
    let mut rng = DetRng::new(seed);
    let data: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            0.45 * (2.0 * std::f64::consts::PI * 2.0 * t).sin()
                + 0.25 * (2.0 * std::f64::consts::PI * 9.0 * t).sin()
                + 0.12 * (2.0 * std::f64::consts::PI * 23.0 * t).cos()
                + 0.05 * rng.normal()
        })
        .collect();
    Tensor::new(vec![n], data).unwrap()
}

fn ramp_noise(n: usize, seed: u64) -> Tensor {
    let mut rng = DetRng::new(seed);
    let data: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            t - 0.5 + 0.3 * (2.0 * std::f64::consts::PI * 13.0 * t).sin() + 0.08 * rng.normal()
        })
        .collect();
    Tensor::new(vec![n], data).unwrap()
}

fn texture(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = DetRng::new(seed);
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let blob = ((r / 4) * 31 + (c / 4) * 17) as f64;
            data[r * cols + c] = 0.4 * (blob * 0.7).sin() + 0.1 * rng.normal();
        }
    }
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata");
    std::fs::create_dir_all(&dir).unwrap();
    write_cdt_file(&dir.join("sine-mix-256.cdt"), &sine_mix(256, 11)).unwrap();
    write_cdt_file(&dir.join("ramp-noise-128.cdt"), &ramp_noise(128, 13)).unwrap();
    write_cdt_file(&dir.join("texture-16x16.cdt"), &texture(16, 16, 17)).unwrap();
    println!("wrote 3 tensors to {}", dir.display());
}
