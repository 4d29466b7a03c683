//! Orthonormal DCT-II for the deterministic transform autoencoder.
//!
//! Direct O(n^2) evaluation; the desk-scale signals here never justify an
//! FFT-backed fast path.

use std::f64::consts::PI;

/// Forward orthonormal DCT-II of a 1-D slice.
pub fn dct1d(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    let c0 = (1.0 / nf).sqrt();
    let ck = (2.0 / nf).sqrt();
    (0..n)
        .map(|k| {
            let scale = if k == 0 { c0 } else { ck };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos())
                .sum();
            scale * sum
        })
        .collect()
}

/// Inverse of [`dct1d`] (DCT-III with matching normalization).
pub fn idct1d(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    let nf = n as f64;
    let c0 = (1.0 / nf).sqrt();
    let ck = (2.0 / nf).sqrt();
    (0..n)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let scale = if k == 0 { c0 } else { ck };
                    scale * v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
                })
                .sum()
        })
        .collect()
}

/// Separable 2-D DCT-II over a row-major [rows x cols] buffer.
pub fn dct2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    apply2d(x, rows, cols, dct1d)
}

pub fn idct2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    apply2d(x, rows, cols, idct1d)
}

fn apply2d(x: &[f64], rows: usize, cols: usize, f: fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    // Rows first.
    for r in 0..rows {
        let t = f(&x[r * cols..(r + 1) * cols]);
        out[r * cols..(r + 1) * cols].copy_from_slice(&t);
    }
    // Then columns.
    let mut col = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = out[r * cols + c];
        }
        let t = f(&col);
        for r in 0..rows {
            out[r * cols + c] = t[r];
        }
    }
    out
}
