//! File-level command implementations. Each returns a small report struct;
//! printing happens here so the binary and the tests see the same text.

use std::path::{Path, PathBuf};
use std::time::Instant;

use corrdiff::correction::{FeatureMse, MetricM};
use corrdiff::error::{Error, Result};
use corrdiff::latent::TinyMlpAutoencoder;
use corrdiff::tensor::{read_cdt_file, write_cdt_file, Tensor};

use crate::bdrate::{bd_rate, Curve};
use crate::pipeline::{compress_tensor, decompress_bytes, psnr, CodecOptions, CompressOutcome};

pub fn load_weights(path: Option<&Path>) -> Result<Option<TinyMlpAutoencoder>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let bytes = std::fs::read(p)?;
            Ok(Some(TinyMlpAutoencoder::from_bytes(&bytes)?))
        }
    }
}

pub fn cmd_compress(
    input: &Path,
    output: &Path,
    opts: &CodecOptions,
    weights: Option<&TinyMlpAutoencoder>,
) -> Result<CompressOutcome> {
    let x0 = read_cdt_file(input)?;
    let out = compress_tensor(&x0, opts, weights)?;
    std::fs::write(output, &out.stream_bytes)?;
    println!("wrote {} ({} bytes)", output.display(), out.stream_bytes.len());
    println!(
        "bpp: {:.6} ({} bits / {} elements)",
        out.bpp(),
        out.breakdown.total_bits(),
        out.elements
    );
    println!(
        "breakdown: header {} bits, latent {} bits, gamma {} bits",
        out.breakdown.header_bits, out.breakdown.latent_bits, out.breakdown.gamma_bits
    );
    Ok(out)
}

pub fn cmd_decompress(
    input: &Path,
    output: &Path,
    prior_width: f64,
    weights: Option<&TinyMlpAutoencoder>,
) -> Result<Tensor> {
    let bytes = std::fs::read(input)?;
    let x0 = decompress_bytes(&bytes, prior_width, weights)?;
    write_cdt_file(output, &x0)?;
    println!("wrote {} ({:?} elements)", output.display(), x0.shape());
    Ok(x0)
}

pub struct EvalReport {
    pub mse: f64,
    pub psnr: f64,
    pub feature_mse: f64,
    pub bpp: Option<f64>,
}

pub fn cmd_eval(
    original: &Path,
    reconstruction: &Path,
    stream: Option<&Path>,
    dynamic_range: f64,
) -> Result<EvalReport> {
    let a = read_cdt_file(original)?;
    let b = read_cdt_file(reconstruction)?;
    let mse = b.mse(&a)?;
    let feature = FeatureMse::default().eval(&b, &a)?;
    let bpp = match stream {
        None => None,
        Some(p) => {
            let bytes = std::fs::read(p)?;
            corrdiff::bitstream::parse(&bytes)?;
            Some(bytes.len() as f64 * 8.0 / a.len() as f64)
        }
    };
    let report = EvalReport { mse, psnr: psnr(mse, dynamic_range), feature_mse: feature, bpp };
    println!("metric,value");
    println!("mse,{}", report.mse);
    println!("psnr,{}", report.psnr);
    println!("feature_mse,{}", report.feature_mse);
    if let Some(bpp) = report.bpp {
        println!("bpp,{bpp}");
    }
    Ok(report)
}

/// One row of the rate-distortion sweep.
pub struct RdPoint {
    pub keep_ratio: f32,
    pub bpp: f64,
    pub mse: f64,
    pub psnr: f64,
    pub feature_mse: f64,
    pub wall_time_s: f64,
}

pub const RD_CSV_HEADER: &str = "keep_ratio,bpp,mse,psnr,feature_mse,wall_time_s";
pub const DEFAULT_KEEP_RATIOS: [f32; 5] = [0.75, 0.5, 0.25, 0.125, 0.0625];

/// Sweeps the rate knob over the inputs; per point, bits and distortion
/// aggregate over all files (bpp weights by element count, distortion by
/// file).
pub fn rd_sweep(inputs: &[Tensor], ratios: &[f32], base: &CodecOptions) -> Result<Vec<RdPoint>> {
    if inputs.is_empty() {
        return Err(Error::Config("rd sweep needs at least one input".into()));
    }
    let mut out = Vec::with_capacity(ratios.len());
    for &keep in ratios {
        let t0 = Instant::now();
        let opts = CodecOptions { keep_ratio: keep, ..base.clone() };
        let mut bits = 0u64;
        let mut elements = 0usize;
        let mut mse_sum = 0.0;
        let mut feat_sum = 0.0;
        for x0 in inputs {
            let compressed = compress_tensor(x0, &opts, None)?;
            let recon = decompress_bytes(&compressed.stream_bytes, opts.prior_width, None)?;
            bits += compressed.breakdown.total_bits();
            elements += x0.len();
            mse_sum += recon.mse(x0)?;
            feat_sum += FeatureMse::default().eval(&recon, x0)?;
        }
        let mse = mse_sum / inputs.len() as f64;
        out.push(RdPoint {
            keep_ratio: keep,
            bpp: bits as f64 / elements as f64,
            mse,
            psnr: psnr(mse, 1.0),
            feature_mse: feat_sum / inputs.len() as f64,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

pub fn cmd_rd_curve(
    inputs: &[PathBuf],
    output: &Path,
    ratios: &[f32],
    base: &CodecOptions,
) -> Result<Vec<RdPoint>> {
    let tensors: Vec<Tensor> = inputs.iter().map(|p| read_cdt_file(p)).collect::<Result<_>>()?;
    let points = rd_sweep(&tensors, ratios, base)?;
    let mut csv = String::from(RD_CSV_HEADER);
    csv.push('\n');
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.keep_ratio, p.bpp, p.mse, p.psnr, p.feature_mse, p.wall_time_s
        ));
    }
    std::fs::write(output, csv)?;
    println!("wrote {} ({} points)", output.display(), points.len());
    Ok(points)
}

/// Reads a named rate column and quality column out of a CSV with a header
/// row.
pub fn read_curve_csv(path: &Path, rate_col: &str, quality_col: &str, lower_is_better: bool) -> Result<Curve> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty csv", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Format(format!("{}: no column `{name}`", path.display())))
    };
    let rate_idx = find(rate_col)?;
    let quality_idx = find(quality_col)?;
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |idx: usize| -> Result<f64> {
            fields
                .get(idx)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row {}", path.display(), lineno + 2)))
        };
        let rate = get(rate_idx)?;
        let q = get(quality_idx)?;
        points.push((rate, if lower_is_better { -q } else { q }));
    }
    Ok(Curve { points })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_bd_rate(
    curve_a: &Path,
    curve_b: &Path,
    rate_col: &str,
    quality_col: &str,
    lower_is_better: bool,
) -> Result<f64> {
    let a = read_curve_csv(curve_a, rate_col, quality_col, lower_is_better)?;
    let b = read_curve_csv(curve_b, rate_col, quality_col, lower_is_better)?;
    let bd = bd_rate(&a, &b)?;
    println!("bd-rate: {bd:+.3}%");
    Ok(bd)
}
