//! The privileged end-to-end path: encoder, quantizer, decoder, entropy
//! model, rate estimator and lossless coding of the quantized latent.
//!
//! Two autoencoder pairs are provided. `linear-dct` truncates an orthonormal
//! transform to a kept coefficient block and quantizes uniformly; it is fully
//! deterministic and needs no training, which makes it the default wire
//! configuration. `tiny-mlp` is a small trainable pair whose weights travel
//! out of band like any codec model.

pub mod entropy;
pub mod range;
pub mod transform;

use half::f16;

use crate::error::{Error, ProtocolError, Result};
use crate::nn::{weights_from_bytes, weights_to_bytes, Mlp};
use crate::rng::DetRng;
use crate::tensor::Tensor;
use entropy::{ChannelModel, PROB_TOTAL};
use range::{RangeDecoder, RangeEncoder};

/// Floor applied to fitted per-channel scales.
pub const SCALE_FLOOR: f64 = 0.05;

/// Per-channel Gaussian parameters at wire resolution (binary16).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelParams {
    mean_bits: u16,
    scale_bits: u16,
}

impl ChannelParams {
    pub fn from_f64(mean: f64, scale: f64) -> Result<Self> {
        let p = Self { mean_bits: f16::from_f64(mean).to_bits(), scale_bits: f16::from_f64(scale).to_bits() };
        p.validate()?;
        Ok(p)
    }

    pub fn from_bits(mean_bits: u16, scale_bits: u16) -> Result<Self> {
        let p = Self { mean_bits, scale_bits };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let m = self.mean();
        let s = self.scale();
        if !m.is_finite() || !s.is_finite() || s <= 0.0 {
            return Err(Error::Config(format!(
                "entropy params must be finite with positive scale, got ({m}, {s})"
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        f16::from_bits(self.mean_bits).to_f64()
    }

    pub fn scale(&self) -> f64 {
        f16::from_bits(self.scale_bits).to_f64()
    }

    pub fn mean_bits(&self) -> u16 {
        self.mean_bits
    }

    pub fn scale_bits(&self) -> u16 {
        self.scale_bits
    }

    fn model(&self) -> Result<ChannelModel> {
        ChannelModel::build(self.mean_bits, self.scale_bits)
    }
}

/// Number of entropy channels implied by a latent shape: the leading
/// dimension for rank >= 2, otherwise one.
pub fn channel_count(shape: &[usize]) -> usize {
    if shape.len() >= 2 {
        shape[0]
    } else {
        1
    }
}

/// Quantized latent plus the entropy parameters needed to code it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    values: Vec<i32>,
    shape: Vec<usize>,
    entropy_params: Vec<ChannelParams>,
}

impl LatentCode {
    pub fn new(values: Vec<i32>, shape: Vec<usize>, entropy_params: Vec<ChannelParams>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != values.len() {
            return Err(Error::dimension(
                format!("{n} values for shape {shape:?}"),
                format!("{}", values.len()),
            ));
        }
        if values
            .iter()
            .any(|&v| v < i16::MIN as i32 || v > i16::MAX as i32)
        {
            return Err(Error::Numeric("latent value outside the 16-bit symbol range".into()));
        }
        let channels = channel_count(&shape);
        if entropy_params.len() != channels {
            return Err(Error::dimension(
                format!("{channels} channel params"),
                format!("{}", entropy_params.len()),
            ));
        }
        for p in &entropy_params {
            p.validate()?;
        }
        Ok(Self { values, shape, entropy_params })
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entropy_params(&self) -> &[ChannelParams] {
        &self.entropy_params
    }

    pub fn dequantized(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    fn per_channel_len(&self) -> usize {
        let channels = channel_count(&self.shape);
        if channels == 0 {
            0
        } else {
            self.values.len() / channels
        }
    }
}

/// Elementwise round-to-nearest-even quantizer.
pub fn quantize_symbol(v: f64) -> Result<i32> {
    if !v.is_finite() {
        return Err(Error::Numeric("cannot quantize a non-finite latent value".into()));
    }
    let r = v.round_ties_even();
    if r < i16::MIN as f64 || r > i16::MAX as f64 {
        return Err(Error::Numeric(format!("quantized latent value {r} overflows 16 bits")));
    }
    Ok(r as i32)
}

/// Fits per-channel (mean, max(std, floor)) over quantized values.
pub fn fit_entropy_params(values: &[i32], shape: &[usize]) -> Result<Vec<ChannelParams>> {
    let channels = channel_count(shape);
    let per = if channels == 0 { 0 } else { values.len() / channels };
    let mut out = Vec::with_capacity(channels);
    for c in 0..channels {
        let chunk = &values[c * per..(c + 1) * per];
        let n = chunk.len().max(1) as f64;
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = chunk
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        out.push(ChannelParams::from_f64(mean, var.sqrt().max(SCALE_FLOOR))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Autoencoder pairs
// ---------------------------------------------------------------------------

/// Deterministic transform pair: orthonormal DCT, kept coefficient block,
/// uniform quantization step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDct {
    pub keep_ratio: f32,
    pub qstep: f32,
    pub signal_shape: Vec<usize>,
}

impl LinearDct {
    pub fn new(keep_ratio: f32, qstep: f32, signal_shape: Vec<usize>) -> Result<Self> {
        if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
            return Err(Error::Config(format!("keep ratio must be in (0, 1], got {keep_ratio}")));
        }
        if !(qstep > 0.0) || !qstep.is_finite() {
            return Err(Error::Config(format!("quantization step must be positive, got {qstep}")));
        }
        if signal_shape.is_empty() || signal_shape.len() > 2 {
            return Err(Error::Config(format!(
                "linear-dct supports rank 1 or 2 signals, got {signal_shape:?}"
            )));
        }
        if signal_shape.iter().any(|&d| d == 0) {
            return Err(Error::Config("signal dims must be nonzero".into()));
        }
        Ok(Self { keep_ratio, qstep, signal_shape })
    }

    /// Kept-block shape for the configured signal.
    pub fn latent_shape(&self) -> Vec<usize> {
        let keep = self.keep_ratio as f64;
        match self.signal_shape.as_slice() {
            [n] => {
                let k = ((keep * *n as f64).round() as usize).clamp(1, *n);
                vec![k]
            }
            [h, w] => {
                let side = keep.sqrt();
                let kh = ((side * *h as f64).round() as usize).clamp(1, *h);
                let kw = ((side * *w as f64).round() as usize).clamp(1, *w);
                vec![kh, kw]
            }
            _ => unreachable!(),
        }
    }

    fn encode(&self, x0: &Tensor) -> Result<LatentCode> {
        if x0.shape() != self.signal_shape {
            return Err(Error::dimension(format!("{:?}", self.signal_shape), format!("{:?}", x0.shape())));
        }
        let q = self.qstep as f64;
        let (kept, latent_shape): (Vec<f64>, Vec<usize>) = match self.signal_shape.as_slice() {
            [_] => {
                let coeffs = transform::dct1d(x0.data());
                let ls = self.latent_shape();
                (coeffs[..ls[0]].to_vec(), ls)
            }
            [h, w] => {
                let coeffs = transform::dct2d(x0.data(), *h, *w);
                let ls = self.latent_shape();
                let mut kept = Vec::with_capacity(ls[0] * ls[1]);
                for r in 0..ls[0] {
                    kept.extend_from_slice(&coeffs[r * w..r * w + ls[1]]);
                }
                (kept, ls)
            }
            _ => unreachable!(),
        };
        let values: Vec<i32> = kept
            .iter()
            .map(|&c| quantize_symbol(c / q))
            .collect::<Result<_>>()?;
        let params = fit_entropy_params(&values, &latent_shape)?;
        LatentCode::new(values, latent_shape, params)
    }

    fn decode(&self, code: &LatentCode) -> Result<Tensor> {
        let expect = self.latent_shape();
        if code.shape() != expect {
            return Err(Error::Protocol(ProtocolError::Malformed(format!(
                "latent shape {:?} does not match the configured block {expect:?}",
                code.shape()
            ))));
        }
        let q = self.qstep as f64;
        match self.signal_shape.as_slice() {
            [n] => {
                let mut coeffs = vec![0.0; *n];
                for (slot, &v) in coeffs.iter_mut().zip(code.values()) {
                    *slot = v as f64 * q;
                }
                Tensor::new(self.signal_shape.clone(), transform::idct1d(&coeffs))
            }
            [h, w] => {
                let mut coeffs = vec![0.0; h * w];
                let (kh, kw) = (expect[0], expect[1]);
                for r in 0..kh {
                    for c in 0..kw {
                        coeffs[r * w + c] = code.values()[r * kw + c] as f64 * q;
                    }
                }
                Tensor::new(self.signal_shape.clone(), transform::idct2d(&coeffs, *h, *w))
            }
            _ => unreachable!(),
        }
    }
}

/// Small trainable encoder/decoder pair with a learnable factorized prior.
///
/// The prior (mean, log-scale per channel) only drives the training-time rate
/// surrogate; coded streams always carry empirically fitted parameters.
#[derive(Debug, Clone)]
pub struct TinyMlpAutoencoder {
    pub signal_shape: Vec<usize>,
    pub latent_dim: usize,
    pub enc: Mlp,
    pub dec: Mlp,
    pub prior_mean: Vec<f64>,
    pub prior_log_scale: Vec<f64>,
}

impl TinyMlpAutoencoder {
    pub fn new(signal_shape: Vec<usize>, latent_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if signal_shape.is_empty() || signal_shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("bad signal shape {signal_shape:?}")));
        }
        if latent_dim == 0 {
            return Err(Error::Config("latent dim must be nonzero".into()));
        }
        let n: usize = signal_shape.iter().product();
        let mut rng = DetRng::derived(seed, 0xAE);
        Ok(Self {
            signal_shape,
            latent_dim,
            enc: Mlp::init(&[n, hidden, latent_dim], &mut rng),
            dec: Mlp::init(&[latent_dim, hidden, n], &mut rng),
            prior_mean: vec![0.0; 1],
            prior_log_scale: vec![0.0; 1],
        })
    }

    pub fn param_len(&self) -> usize {
        self.enc.param_len() + self.dec.param_len() + self.prior_mean.len() + self.prior_log_scale.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = self.enc.params();
        out.extend(self.dec.params());
        out.extend_from_slice(&self.prior_mean);
        out.extend_from_slice(&self.prior_log_scale);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        let ne = self.enc.param_len();
        let nd = self.dec.param_len();
        self.enc.set_params(&params[..ne])?;
        self.dec.set_params(&params[ne..ne + nd])?;
        let rest = &params[ne + nd..];
        let np = self.prior_mean.len();
        self.prior_mean.copy_from_slice(&rest[..np]);
        self.prior_log_scale.copy_from_slice(&rest[np..]);
        Ok(())
    }

    fn encode(&self, x0: &Tensor) -> Result<LatentCode> {
        if x0.shape() != self.signal_shape {
            return Err(Error::dimension(format!("{:?}", self.signal_shape), format!("{:?}", x0.shape())));
        }
        let y = self.enc.forward(x0.data())?;
        let values: Vec<i32> = y.iter().map(|&v| quantize_symbol(v)).collect::<Result<_>>()?;
        let shape = vec![self.latent_dim];
        let params = fit_entropy_params(&values, &shape)?;
        LatentCode::new(values, shape, params)
    }

    fn decode(&self, code: &LatentCode) -> Result<Tensor> {
        if code.len() != self.latent_dim {
            return Err(Error::Protocol(ProtocolError::Malformed(format!(
                "latent length {} does not match the decoder width {}",
                code.len(),
                self.latent_dim
            ))));
        }
        let out = self.dec.forward(&code.dequantized())?;
        Tensor::new(self.signal_shape.clone(), out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sizes = vec![self.signal_shape.len() as u32];
        sizes.extend(self.signal_shape.iter().map(|&d| d as u32));
        sizes.push(self.latent_dim as u32);
        sizes.push(self.enc.layers[0].out_dim as u32);
        weights_to_bytes(&sizes, &self.params())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (sizes, params) = weights_from_bytes(bytes)?;
        if sizes.len() < 4 {
            return Err(Error::Format("autoencoder weights: size list too short".into()));
        }
        let rank = sizes[0] as usize;
        if rank == 0 || rank > 2 || sizes.len() != rank + 3 {
            return Err(Error::Format(format!("autoencoder weights: bad size list {sizes:?}")));
        }
        let shape: Vec<usize> = sizes[1..1 + rank].iter().map(|&d| d as usize).collect();
        if shape.iter().any(|&d| d == 0 || d > 1 << 20) {
            return Err(Error::Format(format!("autoencoder weights: bad shape {shape:?}")));
        }
        let latent_dim = sizes[rank + 1] as usize;
        let hidden = sizes[rank + 2] as usize;
        if latent_dim == 0 || hidden == 0 || latent_dim > 1 << 16 || hidden > 1 << 16 {
            return Err(Error::Format("autoencoder weights: bad dims".into()));
        }
        let mut ae = Self::new(shape, latent_dim, hidden, 0)?;
        if params.len() != ae.param_len() {
            return Err(Error::Format(format!(
                "autoencoder weights: expected {} parameters, got {}",
                ae.param_len(),
                params.len()
            )));
        }
        ae.set_params(&params)?;
        Ok(ae)
    }

    pub fn fingerprint(&self) -> u64 {
        let bytes = self.to_bytes();
        let mut h = 0xCBF29CE484222325u64;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001B3);
        }
        h
    }
}

/// The encoder/decoder pair behind the end-to-end path.
#[derive(Debug, Clone)]
pub enum Autoencoder {
    LinearDct(LinearDct),
    TinyMlp(TinyMlpAutoencoder),
}

impl Autoencoder {
    pub fn id(&self) -> &'static str {
        match self {
            Self::LinearDct(_) => "linear-dct",
            Self::TinyMlp(_) => "tiny-mlp",
        }
    }
}

/// y_hat = Q(E(x0)) with per-channel entropy parameters fitted to the result.
pub fn encode_latent(ae: &Autoencoder, x0: &Tensor) -> Result<LatentCode> {
    match ae {
        Autoencoder::LinearDct(dct) => dct.encode(x0),
        Autoencoder::TinyMlp(mlp) => mlp.encode(x0),
    }
}

/// E(x0) before quantization: the continuous latent and its shape. Used by
/// the training-time relaxation where rounding is replaced with noise.
pub fn encode_real(ae: &Autoencoder, x0: &Tensor) -> Result<(Vec<f64>, Vec<usize>)> {
    match ae {
        Autoencoder::LinearDct(dct) => {
            let code = dct.encode(x0)?;
            // Re-derive the unquantized coefficients.
            let q = dct.qstep as f64;
            let (kept, shape): (Vec<f64>, Vec<usize>) = match dct.signal_shape.as_slice() {
                [_] => {
                    let coeffs = transform::dct1d(x0.data());
                    let ls = dct.latent_shape();
                    (coeffs[..ls[0]].iter().map(|c| c / q).collect(), ls)
                }
                [h, w] => {
                    let coeffs = transform::dct2d(x0.data(), *h, *w);
                    let ls = dct.latent_shape();
                    let mut kept = Vec::with_capacity(ls[0] * ls[1]);
                    for r in 0..ls[0] {
                        kept.extend(coeffs[r * w..r * w + ls[1]].iter().map(|c| c / q));
                    }
                    (kept, ls)
                }
                _ => unreachable!(),
            };
            debug_assert_eq!(shape, code.shape());
            Ok((kept, shape))
        }
        Autoencoder::TinyMlp(mlp) => {
            if x0.shape() != mlp.signal_shape {
                return Err(Error::dimension(format!("{:?}", mlp.signal_shape), format!("{:?}", x0.shape())));
            }
            Ok((mlp.enc.forward(x0.data())?, vec![mlp.latent_dim]))
        }
    }
}

/// D applied to continuous latent values (the relaxed counterpart of
/// [`decode_latent`]).
pub fn decode_real(ae: &Autoencoder, values: &[f64], shape: &[usize]) -> Result<Tensor> {
    match ae {
        Autoencoder::LinearDct(dct) => {
            if shape != dct.latent_shape() {
                return Err(Error::dimension(format!("{:?}", dct.latent_shape()), format!("{shape:?}")));
            }
            let q = dct.qstep as f64;
            match dct.signal_shape.as_slice() {
                [n] => {
                    let mut coeffs = vec![0.0; *n];
                    for (slot, &v) in coeffs.iter_mut().zip(values) {
                        *slot = v * q;
                    }
                    Tensor::new(dct.signal_shape.clone(), transform::idct1d(&coeffs))
                }
                [h, w] => {
                    let mut coeffs = vec![0.0; h * w];
                    let (kh, kw) = (shape[0], shape[1]);
                    for r in 0..kh {
                        for c in 0..kw {
                            coeffs[r * w + c] = values[r * kw + c] * q;
                        }
                    }
                    Tensor::new(dct.signal_shape.clone(), transform::idct2d(&coeffs, *h, *w))
                }
                _ => unreachable!(),
            }
        }
        Autoencoder::TinyMlp(mlp) => {
            if values.len() != mlp.latent_dim {
                return Err(Error::dimension(format!("{}", mlp.latent_dim), format!("{}", values.len())));
            }
            Tensor::new(mlp.signal_shape.clone(), mlp.dec.forward(values)?)
        }
    }
}

/// Deterministic reconstruction x0_e2e = D(y_hat).
pub fn decode_latent(ae: &Autoencoder, code: &LatentCode) -> Result<Tensor> {
    match ae {
        Autoencoder::LinearDct(dct) => dct.decode(code),
        Autoencoder::TinyMlp(mlp) => mlp.decode(code),
    }
}

// ---------------------------------------------------------------------------
// Rate estimation and lossless coding
// ---------------------------------------------------------------------------

fn channel_models(code: &LatentCode) -> Result<Vec<ChannelModel>> {
    code.entropy_params.iter().map(ChannelParams::model).collect()
}

/// Estimated size in bits of coding the latent under its own entropy
/// parameters: sum of -log2 P(v) over the 16-bit-quantized Gaussian bins
/// shared with the range coder, floored at 2^-16 per symbol.
pub fn estimate_rate(code: &LatentCode) -> Result<f64> {
    let models = channel_models(code)?;
    let per = code.per_channel_len();
    let mut bits = 0.0;
    for (i, &v) in code.values.iter().enumerate() {
        let model = &models[if per == 0 { 0 } else { i / per }];
        bits += model.bits_for(v);
    }
    Ok(bits)
}

/// Losslessly codes the latent values. Output is the coder payload followed
/// by a 4-byte big-endian CRC32 of that payload.
pub fn range_encode(code: &LatentCode) -> Result<Vec<u8>> {
    let models = channel_models(code)?;
    let per = code.per_channel_len();
    let payload = if code.values.is_empty() {
        RangeEncoder::new().finish_empty()
    } else {
        let mut enc = RangeEncoder::new();
        for (i, &v) in code.values.iter().enumerate() {
            let model = &models[i / per];
            match model.index_of(v) {
                Some(idx) => {
                    let (a, b) = model.interval(idx);
                    enc.encode(a, b, PROB_TOTAL);
                }
                None => {
                    let (a, b) = model.interval(model.escape_index());
                    enc.encode(a, b, PROB_TOTAL);
                    let raw = (v as i16) as u16;
                    enc.encode((raw >> 8) as u32, (raw >> 8) as u32 + 1, 256);
                    enc.encode((raw & 0xFF) as u32, (raw & 0xFF) as u32 + 1, 256);
                }
            }
        }
        enc.finish()
    };
    let mut out = payload;
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Inverse of [`range_encode`]. The shape and entropy parameters arrive out
/// of band (they ride in the stream header).
pub fn range_decode(bytes: &[u8], shape: &[usize], entropy_params: &[ChannelParams]) -> Result<LatentCode> {
    if bytes.len() < 4 {
        return Err(Error::Protocol(ProtocolError::Truncated { needed: 4, available: bytes.len() }));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_be_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Protocol(ProtocolError::ChecksumMismatch { stored, computed }));
    }
    let n: usize = shape.iter().product();
    let channels = channel_count(shape);
    if entropy_params.len() != channels {
        return Err(Error::Protocol(ProtocolError::Malformed(format!(
            "{} entropy channels for shape {shape:?}",
            entropy_params.len()
        ))));
    }
    if n == 0 {
        return LatentCode::new(Vec::new(), shape.to_vec(), entropy_params.to_vec());
    }
    let models: Vec<ChannelModel> = entropy_params.iter().map(ChannelParams::model).collect::<Result<_>>()?;
    let per = n / channels;
    let mut dec = RangeDecoder::new(payload);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let model = &models[i / per];
        let off = dec.decode_offset(PROB_TOTAL);
        let idx = model.find(off);
        let (a, b) = model.interval(idx);
        dec.decode_update(a, b, PROB_TOTAL);
        let v = if idx == model.escape_index() {
            let hi = dec.decode_offset(256);
            dec.decode_update(hi, hi + 1, 256);
            let lo = dec.decode_offset(256);
            dec.decode_update(lo, lo + 1, 256);
            (((hi << 8) | lo) as u16) as i16 as i32
        } else {
            model.lo + idx as i32
        };
        values.push(v);
    }
    LatentCode::new(values, shape.to_vec(), entropy_params.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params1(mean: f64, scale: f64) -> Vec<ChannelParams> {
        vec![ChannelParams::from_f64(mean, scale).unwrap()]
    }

    #[test]
    fn zero_signal_encodes_to_zero_latent() {
        let ae = Autoencoder::LinearDct(LinearDct::new(0.5, 0.02, vec![16]).unwrap());
        let code = encode_latent(&ae, &Tensor::zeros(&[16])).unwrap();
        assert!(code.values().iter().all(|&v| v == 0));
        assert_eq!(code.shape(), &[8]);
    }

    #[test]
    fn quantizer_is_round_to_even_and_idempotent() {
        assert_eq!(quantize_symbol(0.5).unwrap(), 0);
        assert_eq!(quantize_symbol(1.5).unwrap(), 2);
        assert_eq!(quantize_symbol(-0.5).unwrap(), 0);
        assert_eq!(quantize_symbol(2.4).unwrap(), 2);
        for v in [-37i32, 0, 12, 32767, -32768] {
            assert_eq!(quantize_symbol(v as f64).unwrap(), v);
        }
        assert!(quantize_symbol(40000.0).is_err());
        assert!(quantize_symbol(f64::NAN).is_err());
    }

    #[test]
    fn identity_configuration_round_trips_within_half_step() {
        let mut rng = DetRng::new(6);
        let x = Tensor::new(vec![32], rng.normal_vec(32)).unwrap();
        let ae = Autoencoder::LinearDct(LinearDct::new(1.0, 0.01, vec![32]).unwrap());
        let code = encode_latent(&ae, &x).unwrap();
        let recon = decode_latent(&ae, &code).unwrap();
        // Orthonormal transform: rms error bounded by half the step.
        assert!(recon.mse(&x).unwrap().sqrt() <= 0.005);
    }

    #[test]
    fn zero_latent_decodes_to_decoder_bias() {
        let ae = Autoencoder::LinearDct(LinearDct::new(0.25, 0.1, vec![16]).unwrap());
        let code = LatentCode::new(vec![0; 4], vec![4], params1(0.0, 1.0)).unwrap();
        let out = decode_latent(&ae, &code).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kept_block_beats_random_block_on_low_frequency_signal() {
        // Slow cosine: energy lives in the low-frequency coefficients that
        // the kept block retains.
        let n = 64usize;
        let x: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let t = Tensor::new(vec![n], x.clone()).unwrap();
        let ae = Autoencoder::LinearDct(LinearDct::new(0.25, 0.005, vec![n]).unwrap());
        let kept_mse = decode_latent(&ae, &encode_latent(&ae, &t).unwrap())
            .unwrap()
            .mse(&t)
            .unwrap();
        // Oracle: keep the same number of coefficients but from a seeded
        // random mask instead of the leading block.
        let coeffs = transform::dct1d(&x);
        let k = 16usize;
        let mut rng = DetRng::new(123);
        let mut picked: Vec<usize> = Vec::new();
        while picked.len() < k {
            let c = (rng.next_u64() % n as u64) as usize;
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        let mut masked = vec![0.0; n];
        for &c in &picked {
            masked[c] = (coeffs[c] / 0.005).round_ties_even() * 0.005;
        }
        let rand_recon = Tensor::new(vec![n], transform::idct1d(&masked)).unwrap();
        let rand_mse = rand_recon.mse(&t).unwrap();
        assert!(kept_mse < rand_mse, "kept {kept_mse} vs random {rand_mse}");
    }

    #[test]
    fn truncated_transform_matches_independent_reimplementation() {
        // Fixed seeded signal, keep-ratio 0.25; reconstruct by a direct
        // double-loop evaluation of the truncated transform.
        let n = 32usize;
        let mut rng = DetRng::new(99);
        let x = rng.normal_vec(n);
        let t = Tensor::new(vec![n], x.clone()).unwrap();
        // Wire precision for the step is f32; the oracle must divide by the
        // same value the codec does.
        let qstep = 0.02f32 as f64;
        let ae = Autoencoder::LinearDct(LinearDct::new(0.25, 0.02, vec![n]).unwrap());
        let got = decode_latent(&ae, &encode_latent(&ae, &t).unwrap()).unwrap();

        let k = 8usize;
        let nf = n as f64;
        let mut recon = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for kk in 0..k {
                let scale = if kk == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                let mut coeff = 0.0;
                for (j, &v) in x.iter().enumerate() {
                    coeff += v
                        * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * kk as f64 / (2.0 * nf)).cos();
                }
                let quantized = ((scale * coeff) / qstep).round_ties_even() * qstep;
                acc += scale
                    * quantized
                    * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * kk as f64 / (2.0 * nf)).cos();
            }
            recon[i] = acc;
        }
        let want = Tensor::new(vec![n], recon).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-9);
        let mse_got = got.mse(&t).unwrap();
        let mse_want = want.mse(&t).unwrap();
        assert!((mse_got - mse_want).abs() < 1e-9);
    }

    #[test]
    fn rate_at_mean_is_small_but_positive() {
        let code = LatentCode::new(vec![5; 100], vec![100], params1(5.0, 100.0)).unwrap();
        let rate = estimate_rate(&code).unwrap();
        assert!(rate > 0.0);
        // Scale 100 spreads mass over ~1200 bins: around 10 bits each.
        assert!(rate > 100.0, "rate {rate}");
    }

    #[test]
    fn rate_is_additive_in_size() {
        let mut rng = DetRng::new(8);
        let vals: Vec<i32> = (0..2000).map(|_| (rng.normal() * 3.0).round() as i32).collect();
        let single = LatentCode::new(vals.clone(), vec![2000], params1(0.0, 3.0)).unwrap();
        let mut doubled_vals = vals.clone();
        doubled_vals.extend_from_slice(&vals);
        let doubled = LatentCode::new(doubled_vals, vec![4000], params1(0.0, 3.0)).unwrap();
        let r1 = estimate_rate(&single).unwrap();
        let r2 = estimate_rate(&doubled).unwrap();
        assert!((r2 - 2.0 * r1).abs() / (2.0 * r1) < 0.01, "r1 {r1} r2 {r2}");
    }

    #[test]
    fn range_round_trip_random_latents() {
        let mut rng = DetRng::new(77);
        for trial in 0..500 {
            let n = 1 + (rng.next_u64() % 64) as usize;
            let mean = rng.range(-20.0, 20.0);
            let scale = rng.range(0.05, 8.0);
            let params = params1(mean, scale);
            let values: Vec<i32> = (0..n)
                .map(|_| (mean + scale * rng.normal()).round() as i32)
                .collect();
            let code = LatentCode::new(values, vec![n], params).unwrap();
            let bytes = range_encode(&code).unwrap();
            let back = range_decode(&bytes, code.shape(), code.entropy_params()).unwrap();
            assert_eq!(code, back, "trial {trial}");
        }
    }

    #[test]
    fn range_round_trip_with_escapes() {
        // Values far outside the model window force the escape path.
        let params = params1(0.0, 0.05);
        let values = vec![0, 30_000, -32_768, 1, 32_767, 0, -2, 12_345];
        let code = LatentCode::new(values, vec![8], params).unwrap();
        let bytes = range_encode(&code).unwrap();
        let back = range_decode(&bytes, code.shape(), code.entropy_params()).unwrap();
        assert_eq!(code, back);
    }

    #[test]
    fn empty_latent_is_checksum_only() {
        let code = LatentCode::new(vec![], vec![0], params1(0.0, 1.0)).unwrap();
        let bytes = range_encode(&code).unwrap();
        assert_eq!(bytes.len(), 4);
        let back = range_decode(&bytes, code.shape(), code.entropy_params()).unwrap();
        assert_eq!(back, code);
    }

    #[test]
    fn degenerate_channel_codes_to_flush_only() {
        // Scale at the floor with all values at the mean: payload is just the
        // 8-byte flush plus the 4-byte checksum.
        let params = params1(7.0, SCALE_FLOOR);
        let code = LatentCode::new(vec![7; 1000], vec![1000], params).unwrap();
        let bytes = range_encode(&code).unwrap();
        assert!(bytes.len() <= 8 + 4, "{} bytes", bytes.len());
        let back = range_decode(&bytes, code.shape(), code.entropy_params()).unwrap();
        assert_eq!(back, code);
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let params = params1(0.0, 2.0);
        let values: Vec<i32> = (0..64).map(|i| (i % 7) - 3).collect();
        let code = LatentCode::new(values, vec![64], params).unwrap();
        let mut bytes = range_encode(&code).unwrap();
        bytes[0] ^= 0x40;
        assert!(matches!(
            range_decode(&bytes, code.shape(), code.entropy_params()),
            Err(Error::Protocol(ProtocolError::ChecksumMismatch { .. }))
        ));
        assert!(matches!(
            range_decode(&[1, 2], code.shape(), code.entropy_params()),
            Err(Error::Protocol(ProtocolError::Truncated { .. }))
        ));
    }

    #[test]
    fn rate_estimate_tracks_coded_length() {
        let mut rng = DetRng::new(31);
        for _ in 0..20 {
            let n = 4096usize;
            let scale = rng.range(0.5, 4.0);
            let params = params1(0.0, scale);
            let values: Vec<i32> = (0..n).map(|_| (scale * rng.normal()).round() as i32).collect();
            let code = LatentCode::new(values, vec![n], params).unwrap();
            let est = estimate_rate(&code).unwrap();
            let bytes = range_encode(&code).unwrap();
            let actual = 8.0 * (bytes.len() - 4) as f64;
            assert!(
                (est - actual).abs() <= 0.02 * est + 32.0,
                "estimate {est} vs actual {actual}"
            );
        }
    }

    #[test]
    fn tiny_mlp_pair_round_trips_weights() {
        let ae = TinyMlpAutoencoder::new(vec![12], 4, 8, 3).unwrap();
        let bytes = ae.to_bytes();
        let back = TinyMlpAutoencoder::from_bytes(&bytes).unwrap();
        assert_eq!(back.latent_dim, 4);
        assert_eq!(back.signal_shape, vec![12]);
        for (a, b) in ae.params().iter().zip(back.params()) {
            assert_eq!(*a as f32, b as f32);
        }
        let x = Tensor::new(vec![12], vec![0.1; 12]).unwrap();
        let code = encode_latent(&Autoencoder::TinyMlp(ae.clone()), &x).unwrap();
        assert_eq!(code.len(), 4);
        let recon = decode_latent(&Autoencoder::TinyMlp(ae), &code).unwrap();
        assert_eq!(recon.shape(), &[12]);
    }
}
