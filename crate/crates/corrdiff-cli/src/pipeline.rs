//! End-to-end compress/decompress pipelines shared by the CLI commands and
//! the test suites.
//!
//! The score model on both sides is an analytic Gaussian centered on the
//! end-to-end reconstruction with a configurable width. Both sides derive it
//! from data they share (the decoded latent), so no model state needs to
//! travel beyond what the stream header already carries. Trainable
//! autoencoder weights are out-of-band shared state; the header carries a
//! fingerprint to catch mismatched weight files.

use corrdiff::bitstream::{parse, AeDescriptor, BitBreakdown, CorrDiffStream};
use corrdiff::correction::{metric_by_id, SearchConfig};
use corrdiff::error::{Error, ProtocolError, Result};
use corrdiff::latent::{
    decode_latent, encode_latent, range_encode, Autoencoder, LinearDct, TinyMlpAutoencoder,
};
use corrdiff::sampler::{decode_rollout, encode_rollout};
use corrdiff::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use corrdiff::score::GaussianMixtureOracle;
use corrdiff::tensor::Tensor;

/// Knobs shared by `compress` and `rd-curve`.
#[derive(Debug, Clone)]
pub struct CodecOptions {
    pub keep_ratio: f32,
    pub qstep: f32,
    pub t_steps: u16,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub ae_id: String,
    pub metric: String,
    /// Standard deviation of the analytic prior anchored at D(y_hat). Must
    /// match between encoder and decoder (out-of-band, like model weights).
    pub prior_width: f64,
}

impl Default for CodecOptions {
    fn default() -> Self {
        Self {
            keep_ratio: 0.25,
            qstep: 0.02,
            t_steps: 8,
            seed: 0,
            schedule: ScheduleKind::VpCosine,
            ae_id: "linear-dct".into(),
            metric: "mse".into(),
            prior_width: 1.0,
        }
    }
}

pub struct CompressOutcome {
    pub stream_bytes: Vec<u8>,
    pub breakdown: BitBreakdown,
    pub elements: usize,
    /// Encoder-side reconstruction; the decoder must reproduce it exactly on
    /// the same platform.
    pub encoder_x0: Tensor,
}

impl CompressOutcome {
    pub fn bpp(&self) -> f64 {
        self.breakdown.total_bits() as f64 / self.elements as f64
    }
}

fn build_autoencoder(
    opts: &CodecOptions,
    signal_shape: &[usize],
    weights: Option<&TinyMlpAutoencoder>,
) -> Result<Autoencoder> {
    match opts.ae_id.as_str() {
        "linear-dct" => Ok(Autoencoder::LinearDct(LinearDct::new(
            opts.keep_ratio,
            opts.qstep,
            signal_shape.to_vec(),
        )?)),
        "tiny-mlp" => {
            let ae = weights.ok_or_else(|| {
                Error::Config("tiny-mlp autoencoder needs --weights with a trained pair".into())
            })?;
            if ae.signal_shape != signal_shape {
                return Err(Error::dimension(
                    format!("{:?}", ae.signal_shape),
                    format!("{signal_shape:?}"),
                ));
            }
            Ok(Autoencoder::TinyMlp(ae.clone()))
        }
        other => Err(Error::Config(format!("unknown autoencoder `{other}`"))),
    }
}

fn anchored_model(e2e: &Tensor, prior_width: f64) -> Result<GaussianMixtureOracle> {
    if !(prior_width > 0.0) || !prior_width.is_finite() {
        return Err(Error::Config(format!("prior width must be positive, got {prior_width}")));
    }
    GaussianMixtureOracle::single(e2e.clone(), prior_width * prior_width)
}

pub fn compress_tensor(
    x0: &Tensor,
    opts: &CodecOptions,
    weights: Option<&TinyMlpAutoencoder>,
) -> Result<CompressOutcome> {
    let schedule = make_schedule(opts.schedule, opts.t_steps as usize)?;
    let ae = build_autoencoder(opts, x0.shape(), weights)?;
    let code = encode_latent(&ae, x0)?;
    let e2e = decode_latent(&ae, &code)?;
    let model = anchored_model(&e2e, opts.prior_width)?;
    let metric = metric_by_id(&opts.metric)?;
    let (gammas, trace) = encode_rollout(
        &schedule,
        &model,
        Some(&code),
        &e2e,
        x0,
        metric.as_ref(),
        &SearchConfig::default(),
        opts.seed,
    )?;
    let descriptor = match &ae {
        Autoencoder::LinearDct(dct) => AeDescriptor::LinearDct {
            keep_ratio: dct.keep_ratio,
            qstep: dct.qstep,
        },
        Autoencoder::TinyMlp(mlp) => AeDescriptor::TinyMlp { fingerprint: mlp.fingerprint() },
    };
    let stream = CorrDiffStream {
        schedule_kind: opts.schedule,
        t_steps: opts.t_steps,
        seed: opts.seed,
        signal_shape: x0.shape().to_vec(),
        autoencoder: descriptor,
        entropy_params: code.entropy_params().to_vec(),
        coded_latent: range_encode(&code)?,
        gammas,
    };
    let stream_bytes = stream.serialize()?;
    let breakdown = stream.bit_breakdown()?;
    Ok(CompressOutcome { stream_bytes, breakdown, elements: x0.len(), encoder_x0: trace.final_x0 })
}

/// Schedule, autoencoder and latent recovered from a parsed stream.
pub struct DecodeSetup {
    pub stream: CorrDiffStream,
    pub schedule: NoiseSchedule,
    pub autoencoder: Autoencoder,
    pub latent: corrdiff::latent::LatentCode,
    pub e2e: Tensor,
}

pub fn setup_decode(bytes: &[u8], weights: Option<&TinyMlpAutoencoder>) -> Result<DecodeSetup> {
    let stream = parse(bytes)?;
    let schedule = make_schedule(stream.schedule_kind, stream.t_steps as usize)?;
    let (autoencoder, latent_shape) = match stream.autoencoder {
        AeDescriptor::LinearDct { keep_ratio, qstep } => {
            let dct = LinearDct::new(keep_ratio, qstep, stream.signal_shape.clone())?;
            let shape = dct.latent_shape();
            (Autoencoder::LinearDct(dct), shape)
        }
        AeDescriptor::TinyMlp { fingerprint } => {
            let ae = weights.ok_or_else(|| {
                Error::Config("stream uses the tiny-mlp pair; pass --weights".into())
            })?;
            if ae.fingerprint() != fingerprint {
                return Err(Error::Protocol(ProtocolError::Malformed(
                    "autoencoder weights do not match the stream fingerprint".into(),
                )));
            }
            if ae.signal_shape != stream.signal_shape {
                return Err(Error::Protocol(ProtocolError::Malformed(format!(
                    "weights expect shape {:?}, stream carries {:?}",
                    ae.signal_shape, stream.signal_shape
                ))));
            }
            let shape = vec![ae.latent_dim];
            (Autoencoder::TinyMlp(ae.clone()), shape)
        }
    };
    let latent = stream.decode_latent_block(&latent_shape)?;
    let e2e = decode_latent(&autoencoder, &latent)?;
    Ok(DecodeSetup { stream, schedule, autoencoder, latent, e2e })
}

pub fn decompress_bytes(
    bytes: &[u8],
    prior_width: f64,
    weights: Option<&TinyMlpAutoencoder>,
) -> Result<Tensor> {
    let setup = setup_decode(bytes, weights)?;
    let model = anchored_model(&setup.e2e, prior_width)?;
    decode_rollout(
        &setup.schedule,
        &model,
        Some(&setup.latent),
        &setup.e2e,
        &setup.stream.gammas,
        setup.stream.seed,
    )
}

/// PSNR for a declared dynamic range.
pub fn psnr(mse: f64, dynamic_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * ((dynamic_range * dynamic_range) / mse).log10()
    }
}
