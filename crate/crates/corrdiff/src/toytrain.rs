//! Two-phase training of the tiny models on synthetic data.
//!
//! Phase 1 fits only the score network to predict the clean signal from its
//! noised version (squared error plus a weighted perceptual term). Phase 2
//! trains the whole stack jointly: score network, autoencoder pair and the
//! factorized prior, adding the end-to-end reconstruction terms and a
//! weighted rate term. During training the quantizer is relaxed to additive
//! uniform noise in [-1/2, 1/2), and the rate surrogate evaluates smooth
//! Gaussian-style bins (a tanh sigmoid stands in for the normal CDF so the
//! hand-written gradients are exact for the implemented function).
//!
//! The optimizer is plain gradient descent over a flat parameter vector; all
//! randomness comes from the seeded generator, so a config reproduces its
//! run bitwise.

use std::io::Write;

use crate::correction::MetricM;
use crate::error::{Error, Result};
use crate::latent::{
    decode_real, encode_latent, encode_real, estimate_rate, Autoencoder, TinyMlpAutoencoder,
};
use crate::rng::DetRng;
use crate::schedule::NoiseSchedule;
use crate::score::{timestep_embedding, ScoreModel, TinyScoreNet, T_EMBED_DIM};
use crate::tensor::Tensor;

/// The five rate weights used for the bit-rate sweep.
pub const LAMBDA_R_GRID: [f64; 5] = [0.5, 0.2, 0.1, 0.05, 0.02];

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lambda_mu: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lambda_mu: 0.16, lambda_e: 0.64, lambda_r: 0.1, batch: 8, iters: 200, lr: 0.05, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_mu < 0.0 || self.lambda_e < 0.0 || self.lambda_r < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.iters == 0 || self.batch == 0 {
            return Err(Error::Config("iters and batch must be at least 1".into()));
        }
        if !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be finite".into()));
        }
        Ok(())
    }
}

/// Per-term loss values. Terms are stored raw; `total` carries the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub diffusion_mse: f64,
    pub metric_mu: f64,
    pub e2e_mse: f64,
    pub metric_e: f64,
    pub rate_bits: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_sum(&self, cfg: &TrainConfig) -> f64 {
        self.diffusion_mse
            + cfg.lambda_mu * self.metric_mu
            + self.e2e_mse
            + cfg.lambda_e * self.metric_e
            + cfg.lambda_r * self.rate_bits
    }

    pub fn csv_header() -> &'static str {
        "iter,diffusion_mse,metric_mu,e2e_mse,metric_e,rate_bits,total"
    }

    pub fn csv_row(&self, iter: usize) -> String {
        format!(
            "{iter},{},{},{},{},{},{}",
            self.diffusion_mse, self.metric_mu, self.e2e_mse, self.metric_e, self.rate_bits, self.total
        )
    }
}

// ---------------------------------------------------------------------------
// Rate surrogate
// ---------------------------------------------------------------------------

/// Bin probabilities below this floor clip (and stop carrying gradient).
const RATE_FLOOR: f64 = 1.0 / 65536.0;
const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
const CUBIC: f64 = 0.044715;

fn sigmoid_cdf(z: f64) -> f64 {
    0.5 * (1.0 + (SQRT_2_OVER_PI * (z + CUBIC * z * z * z)).tanh())
}

fn sigmoid_cdf_deriv(z: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (z + CUBIC * z * z * z);
    let th = inner.tanh();
    0.5 * (1.0 - th * th) * SQRT_2_OVER_PI * (1.0 + 3.0 * CUBIC * z * z)
}

/// Bits for one relaxed symbol under (mean, scale), with gradients in
/// (value, mean, log scale).
fn surrogate_bits_grad(v: f64, mean: f64, log_scale: f64) -> (f64, f64, f64, f64) {
    let scale = log_scale.exp();
    let zp = (v + 0.5 - mean) / scale;
    let zm = (v - 0.5 - mean) / scale;
    let p_raw = sigmoid_cdf(zp) - sigmoid_cdf(zm);
    if p_raw <= RATE_FLOOR {
        return (-RATE_FLOOR.log2(), 0.0, 0.0, 0.0);
    }
    let bits = -p_raw.log2();
    let dp = sigmoid_cdf_deriv(zp);
    let dm = sigmoid_cdf_deriv(zm);
    let c = -1.0 / (p_raw * std::f64::consts::LN_2);
    let d_v = c * (dp - dm) / scale;
    let d_mean = -d_v;
    let d_log_scale = c * -(dp * zp - dm * zm);
    (bits, d_v, d_mean, d_log_scale)
}

fn surrogate_bits(v: f64, mean: f64, log_scale: f64) -> f64 {
    surrogate_bits_grad(v, mean, log_scale).0
}

// ---------------------------------------------------------------------------
// Evaluation-only losses (any score model)
// ---------------------------------------------------------------------------

/// Phase-1 loss: E[ ||model(x_t, t) - x0||^2 + lambda_mu * M_mu(model(...), x0) ]
/// with t uniform on the grid and seeded Gaussian noise. Deterministic in
/// `cfg.seed`.
pub fn loss_phase1(
    model: &dyn ScoreModel,
    batch: &[Tensor],
    schedule: &NoiseSchedule,
    metric_mu: &dyn MetricM,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    let mut rng = DetRng::derived(cfg.seed, 0xF1);
    let mut diff = 0.0;
    let mut mmu = 0.0;
    for x0 in batch {
        let t_idx = rng.below(schedule.grid().len() as u64) as usize;
        let noise = Tensor::new(x0.shape().to_vec(), rng.normal_vec(x0.len()))?;
        let x_t = schedule.forward_sample(x0, t_idx, &noise)?;
        let pred = model.predict_x0(schedule, &x_t, None, t_idx)?;
        diff += pred.mse(x0)?;
        mmu += metric_mu.eval(&pred, x0)?;
    }
    let n = batch.len() as f64;
    let report = LossReport {
        diffusion_mse: diff / n,
        metric_mu: mmu / n,
        e2e_mse: 0.0,
        metric_e: 0.0,
        rate_bits: 0.0,
        total: 0.0,
    };
    Ok(LossReport { total: report.weighted_sum(cfg), ..report })
}

/// Phase-2 loss: the phase-1 terms plus end-to-end reconstruction, its
/// perceptual term and the relaxed rate term. The quantizer is replaced by
/// additive uniform noise; entropy parameters for the rate term are fitted
/// to the quantized latent and treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn loss_phase2(
    model: &dyn ScoreModel,
    ae: &Autoencoder,
    batch: &[Tensor],
    schedule: &NoiseSchedule,
    metric_mu: &dyn MetricM,
    metric_e: &dyn MetricM,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    let mut rng = DetRng::derived(cfg.seed, 0xF1);
    let (mut diff, mut mmu, mut e2e_mse, mut me, mut rate) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for x0 in batch {
        let t_idx = rng.below(schedule.grid().len() as u64) as usize;
        let noise = Tensor::new(x0.shape().to_vec(), rng.normal_vec(x0.len()))?;
        let x_t = schedule.forward_sample(x0, t_idx, &noise)?;

        let (y_real, latent_shape) = encode_real(ae, x0)?;
        let relaxed: Vec<f64> = y_real.iter().map(|v| v + rng.range(-0.5, 0.5)).collect();
        let code = encode_latent(ae, x0)?;
        let pred = model.predict_x0(schedule, &x_t, Some(&code), t_idx)?;
        diff += pred.mse(x0)?;
        mmu += metric_mu.eval(&pred, x0)?;

        let recon = decode_real(ae, &relaxed, &latent_shape)?;
        e2e_mse += recon.mse(x0)?;
        me += metric_e.eval(&recon, x0)?;

        let params = code.entropy_params();
        let channels = params.len();
        let per = if channels == 0 { 0 } else { relaxed.len() / channels };
        for (i, &v) in relaxed.iter().enumerate() {
            let p = &params[if per == 0 { 0 } else { (i / per).min(channels - 1) }];
            rate += surrogate_bits(v, p.mean(), p.scale().ln());
        }
    }
    let n = batch.len() as f64;
    let report = LossReport {
        diffusion_mse: diff / n,
        metric_mu: mmu / n,
        e2e_mse: e2e_mse / n,
        metric_e: me / n,
        rate_bits: rate / n,
        total: 0.0,
    };
    Ok(LossReport { total: report.weighted_sum(cfg), ..report })
}

// ---------------------------------------------------------------------------
// Gradient-bearing paths (tiny models only)
// ---------------------------------------------------------------------------

/// Phase-1 loss and gradient for the tiny score net on a fixed batch with
/// draws seeded by `draw_seed`. The parameter layout matches
/// [`TinyScoreNet::params`].
pub fn phase1_loss_grad(
    net: &TinyScoreNet,
    batch: &[Tensor],
    schedule: &NoiseSchedule,
    metric_mu: &dyn MetricM,
    cfg: &TrainConfig,
    draw_seed: u64,
) -> Result<(LossReport, Vec<f64>)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    let mut rng = DetRng::derived(draw_seed, 0xF1);
    let n_embed = net.embed.param_len();
    let mut grad = vec![0.0; net.param_len()];
    let (mut diff, mut mmu) = (0.0, 0.0);
    let nb = batch.len() as f64;
    for x0 in batch {
        let t_idx = rng.below(schedule.grid().len() as u64) as usize;
        let noise = rng.normal_vec(x0.len());
        let x_t: Vec<f64> = x0
            .data()
            .iter()
            .zip(&noise)
            .map(|(x, e)| schedule.alpha(t_idx) * x + schedule.sigma(t_idx) * e)
            .collect();

        let y_in = vec![0.0; net.latent_dim];
        let y_embed = net.embed.forward(&y_in)?;
        let t_embed = timestep_embedding(t_idx, T_EMBED_DIM);
        let mut input = Vec::with_capacity(net.trunk.in_dim());
        input.extend_from_slice(&x_t);
        input.extend_from_slice(&y_embed);
        input.extend_from_slice(&t_embed);
        let trace = net.trunk.forward_cached(&input)?;
        let pred = Tensor::new(x0.shape().to_vec(), trace.output().to_vec())?;

        diff += pred.mse(x0)?;
        let (m_val, m_grad) = metric_mu.eval_grad_a(&pred, x0)?;
        mmu += m_val;

        let nd = x0.len() as f64;
        let dout: Vec<f64> = pred
            .data()
            .iter()
            .zip(x0.data())
            .zip(&m_grad)
            .map(|((p, x), mg)| (2.0 * (p - x) / nd + cfg.lambda_mu * mg) / nb)
            .collect();
        let dinput = net.trunk.backward(&trace, &dout, &mut grad[n_embed..]);
        let d_yembed = &dinput[net.signal_dim..net.signal_dim + net.y_embed_dim];
        let (dw, db) = grad[..n_embed].split_at_mut(net.embed.w.len());
        net.embed.backward(&y_in, d_yembed, dw, db);
    }
    let report = LossReport {
        diffusion_mse: diff / nb,
        metric_mu: mmu / nb,
        e2e_mse: 0.0,
        metric_e: 0.0,
        rate_bits: 0.0,
        total: 0.0,
    };
    Ok((LossReport { total: report.weighted_sum(cfg), ..report }, grad))
}

/// Phase-2 loss and gradient over the concatenated parameters
/// [score net params, autoencoder params]. Conditioning, reconstruction and
/// the rate term all flow through the relaxed latent.
#[allow(clippy::too_many_arguments)]
pub fn phase2_loss_grad(
    net: &TinyScoreNet,
    ae: &TinyMlpAutoencoder,
    batch: &[Tensor],
    schedule: &NoiseSchedule,
    metric_mu: &dyn MetricM,
    metric_e: &dyn MetricM,
    cfg: &TrainConfig,
    draw_seed: u64,
) -> Result<(LossReport, Vec<f64>)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("batch must be nonempty".into()));
    }
    if net.latent_dim != ae.latent_dim {
        return Err(Error::Config(format!(
            "score net latent width {} does not match autoencoder {}",
            net.latent_dim, ae.latent_dim
        )));
    }
    let mut rng = DetRng::derived(draw_seed, 0xF1);
    let n_net = net.param_len();
    let n_embed = net.embed.param_len();
    let n_enc = ae.enc.param_len();
    let n_dec = ae.dec.param_len();
    let mut grad = vec![0.0; n_net + ae.param_len()];
    let (mut diff, mut mmu, mut e2e_mse, mut me, mut rate) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let nb = batch.len() as f64;
    for x0 in batch {
        let t_idx = rng.below(schedule.grid().len() as u64) as usize;
        let noise = rng.normal_vec(x0.len());
        let x_t: Vec<f64> = x0
            .data()
            .iter()
            .zip(&noise)
            .map(|(x, e)| schedule.alpha(t_idx) * x + schedule.sigma(t_idx) * e)
            .collect();

        let enc_trace = ae.enc.forward_cached(x0.data())?;
        let relaxed: Vec<f64> = enc_trace.output().iter().map(|v| v + rng.range(-0.5, 0.5)).collect();

        // Score path conditioned on the relaxed latent.
        let y_embed = net.embed.forward(&relaxed)?;
        let t_embed = timestep_embedding(t_idx, T_EMBED_DIM);
        let mut input = Vec::with_capacity(net.trunk.in_dim());
        input.extend_from_slice(&x_t);
        input.extend_from_slice(&y_embed);
        input.extend_from_slice(&t_embed);
        let trunk_trace = net.trunk.forward_cached(&input)?;
        let pred = Tensor::new(x0.shape().to_vec(), trunk_trace.output().to_vec())?;
        diff += pred.mse(x0)?;
        let (m_val, m_grad) = metric_mu.eval_grad_a(&pred, x0)?;
        mmu += m_val;

        // End-to-end path.
        let dec_trace = ae.dec.forward_cached(&relaxed)?;
        let recon = Tensor::new(x0.shape().to_vec(), dec_trace.output().to_vec())?;
        e2e_mse += recon.mse(x0)?;
        let (e_val, e_grad) = metric_e.eval_grad_a(&recon, x0)?;
        me += e_val;

        // Rate path under the learnable prior (single channel).
        let mean = ae.prior_mean[0];
        let log_scale = ae.prior_log_scale[0];
        let mut d_relaxed_rate = vec![0.0; relaxed.len()];
        let (mut d_mean, mut d_log_scale) = (0.0, 0.0);
        for (i, &v) in relaxed.iter().enumerate() {
            let (bits, dv, dm, dls) = surrogate_bits_grad(v, mean, log_scale);
            rate += bits;
            d_relaxed_rate[i] = dv;
            d_mean += dm;
            d_log_scale += dls;
        }

        // Backward: score branch.
        let nd = x0.len() as f64;
        let dout: Vec<f64> = pred
            .data()
            .iter()
            .zip(x0.data())
            .zip(&m_grad)
            .map(|((p, x), mg)| (2.0 * (p - x) / nd + cfg.lambda_mu * mg) / nb)
            .collect();
        let dinput = net.trunk.backward(&trunk_trace, &dout, &mut grad[n_embed..n_net]);
        let d_yembed = &dinput[net.signal_dim..net.signal_dim + net.y_embed_dim];
        let mut d_relaxed = {
            let (dw, db) = grad[..n_embed].split_at_mut(net.embed.w.len());
            net.embed.backward(&relaxed, d_yembed, dw, db)
        };

        // Backward: end-to-end branch.
        let d_recon: Vec<f64> = recon
            .data()
            .iter()
            .zip(x0.data())
            .zip(&e_grad)
            .map(|((r, x), eg)| (2.0 * (r - x) / nd + cfg.lambda_e * eg) / nb)
            .collect();
        let d_from_dec = ae.dec.backward(&dec_trace, &d_recon, &mut grad[n_net + n_enc..n_net + n_enc + n_dec]);

        // Accumulate all relaxed-latent cotangents, then push through E.
        for ((d, from_dec), from_rate) in d_relaxed.iter_mut().zip(&d_from_dec).zip(&d_relaxed_rate) {
            *d += from_dec + cfg.lambda_r * from_rate / nb;
        }
        ae.enc.backward(&enc_trace, &d_relaxed, &mut grad[n_net..n_net + n_enc]);

        let prior_off = n_net + n_enc + n_dec;
        grad[prior_off] += cfg.lambda_r * d_mean / nb;
        grad[prior_off + 1] += cfg.lambda_r * d_log_scale / nb;
    }
    let report = LossReport {
        diffusion_mse: diff / nb,
        metric_mu: mmu / nb,
        e2e_mse: e2e_mse / nb,
        metric_e: me / nb,
        rate_bits: rate / nb,
        total: 0.0,
    };
    Ok((LossReport { total: report.weighted_sum(cfg), ..report }, grad))
}

/// One descent step: params - lr * grad(loss). The evaluator returns the
/// loss value and the gradient at the given parameters.
pub fn grad_step(
    params: &[f64],
    eval: &mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    lr: f64,
) -> Result<Vec<f64>> {
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite parameter before step".into()));
    }
    let (_, grad) = eval(params)?;
    if grad.len() != params.len() {
        return Err(Error::Config(format!(
            "gradient length {} does not match {} parameters",
            grad.len(),
            params.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect())
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

fn draw_batch(data: &[Tensor], count: usize, rng: &mut DetRng) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.below(data.len() as u64) as usize;
        out.push(data[i].clone());
    }
    out
}

/// Phase-1 training loop. Returns per-iteration reports and optionally
/// appends CSV rows (header + one line per iteration) to `log`.
pub fn train_phase1(
    net: &mut TinyScoreNet,
    data: &[Tensor],
    schedule: &NoiseSchedule,
    metric_mu: &dyn MetricM,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training data must be nonempty".into()));
    }
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", LossReport::csv_header())?;
    }
    let mut batch_rng = DetRng::derived(cfg.seed, 0xBA7C);
    let mut reports = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let batch = draw_batch(data, cfg.batch, &mut batch_rng);
        let draw_seed = cfg.seed ^ (iter as u64).wrapping_mul(0x9E3779B97F4A7C15);
        let (report, grad) = phase1_loss_grad(net, &batch, schedule, metric_mu, cfg, draw_seed)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at iteration {iter}")));
        }
        let params: Vec<f64> = net.params().iter().zip(&grad).map(|(p, g)| p - cfg.lr * g).collect();
        net.set_params(&params)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", report.csv_row(iter))?;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Phase-2 training loop over the joint parameter vector.
#[allow(clippy::too_many_arguments)]
pub fn train_phase2(
    net: &mut TinyScoreNet,
    ae: &mut TinyMlpAutoencoder,
    data: &[Tensor],
    schedule: &NoiseSchedule,
    metric_mu: &dyn MetricM,
    metric_e: &dyn MetricM,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training data must be nonempty".into()));
    }
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", LossReport::csv_header())?;
    }
    let mut batch_rng = DetRng::derived(cfg.seed, 0xBA7C);
    let mut reports = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let batch = draw_batch(data, cfg.batch, &mut batch_rng);
        let draw_seed = cfg.seed ^ (iter as u64).wrapping_mul(0x9E3779B97F4A7C15);
        let (report, grad) =
            phase2_loss_grad(net, ae, &batch, schedule, metric_mu, metric_e, cfg, draw_seed)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at iteration {iter}")));
        }
        let n_net = net.param_len();
        let mut joint = net.params();
        joint.extend(ae.params());
        for (p, g) in joint.iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
        net.set_params(&joint[..n_net])?;
        ae.set_params(&joint[n_net..])?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", report.csv_row(iter))?;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Mean measured rate (in bits, via the shared entropy model) of coding a
/// dataset with the pair.
pub fn mean_coded_rate(ae: &Autoencoder, data: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for x0 in data {
        total += estimate_rate(&encode_latent(ae, x0)?)?;
    }
    Ok(total / data.len() as f64)
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Draws from a Gaussian mixture prior.
pub fn mixture_batch(
    oracle: &crate::score::GaussianMixtureOracle,
    count: usize,
    rng: &mut DetRng,
) -> Vec<Tensor> {
    (0..count).map(|_| oracle.sample(rng)).collect()
}

/// 8x8 piecewise-constant patch textures: a base value plus a few seeded
/// constant rectangles.
pub fn patch_texture_batch(count: usize, rng: &mut DetRng) -> Vec<Tensor> {
    (0..count)
        .map(|_| {
            let mut data = vec![rng.range(-1.0, 1.0); 64];
            let rects = 1 + rng.below(3);
            for _ in 0..rects {
                let r0 = rng.below(8) as usize;
                let r1 = r0 + 1 + rng.below(8 - r0 as u64) as usize;
                let c0 = rng.below(8) as usize;
                let c1 = c0 + 1 + rng.below(8 - c0 as u64) as usize;
                let v = rng.range(-1.0, 1.0);
                for r in r0..r1 {
                    for c in c0..c1 {
                        data[r * 8 + c] = v;
                    }
                }
            }
            Tensor::new(vec![8, 8], data).unwrap()
        })
        .collect()
}
