//! Per-timestep correction of the diffusion prediction.
//!
//! At every reverse step the encoder blends the diffusion estimate x0_diff
//! with the end-to-end reconstruction x0_e2e,
//!
//!   x0_c = gamma * x0_diff + (1 - gamma) * x0_e2e,
//!
//! choosing gamma to minimize a distance to the original signal. The chosen
//! factor is quantized to binary16 before it is used, so the decoder can
//! replay the exact trajectory from the transmitted [`GammaTrack`]. In score
//! form the blend is
//!
//!   corrected = (alpha / sigma^2) * x0_c - x_t / sigma^2,
//!
//! which collapses to the plain score implied by x0_diff at gamma = 1.

use half::f16;

use crate::error::{Error, ProtocolError, Result};
use crate::rng::DetRng;
use crate::schedule::NoiseSchedule;
use crate::score::score_from_x0;
use crate::tensor::{check_same_shape, lincomb, Tensor};

// ---------------------------------------------------------------------------
// Distance metrics
// ---------------------------------------------------------------------------

/// Distance functional used both by the gamma search and by training losses.
pub trait MetricM {
    fn id(&self) -> &str;

    /// Nonnegative distance; zero on identical inputs.
    fn eval(&self, a: &Tensor, b: &Tensor) -> Result<f64>;

    /// Distance plus its gradient with respect to `a`.
    fn eval_grad_a(&self, a: &Tensor, b: &Tensor) -> Result<(f64, Vec<f64>)>;
}

/// Plain mean squared error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mse;

impl MetricM for Mse {
    fn id(&self) -> &str {
        "mse"
    }

    fn eval(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        a.mse(b)
    }

    fn eval_grad_a(&self, a: &Tensor, b: &Tensor) -> Result<(f64, Vec<f64>)> {
        let v = a.mse(b)?;
        let n = a.len() as f64;
        let grad = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| 2.0 * (x - y) / n)
            .collect();
        Ok((v, grad))
    }
}

/// Seed for the fixed random feature bank of [`FeatureMse`].
pub const FEATURE_BANK_SEED: u64 = 0x70F2_6AB1_55C3_9D04;

/// MSE over a fixed random-projection feature bank.
///
/// Stands in for trained perceptual metrics: k seeded Gaussian rows (scaled
/// by 1/sqrt(n)) project the difference, and the squared projections are
/// averaged. Rows are regenerated deterministically per input length, so
/// evaluation needs no state and is safe to share across threads. Because the
/// projection has a null space, M(a, b) = 0 does not imply a == b; only
/// M(a, a) = 0 is guaranteed.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMse {
    pub rows: usize,
    pub seed: u64,
}

impl Default for FeatureMse {
    fn default() -> Self {
        Self { rows: 32, seed: FEATURE_BANK_SEED }
    }
}

impl FeatureMse {
    fn project_diff(&self, a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
        check_same_shape(a, b)?;
        let n = a.len();
        let scale = 1.0 / (n as f64).sqrt();
        let mut feats = Vec::with_capacity(self.rows);
        for row in 0..self.rows {
            let mut rng = DetRng::derived(self.seed ^ (n as u64), row as u64 + 1);
            let mut acc = 0.0;
            for (x, y) in a.data().iter().zip(b.data()) {
                acc += rng.normal() * scale * (x - y);
            }
            feats.push(acc);
        }
        Ok(feats)
    }
}

impl MetricM for FeatureMse {
    fn id(&self) -> &str {
        "feature-mse"
    }

    fn eval(&self, a: &Tensor, b: &Tensor) -> Result<f64> {
        let feats = self.project_diff(a, b)?;
        Ok(feats.iter().map(|f| f * f).sum::<f64>() / self.rows as f64)
    }

    fn eval_grad_a(&self, a: &Tensor, b: &Tensor) -> Result<(f64, Vec<f64>)> {
        let feats = self.project_diff(a, b)?;
        let value = feats.iter().map(|f| f * f).sum::<f64>() / self.rows as f64;
        let n = a.len();
        let scale = 1.0 / (n as f64).sqrt();
        let mut grad = vec![0.0; n];
        for (row, f) in feats.iter().enumerate() {
            let mut rng = DetRng::derived(self.seed ^ (n as u64), row as u64 + 1);
            let c = 2.0 * f / self.rows as f64;
            for g in grad.iter_mut() {
                *g += c * rng.normal() * scale;
            }
        }
        Ok((value, grad))
    }
}

/// Builds a metric by identifier.
pub fn metric_by_id(id: &str) -> Result<Box<dyn MetricM>> {
    match id {
        "mse" => Ok(Box::new(Mse)),
        "feature-mse" => Ok(Box::new(FeatureMse::default())),
        other => Err(Error::Config(format!("unknown metric `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Gamma track
// ---------------------------------------------------------------------------

/// Ordered per-timestep blend factors, stored as binary16 bit patterns in
/// t = T..1 order. On the wire each entry is two big-endian bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GammaTrack {
    bits: Vec<u16>,
}

impl GammaTrack {
    /// Quantizes the given factors (t = T..1 order) to binary16.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("gamma values must be finite".into()));
        }
        Ok(Self { bits: values.iter().map(|&v| f16::from_f64(v).to_bits()).collect() })
    }

    pub fn from_bits(bits: Vec<u16>) -> Result<Self> {
        if bits.iter().any(|&b| !f16::from_bits(b).is_finite()) {
            return Err(Error::Protocol(ProtocolError::Malformed(
                "gamma track contains a non-finite binary16".into(),
            )));
        }
        Ok(Self { bits })
    }

    /// Uniform track (e.g. all-ones for the uncorrected baseline).
    pub fn uniform(value: f64, len: usize) -> Self {
        Self { bits: vec![f16::from_f64(value).to_bits(); len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u16] {
        &self.bits
    }

    /// Decoded factors in t = T..1 order.
    pub fn values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f16::from_bits(b).to_f64()).collect()
    }

    pub fn value_at(&self, pos: usize) -> f64 {
        f16::from_bits(self.bits[pos]).to_f64()
    }

    pub fn to_be_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 * self.bits.len());
        for &b in &self.bits {
            out.extend_from_slice(&b.to_be_bytes());
        }
        out
    }

    pub fn from_be_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 2 != 0 {
            return Err(Error::Protocol(ProtocolError::Malformed(
                "gamma track byte length must be even".into(),
            )));
        }
        let bits = bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Self::from_bits(bits)
    }
}

/// Quantize a blend factor exactly the way the wire does.
pub fn quantize_gamma(gamma: f64) -> f64 {
    f16::from_f64(gamma).to_f64()
}

// ---------------------------------------------------------------------------
// Blend, gamma search, corrected score
// ---------------------------------------------------------------------------

/// gamma * x0_diff + (1 - gamma) * x0_e2e.
pub fn blend(x0_diff: &Tensor, x0_e2e: &Tensor, gamma: f64) -> Result<Tensor> {
    lincomb(gamma, x0_diff, 1.0 - gamma, x0_e2e)
}

/// Bounded derivative-free search settings for the blend factor.
#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { lo: -0.5, hi: 1.5, tol: 1e-4, max_iters: 200 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("bad search bounds [{}, {}]", self.lo, self.hi)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("search tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Number of points in the non-unimodal fallback grid scan.
const GRID_POINTS: usize = 33;

fn golden_section(f: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64, max_iters: usize) -> (f64, f64) {
    const RESP: f64 = 2.0 - 1.618_033_988_749_895; // 2 - phi
    let mut x1 = a + RESP * (b - a);
    let mut x2 = b - RESP * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iters = 2usize;
    while iters < max_iters && (b - a) > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + RESP * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - RESP * (b - a);
            f2 = f(x2);
        }
        iters += 1;
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Finds gamma minimizing `metric(x0_star, blend(gamma))` over the search
/// interval, within the configured bracket tolerance.
///
/// Golden-section search runs first; a 33-point grid scan acts as a fallback
/// when the objective turns out non-unimodal (the scan finds a better point),
/// in which case the search is repeated inside the best grid bracket.
/// Whatever the route, the result never scores worse than gamma = 1, i.e.
/// the correction cannot hurt relative to the uncorrected prediction.
pub fn solve_gamma(
    metric: &dyn MetricM,
    x0_star: &Tensor,
    x0_diff: &Tensor,
    x0_e2e: &Tensor,
    search: &SearchConfig,
) -> Result<f64> {
    search.validate()?;
    check_same_shape(x0_star, x0_diff)?;
    check_same_shape(x0_star, x0_e2e)?;
    if x0_diff == x0_e2e {
        // Objective is constant along the line; keep the diffusion output.
        return Ok(1.0);
    }
    // Exact-minimizer shortcuts: when the target sits on an endpoint of the
    // blend line, no search beats answering the endpoint itself.
    if x0_star == x0_diff {
        return Ok(1.0);
    }
    if x0_star == x0_e2e {
        return Ok(0.0);
    }

    let mut eval_err: Option<Error> = None;
    let mut objective = |g: f64| -> f64 {
        match blend(x0_diff, x0_e2e, g).and_then(|b| metric.eval(x0_star, &b)) {
            Ok(v) => v,
            Err(e) => {
                eval_err.get_or_insert(e);
                f64::INFINITY
            }
        }
    };

    let (mut best_g, mut best_f) = golden_section(&mut objective, search.lo, search.hi, search.tol, search.max_iters);

    // Detect a non-unimodal objective: a coarse scan beats the local search.
    let step = (search.hi - search.lo) / (GRID_POINTS - 1) as f64;
    let mut grid_best = (search.lo, objective(search.lo));
    for i in 1..GRID_POINTS {
        let g = search.lo + step * i as f64;
        let v = objective(g);
        if v < grid_best.1 {
            grid_best = (g, v);
        }
    }
    if grid_best.1 < best_f {
        let lo = (grid_best.0 - step).max(search.lo);
        let hi = (grid_best.0 + step).min(search.hi);
        let (g, v) = golden_section(&mut objective, lo, hi, search.tol, search.max_iters);
        if v < grid_best.1 {
            best_g = g;
            best_f = v;
        } else {
            best_g = grid_best.0;
            best_f = grid_best.1;
        }
    }

    // Never worse than the uncorrected endpoint.
    let at_one = objective(1.0);
    if let Some(e) = eval_err {
        return Err(e);
    }
    if at_one < best_f {
        return Ok(1.0);
    }
    Ok(best_g)
}

/// Corrected score (alpha/sigma^2) * blend - x_t / sigma^2; equals the score
/// implied by the blended x0 estimate.
pub fn corrected_score(
    schedule: &NoiseSchedule,
    x_t: &Tensor,
    x0_diff: &Tensor,
    x0_e2e: &Tensor,
    gamma: f64,
    t_idx: usize,
) -> Result<Tensor> {
    let blended = blend(x0_diff, x0_e2e, gamma)?;
    score_from_x0(schedule, x_t, &blended, t_idx)
}
