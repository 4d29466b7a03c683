//! Diffusion noise schedules on a discrete timestep grid.
//!
//! A schedule fixes alpha(t) and sigma(t) on T+1 grid points spanning [0, 1],
//! with t=0 noise-free and t=T effectively pure noise. Both supported kinds
//! are variance preserving (alpha^2 + sigma^2 = 1), which is what lets the
//! samplers start from a unit Gaussian at t=T. The drift and diffusion
//! coefficients of the equivalent SDE,
//!
//!   f(t) = d log alpha / dt,
//!   g^2(t) = d sigma^2 / dt - 2 f(t) sigma^2(t),
//!
//! are evaluated analytically for the closed-form kinds and by central
//! differences on the grid for tabulated schedules.

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::{check_same_shape, lincomb, Tensor};

/// Closed-form parameters of the `vp-linear-beta` kind: beta(t) ramps
/// linearly from BETA_MIN to BETA_MAX over [0, 1]. BETA_MAX is chosen so
/// alpha(1) drops below 1e-3.
pub const BETA_MIN: f64 = 0.1;
pub const BETA_MAX: f64 = 28.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// alpha(t) = cos(pi t / 2), sigma(t) = sin(pi t / 2).
    VpCosine,
    /// alpha(t) = exp(-1/2 int_0^t beta), beta linear in t; sigma from the VP identity.
    VpLinearBeta,
    /// Arbitrary tables; derivatives fall back to grid differences. Not wire-encodable.
    Tabulated,
}

impl ScheduleKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "vp-cosine" => Ok(Self::VpCosine),
            "vp-linear-beta" => Ok(Self::VpLinearBeta),
            other => Err(Error::Config(format!("unsupported schedule kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::VpCosine => "vp-cosine",
            Self::VpLinearBeta => "vp-linear-beta",
            Self::Tabulated => "tabulated",
        }
    }

    /// Wire id used in the stream header.
    pub fn wire_id(&self) -> Result<u8> {
        match self {
            Self::VpCosine => Ok(0),
            Self::VpLinearBeta => Ok(1),
            Self::Tabulated => Err(Error::Config("tabulated schedules cannot be serialized".into())),
        }
    }

    pub fn from_wire_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Self::VpCosine),
            1 => Ok(Self::VpLinearBeta),
            other => Err(Error::Config(format!("unknown schedule id {other}"))),
        }
    }
}

/// Immutable noise schedule over a discrete grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    grid: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

fn cosine_alpha(t: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * t).cos()
}

fn cosine_sigma(t: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * t).sin()
}

fn linear_beta(t: f64) -> f64 {
    BETA_MIN + (BETA_MAX - BETA_MIN) * t
}

fn linear_alpha(t: f64) -> f64 {
    (-0.5 * (BETA_MIN * t + 0.5 * (BETA_MAX - BETA_MIN) * t * t)).exp()
}

/// Builds a schedule with T+1 grid points. `t_steps` is the number of
/// sampler steps T and must be at least 1.
pub fn make_schedule(kind: ScheduleKind, t_steps: usize) -> Result<NoiseSchedule> {
    if t_steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if t_steps > u16::MAX as usize {
        return Err(Error::Config(format!("T={t_steps} exceeds the wire limit of 65535")));
    }
    if kind == ScheduleKind::Tabulated {
        return Err(Error::Config("tabulated schedules are built from explicit tables".into()));
    }
    let grid: Vec<f64> = (0..=t_steps).map(|i| i as f64 / t_steps as f64).collect();
    let (alpha, sigma): (Vec<f64>, Vec<f64>) = match kind {
        ScheduleKind::VpCosine => grid
            .iter()
            .map(|&t| (cosine_alpha(t), cosine_sigma(t)))
            .unzip(),
        ScheduleKind::VpLinearBeta => grid
            .iter()
            .map(|&t| {
                let a = linear_alpha(t);
                (a, (1.0 - a * a).max(0.0).sqrt())
            })
            .unzip(),
        ScheduleKind::Tabulated => unreachable!(),
    };
    Ok(NoiseSchedule { kind, grid, alpha, sigma })
}

impl NoiseSchedule {
    /// Builds a schedule from explicit tables. Derivatives use grid
    /// differences. Meant for tests and experiments; the usual invariants are
    /// not enforced beyond basic well-formedness.
    pub fn from_tables(grid: Vec<f64>, alpha: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != alpha.len() || grid.len() != sigma.len() {
            return Err(Error::Config("tables must share a length of at least 2".into()));
        }
        if grid.iter().chain(&alpha).chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("schedule tables contain non-finite values".into()));
        }
        Ok(Self { kind: ScheduleKind::Tabulated, grid, alpha, sigma })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of sampler steps T; the grid has T+1 points.
    pub fn t_steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_t(&self, idx: usize) -> f64 {
        self.grid[idx]
    }

    pub fn alpha(&self, idx: usize) -> f64 {
        self.alpha[idx]
    }

    pub fn sigma(&self, idx: usize) -> f64 {
        self.sigma[idx]
    }

    fn check_idx(&self, idx: usize) -> Result<()> {
        if idx >= self.grid.len() {
            return Err(Error::Config(format!(
                "grid index {idx} out of range for T={}",
                self.t_steps()
            )));
        }
        Ok(())
    }

    /// Drift coefficient f(t) = d log alpha / dt at a grid point.
    pub fn drift_coeff(&self, idx: usize) -> Result<f64> {
        self.check_idx(idx)?;
        let t = self.grid[idx];
        Ok(match self.kind {
            ScheduleKind::VpCosine => {
                -std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).tan()
            }
            ScheduleKind::VpLinearBeta => -0.5 * linear_beta(t),
            ScheduleKind::Tabulated => self.grid_derivative(idx, &|s, i| s.alpha[i].ln()),
        })
    }

    /// Diffusion coefficient g(t) >= 0 with g^2 = d sigma^2/dt - 2 f sigma^2.
    pub fn diffusion_coeff(&self, idx: usize) -> Result<f64> {
        self.check_idx(idx)?;
        let t = self.grid[idx];
        let sigma2 = self.sigma[idx] * self.sigma[idx];
        let dsigma2 = match self.kind {
            ScheduleKind::VpCosine => {
                std::f64::consts::FRAC_PI_2 * (std::f64::consts::PI * t).sin()
            }
            ScheduleKind::VpLinearBeta => {
                // sigma^2 = 1 - alpha^2, so d sigma^2/dt = -2 alpha^2 f.
                let a = self.alpha[idx];
                -2.0 * a * a * self.drift_coeff(idx)?
            }
            ScheduleKind::Tabulated => self.grid_derivative(idx, &|s, i| s.sigma[i] * s.sigma[i]),
        };
        let g2 = dsigma2 - 2.0 * self.drift_coeff(idx)? * sigma2;
        Ok(g2.max(0.0).sqrt())
    }

    /// Central difference on the grid, one-sided at the boundaries.
    fn grid_derivative(&self, idx: usize, f: &dyn Fn(&Self, usize) -> f64) -> f64 {
        let last = self.grid.len() - 1;
        let (i0, i1) = if idx == 0 {
            (0, 1)
        } else if idx == last {
            (last - 1, last)
        } else {
            (idx - 1, idx + 1)
        };
        (f(self, i1) - f(self, i0)) / (self.grid[i1] - self.grid[i0])
    }

    /// Draws x_t = alpha(t) x0 + sigma(t) noise.
    pub fn forward_sample(&self, x0: &Tensor, idx: usize, noise: &Tensor) -> Result<Tensor> {
        self.check_idx(idx)?;
        check_same_shape(x0, noise)?;
        lincomb(self.alpha[idx], x0, self.sigma[idx], noise)
    }

    /// Convenience: forward sample with freshly drawn standard normal noise.
    pub fn forward_sample_with(&self, x0: &Tensor, idx: usize, rng: &mut DetRng) -> Result<Tensor> {
        let noise = Tensor::new(x0.shape().to_vec(), rng.normal_vec(x0.len()))?;
        self.forward_sample(x0, idx, &noise)
    }
}
