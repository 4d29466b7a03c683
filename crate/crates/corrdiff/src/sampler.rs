//! Deterministic DDIM reverse loops for both ends of the protocol.
//!
//! The encoder rollout walks t = T..1, blending the model prediction with
//! the end-to-end reconstruction at a searched factor per step and recording
//! the factors; the decoder rollout replays the identical arithmetic from
//! the received factors. Both sides must start from the same x_T, so the
//! initial noise comes from the pinned generator in [`crate::rng`] seeded by
//! a value carried in the stream header.

use crate::correction::{blend, quantize_gamma, solve_gamma, GammaTrack, MetricM, SearchConfig};
use crate::error::{Error, ProtocolError, Result};
use crate::latent::LatentCode;
use crate::rng::DetRng;
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;
use crate::tensor::{lincomb, Tensor};

/// One reverse step of the trajectory, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t_idx: usize,
    pub x_t_hash: u64,
    pub x0_diff: Tensor,
    pub x0_e2e: Tensor,
    pub gamma: f64,
    pub x0_corrected: Tensor,
    pub epsilon: Tensor,
}

/// Full encoder-side trace: T step records in t = T..1 order plus the final
/// reconstruction.
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub steps: Vec<StepRecord>,
    pub final_x0: Tensor,
}

/// Deterministic standard-normal initialization of x_T from a seed.
pub fn init_xt(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = DetRng::new(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normal_vec(n)).expect("valid shape")
}

/// One DDIM update given the corrected estimate x0_c at step t:
/// eps = (x_t - alpha(t) x0_c) / sigma(t), then
/// x_{t-1} = alpha(t-1) x0_c + sigma(t-1) eps.
pub fn ddim_step(schedule: &NoiseSchedule, x_t: &Tensor, x0_c: &Tensor, t_idx: usize) -> Result<Tensor> {
    if t_idx == 0 || t_idx > schedule.t_steps() {
        return Err(Error::Config(format!("ddim step expects 1 <= t <= {}, got {t_idx}", schedule.t_steps())));
    }
    let sigma = schedule.sigma(t_idx);
    if sigma == 0.0 {
        return Err(Error::Numeric(format!("sigma({t_idx}) = 0 in ddim step")));
    }
    let eps = lincomb(1.0 / sigma, x_t, -schedule.alpha(t_idx) / sigma, x0_c)?;
    lincomb(schedule.alpha(t_idx - 1), x0_c, schedule.sigma(t_idx - 1), &eps)
}

fn check_finite(t: &Tensor, what: &str, t_idx: usize) -> Result<()> {
    if !t.is_all_finite() {
        return Err(Error::Numeric(format!("non-finite {what} at step t={t_idx}")));
    }
    Ok(())
}

/// Encoder-side rollout: searches the blend factor at every step against the
/// original signal and returns the quantized factor track plus the trace.
///
/// Factors are quantized to binary16 *before* they enter the trajectory, so
/// the decoder sees the same arithmetic as the encoder.
#[allow(clippy::too_many_arguments)]
pub fn encode_rollout(
    schedule: &NoiseSchedule,
    model: &dyn ScoreModel,
    y: Option<&LatentCode>,
    e2e: &Tensor,
    x0_star: &Tensor,
    metric: &dyn MetricM,
    search: &SearchConfig,
    seed: u64,
) -> Result<(GammaTrack, RolloutTrace)> {
    let t_steps = schedule.t_steps();
    let mut x_t = init_xt(seed, x0_star.shape());
    let mut gammas = Vec::with_capacity(t_steps);
    let mut steps = Vec::with_capacity(t_steps);
    for t_idx in (1..=t_steps).rev() {
        let x0_diff = model.predict_x0(schedule, &x_t, y, t_idx)?;
        check_finite(&x0_diff, "model prediction", t_idx)?;
        let gamma_raw = solve_gamma(metric, x0_star, &x0_diff, e2e, search)?;
        let mut gamma = quantize_gamma(gamma_raw);
        let mut x0_c = blend(&x0_diff, e2e, gamma)?;
        // binary16 rounding of the factor must not spoil the win over the
        // uncorrected estimate; fall back to gamma = 1 (exact in binary16)
        // when it does.
        if metric.eval(x0_star, &x0_c)? > metric.eval(x0_star, &x0_diff)? {
            gamma = 1.0;
            x0_c = x0_diff.clone();
        }
        check_finite(&x0_c, "blended estimate", t_idx)?;
        let sigma = schedule.sigma(t_idx);
        let eps = lincomb(1.0 / sigma, &x_t, -schedule.alpha(t_idx) / sigma, &x0_c)?;
        let x_prev = lincomb(schedule.alpha(t_idx - 1), &x0_c, schedule.sigma(t_idx - 1), &eps)?;
        check_finite(&x_prev, "trajectory state", t_idx)?;
        steps.push(StepRecord {
            t_idx,
            x_t_hash: x_t.content_hash(),
            x0_diff,
            x0_e2e: e2e.clone(),
            gamma,
            x0_corrected: x0_c,
            epsilon: eps,
        });
        gammas.push(gamma);
        x_t = x_prev;
    }
    let track = GammaTrack::from_values(&gammas)?;
    Ok((track, RolloutTrace { steps, final_x0: x_t }))
}

/// Decoder-side rollout: replays the trajectory with received factors.
pub fn decode_rollout(
    schedule: &NoiseSchedule,
    model: &dyn ScoreModel,
    y: Option<&LatentCode>,
    e2e: &Tensor,
    gammas: &GammaTrack,
    seed: u64,
) -> Result<Tensor> {
    let t_steps = schedule.t_steps();
    if gammas.len() != t_steps {
        return Err(Error::Protocol(ProtocolError::Malformed(format!(
            "gamma track has {} entries for T={t_steps}",
            gammas.len()
        ))));
    }
    let mut x_t = init_xt(seed, e2e.shape());
    for (pos, t_idx) in (1..=t_steps).rev().enumerate() {
        let x0_diff = model.predict_x0(schedule, &x_t, y, t_idx)?;
        check_finite(&x0_diff, "model prediction", t_idx)?;
        let gamma = gammas.value_at(pos);
        let x0_c = blend(&x0_diff, e2e, gamma)?;
        let sigma = schedule.sigma(t_idx);
        let eps = lincomb(1.0 / sigma, &x_t, -schedule.alpha(t_idx) / sigma, &x0_c)?;
        x_t = lincomb(schedule.alpha(t_idx - 1), &x0_c, schedule.sigma(t_idx - 1), &eps)?;
        check_finite(&x_t, "trajectory state", t_idx)?;
    }
    Ok(x_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::Mse;
    use crate::schedule::{make_schedule, ScheduleKind};
    use crate::score::GaussianMixtureOracle;

    fn sched() -> NoiseSchedule {
        make_schedule(ScheduleKind::VpCosine, 8).unwrap()
    }

    #[test]
    fn init_xt_is_deterministic_and_seed_sensitive() {
        let a = init_xt(42, &[4, 4]);
        let b = init_xt(42, &[4, 4]);
        let c = init_xt(43, &[4, 4]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.shape(), &[4, 4]);
    }

    #[test]
    fn ddim_step_at_t1_returns_the_estimate() {
        let s = sched();
        let x_t = Tensor::new(vec![3], vec![0.5, -1.0, 0.25]).unwrap();
        let x0c = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let out = ddim_step(&s, &x_t, &x0c, 1).unwrap();
        assert_eq!(out, x0c);
    }

    #[test]
    fn ddim_step_with_consistent_estimate_rescales() {
        let s = sched();
        let x_t = Tensor::new(vec![2], vec![0.7, -0.2]).unwrap();
        let t = 5;
        let x0c = x_t.scale(1.0 / s.alpha(t));
        let out = ddim_step(&s, &x_t, &x0c, t).unwrap();
        let want = x_t.scale(s.alpha(t - 1) / s.alpha(t));
        assert!(out.max_abs_diff(&want).unwrap() < 1e-12);
        assert!(ddim_step(&s, &x_t, &x0c, 0).is_err());
    }

    #[test]
    fn rollout_with_perfect_model_recovers_signal() {
        // A model that always answers x0_star forces gamma = 1 everywhere and
        // lands exactly on the signal.
        struct Perfect(Tensor);
        impl ScoreModel for Perfect {
            fn id(&self) -> &str {
                "perfect"
            }
            fn predict_x0(
                &self,
                _s: &NoiseSchedule,
                _x: &Tensor,
                _y: Option<&LatentCode>,
                _t: usize,
            ) -> Result<Tensor> {
                Ok(self.0.clone())
            }
        }
        let s = sched();
        let mut rng = DetRng::new(8);
        let x0 = Tensor::new(vec![6], rng.normal_vec(6)).unwrap();
        let e2e = Tensor::new(vec![6], rng.normal_vec(6)).unwrap();
        let (track, trace) =
            encode_rollout(&s, &Perfect(x0.clone()), None, &e2e, &x0, &Mse, &SearchConfig::default(), 3).unwrap();
        for g in track.values() {
            assert!((g - 1.0).abs() < 1e-3, "gamma {g}");
        }
        assert!(trace.final_x0.max_abs_diff(&x0).unwrap() < 1e-6);
        assert_eq!(trace.steps.len(), 8);
    }

    #[test]
    fn rollout_with_perfect_e2e_recovers_signal() {
        let s = sched();
        let mut rng = DetRng::new(9);
        let x0 = Tensor::new(vec![6], rng.normal_vec(6)).unwrap();
        let oracle = GaussianMixtureOracle::single(Tensor::zeros(&[6]), 1.0).unwrap();
        let (track, trace) =
            encode_rollout(&s, &oracle, None, &x0, &x0, &Mse, &SearchConfig::default(), 3).unwrap();
        for g in track.values() {
            assert!(g.abs() < 1e-3, "gamma {g}");
        }
        assert!(trace.final_x0.max_abs_diff(&x0).unwrap() < 1e-6);
    }

    #[test]
    fn decode_replays_encode_bit_exactly() {
        let s = sched();
        let mut rng = DetRng::new(15);
        let oracle = GaussianMixtureOracle::single(Tensor::zeros(&[8]), 1.0).unwrap();
        let x0 = Tensor::new(vec![8], rng.normal_vec(8)).unwrap();
        let mut e2e = x0.clone();
        for v in e2e.data_mut() {
            *v += 0.2 * rng.normal();
        }
        let (track, trace) =
            encode_rollout(&s, &oracle, None, &e2e, &x0, &Mse, &SearchConfig::default(), 99).unwrap();
        let decoded = decode_rollout(&s, &oracle, None, &e2e, &track, 99).unwrap();
        assert_eq!(
            decoded.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            trace.final_x0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gamma_zero_track_collapses_to_e2e() {
        let s = sched();
        let mut rng = DetRng::new(25);
        let oracle = GaussianMixtureOracle::single(Tensor::zeros(&[5]), 1.0).unwrap();
        let e2e = Tensor::new(vec![5], rng.normal_vec(5)).unwrap();
        for t_steps in [4usize, 8, 16] {
            let s_t = make_schedule(ScheduleKind::VpCosine, t_steps).unwrap();
            let track = GammaTrack::uniform(0.0, t_steps);
            let out = decode_rollout(&s_t, &oracle, None, &e2e, &track, 7).unwrap();
            assert!(out.max_abs_diff(&e2e).unwrap() < 1e-12, "T={t_steps}");
        }
        let _ = s;
    }

    #[test]
    fn gamma_one_track_is_unconditional_ddim() {
        let s = sched();
        let mut rng = DetRng::new(26);
        let oracle = GaussianMixtureOracle::single(Tensor::zeros(&[5]), 1.3).unwrap();
        let e2e = Tensor::new(vec![5], rng.normal_vec(5)).unwrap();
        let track = GammaTrack::uniform(1.0, 8);
        let got = decode_rollout(&s, &oracle, None, &e2e, &track, 11).unwrap();
        // Reference: plain DDIM recursion without any blend.
        let mut x_t = init_xt(11, &[5]);
        for t in (1..=8).rev() {
            let x0 = oracle.predict_x0(&s, &x_t, None, t).unwrap();
            x_t = ddim_step(&s, &x_t, &x0, t).unwrap();
        }
        assert!(got.max_abs_diff(&x_t).unwrap() < 1e-12);
    }

    #[test]
    fn non_finite_prediction_reports_the_step() {
        struct Explodes;
        impl ScoreModel for Explodes {
            fn id(&self) -> &str {
                "explodes"
            }
            fn predict_x0(
                &self,
                _s: &NoiseSchedule,
                x: &Tensor,
                _y: Option<&LatentCode>,
                _t: usize,
            ) -> Result<Tensor> {
                Ok(x.map(|_| f64::INFINITY))
            }
        }
        let s = sched();
        let e2e = Tensor::zeros(&[3]);
        let x0 = Tensor::zeros(&[3]);
        let err = encode_rollout(&s, &Explodes, None, &e2e, &x0, &Mse, &SearchConfig::default(), 1)
            .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("t=8"), "message: {msg}"),
            other => panic!("expected a numeric error, got {other}"),
        }
    }

    #[test]
    fn gamma_length_mismatch_is_a_protocol_error() {
        let s = sched();
        let oracle = GaussianMixtureOracle::single(Tensor::zeros(&[3]), 1.0).unwrap();
        let e2e = Tensor::zeros(&[3]);
        let track = GammaTrack::uniform(1.0, 5);
        assert!(matches!(
            decode_rollout(&s, &oracle, None, &e2e, &track, 0),
            Err(Error::Protocol(ProtocolError::Malformed(_)))
        ));
    }
}
