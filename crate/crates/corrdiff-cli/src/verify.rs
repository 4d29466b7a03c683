//! Self-contained verification suite behind `corrdiff verify`.
//!
//! Every item is seeded, so two runs print identical reports. The gamma
//! search tolerance can be overridden to demonstrate that the closed-form
//! check actually bites (a loose tolerance must fail it).

use corrdiff::bitstream::{parse, AeDescriptor, CorrDiffStream};
use corrdiff::correction::{blend, corrected_score, solve_gamma, GammaTrack, Mse, SearchConfig};
use corrdiff::latent::{range_decode, range_encode, ChannelParams, LatentCode};
use corrdiff::rng::DetRng;
use corrdiff::schedule::{make_schedule, ScheduleKind};
use corrdiff::score::{score_from_x0, TinyScoreNet};
use corrdiff::tensor::{lincomb, Tensor};
use corrdiff::toytrain::{phase1_loss_grad, TrainConfig};

pub struct VerifyItem {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

pub struct VerifyOptions {
    /// Override for the gamma search tolerance (test hook; default 1e-4).
    pub gamma_tol: Option<f64>,
}

pub fn run_verify(opts: &VerifyOptions) -> Vec<VerifyItem> {
    vec![
        schedule_identities(),
        corrected_score_algebra(),
        gamma_closed_form(opts.gamma_tol),
        codec_round_trips(),
        stream_integrity(),
        gradient_check(),
    ]
}

fn schedule_identities() -> VerifyItem {
    let mut worst = 0.0f64;
    let mut ok = true;
    for kind in [ScheduleKind::VpCosine, ScheduleKind::VpLinearBeta] {
        let s = match make_schedule(kind, 8) {
            Ok(s) => s,
            Err(_) => {
                ok = false;
                continue;
            }
        };
        ok &= (s.alpha(0) - 1.0).abs() < 1e-12 && s.sigma(0).abs() < 1e-12;
        ok &= s.alpha(8) <= 1e-3 && (s.sigma(8) - 1.0).abs() <= 1e-3;
        for i in 0..=8 {
            let id = (s.alpha(i) * s.alpha(i) + s.sigma(i) * s.sigma(i) - 1.0).abs();
            worst = worst.max(id);
            ok &= id < 1e-9;
            if i > 0 {
                ok &= s.alpha(i) < s.alpha(i - 1) && s.sigma(i) > s.sigma(i - 1);
            }
        }
    }
    VerifyItem {
        name: "schedule-identities",
        pass: ok,
        detail: format!("worst variance-identity deviation {worst:.3e}"),
    }
}

fn corrected_score_algebra() -> VerifyItem {
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let mut rng = DetRng::new(0xA5);
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..1000 {
        let n = 6;
        let x_t = Tensor::new(vec![n], rng.normal_vec(n)).unwrap();
        let diff = Tensor::new(vec![n], rng.normal_vec(n)).unwrap();
        let e2e = Tensor::new(vec![n], rng.normal_vec(n)).unwrap();
        let gamma = rng.range(-0.5, 1.5);
        let t = 1 + (rng.next_u64() % 8) as usize;
        let got = corrected_score(&s, &x_t, &diff, &e2e, gamma, t).unwrap();
        // Direct evaluation of the combined form.
        let a_over = s.alpha(t) / (s.sigma(t) * s.sigma(t));
        let want = lincomb(
            a_over,
            &blend(&diff, &e2e, gamma).unwrap(),
            -1.0 / (s.sigma(t) * s.sigma(t)),
            &x_t,
        )
        .unwrap();
        let scale = got.sq_norm().max(want.sq_norm()).sqrt().max(1.0);
        let rel = got.max_abs_diff(&want).unwrap() / scale;
        worst = worst.max(rel);
        ok &= rel < 1e-12;
        // gamma = 1 collapses to the uncorrected score.
        let collapsed = corrected_score(&s, &x_t, &diff, &e2e, 1.0, t).unwrap();
        let plain = score_from_x0(&s, &x_t, &diff, t).unwrap();
        let rel1 = collapsed.max_abs_diff(&plain).unwrap()
            / plain.sq_norm().sqrt().max(1.0);
        worst = worst.max(rel1);
        ok &= rel1 < 1e-12;
    }
    VerifyItem {
        name: "corrected-score-algebra",
        pass: ok,
        detail: format!("1000 tuples, worst relative deviation {worst:.3e}"),
    }
}

fn gamma_closed_form(tol_override: Option<f64>) -> VerifyItem {
    let mut rng = DetRng::new(0xB6);
    let search = SearchConfig { tol: tol_override.unwrap_or(1e-4), ..SearchConfig::default() };
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..200 {
        let n = 8;
        let diff = Tensor::new(vec![n], rng.normal_vec(n)).unwrap();
        let e2e = Tensor::new(vec![n], rng.normal_vec(n)).unwrap();
        let g_true = rng.range(-0.3, 1.3);
        let mut star = blend(&diff, &e2e, g_true).unwrap();
        for v in star.data_mut() {
            *v += 0.02 * rng.normal();
        }
        let got = match solve_gamma(&Mse, &star, &diff, &e2e, &search) {
            Ok(g) => g,
            Err(_) => {
                ok = false;
                continue;
            }
        };
        let dir = diff.sub(&e2e).unwrap();
        let want = star.sub(&e2e).unwrap().dot(&dir).unwrap() / dir.sq_norm();
        let err = (got - want).abs();
        worst = worst.max(err);
        ok &= err < 1e-3;
    }
    VerifyItem {
        name: "gamma-closed-form",
        pass: ok,
        detail: format!("200 triples, worst |gamma - closed form| {worst:.3e}"),
    }
}

fn codec_round_trips() -> VerifyItem {
    let mut rng = DetRng::new(0xC7);
    let mut ok = true;
    let mut trials = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 96) as usize;
        let mean = rng.range(-30.0, 30.0);
        let scale = rng.range(0.05, 10.0);
        let params = vec![ChannelParams::from_f64(mean, scale).unwrap()];
        let values: Vec<i32> = (0..n)
            .map(|_| ((mean + scale * rng.normal()).round() as i32).clamp(-32768, 32767))
            .collect();
        let code = LatentCode::new(values, vec![n], params).unwrap();
        let bytes = range_encode(&code).unwrap();
        match range_decode(&bytes, code.shape(), code.entropy_params()) {
            Ok(back) => ok &= back == code,
            Err(_) => ok = false,
        }
        trials += 1;
    }
    VerifyItem {
        name: "codec-round-trip",
        pass: ok,
        detail: format!("{trials} random latents decoded losslessly"),
    }
}

fn stream_integrity() -> VerifyItem {
    let mut rng = DetRng::new(0xD8);
    let stream = CorrDiffStream {
        schedule_kind: ScheduleKind::VpCosine,
        t_steps: 8,
        seed: 17,
        signal_shape: vec![32],
        autoencoder: AeDescriptor::LinearDct { keep_ratio: 0.25, qstep: 0.02 },
        entropy_params: vec![ChannelParams::from_f64(0.0, 1.0).unwrap()],
        coded_latent: (0..40).map(|_| rng.next_u64() as u8).collect(),
        gammas: GammaTrack::uniform(1.0, 8),
    };
    let bytes = stream.serialize().unwrap();
    let mut ok = parse(&bytes).is_ok();
    let mut caught = 0usize;
    let flips = 200usize;
    for _ in 0..flips {
        let pos = (rng.next_u64() % bytes.len() as u64) as usize;
        let bit = 1u8 << (rng.next_u64() % 8);
        let mut corrupted = bytes.clone();
        corrupted[pos] ^= bit;
        if parse(&corrupted).is_err() {
            caught += 1;
        }
    }
    ok &= caught == flips;
    VerifyItem {
        name: "stream-integrity",
        pass: ok,
        detail: format!("{caught}/{flips} corruptions rejected"),
    }
}

fn gradient_check() -> VerifyItem {
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let mut rng = DetRng::new(0xE9);
    let batch: Vec<Tensor> = (0..2)
        .map(|_| Tensor::new(vec![3], rng.normal_vec(3)).unwrap())
        .collect();
    let net = TinyScoreNet::new(3, 2, 4, 5, 3);
    let cfg = TrainConfig::default();
    let (_, grad) = phase1_loss_grad(&net, &batch, &s, &Mse, &cfg, 7).unwrap();
    let params = net.params();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let eval = |delta: f64| {
            let mut m = net.clone();
            let mut p = params.clone();
            p[i] += delta;
            m.set_params(&p).unwrap();
            phase1_loss_grad(&m, &batch, &s, &Mse, &cfg, 7).unwrap().0.total
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let denom = fd.abs().max(grad[i].abs());
        if denom > 1e-7 {
            worst = worst.max((fd - grad[i]).abs() / denom);
        }
    }
    VerifyItem {
        name: "gradient-check",
        pass: worst < 1e-4,
        detail: format!("worst relative gradient error {worst:.3e}"),
    }
}
