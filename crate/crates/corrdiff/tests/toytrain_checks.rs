//! Training-path verification: exact gradients against central differences,
//! loss descent over a real run, and the rate-weight sweep.

use corrdiff::correction::{FeatureMse, Mse};
use corrdiff::latent::{Autoencoder, TinyMlpAutoencoder};
use corrdiff::rng::DetRng;
use corrdiff::schedule::{make_schedule, ScheduleKind};
use corrdiff::score::{GaussianMixtureOracle, TinyScoreNet};
use corrdiff::tensor::Tensor;
use corrdiff::toytrain::{
    mean_coded_rate, mixture_batch, phase1_loss_grad, phase2_loss_grad, train_phase1, train_phase2,
    LossReport, TrainConfig, LAMBDA_R_GRID,
};

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-7 {
        0.0 // both effectively zero
    } else {
        (a - b).abs() / denom
    }
}

#[test]
fn phase1_gradient_matches_central_differences() {
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let mut rng = DetRng::new(1);
    let batch: Vec<Tensor> = (0..3)
        .map(|_| Tensor::new(vec![3], rng.normal_vec(3)).unwrap())
        .collect();
    let net = TinyScoreNet::new(3, 2, 4, 5, 7);
    let cfg = TrainConfig::default();
    let metric = FeatureMse { rows: 8, ..Default::default() };
    let draw_seed = 99;
    let (_, grad) = phase1_loss_grad(&net, &batch, &s, &metric, &cfg, draw_seed).unwrap();

    let params = net.params();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let nudge = |delta: f64| -> f64 {
            let mut m = net.clone();
            let mut p = params.clone();
            p[i] += delta;
            m.set_params(&p).unwrap();
            phase1_loss_grad(&m, &batch, &s, &metric, &cfg, draw_seed).unwrap().0.total
        };
        let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
        worst = worst.max(rel_err(fd, grad[i]));
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

#[test]
fn phase2_gradient_matches_central_differences() {
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let mut rng = DetRng::new(2);
    let batch: Vec<Tensor> = (0..2)
        .map(|_| Tensor::new(vec![4], rng.normal_vec(4)).unwrap())
        .collect();
    let net = TinyScoreNet::new(4, 3, 4, 5, 11);
    let ae = TinyMlpAutoencoder::new(vec![4], 3, 5, 13).unwrap();
    let cfg = TrainConfig { lambda_r: 0.1, ..Default::default() };
    let draw_seed = 55;
    let (report, grad) =
        phase2_loss_grad(&net, &ae, &batch, &s, &Mse, &Mse, &cfg, draw_seed).unwrap();
    assert!(report.rate_bits > 0.0);

    let n_net = net.param_len();
    let joint: Vec<f64> = {
        let mut p = net.params();
        p.extend(ae.params());
        p
    };
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..joint.len() {
        let nudge = |delta: f64| -> f64 {
            let mut p = joint.clone();
            p[i] += delta;
            let mut m = net.clone();
            let mut a = ae.clone();
            m.set_params(&p[..n_net]).unwrap();
            a.set_params(&p[n_net..]).unwrap();
            phase2_loss_grad(&m, &a, &batch, &s, &Mse, &Mse, &cfg, draw_seed)
                .unwrap()
                .0
                .total
        };
        let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
        let e = rel_err(fd, grad[i]);
        assert!(e < 1e-4, "param {i}: fd {fd} vs grad {} (rel {e})", grad[i]);
        worst = worst.max(e);
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

#[test]
fn two_hundred_steps_reduce_phase1_loss_on_gaussian_data() {
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let oracle = GaussianMixtureOracle::single(Tensor::new(vec![1], vec![0.5]).unwrap(), 1.0).unwrap();
    let mut rng = DetRng::new(3);
    let data = mixture_batch(&oracle, 128, &mut rng);
    let mut net = TinyScoreNet::new(1, 1, 2, 8, 17);
    let cfg = TrainConfig { iters: 200, batch: 16, lr: 0.05, seed: 23, ..Default::default() };
    let mut csv = Vec::new();
    let reports = train_phase1(&mut net, &data, &s, &Mse, &cfg, Some(&mut csv)).unwrap();
    assert_eq!(reports.len(), 200);
    assert!(
        reports[199].total < reports[0].total,
        "loss did not decrease: {} -> {}",
        reports[0].total,
        reports[199].total
    );
    // The CSV log has a header and one row per iteration.
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), LossReport::csv_header());
    assert_eq!(lines.count(), 200);
}

#[test]
fn rate_weight_sweep_orders_coded_rates() {
    // Train one tiny phase-2 model per rate weight and measure the actual
    // coded rate on held-out draws: the Spearman correlation between the
    // weight and the rate must be nonpositive (more weight, fewer bits).
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let dim = 6usize;
    let mut rng = DetRng::new(4);
    let mu = Tensor::new(vec![dim], rng.normal_vec(dim)).unwrap();
    let prior = GaussianMixtureOracle::single(mu, 1.0).unwrap();
    let train_data = mixture_batch(&prior, 96, &mut rng);
    let heldout = mixture_batch(&prior, 32, &mut rng);

    let mut rates = Vec::new();
    for &lambda_r in &LAMBDA_R_GRID {
        let mut net = TinyScoreNet::new(dim, 3, 4, 8, 31);
        let mut ae = TinyMlpAutoencoder::new(vec![dim], 3, 8, 37).unwrap();
        let cfg = TrainConfig {
            lambda_r,
            iters: 400,
            batch: 8,
            lr: 0.03,
            seed: 41,
            ..Default::default()
        };
        train_phase2(&mut net, &mut ae, &train_data, &s, &Mse, &Mse, &cfg, None).unwrap();
        let rate = mean_coded_rate(&Autoencoder::TinyMlp(ae), &heldout).unwrap();
        rates.push(rate);
    }
    // Spearman rank correlation between lambda_r and measured rate.
    let rho = spearman(&LAMBDA_R_GRID, &rates);
    assert!(rho <= 0.0, "rates {rates:?} give Spearman {rho}");
}

fn rank(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    for (r, &i) in idx.iter().enumerate() {
        out[i] = r as f64;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    num / (da.sqrt() * db.sqrt())
}

#[test]
fn training_rate_surrogate_tracks_eval_rate() {
    // After convergence the relaxed-noise rate estimate and the rounded
    // eval-time estimate agree within 10%. Both sides must score under the
    // same symbol model (the learned prior); the only difference left is
    // additive-noise relaxation versus rounding.
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let dim = 6usize;
    let mut rng = DetRng::new(5);
    let mu = Tensor::new(vec![dim], rng.normal_vec(dim)).unwrap();
    let prior = GaussianMixtureOracle::single(mu, 9.0).unwrap();
    let data = mixture_batch(&prior, 96, &mut rng);
    let mut net = TinyScoreNet::new(dim, 3, 4, 8, 43);
    let mut ae = TinyMlpAutoencoder::new(vec![dim], 3, 8, 47).unwrap();
    let cfg = TrainConfig { lambda_r: 0.02, iters: 800, batch: 8, lr: 0.03, seed: 53, ..Default::default() };
    let reports = train_phase2(&mut net, &mut ae, &data, &s, &Mse, &Mse, &cfg, None).unwrap();
    // Average the surrogate over the trailing iterations to smooth the
    // batch noise.
    let tail = &reports[reports.len() - 100..];
    let surrogate: f64 = tail.iter().map(|r| r.rate_bits).sum::<f64>() / tail.len() as f64;

    let prior_params =
        corrdiff::latent::ChannelParams::from_f64(ae.prior_mean[0], ae.prior_log_scale[0].exp()).unwrap();
    let mut eval = 0.0;
    for x0 in &data {
        let code = corrdiff::latent::encode_latent(&Autoencoder::TinyMlp(ae.clone()), x0).unwrap();
        let under_prior = corrdiff::latent::LatentCode::new(
            code.values().to_vec(),
            code.shape().to_vec(),
            vec![prior_params],
        )
        .unwrap();
        eval += corrdiff::latent::estimate_rate(&under_prior).unwrap();
    }
    eval /= data.len() as f64;
    let gap = (surrogate - eval).abs() / eval.max(1e-9);
    assert!(gap < 0.10, "surrogate {surrogate} vs eval {eval} (gap {gap})");
}
