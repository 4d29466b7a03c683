//! Monte-Carlo verification of the analytic posterior-mean predictor.

use corrdiff::rng::DetRng;
use corrdiff::schedule::{make_schedule, ScheduleKind};
use corrdiff::score::{GaussianMixtureOracle, MixtureComponent, ScoreModel};
use corrdiff::tensor::Tensor;

/// Self-normalized importance sampling of E[x0 | x_t] for a 1-D single
/// Gaussian prior, with a delta-method standard error for the ratio.
#[test]
fn posterior_mean_matches_importance_sampled_estimate() {
    let s = make_schedule(ScheduleKind::VpCosine, 10).unwrap();
    let t_idx = 5;
    let (alpha, sigma) = (s.alpha(t_idx), s.sigma(t_idx));
    let (mu0, s0) = (0.7f64, 1.4f64);
    let x_query = 0.45f64;

    let oracle = GaussianMixtureOracle::single(Tensor::new(vec![1], vec![mu0]).unwrap(), s0 * s0).unwrap();
    let predicted = oracle
        .predict_x0(&s, &Tensor::new(vec![1], vec![x_query]).unwrap(), None, t_idx)
        .unwrap()
        .data()[0];

    let n = 100_000usize;
    let mut rng = DetRng::new(808);
    let mut sum_w = 0.0;
    let mut sum_wx = 0.0;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = mu0 + s0 * rng.normal();
        let z = (x_query - alpha * x0) / sigma;
        let w = (-0.5 * z * z).exp();
        sum_w += w;
        sum_wx += w * x0;
        samples.push((w, x0));
    }
    let estimate = sum_wx / sum_w;
    // Var(R) ~ E[w^2 (x0 - R)^2] / (n * E[w]^2)
    let mean_w = sum_w / n as f64;
    let var_num: f64 = samples
        .iter()
        .map(|&(w, x0)| {
            let d = w * (x0 - estimate);
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let se = (var_num / (n as f64 * mean_w * mean_w)).sqrt();
    assert!(
        (predicted - estimate).abs() < 3.0 * se,
        "closed form {predicted} vs MC {estimate} (3se {})",
        3.0 * se
    );
}

/// Numerical check of the Lipschitz bound behind the posterior-swap
/// approximation: an isotropic Gaussian density phi with deviation sigma in
/// d dimensions satisfies |phi(x) - phi(y)| <= L ||x - y|| with
/// L = d / (sqrt(2 pi) sigma) * exp(-1 / (2 sigma^2)).
#[test]
fn gaussian_density_lipschitz_bound_holds() {
    let mut rng = DetRng::new(606);
    for (dim, sigma) in [(1usize, 1.0f64), (2, 1.0), (4, 0.8), (8, 1.5)] {
        let lipschitz = dim as f64 / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
            * (-1.0 / (2.0 * sigma * sigma)).exp();
        let density = |x: &[f64]| -> f64 {
            let sq: f64 = x.iter().map(|v| v * v).sum();
            (-(sq) / (2.0 * sigma * sigma)).exp()
                / (2.0 * std::f64::consts::PI * sigma * sigma).powf(dim as f64 / 2.0)
        };
        for _ in 0..2000 {
            let x: Vec<f64> = (0..dim).map(|_| 3.0 * sigma * rng.normal()).collect();
            let y: Vec<f64> = (0..dim).map(|_| 3.0 * sigma * rng.normal()).collect();
            let dist: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let gap = (density(&x) - density(&y)).abs();
            assert!(
                gap <= lipschitz * dist + 1e-15,
                "d={dim} sigma={sigma}: gap {gap} exceeds L*dist {}",
                lipschitz * dist
            );
        }
    }
}

/// The posterior mean minimizes expected squared error among predictors;
/// fixed perturbations of it must do worse on a large sample.
#[test]
fn oracle_prediction_beats_perturbed_predictors_in_mc_mse() {
    let s = make_schedule(ScheduleKind::VpCosine, 8).unwrap();
    let t_idx = 4;
    let dim = 4usize;
    let mut rng = DetRng::new(909);
    let mu_a = Tensor::new(vec![dim], rng.normal_vec(dim)).unwrap();
    let mu_b = Tensor::new(vec![dim], rng.normal_vec(dim)).unwrap();
    let oracle = GaussianMixtureOracle::new(vec![
        MixtureComponent { weight: 0.6, mean: mu_a, var: 0.8 },
        MixtureComponent { weight: 0.4, mean: mu_b, var: 1.5 },
    ])
    .unwrap();

    let n = 10_000usize;
    let offset = Tensor::new(vec![dim], rng.normal_vec(dim)).unwrap().scale(0.15);
    let mut mse_oracle = 0.0;
    let mut mse_shift = 0.0;
    let mut mse_scaled = 0.0;
    for _ in 0..n {
        let x0 = oracle.sample(&mut rng);
        let x_t = s.forward_sample_with(&x0, t_idx, &mut rng).unwrap();
        let pred = oracle.predict_x0(&s, &x_t, None, t_idx).unwrap();
        mse_oracle += pred.mse(&x0).unwrap();
        mse_shift += pred.add(&offset).unwrap().mse(&x0).unwrap();
        mse_scaled += pred.scale(1.1).mse(&x0).unwrap();
    }
    assert!(mse_oracle < mse_shift, "oracle {mse_oracle} vs shifted {mse_shift}");
    assert!(mse_oracle < mse_scaled, "oracle {mse_oracle} vs scaled {mse_scaled}");
}
