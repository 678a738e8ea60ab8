use pisd_core::denoiser::{Denoiser, DenoiserConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(d: usize, h: usize, depth: usize) -> DenoiserConfig {
    DenoiserConfig {
        latent_dim: d,
        hidden_width: h,
        depth,
        sigma_embed_dim: 6,
        sigma_data: 1.0,
    }
}

/// Network with every weight random, including the output layer.
fn random_net(cfg: DenoiserConfig, seed: u64) -> Denoiser {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..cfg.parameter_count())
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    Denoiser::new(cfg, weights).unwrap()
}

fn random_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh())
}

/// Straight-line evaluation with explicit loops over the documented layout.
fn reference_forward(net: &Denoiser, x: &[f64], sigma: f64) -> Vec<f64> {
    let c = &net.config;
    let (d, h, e) = (c.latent_dim, c.hidden_width, c.sigma_embed_dim);
    let w = &net.weights;
    let sd = c.sigma_data;
    let c_in = 1.0 / (sigma * sigma + sd * sd).sqrt();
    let c_skip = sd * sd / (sigma * sigma + sd * sd);
    let c_out = sigma * sd / (sigma * sigma + sd * sd).sqrt();
    let half = e / 2;
    let s = sigma.ln() / 4.0;
    let freqs: Vec<f64> = (0..half)
        .map(|j| 32f64.powf(j as f64 / (half - 1) as f64))
        .collect();
    let emb: Vec<f64> = freqs
        .iter()
        .map(|f| (f * s).sin())
        .chain(freqs.iter().map(|f| (f * s).cos()))
        .collect();

    let mut at = 0;
    let mut take = |len: usize| {
        let r = &w[at..at + len];
        at += len;
        r
    };
    let w_in = take(h * d);
    let b_in = take(h);
    let w_emb = take(h * e);
    let mut hid: Vec<f64> = (0..h)
        .map(|r| {
            b_in[r]
                + (0..d).map(|k| w_in[r * d + k] * c_in * x[k]).sum::<f64>()
                + (0..e).map(|k| w_emb[r * e + k] * emb[k]).sum::<f64>()
        })
        .collect();
    for _ in 0..c.depth {
        let w1 = take(h * h);
        let b1 = take(h);
        let w2 = take(h * h);
        let b2 = take(h);
        let a: Vec<f64> = (0..h)
            .map(|r| gelu(b1[r] + (0..h).map(|k| w1[r * h + k] * hid[k]).sum::<f64>()))
            .collect();
        hid = (0..h)
            .map(|r| hid[r] + b2[r] + (0..h).map(|k| w2[r * h + k] * a[k]).sum::<f64>())
            .collect();
    }
    let w_out = take(d * h);
    let b_out = take(d);
    (0..d)
        .map(|r| {
            c_skip * x[r]
                + c_out * (b_out[r] + (0..h).map(|k| w_out[r * h + k] * hid[k]).sum::<f64>())
        })
        .collect()
}

#[test]
fn forward_matches_straight_line_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let net = random_net(config(6, 9, 3), seed);
        let x = random_vec(6, &mut rng);
        let sigma = rng.random_range(0.01..20.0);
        let got = net.forward(&x, sigma).unwrap();
        let want = reference_forward(&net, &x, sigma);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn preconditioning_limit_at_small_sigma() {
    let net = Denoiser::initialize(config(4, 8, 2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let x = [0.5, -0.25, 1.0, 2.0];
    let out = net.forward(&x, 1e-9).unwrap();
    assert!(out.iter().zip(&x).all(|(o, xi)| (o - xi).abs() < 1e-12));
    assert!(net.forward(&x, 0.0).is_err());
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let net = random_net(config(5, 8, 2), 100 + trial);
        let x = random_vec(5, &mut rng);
        let cot = random_vec(5, &mut rng);
        let sigma = rng.random_range(0.05..10.0);
        let grad = net.input_gradient(&x, sigma, &cot).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let f = |y: &[f64]| -> f64 {
                net.forward(y, sigma)
                    .unwrap()
                    .iter()
                    .zip(&cot)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-5, "trial {trial}, slot {i}: {fd} vs {}", grad[i]);
        }
    }
}

fn batch(d: usize, b: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let clean = random_vec(d * b, rng);
    let sigmas: Vec<f64> = (0..b).map(|_| rng.random_range(0.05..5.0)).collect();
    let noisy = clean
        .iter()
        .enumerate()
        .map(|(i, c)| c + sigmas[i / d] * rng.random_range(-1.0..1.0))
        .collect();
    (noisy, clean, sigmas)
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let mut net = random_net(config(4, 6, 2), 200 + trial);
        let (noisy, clean, sigmas) = batch(4, 3, &mut rng);
        let grad = net.parameter_gradient(&noisy, &clean, &sigmas).unwrap();
        for _ in 0..8 {
            let p = rng.random_range(0..net.weights.len());
            let h = 1e-6 * net.weights[p].abs().max(1.0);
            let base = net.weights[p];
            net.weights[p] = base + h;
            let lp = net.loss_and_gradient(&noisy, &clean, &sigmas).unwrap().0;
            net.weights[p] = base - h;
            let lm = net.loss_and_gradient(&noisy, &clean, &sigmas).unwrap().0;
            net.weights[p] = base;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-9);
            assert!(rel < 1e-5, "trial {trial}, weight {p}: {fd} vs {}", grad[p]);
        }
    }
}

#[test]
fn zero_loss_batch_has_zero_gradient() {
    let net = random_net(config(4, 6, 1), 9);
    let noisy = vec![0.3, -0.1, 0.7, 0.2];
    let sigma = 0.8;
    let target = net.forward(&noisy, sigma).unwrap();
    let (loss, grad) = net.loss_and_gradient(&noisy, &target, &[sigma]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn duplicated_batch_keeps_mean_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = random_net(config(4, 6, 2), 10);
    let (noisy, clean, sigmas) = batch(4, 3, &mut rng);
    let g1 = net.parameter_gradient(&noisy, &clean, &sigmas).unwrap();
    let dup = |v: &[f64]| [v, v].concat();
    let g2 = net
        .parameter_gradient(&dup(&noisy), &dup(&clean), &dup(&sigmas))
        .unwrap();
    assert!(g1
        .iter()
        .zip(&g2)
        .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0)));
}

#[test]
fn forward_is_bit_deterministic() {
    let net = random_net(config(7, 12, 3), 11);
    let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
    assert_eq!(net.forward(&x, 0.3).unwrap(), net.forward(&x, 0.3).unwrap());
}

/// With `F ≡ 0` the expected loss of `D(y + σn) = c_skip (y + σn)` is
/// `(1 − c_skip)² y² + c_skip² σ²` per coordinate; check it by Monte Carlo.
#[test]
fn skip_only_expected_error_matches_closed_form() {
    let cfg = config(1, 4, 1);
    let net = Denoiser::initialize(cfg, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let y = 0.7;
    let sigma = 1.3;
    let count = 200_000;
    let mut acc = 0.0;
    for _ in 0..count {
        let n: f64 = rng.sample(rand_distr::StandardNormal);
        let d = net.forward(&[y + sigma * n], sigma).unwrap()[0];
        acc += (d - y).powi(2);
    }
    let cs = cfg.c_skip(sigma);
    let want = (1.0 - cs).powi(2) * y * y + cs * cs * sigma * sigma;
    assert!((acc / count as f64 - want).abs() < 0.01 * want);
}
