//! Latent precomputation and the denoising training loop.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, DenoiserCheckpoint, DenoiserConfig};
use crate::io::{write_atomic, ByteReader, ByteWriter};
use crate::spectral::Codec;
use crate::{Error, FieldGrid, Result};

const LATENT_MAGIC: &[u8; 8] = b"PISDLATN";
const LATENT_VERSION: u16 = 1;

/// Row-major matrix of encoded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub codec_fingerprint: u64,
}

impl LatentMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(LATENT_MAGIC);
        w.u16(LATENT_VERSION);
        w.u64(self.codec_fingerprint);
        w.u64(self.rows as u64);
        w.u64(self.dim as u64);
        w.f64_slice(&self.data);
        w.finish_with_crc()
    }

    /// Parses a cache file and rejects it unless it was built with `expected_fingerprint`.
    pub fn from_bytes(bytes: &[u8], expected_fingerprint: u64) -> Result<Self> {
        let mut r = ByteReader::with_crc(bytes)?;
        r.expect_magic(LATENT_MAGIC)?;
        let version = r.u16()?;
        if version != LATENT_VERSION {
            return Err(Error::Format(format!(
                "unsupported latent cache version {version}"
            )));
        }
        let codec_fingerprint = r.u64()?;
        if codec_fingerprint != expected_fingerprint {
            return Err(Error::Fingerprint {
                expected: expected_fingerprint,
                found: codec_fingerprint,
            });
        }
        let rows = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let data = r.f64_vec(rows * dim)?;
        r.finish()?;
        Ok(Self {
            rows,
            dim,
            data,
            codec_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, expected_fingerprint: u64) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, expected_fingerprint)
    }
}

/// Encodes every sample; rows follow dataset order.
pub fn precompute_latents(samples: &[FieldGrid], codec: &Codec) -> Result<LatentMatrix> {
    if samples.is_empty() {
        return Err(Error::invalid(
            "cannot precompute latents of an empty dataset",
        ));
    }
    if samples.iter().any(|s| s.channels() == 0) {
        return Err(Error::invalid("dataset samples have no channels"));
    }
    let dim = codec.latent_dim();
    let mut data = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        data.extend(codec.encode(s)?.x);
    }
    Ok(LatentMatrix {
        rows: samples.len(),
        dim,
        data,
        codec_fingerprint: codec.fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSampling {
    /// `ln σ ~ U[ln σ_min, ln σ_max]`.
    LogUniform,
    /// `σ ~ U[σ_min, σ_max]`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of `learning_rate`; the rate decays
    /// along a cosine from step 0 to `total_steps`. 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_sampling: SigmaSampling,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            total_steps: 20_000,
            learning_rate: 3e-4,
            final_lr_fraction: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            sigma_min: 2e-3,
            sigma_max: 80.0,
            sigma_sampling: SigmaSampling::LogUniform,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0 < self.sigma_min && self.sigma_min < self.sigma_max) {
            return Err(Error::invalid("need 0 < sigma_min < sigma_max"));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid(
                "learning_rate and adam_eps must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::invalid("final_lr_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.total_steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }

    fn draw_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self.sigma_sampling {
            SigmaSampling::LogUniform => {
                (self.sigma_min.ln() + u * (self.sigma_max.ln() - self.sigma_min.ln())).exp()
            }
            // 1 − u ∈ (0, 1] keeps σ_max reachable and σ_min excluded.
            SigmaSampling::Uniform => {
                self.sigma_min + (1.0 - u) * (self.sigma_max - self.sigma_min)
            }
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: DenoiserCheckpoint,
    /// `(step, batch loss)` for every step.
    pub losses: Vec<(usize, f64)>,
}

/// Trains a freshly initialized denoiser on `latents`.
///
/// `on_checkpoint` receives intermediate checkpoints every
/// `config.checkpoint_every` steps.
pub fn train(
    latents: &LatentMatrix,
    net_config: DenoiserConfig,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(&DenoiserCheckpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if latents.rows == 0 {
        return Err(Error::invalid("no training latents"));
    }
    if net_config.latent_dim != latents.dim {
        return Err(Error::dim(format!(
            "denoiser latent_dim {} != latent width {}",
            net_config.latent_dim, latents.dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Denoiser::initialize(net_config, &mut rng)?;
    let mut adam = Adam::new(
        net.weights.len(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let d = latents.dim;
    let b = config.batch_size;
    let mut noisy = vec![0.0; b * d];
    let mut clean = vec![0.0; b * d];
    let mut sigmas = vec![0.0; b];
    let mut losses = Vec::with_capacity(config.total_steps);
    let snapshot = |net: &Denoiser, steps: usize| DenoiserCheckpoint {
        denoiser: net.clone(),
        sigma_max: config.sigma_max,
        codec_fingerprint: latents.codec_fingerprint,
        train_steps: steps as u64,
    };
    for step in 0..config.total_steps {
        for k in 0..b {
            let row = latents.row(rng.random_range(0..latents.rows));
            let sigma = config.draw_sigma(&mut rng);
            sigmas[k] = sigma;
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                clean[k * d + i] = row[i];
                noisy[k * d + i] = row[i] + sigma * z;
            }
        }
        let (loss, grad) = net.loss_and_gradient(&noisy, &clean, &sigmas)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite training loss {loss} at step {step} (σ range {:.3e}..{:.3e})",
                sigmas.iter().cloned().fold(f64::INFINITY, f64::min),
                sigmas.iter().cloned().fold(0.0, f64::max)
            )));
        }
        losses.push((step, loss));
        adam.update(&mut net.weights, &grad, config.learning_rate_at(step));
        if config.checkpoint_every > 0
            && (step + 1) % config.checkpoint_every == 0
            && step + 1 < config.total_steps
        {
            on_checkpoint(&snapshot(&net, step + 1))?;
        }
    }
    let checkpoint = snapshot(&net, config.total_steps);
    Ok(TrainOutcome { checkpoint, losses })
}

/// Loss curve as `step,loss` CSV text.
pub fn loss_csv(losses: &[(usize, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (s, l) in losses {
        out.push_str(&format!("{s},{l:.9e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut adam = Adam::new(2, 0.9, 0.999, 0.0);
        let mut p = vec![1.0, 1.0];
        adam.update(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn log_uniform_stays_in_range() {
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = cfg.draw_sigma(&mut rng);
            assert!(s >= cfg.sigma_min && s <= cfg.sigma_max);
        }
    }
}
