//! Preconditioned residual MLP denoiser `D(x, σ) = c_skip x + c_out F(c_in x, e(σ))`.
//!
//! Weights live in one flat vector laid out as
//! `W_in (H×d), b_in, W_emb (H×E), blocks × [W1 (H×H), b1, W2 (H×H), b2], W_out (d×H), b_out`.
//! Each block updates `h ← h + W2 gelu(W1 h + b1) + b2`.

use std::path::Path;

use rand::Rng;

use crate::io::{write_atomic, ByteReader, ByteWriter};
use crate::linalg::gemm;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"PISDCKPT";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub depth: usize,
    /// Even number of sinusoidal features of `ln σ / 4`.
    pub sigma_embed_dim: usize,
    pub sigma_data: f64,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_width == 0 || self.depth == 0 {
            return Err(Error::invalid("denoiser widths and depth must be positive"));
        }
        if self.sigma_embed_dim < 2 || !self.sigma_embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(
                "sigma_embed_dim must be a positive even number",
            ));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::invalid("sigma_data must be positive"));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let (d, h, e) = (self.latent_dim, self.hidden_width, self.sigma_embed_dim);
        let mut at = 0;
        let mut take = |len: usize| {
            let start = at;
            at += len;
            start
        };
        let w_in = take(h * d);
        let b_in = take(h);
        let w_emb = take(h * e);
        let blocks = (0..self.depth)
            .map(|_| BlockLayout {
                w1: take(h * h),
                b1: take(h),
                w2: take(h * h),
                b2: take(h),
            })
            .collect();
        let w_out = take(d * h);
        let b_out = take(d);
        Layout {
            w_in,
            b_in,
            w_emb,
            blocks,
            w_out,
            b_out,
            total: at,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        sigma * self.sigma_data / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    /// Loss weight `λ(σ) = (σ² + σ_d²)/(σ σ_d)² = 1/c_out²`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        let c = self.c_out(sigma);
        1.0 / (c * c)
    }

    /// Sinusoidal features of `ln σ / 4` with frequencies from 1 to 32.
    pub fn embed(&self, sigma: f64) -> Vec<f64> {
        let half = self.sigma_embed_dim / 2;
        let s = sigma.ln() / 4.0;
        let mut out = Vec::with_capacity(self.sigma_embed_dim);
        let freq = |j: usize| {
            if half == 1 {
                1.0
            } else {
                32f64.powf(j as f64 / (half - 1) as f64)
            }
        };
        out.extend((0..half).map(|j| (freq(j) * s).sin()));
        out.extend((0..half).map(|j| (freq(j) * s).cos()));
        out
    }
}

#[derive(Debug, Clone)]
struct BlockLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    w_in: usize,
    b_in: usize,
    w_emb: usize,
    blocks: Vec<BlockLayout>,
    w_out: usize,
    b_out: usize,
    total: usize,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

/// Activations of one batched forward pass, kept for reverse mode.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    sigmas: Vec<f64>,
    scaled_input: Vec<f64>,
    embedding: Vec<f64>,
    /// Hidden state entering each block, plus the final one.
    hidden: Vec<Vec<f64>>,
    pre_activation: Vec<Vec<f64>>,
    activation: Vec<Vec<f64>>,
    /// `D(x, σ)` rows.
    pub output: Vec<f64>,
}

/// Network weights with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub weights: Vec<f64>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.parameter_count() {
            return Err(Error::dim(format!(
                "expected {} weights, got {}",
                config.parameter_count(),
                weights.len()
            )));
        }
        Ok(Self { config, weights })
    }

    /// Uniform `±1/√fan_in` for hidden matrices, zero biases and a zero output layer.
    pub fn initialize<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut w = vec![0.0; layout.total];
        let (d, h, e) = (
            config.latent_dim,
            config.hidden_width,
            config.sigma_embed_dim,
        );
        let mut fill = |start: usize, len: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut w[start..start + len] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w_in, h * d, d);
        fill(layout.w_emb, h * e, e);
        for b in &layout.blocks {
            fill(b.w1, h * h, h);
            fill(b.w2, h * h, h);
        }
        Ok(Self { config, weights: w })
    }

    fn check_inputs(&self, x: &[f64], sigmas: &[f64]) -> Result<usize> {
        let d = self.config.latent_dim;
        if sigmas.is_empty() || x.len() != d * sigmas.len() {
            return Err(Error::dim(format!(
                "input of length {} is not {} rows of width {d}",
                x.len(),
                sigmas.len()
            )));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("noise level {s} outside (0, ∞)")));
        }
        Ok(sigmas.len())
    }

    /// Batched forward pass over row-major `x` (`batch × d`) with one σ per row.
    pub fn forward_batch(&self, x: &[f64], sigmas: &[f64]) -> Result<Tape> {
        let batch = self.check_inputs(x, sigmas)?;
        let cfg = &self.config;
        let (d, h, e) = (cfg.latent_dim, cfg.hidden_width, cfg.sigma_embed_dim);
        let layout = cfg.layout();
        let w = &self.weights;

        let mut scaled_input = x.to_vec();
        let mut embedding = Vec::with_capacity(batch * e);
        for (b, s) in sigmas.iter().enumerate() {
            let c = cfg.c_in(*s);
            scaled_input[b * d..(b + 1) * d]
                .iter_mut()
                .for_each(|v| *v *= c);
            embedding.extend(cfg.embed(*s));
        }

        let mut h0 = vec![0.0; batch * h];
        for row in h0.chunks_exact_mut(h) {
            row.copy_from_slice(&w[layout.b_in..layout.b_in + h]);
        }
        gemm(
            batch,
            d,
            h,
            1.0,
            &scaled_input,
            false,
            &w[layout.w_in..layout.w_in + h * d],
            true,
            1.0,
            &mut h0,
        );
        gemm(
            batch,
            e,
            h,
            1.0,
            &embedding,
            false,
            &w[layout.w_emb..layout.w_emb + h * e],
            true,
            1.0,
            &mut h0,
        );

        let mut hidden = vec![h0];
        let mut pre_activation = Vec::with_capacity(cfg.depth);
        let mut activation = Vec::with_capacity(cfg.depth);
        for blk in &layout.blocks {
            let cur = hidden.last().expect("input state");
            let mut z = vec![0.0; batch * h];
            for row in z.chunks_exact_mut(h) {
                row.copy_from_slice(&w[blk.b1..blk.b1 + h]);
            }
            gemm(
                batch,
                h,
                h,
                1.0,
                cur,
                false,
                &w[blk.w1..blk.w1 + h * h],
                true,
                1.0,
                &mut z,
            );
            let a: Vec<f64> = z.iter().map(|v| gelu(*v)).collect();
            let mut next = cur.clone();
            for row in next.chunks_exact_mut(h) {
                row.iter_mut()
                    .zip(&w[blk.b2..blk.b2 + h])
                    .for_each(|(v, b)| *v += b);
            }
            gemm(
                batch,
                h,
                h,
                1.0,
                &a,
                false,
                &w[blk.w2..blk.w2 + h * h],
                true,
                1.0,
                &mut next,
            );
            pre_activation.push(z);
            activation.push(a);
            hidden.push(next);
        }

        let last = hidden.last().expect("final state");
        let mut f = vec![0.0; batch * d];
        for row in f.chunks_exact_mut(d) {
            row.copy_from_slice(&w[layout.b_out..layout.b_out + d]);
        }
        gemm(
            batch,
            h,
            d,
            1.0,
            last,
            false,
            &w[layout.w_out..layout.w_out + d * h],
            true,
            1.0,
            &mut f,
        );
        let mut output = f;
        for (b, s) in sigmas.iter().enumerate() {
            let (cs, co) = (cfg.c_skip(*s), cfg.c_out(*s));
            for (o, xi) in output[b * d..(b + 1) * d]
                .iter_mut()
                .zip(&x[b * d..(b + 1) * d])
            {
                *o = cs * xi + co * *o;
            }
        }
        Ok(Tape {
            batch,
            sigmas: sigmas.to_vec(),
            scaled_input,
            embedding,
            hidden,
            pre_activation,
            activation,
            output,
        })
    }

    /// `D(x, σ)` for one latent.
    pub fn forward(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, &[sigma])?.output)
    }

    /// Reverse pass for `cotangent = ∂L/∂D` (row-major like the tape).
    /// Returns `∂L/∂x` and, when `param_grad` is given, accumulates `∂L/∂θ` into it.
    pub fn backward(
        &self,
        tape: &Tape,
        cotangent: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let cfg = &self.config;
        let (d, h, e) = (cfg.latent_dim, cfg.hidden_width, cfg.sigma_embed_dim);
        let batch = tape.batch;
        assert_eq!(cotangent.len(), batch * d, "cotangent shape");
        let layout = cfg.layout();
        let w = &self.weights;

        let mut df = cotangent.to_vec();
        let mut dx = vec![0.0; batch * d];
        for (b, s) in tape.sigmas.iter().enumerate() {
            let (cs, co) = (cfg.c_skip(*s), cfg.c_out(*s));
            for i in b * d..(b + 1) * d {
                dx[i] = cs * cotangent[i];
                df[i] *= co;
            }
        }

        let last = tape.hidden.last().expect("final state");
        if let Some(g) = param_grad.as_deref_mut() {
            gemm(
                d,
                batch,
                h,
                1.0,
                &df,
                true,
                last,
                false,
                1.0,
                &mut g[layout.w_out..layout.w_out + d * h],
            );
            add_column_sums(&df, d, &mut g[layout.b_out..layout.b_out + d]);
        }
        let mut dh = vec![0.0; batch * h];
        gemm(
            batch,
            d,
            h,
            1.0,
            &df,
            false,
            &w[layout.w_out..layout.w_out + d * h],
            false,
            0.0,
            &mut dh,
        );

        for (k, blk) in layout.blocks.iter().enumerate().rev() {
            let a = &tape.activation[k];
            let z = &tape.pre_activation[k];
            let input = &tape.hidden[k];
            if let Some(g) = param_grad.as_deref_mut() {
                gemm(
                    h,
                    batch,
                    h,
                    1.0,
                    &dh,
                    true,
                    a,
                    false,
                    1.0,
                    &mut g[blk.w2..blk.w2 + h * h],
                );
                add_column_sums(&dh, h, &mut g[blk.b2..blk.b2 + h]);
            }
            let mut dz = vec![0.0; batch * h];
            gemm(
                batch,
                h,
                h,
                1.0,
                &dh,
                false,
                &w[blk.w2..blk.w2 + h * h],
                false,
                0.0,
                &mut dz,
            );
            dz.iter_mut()
                .zip(z)
                .for_each(|(g, zi)| *g *= gelu_grad(*zi));
            if let Some(g) = param_grad.as_deref_mut() {
                gemm(
                    h,
                    batch,
                    h,
                    1.0,
                    &dz,
                    true,
                    input,
                    false,
                    1.0,
                    &mut g[blk.w1..blk.w1 + h * h],
                );
                add_column_sums(&dz, h, &mut g[blk.b1..blk.b1 + h]);
            }
            gemm(
                batch,
                h,
                h,
                1.0,
                &dz,
                false,
                &w[blk.w1..blk.w1 + h * h],
                false,
                1.0,
                &mut dh,
            );
        }

        if let Some(g) = param_grad {
            gemm(
                h,
                batch,
                d,
                1.0,
                &dh,
                true,
                &tape.scaled_input,
                false,
                1.0,
                &mut g[layout.w_in..layout.w_in + h * d],
            );
            add_column_sums(&dh, h, &mut g[layout.b_in..layout.b_in + h]);
            gemm(
                h,
                batch,
                e,
                1.0,
                &dh,
                true,
                &tape.embedding,
                false,
                1.0,
                &mut g[layout.w_emb..layout.w_emb + h * e],
            );
        }
        let mut dxin = vec![0.0; batch * d];
        gemm(
            batch,
            h,
            d,
            1.0,
            &dh,
            false,
            &w[layout.w_in..layout.w_in + h * d],
            false,
            0.0,
            &mut dxin,
        );
        for (b, s) in tape.sigmas.iter().enumerate() {
            let c = cfg.c_in(*s);
            for i in b * d..(b + 1) * d {
                dx[i] += c * dxin[i];
            }
        }
        dx
    }

    /// `Jᵀ · cotangent` with `J = ∂D(x, σ)/∂x`.
    pub fn input_gradient(&self, x: &[f64], sigma: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_batch(x, &[sigma])?;
        if cotangent.len() != x.len() {
            return Err(Error::dim("cotangent length differs from latent length"));
        }
        Ok(self.backward(&tape, cotangent, None))
    }

    /// Weighted denoising loss `mean_b λ(σ_b) ‖D(x_b, σ_b) − y_b‖² / d` and its
    /// weight gradient.
    pub fn loss_and_gradient(
        &self,
        noisy: &[f64],
        clean: &[f64],
        sigmas: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let tape = self.forward_batch(noisy, sigmas)?;
        if clean.len() != noisy.len() {
            return Err(Error::dim("clean batch differs in shape from noisy batch"));
        }
        let d = self.config.latent_dim;
        let norm = 1.0 / (tape.batch * d) as f64;
        let mut loss = 0.0;
        let mut cot = vec![0.0; noisy.len()];
        for (b, s) in sigmas.iter().enumerate() {
            let lw = self.config.loss_weight(*s);
            for i in b * d..(b + 1) * d {
                let r = tape.output[i] - clean[i];
                loss += lw * r * r * norm;
                cot[i] = 2.0 * lw * r * norm;
            }
        }
        let mut grad = vec![0.0; self.weights.len()];
        self.backward(&tape, &cot, Some(&mut grad));
        Ok((loss, grad))
    }

    /// Weight gradient of the batch loss; see [`Denoiser::loss_and_gradient`].
    pub fn parameter_gradient(
        &self,
        noisy: &[f64],
        clean: &[f64],
        sigmas: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(noisy, clean, sigmas)?.1)
    }
}

fn add_column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

/// Trained weights plus everything needed to use them safely.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserCheckpoint {
    pub denoiser: Denoiser,
    pub sigma_max: f64,
    pub codec_fingerprint: u64,
    pub train_steps: u64,
}

impl DenoiserCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.denoiser.config;
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.u64(cfg.latent_dim as u64);
        w.u64(cfg.hidden_width as u64);
        w.u64(cfg.depth as u64);
        w.u64(cfg.sigma_embed_dim as u64);
        w.f64(cfg.sigma_data);
        w.f64(self.sigma_max);
        w.u64(self.train_steps);
        w.u64(self.codec_fingerprint);
        w.u64(self.denoiser.weights.len() as u64);
        w.f64_slice(&self.denoiser.weights);
        w.finish_with_crc()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_crc(bytes)?;
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let config = DenoiserConfig {
            latent_dim: r.u64()? as usize,
            hidden_width: r.u64()? as usize,
            depth: r.u64()? as usize,
            sigma_embed_dim: r.u64()? as usize,
            sigma_data: r.f64()?,
        };
        let sigma_max = r.f64()?;
        let train_steps = r.u64()?;
        let codec_fingerprint = r.u64()?;
        let count = r.u64()? as usize;
        config.validate()?;
        if count != config.parameter_count() {
            return Err(Error::Format(format!(
                "checkpoint stores {count} weights, configuration needs {}",
                config.parameter_count()
            )));
        }
        let weights = r.f64_vec(count)?;
        r.finish()?;
        if !(sigma_max > 0.0) {
            return Err(Error::Format(
                "checkpoint sigma_max must be positive".into(),
            ));
        }
        Ok(Self {
            denoiser: Denoiser::new(config, weights)?,
            sigma_max,
            codec_fingerprint,
            train_steps,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Forward pass restricted to the trained noise range `(0, σ_max]`.
    pub fn denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_sigma(sigma)?;
        self.denoiser.forward(x, sigma)
    }

    pub fn check_sigma(&self, sigma: f64) -> Result<()> {
        if !(sigma > 0.0 && sigma <= self.sigma_max * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!(
                "σ = {sigma} outside (0, {}]",
                self.sigma_max
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> DenoiserConfig {
        DenoiserConfig {
            latent_dim: 5,
            hidden_width: 7,
            depth: 2,
            sigma_embed_dim: 4,
            sigma_data: 1.0,
        }
    }

    #[test]
    fn zero_output_layer_is_skip_connection() {
        let net = Denoiser::initialize(small(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.1];
        let sigma = 0.7;
        let out = net.forward(&x, sigma).unwrap();
        let cs = small().c_skip(sigma);
        for (o, xi) in out.iter().zip(&x) {
            assert!((o - cs * xi).abs() < 1e-15);
        }
        let g = net.input_gradient(&x, sigma, &[1.0; 5]).unwrap();
        assert!(g.iter().all(|v| (v - cs).abs() < 1e-15));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = Denoiser::initialize(small(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ck = DenoiserCheckpoint {
            denoiser: net,
            sigma_max: 80.0,
            codec_fingerprint: 0xdead_beef,
            train_steps: 12,
        };
        assert_eq!(DenoiserCheckpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }
}
