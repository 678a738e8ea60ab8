//! Reverse-time Euler sampling with observation and PDE guidance applied
//! through a persistent frequency-aware Adam state.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::DenoiserCheckpoint;
use crate::residuals::{
    field_adjoint_to_latent, residual_with_field_gradient, ResidualSpec, ResidualValue,
};
use crate::spectral::{BasisKind, Codec, TruncationKind};
use crate::{Error, FieldGrid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `σ_0 = σ_max > σ_1 > … > σ_N = 0`.
    pub sigmas: Vec<f64>,
    pub rho: f64,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }
}

/// `σ_i = (σ_max^{1/ρ} + i/(N−1)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ` for `i < N`, `σ_N = 0`.
pub fn karras_schedule(
    steps: usize,
    sigma_max: f64,
    sigma_min: f64,
    rho: f64,
) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid("schedule needs at least two steps"));
    }
    if !(0.0 < sigma_min && sigma_min < sigma_max) || !(rho > 0.0) {
        return Err(Error::invalid(format!(
            "invalid schedule range σ_min = {sigma_min}, σ_max = {sigma_max}, ρ = {rho}"
        )));
    }
    let (a, b) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
    let mut sigmas: Vec<f64> = (0..steps)
        .map(|i| (a + i as f64 / (steps - 1) as f64 * (b - a)).powf(rho))
        .collect();
    sigmas[0] = sigma_max;
    sigmas[steps - 1] = sigma_min;
    sigmas.push(0.0);
    Ok(NoiseSchedule { sigmas, rho })
}

/// Probability-flow Euler step `x' = x + (σ_next − σ_cur)/σ_cur · (x − D)`.
pub fn euler_step(
    x: &[f64],
    sigma_cur: f64,
    sigma_next: f64,
    denoised: &[f64],
) -> Result<Vec<f64>> {
    if !(sigma_cur > sigma_next && sigma_next >= 0.0) {
        return Err(Error::invalid(format!(
            "Euler step needs σ_cur {sigma_cur} > σ_next {sigma_next} ≥ 0"
        )));
    }
    let ratio = (sigma_next - sigma_cur) / sigma_cur;
    Ok(x.iter()
        .zip(denoised)
        .map(|(xi, di)| xi + ratio * (xi - di))
        .collect())
}

/// Exact point values of one `(time, channel)` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PointObservations {
    pub channel: usize,
    pub time_index: usize,
    pub points: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// Linear measurement operator made of point-observation blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementOperator {
    pub blocks: Vec<PointObservations>,
}

impl MeasurementOperator {
    pub fn new(blocks: Vec<PointObservations>) -> Result<Self> {
        for b in &blocks {
            if b.points.len() != b.values.len() {
                return Err(Error::dim("observation points and values differ in length"));
            }
            if b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("observation values must be finite"));
            }
        }
        Ok(Self { blocks })
    }

    /// Observes `truth` at the given points.
    pub fn from_truth(
        truth: &FieldGrid,
        picks: Vec<(usize, usize, Vec<(usize, usize)>)>,
    ) -> Result<Self> {
        let n = truth.grid_size();
        let mut blocks = Vec::with_capacity(picks.len());
        for (time_index, channel, points) in picks {
            if time_index >= truth.time_steps() || channel >= truth.channels() {
                return Err(Error::dim("observation slice out of range"));
            }
            if points.iter().any(|(i, j)| *i >= n || *j >= n) {
                return Err(Error::dim("observation point out of range"));
            }
            let s = truth.slice(time_index, channel);
            let values = points.iter().map(|(i, j)| s[[*i, *j]]).collect();
            blocks.push(PointObservations {
                channel,
                time_index,
                points,
                values,
            });
        }
        Self::new(blocks)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `M(field)`, concatenated over blocks.
    pub fn apply(&self, field: &FieldGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            let s = field.slice(b.time_index, b.channel);
            out.extend(b.points.iter().map(|(i, j)| s[[*i, *j]]));
        }
        out
    }

    /// `Mᵀ c` as a grid field shaped like `like`.
    pub fn adjoint(&self, c: &[f64], like: &FieldGrid) -> FieldGrid {
        let mut out = FieldGrid::zeros(
            like.time_steps(),
            like.channels(),
            like.grid_size(),
            like.domain,
        );
        let mut at = 0;
        for b in &self.blocks {
            let mut s = out.slice_mut(b.time_index, b.channel);
            for (i, j) in &b.points {
                s[[*i, *j]] += c[at];
                at += 1;
            }
        }
        out
    }

    pub fn values(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect()
    }

    /// `‖y − M(field)‖ / ‖y‖`, 0 when there are no observations.
    pub fn relative_error(&self, field: &FieldGrid) -> f64 {
        let y = self.values();
        if y.is_empty() {
            return 0.0;
        }
        let m = self.apply(field);
        let num: f64 = y.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = y.iter().map(|a| a * a).sum();
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamGuidance {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_low: f64,
    pub lr_high: f64,
    /// Modes with `‖k‖_∞ ≤ cutoff` use `lr_low`; `None` means half the retained band.
    pub low_band_cutoff: Option<u32>,
    /// Optional per-slot frequency weights `w_k` (default all ones).
    pub weights: Option<Vec<f64>>,
}

impl AdamGuidance {
    /// Defaults for sparse observations.
    pub fn sparse() -> Self {
        Self {
            beta1: 0.985,
            beta2: 0.98,
            eps: 1e-8,
            lr_low: 0.2,
            lr_high: 0.01,
            low_band_cutoff: None,
            weights: None,
        }
    }

    /// Defaults for fully observed channels.
    pub fn full() -> Self {
        Self {
            beta1: 0.97,
            ..Self::sparse()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSpec {
    /// `ζ_c` per channel of the observation loss.
    pub lambda_obs: Vec<f64>,
    pub lambda_pde: f64,
    pub adam: AdamGuidance,
    pub residual: ResidualSpec,
}

impl GuidanceSpec {
    pub fn validate(&self, codec: &Codec) -> Result<()> {
        if self.lambda_obs.len() != codec.channels() {
            return Err(Error::dim(format!(
                "{} observation weights for {} channels",
                self.lambda_obs.len(),
                codec.channels()
            )));
        }
        if self
            .lambda_obs
            .iter()
            .chain([&self.lambda_pde])
            .any(|l| !(*l >= 0.0))
        {
            return Err(Error::invalid("guidance weights must be non-negative"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::invalid("guidance Adam betas must lie in [0, 1)"));
        }
        if !(a.lr_low > 0.0 && a.lr_high > 0.0) {
            return Err(Error::invalid("guidance learning rates must be positive"));
        }
        if let Some(w) = &a.weights {
            if w.len() != codec.latent_dim() {
                return Err(Error::dim(
                    "frequency weights must match the latent dimension",
                ));
            }
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.lambda_pde > 0.0 || self.lambda_obs.iter().any(|l| *l > 0.0)
    }
}

/// Half the retained band per axis of channel `c`.
fn default_cutoff(codec: &Codec, channel: usize) -> u32 {
    let spec = codec.channel_spec(channel);
    let band = match spec.truncation {
        TruncationKind::Cube(c) => c,
        TruncationKind::Hyperbolic { c, axis_max } => axis_max.unwrap_or(c),
    };
    band / 2
}

/// Step sizes `η_k` for every latent slot.
pub fn slot_learning_rates(codec: &Codec, adam: &AdamGuidance) -> Vec<f64> {
    let mut out = Vec::with_capacity(codec.latent_dim());
    for t in 0..codec.time_steps() {
        for c in 0..codec.channels() {
            let cutoff = adam
                .low_band_cutoff
                .unwrap_or_else(|| default_cutoff(codec, c));
            let spec = codec.channel_spec(c);
            for m in &codec.truncation(c).modes {
                let lr = if m.norm_inf() <= cutoff {
                    adam.lr_low
                } else {
                    adam.lr_high
                };
                let slots = match spec.basis.kind {
                    BasisKind::FourierPeriodic if m.k1 != 0 || m.k2 != 0 => 2,
                    _ => 1,
                };
                out.extend(std::iter::repeat_n(lr, slots));
            }
            debug_assert_eq!(out.len(), codec.slot_range(t, c).end);
        }
    }
    if let Some(w) = &adam.weights {
        out.iter_mut().zip(w).for_each(|(lr, wk)| *lr *= wk);
    }
    out
}

/// Adam moments persisting across all diffusion steps of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceAdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl GuidanceAdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
        }
    }
}

/// One Adam step without bias correction; returns the additive delta
/// `−η_k m_k / (√v_k + ε)`.
pub fn frequency_adam_update(
    state: &mut GuidanceAdamState,
    g: &[f64],
    lr: &[f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Vec<f64> {
    assert_eq!(g.len(), state.m.len(), "gradient/state length");
    assert_eq!(lr.len(), state.m.len(), "step-size/state length");
    state.step_count += 1;
    let mut delta = Vec::with_capacity(g.len());
    for (k, gk) in g.iter().enumerate() {
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * gk;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * gk * gk;
        delta.push(-lr[k] * state.m[k] / (state.v[k].sqrt() + eps));
    }
    delta
}

/// Guidance terms evaluated at one latent.
#[derive(Debug, Clone)]
pub struct GuidanceTerms {
    pub denoised: Vec<f64>,
    /// `∇_x Σ_c ζ_c ‖y_c − M_c(I(D(x, σ)))‖²`.
    pub g_obs: Vec<f64>,
    /// `∇_x L_PDE(I(D(x, σ)))`, unweighted.
    pub g_pde: Vec<f64>,
    pub obs_loss: f64,
    pub residual: ResidualValue,
}

impl GuidanceTerms {
    /// `G_obs + ζ_PDE G_pde`.
    pub fn combined(&self, lambda_pde: f64) -> Vec<f64> {
        self.g_obs
            .iter()
            .zip(&self.g_pde)
            .map(|(o, p)| o + lambda_pde * p)
            .collect()
    }
}

/// Denoises `x` and backpropagates the observation and PDE losses of the
/// decoded estimate through decoder and denoiser.
pub fn guidance_gradients(
    x: &[f64],
    sigma: f64,
    checkpoint: &DenoiserCheckpoint,
    codec: &Codec,
    guidance: &GuidanceSpec,
    measurement: &MeasurementOperator,
) -> Result<GuidanceTerms> {
    checkpoint.check_sigma(sigma)?;
    let net = &checkpoint.denoiser;
    let tape = net.forward_batch(x, &[sigma])?;
    let field = codec.decode_values(&tape.output)?;

    let mut obs_loss = 0.0;
    let mut obs_cot = Vec::with_capacity(measurement.len());
    let predicted = measurement.apply(&field);
    let mut at = 0;
    for b in &measurement.blocks {
        let zeta = guidance.lambda_obs[b.channel];
        for y in &b.values {
            let r = predicted[at] - y;
            obs_loss += zeta * r * r;
            obs_cot.push(2.0 * zeta * r);
            at += 1;
        }
    }
    let obs_field = measurement.adjoint(&obs_cot, &field);
    let g_obs = net.backward(&tape, &field_adjoint_to_latent(codec, &obs_field), None);

    let (residual, pde_field) =
        residual_with_field_gradient(&field, &guidance.residual, guidance.lambda_pde > 0.0)?;
    let g_pde = match pde_field {
        Some(f) => net.backward(&tape, &field_adjoint_to_latent(codec, &f), None),
        None => vec![0.0; x.len()],
    };
    Ok(GuidanceTerms {
        denoised: tape.output,
        g_obs,
        g_pde,
        obs_loss,
        residual,
    })
}

/// How guidance gradients move the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceOptimizer {
    FrequencyAdam,
    /// Plain step `x ← x − (G_obs + ζ_PDE G_pde)`.
    GradientDescent,
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub latent: Vec<f64>,
    pub field: FieldGrid,
}

/// One guided sampling run from `x ~ N(0, σ_max² I)`.
///
/// At step `n` the denoiser and guidance gradients are evaluated at the
/// current noise level `σ_{n−1}`; the Euler step moves to `σ_n` and the
/// guidance update is applied afterwards.
pub fn sample<R: Rng + ?Sized>(
    checkpoint: &DenoiserCheckpoint,
    codec: &Codec,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    measurement: &MeasurementOperator,
    optimizer: GuidanceOptimizer,
    rng: &mut R,
) -> Result<SampleOutcome> {
    if checkpoint.codec_fingerprint != codec.fingerprint() {
        return Err(Error::Fingerprint {
            expected: codec.fingerprint(),
            found: checkpoint.codec_fingerprint,
        });
    }
    guidance.validate(codec)?;
    let sigma_max = schedule.sigmas[0];
    checkpoint.check_sigma(sigma_max)?;
    let dim = codec.latent_dim();
    let mut x: Vec<f64> = (0..dim)
        .map(|_| sigma_max * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lr = slot_learning_rates(codec, &guidance.adam);
    let mut state = GuidanceAdamState::new(dim);
    let active = guidance.is_active();
    for n in 1..schedule.sigmas.len() {
        let (cur, next) = (schedule.sigmas[n - 1], schedule.sigmas[n]);
        if active {
            let terms = guidance_gradients(&x, cur, checkpoint, codec, guidance, measurement)?;
            x = euler_step(&x, cur, next, &terms.denoised)?;
            let g = terms.combined(guidance.lambda_pde);
            match optimizer {
                GuidanceOptimizer::FrequencyAdam => {
                    let a = &guidance.adam;
                    let delta = frequency_adam_update(&mut state, &g, &lr, a.beta1, a.beta2, a.eps);
                    x.iter_mut().zip(&delta).for_each(|(xi, d)| *xi += d);
                }
                GuidanceOptimizer::GradientDescent => {
                    x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= gi)
                }
            }
        } else {
            let d = checkpoint.denoise(&x, cur)?;
            x = euler_step(&x, cur, next, &d)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite sampler state at step {n} (σ = {cur:.4e} → {next:.4e})"
            )));
        }
    }
    let field = codec.decode_values(&x)?;
    Ok(SampleOutcome { latent: x, field })
}
