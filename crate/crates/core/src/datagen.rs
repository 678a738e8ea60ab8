//! Synthetic data: Gaussian random fields, spectral elliptic solvers, a
//! pseudo-spectral Navier–Stokes integrator and the dataset file format.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::io::{write_atomic, ByteReader, ByteWriter};
use crate::residuals::{Advection, Dealias, ResidualKind, ResidualSpec};
use crate::spectral::{
    biot_savart, BasisDescriptor, BasisKind, ChannelSpec, Codec, FourierTransform, Mode,
    SineTransform, TruncationKind,
};
use crate::{Domain, Error, FieldGrid, Result};

const DATASET_MAGIC: &[u8; 8] = b"PISDDATA";
const DATASET_VERSION: u16 = 1;

/// Padding rings added to the coefficient channel of the elliptic tasks.
pub const COEFFICIENT_PADDING: usize = 4;
pub const DEFAULT_VISCOSITY: f64 = 1e-3;
pub const DEFAULT_NS_TIME_STEPS: usize = 10;

/// Gaussian random field with spectral density `amplitude·(4π²‖k‖² + τ²)^{−α}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrfSpec {
    pub tau: f64,
    pub alpha: f64,
    pub amplitude: f64,
    pub basis: BasisDescriptor,
}

impl GrfSpec {
    /// Amplitude chosen so that `E‖f‖²_{L²} = 1`.
    pub fn unit_energy(basis: BasisDescriptor, tau: f64, alpha: f64) -> Result<Self> {
        if !(tau > 0.0) || !(alpha > 1.0) {
            return Err(Error::invalid(format!(
                "GRF needs tau > 0 and alpha > 1, got {tau}, {alpha}"
            )));
        }
        let mut spec = Self {
            tau,
            alpha,
            amplitude: 1.0,
            basis,
        };
        spec.amplitude = 1.0 / spec.expected_energy();
        Ok(spec)
    }

    pub fn density(&self, mode: Mode) -> f64 {
        self.amplitude * (4.0 * PI * PI * mode.norm_sq() + self.tau * self.tau).powf(-self.alpha)
    }

    /// `E‖f‖²_{L²}` of a sample.
    pub fn expected_energy(&self) -> f64 {
        let n = self.basis.grid_size;
        match self.basis.kind {
            BasisKind::SineDirichlet => {
                let mut acc = 0.0;
                for k1 in 1..=n as i32 {
                    for k2 in 1..=n as i32 {
                        acc += self.density(Mode::new(k1, k2)) / 4.0;
                    }
                }
                acc
            }
            BasisKind::FourierPeriodic => fourier_sample_modes(n)
                .iter()
                .map(|m| 2.0 * self.density(*m))
                .sum(),
        }
    }
}

/// Half-plane modes a Fourier GRF draws: no mean, no Nyquist.
fn fourier_sample_modes(n: usize) -> Vec<Mode> {
    let max = n as i32 / 2 - 1;
    let mut modes = Vec::new();
    for k1 in 0..=max {
        for k2 in -max..=max {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            modes.push(Mode::new(k1, k2));
        }
    }
    modes
}

/// Draws one field. Sine coefficients are real `N(0, d(k))`; Fourier
/// coefficients are circular complex normals with `E|ĉ(k)|² = d(k)` and
/// Hermitian partners; the mean mode is zero.
pub fn sample_grf<R: Rng + ?Sized>(spec: &GrfSpec, rng: &mut R) -> FieldGrid {
    let n = spec.basis.grid_size;
    let slice = match spec.basis.kind {
        BasisKind::SineDirichlet => {
            let mut coeffs = Array2::zeros((n, n));
            for k1 in 1..=n {
                for k2 in 1..=n {
                    let z: f64 = rng.sample(StandardNormal);
                    coeffs[[k1 - 1, k2 - 1]] =
                        z * spec.density(Mode::new(k1 as i32, k2 as i32)).sqrt();
                }
            }
            SineTransform::new(n).inverse(coeffs.view())
        }
        BasisKind::FourierPeriodic => {
            let mut coeffs = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
            for m in fourier_sample_modes(n) {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let z = Complex64::new(re, im) * (spec.density(m) / 2.0).sqrt();
                coeffs[[
                    spec.basis.storage_index(m.k1),
                    spec.basis.storage_index(m.k2),
                ]] = z;
                coeffs[[
                    spec.basis.storage_index(-m.k1),
                    spec.basis.storage_index(-m.k2),
                ]] = z.conj();
            }
            FourierTransform::new(n).inverse_real(&coeffs)
        }
    };
    FieldGrid {
        data: slice
            .into_shape_with_order((1, 1, n, n))
            .expect("square slice"),
        domain: spec.basis.kind.domain(),
    }
}

fn solve_elliptic(a: ArrayView2<'_, f64>, shift: f64) -> Array2<f64> {
    let n = a.nrows();
    let t = SineTransform::new(n);
    let mut c = t.forward(a);
    c.indexed_iter_mut().for_each(|((i, j), v)| {
        let k2 = ((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64;
        *v /= shift - PI * PI * k2;
    });
    t.inverse(c.view())
}

fn map_slices(a: &FieldGrid, f: impl Fn(ArrayView2<'_, f64>) -> Array2<f64>) -> Result<FieldGrid> {
    if a.domain != Domain::UnitSquareDirichlet {
        return Err(Error::dim(
            "elliptic solvers need fields on the unit square",
        ));
    }
    let mut out = a.clone();
    for t in 0..a.time_steps() {
        for c in 0..a.channels() {
            out.slice_mut(t, c).assign(&f(a.slice(t, c)));
        }
    }
    Ok(out)
}

/// Solves `Δu = a` with zero Dirichlet data, slice by slice.
pub fn solve_poisson(a: &FieldGrid) -> Result<FieldGrid> {
    map_slices(a, |s| solve_elliptic(s, 0.0))
}

/// Solves `Δu + u = a` with zero Dirichlet data, slice by slice.
pub fn solve_helmholtz(a: &FieldGrid) -> Result<FieldGrid> {
    map_slices(a, |s| solve_elliptic(s, 1.0))
}

/// `q(x) = 0.1 (sin 2π(x₁+x₂) + cos 2π(x₁+x₂))` on the torus grid.
pub fn ns_forcing(n: usize) -> Array2<f64> {
    let x = Domain::Torus.coordinates(n);
    Array2::from_shape_fn((n, n), |(i, j)| {
        let s = 2.0 * PI * (x[i] + x[j]);
        0.1 * (s.sin() + s.cos())
    })
}

/// Uniform recording times on `[0, 1]`.
pub fn ns_times(count: usize) -> Vec<f64> {
    (0..count).map(|i| i as f64 / (count - 1) as f64).collect()
}

const BLOWUP_LIMIT: f64 = 1e8;
/// Bound on `dt·2π·k_max·(max|v₁| + max|v₂|)`; explicit Heun steps amplify
/// pure advection by `1 + z⁴/8` per step.
const ADVECTIVE_CFL: f64 = 0.4;

fn advective_rate(w_hat: &Array2<Complex64>, adv: &Advection, kmax: f64) -> f64 {
    let (v1, v2) = biot_savart(w_hat);
    let peak = |v: &Array2<Complex64>| {
        adv.transform()
            .inverse_real(v)
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    };
    2.0 * PI * kmax * (peak(&v1) + peak(&v2))
}

/// Integrating-factor Heun scheme for `∂_t w + V(w)·∇w = νΔw + q`.
///
/// The diffusion term is integrated exactly by `exp(−ν4π²‖k‖²dt)`; advection
/// and forcing take explicit second-order Heun steps, dealiased per `spec`.
/// Each recording interval is split into equal substeps no longer than
/// `dt_internal`, shortened further so that the largest advective frequency
/// per step stays below `ADVECTIVE_CFL`. Returns a `[times, 1, n, n]` stack with `w0` at `times[0]`.
pub fn integrate_ns(
    w0: ArrayView2<'_, f64>,
    spec: &ResidualSpec,
    dt_internal: f64,
) -> Result<FieldGrid> {
    let ResidualKind::NavierStokes {
        viscosity,
        times,
        forcing,
    } = &spec.kind
    else {
        return Err(Error::invalid("integrate_ns needs a Navier–Stokes spec"));
    };
    if !(dt_internal > 0.0) {
        return Err(Error::invalid("dt_internal must be positive"));
    }
    let n = w0.nrows();
    if forcing.dim() != (n, n) {
        return Err(Error::dim("forcing grid does not match initial vorticity"));
    }
    let adv = Advection::new(n, spec.dealias);
    let fft = adv.transform();
    let basis = BasisDescriptor::fourier(n)?;
    let decay_rate = Array2::from_shape_fn((n, n), |(i, j)| {
        let m = Mode::new(basis.signed_index(i), basis.signed_index(j));
        viscosity * basis.laplacian_eigenvalue(m)
    });
    let mut q_hat = fft.forward_real(forcing.view());
    Zip::from(&mut q_hat)
        .and(adv.mask())
        .for_each(|c, m| *c *= *m);
    let mut w_hat = fft.forward_real(w0);
    Zip::from(&mut w_hat)
        .and(adv.mask())
        .for_each(|c, m| *c *= *m);

    let kmax = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| adv.mask()[[i, j]] != 0.0)
        .map(|(i, j)| basis.signed_index(i).abs().max(basis.signed_index(j).abs()))
        .max()
        .unwrap_or(0) as f64;
    let rhs = |w: &Array2<Complex64>| -> Array2<Complex64> { &q_hat - &adv.apply(w) };
    let mut out = FieldGrid::zeros(times.len(), 1, n, Domain::Torus);
    out.slice_mut(0, 0).assign(&fft.inverse_real(&w_hat));
    for (idx, window) in times.windows(2).enumerate() {
        let span = window[1] - window[0];
        let rate = advective_rate(&w_hat, &adv, kmax);
        let steps = (span / dt_internal)
            .max(span * rate / ADVECTIVE_CFL)
            .ceil()
            .max(1.0) as usize;
        let dt = span / steps as f64;
        let e = decay_rate.mapv(|r| (r * dt).exp());
        for _ in 0..steps {
            let n0 = rhs(&w_hat);
            let mut predictor = &w_hat + &(&n0 * dt);
            Zip::from(&mut predictor).and(&e).for_each(|c, f| *c *= *f);
            let n1 = rhs(&predictor);
            let mut next = &w_hat + &(&n0 * (0.5 * dt));
            Zip::from(&mut next).and(&e).for_each(|c, f| *c *= *f);
            next = next + &n1 * (0.5 * dt);
            if next.iter().any(|c| !(c.norm() <= BLOWUP_LIMIT)) {
                return Err(Error::Numerical(format!(
                    "Navier–Stokes integration blew up before t = {}",
                    window[1]
                )));
            }
            w_hat = next;
        }
        out.slice_mut(idx + 1, 0).assign(&fft.inverse_real(&w_hat));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Poisson,
    Helmholtz,
    NavierStokes,
}

impl Task {
    pub fn code(self) -> u8 {
        match self {
            Task::Poisson => 0,
            Task::Helmholtz => 1,
            Task::NavierStokes => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Task::Poisson),
            1 => Ok(Task::Helmholtz),
            2 => Ok(Task::NavierStokes),
            other => Err(Error::Format(format!("unknown task code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Poisson => "poisson",
            Task::Helmholtz => "helmholtz",
            Task::NavierStokes => "navier-stokes",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "poisson" => Ok(Task::Poisson),
            "helmholtz" => Ok(Task::Helmholtz),
            "navier-stokes" | "ns" => Ok(Task::NavierStokes),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

/// Knobs of dataset generation; [`DataConfig::new`] fills the desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub task: Task,
    pub count: usize,
    pub seed: u64,
    /// Interior grid (elliptic) or torus grid (Navier–Stokes) size.
    pub resolution: usize,
    pub grf_tau: f64,
    pub grf_alpha: f64,
    /// Expected `‖f‖²_{L²}` of the drawn coefficient or initial vorticity.
    pub grf_energy: f64,
    pub viscosity: f64,
    pub ns_time_steps: usize,
    pub ns_dt: f64,
}

impl DataConfig {
    pub fn new(task: Task, count: usize, seed: u64, resolution: usize) -> Self {
        Self {
            task,
            count,
            seed,
            resolution,
            grf_tau: 3.0,
            grf_alpha: 2.0,
            grf_energy: 1.0,
            viscosity: DEFAULT_VISCOSITY,
            ns_time_steps: DEFAULT_NS_TIME_STEPS,
            ns_dt: 1.0 / 180.0,
        }
    }

    pub fn residual_spec(&self) -> Result<ResidualSpec> {
        match self.task {
            Task::Poisson => Ok(ResidualSpec::poisson()),
            Task::Helmholtz => Ok(ResidualSpec::helmholtz()),
            Task::NavierStokes => ResidualSpec::navier_stokes(
                self.viscosity,
                ns_times(self.ns_time_steps),
                ns_forcing(self.resolution),
                Dealias::TwoThirds,
            ),
        }
    }

    /// Field distribution on `basis` with this config's shape and energy.
    pub fn grf(&self, basis: BasisDescriptor) -> Result<GrfSpec> {
        if !(self.grf_energy > 0.0 && self.grf_energy.is_finite()) {
            return Err(Error::invalid(format!(
                "grf_energy must be positive, got {}",
                self.grf_energy
            )));
        }
        let mut spec = GrfSpec::unit_energy(basis, self.grf_tau, self.grf_alpha)?;
        spec.amplitude *= self.grf_energy;
        Ok(spec)
    }
}

/// Default codec geometry: hyperbolic sine truncation (`|k₁k₂| ≤ 24`, axes ≤ 12)
/// for `u` and the padded `a`; a cube of radius 3 per slice for vorticity.
///
/// The vorticity latent (49 slots per slice) stays below the denoiser width.
/// Slices are strongly correlated, and the output layer of a narrower network
/// cannot reach the directions the data leave empty.
pub fn default_codec(task: Task, resolution: usize, time_steps: usize) -> Result<Codec> {
    match task {
        Task::Poisson | Task::Helmholtz => {
            let trunc = TruncationKind::Hyperbolic {
                c: 24,
                axis_max: Some(12),
            };
            Codec::new(
                Domain::UnitSquareDirichlet,
                resolution,
                1,
                vec![
                    ChannelSpec {
                        basis: BasisDescriptor::sine(resolution)?,
                        truncation: trunc,
                        padding: 0,
                    },
                    ChannelSpec {
                        basis: BasisDescriptor::sine(resolution + 2 * COEFFICIENT_PADDING)?,
                        truncation: trunc,
                        padding: COEFFICIENT_PADDING,
                    },
                ],
            )
        }
        Task::NavierStokes => Codec::new(
            Domain::Torus,
            resolution,
            time_steps,
            vec![ChannelSpec {
                basis: BasisDescriptor::fourier(resolution)?,
                truncation: TruncationKind::Cube(3),
                padding: 0,
            }],
        ),
    }
}

/// Generated samples plus the parameters that determine them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub seed: u64,
    pub samples: Vec<FieldGrid>,
}

impl Dataset {
    pub fn resolution(&self) -> usize {
        self.samples.first().map_or(0, |s| s.grid_size())
    }

    pub fn time_steps(&self) -> usize {
        self.samples.first().map_or(0, |s| s.time_steps())
    }

    pub fn channels(&self) -> usize {
        self.samples.first().map_or(0, |s| s.channels())
    }

    /// Splits off the first `count` samples as the training part.
    pub fn split(&self, train: usize) -> (&[FieldGrid], &[FieldGrid]) {
        self.samples.split_at(train.min(self.samples.len()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::invalid("dataset is empty"))?;
        let (t, c, h, w) = first.data.dim();
        if self.samples.iter().any(|s| s.data.dim() != (t, c, h, w)) {
            return Err(Error::dim("dataset samples do not share a geometry"));
        }
        let narrow = |v: usize, what: &str| -> Result<u16> {
            u16::try_from(v)
                .map_err(|_| Error::invalid(format!("{what} {v} does not fit the file format")))
        };
        let mut out = ByteWriter::new();
        out.bytes(DATASET_MAGIC);
        out.u16(DATASET_VERSION);
        out.u8(self.task.code());
        out.u32(u32::try_from(self.samples.len()).map_err(|_| Error::invalid("too many samples"))?);
        out.u16(narrow(t, "time_steps")?);
        out.u16(narrow(c, "channels")?);
        out.u16(narrow(h, "height")?);
        out.u16(narrow(w, "width")?);
        out.u64(self.seed);
        for s in &self.samples {
            for v in s.data.iter() {
                out.f64(*v);
            }
        }
        Ok(out.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_crc(bytes)?;
        r.expect_magic(DATASET_MAGIC)?;
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let task = Task::from_code(r.u8()?)?;
        let count = r.u32()? as usize;
        let t = r.u16()? as usize;
        let c = r.u16()? as usize;
        let h = r.u16()? as usize;
        let w = r.u16()? as usize;
        let seed = r.u64()?;
        let domain = match task {
            Task::NavierStokes => Domain::Torus,
            _ => Domain::UnitSquareDirichlet,
        };
        let per = t * c * h * w;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let values = r.f64_vec(per)?;
            let data = ndarray::Array4::from_shape_vec((t, c, h, w), values)
                .map_err(|e| Error::Format(e.to_string()))?;
            samples.push(FieldGrid::new(data, domain)?);
        }
        r.finish()?;
        Ok(Self {
            task,
            seed,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Independent, reproducible generator for sample `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn elliptic_sample(config: &DataConfig, index: u64) -> Result<FieldGrid> {
    let n = config.resolution;
    let p = COEFFICIENT_PADDING;
    // Drawn on a larger Dirichlet grid so the coefficient is nonzero on ∂Ω.
    let spec = config.grf(BasisDescriptor::sine(n + 2 * p)?)?;
    let mut rng = sample_rng(config.seed, index);
    let big = sample_grf(&spec, &mut rng);
    let a = big
        .data
        .slice(ndarray::s![0, 0, p..n + p, p..n + p])
        .to_owned();
    let u = match config.task {
        Task::Helmholtz => solve_elliptic(a.view(), 1.0),
        _ => solve_elliptic(a.view(), 0.0),
    };
    let mut field = FieldGrid::zeros(1, 2, n, Domain::UnitSquareDirichlet);
    field.slice_mut(0, 0).assign(&u);
    field.slice_mut(0, 1).assign(&a);
    Ok(field)
}

fn ns_sample(config: &DataConfig, spec: &ResidualSpec, index: u64) -> Result<FieldGrid> {
    let grf = config.grf(BasisDescriptor::fourier(config.resolution)?)?;
    let mut rng = sample_rng(config.seed, index);
    let w0 = sample_grf(&grf, &mut rng);
    integrate_ns(w0.slice(0, 0), spec, config.ns_dt)
}

/// Generates `config.count` samples; sample `i` depends only on `(seed, i)`.
pub fn build_dataset(config: &DataConfig) -> Result<Dataset> {
    if config.count < 2 {
        return Err(Error::invalid(format!(
            "dataset needs at least 2 samples, got {}",
            config.count
        )));
    }
    let spec = config.residual_spec()?;
    let samples = (0..config.count as u64)
        .map(|i| match config.task {
            Task::NavierStokes => ns_sample(config, &spec, i),
            _ => elliptic_sample(config, i),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        task: config.task,
        seed: config.seed,
        samples,
    })
}
