//! PDE residual functionals and their exact gradients.
//!
//! Poisson and Helmholtz fields hold `u` in channel 0 and `a` in channel 1 on
//! the interior Dirichlet grid. Navier–Stokes fields hold one vorticity channel
//! per recorded time on the torus.

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;

use crate::spectral::{
    biot_savart, gradient_multiplier, restrict_interior, spectral_laplacian, BasisDescriptor,
    BasisKind, Codec, Coefficients, FourierTransform, Mode, SineTransform,
};
use crate::{Domain, Error, FieldGrid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dealias {
    None,
    /// Keep `|n_i| ≤ N/3` on each axis.
    TwoThirds,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResidualKind {
    Poisson,
    Helmholtz,
    NavierStokes {
        viscosity: f64,
        /// Recording times `t₁ < … < t_N`.
        times: Vec<f64>,
        /// Forcing `q` on the torus grid.
        forcing: Array2<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSpec {
    pub kind: ResidualKind,
    pub dealias: Dealias,
}

impl ResidualSpec {
    pub fn poisson() -> Self {
        Self {
            kind: ResidualKind::Poisson,
            dealias: Dealias::None,
        }
    }

    pub fn helmholtz() -> Self {
        Self {
            kind: ResidualKind::Helmholtz,
            dealias: Dealias::None,
        }
    }

    pub fn navier_stokes(
        viscosity: f64,
        times: Vec<f64>,
        forcing: Array2<f64>,
        dealias: Dealias,
    ) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::invalid(format!(
                "Navier–Stokes residual needs at least 3 time steps, got {}",
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        if !(viscosity >= 0.0) {
            return Err(Error::invalid("viscosity must be non-negative"));
        }
        Ok(Self {
            kind: ResidualKind::NavierStokes {
                viscosity,
                times,
                forcing,
            },
            dealias,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualValue {
    pub value: f64,
    /// Navier–Stokes only: one entry per interior time step.
    pub per_time: Option<Vec<f64>>,
}

impl ResidualValue {
    fn scalar(value: f64) -> Self {
        Self {
            value,
            per_time: None,
        }
    }
}

/// Zero shift for Poisson (`Δu − a`), unit shift for Helmholtz (`Δu + u − a`).
fn elliptic_shift(kind: &ResidualKind) -> Option<f64> {
    match kind {
        ResidualKind::Poisson => Some(0.0),
        ResidualKind::Helmholtz => Some(1.0),
        ResidualKind::NavierStokes { .. } => None,
    }
}

fn elliptic_coefficients(u: &Coefficients, a: &Coefficients, shift: f64) -> Result<ResidualValue> {
    let (Coefficients::Sine(uc), Coefficients::Sine(ac)) = (u, a) else {
        return Err(Error::invalid("elliptic residuals need sine coefficients"));
    };
    let n = uc.nrows();
    let m = ac.nrows();
    if m == n {
        let Coefficients::Sine(lap) = spectral_laplacian(u) else {
            unreachable!("laplacian keeps the layout")
        };
        // ‖Σ α_k φ_k‖²_{L²(Ω)} = Σ α_k² / 4
        let value = Zip::from(&lap)
            .and(uc)
            .and(ac)
            .fold(0.0, |acc, l, u, a| acc + (l + shift * u - a).powi(2))
            / 4.0;
        return Ok(ResidualValue::scalar(value));
    }
    if m < n || (m - n) % 2 != 0 {
        return Err(Error::dim(format!(
            "a grid {m} cannot be restricted onto u grid {n}"
        )));
    }
    let u_grid = SineTransform::new(n).inverse(uc.view());
    let a_grid = restrict_interior(SineTransform::new(m).inverse(ac.view()).view(), (m - n) / 2);
    Ok(ResidualValue::scalar(
        elliptic_grid(u_grid.view(), a_grid.view(), shift, false).0,
    ))
}

/// `‖Δu − a‖²_{L²(Ω)}` from sine coefficients. When `a` lives on a padded grid
/// it is decoded, restricted to the interior and compared by grid quadrature.
pub fn poisson_residual(u: &Coefficients, a: &Coefficients) -> Result<ResidualValue> {
    elliptic_coefficients(u, a, 0.0)
}

/// `‖Δu + u − a‖²_{L²(Ω)}`; geometry handling as in [`poisson_residual`].
pub fn helmholtz_residual(u: &Coefficients, a: &Coefficients) -> Result<ResidualValue> {
    elliptic_coefficients(u, a, 1.0)
}

/// Quadrature `h² Σ (Δu + shift·u − a)²` with the spectral Laplacian of the
/// grid values of `u`. With `want_grad` also returns the partials with respect
/// to the grid values of `u` and `a`.
fn elliptic_grid(
    u: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    shift: f64,
    want_grad: bool,
) -> (f64, Option<(Array2<f64>, Array2<f64>)>) {
    let n = u.nrows();
    let t = SineTransform::new(n);
    let lambda = |i: usize, j: usize| -> f64 {
        -std::f64::consts::PI.powi(2) * (((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64) + shift
    };
    let mut coeffs = t.forward(u);
    coeffs
        .indexed_iter_mut()
        .for_each(|((i, j), c)| *c *= lambda(i, j));
    let r = t.inverse(coeffs.view()) - a;
    let h2 = Domain::UnitSquareDirichlet.cell_area(n);
    let value = h2 * r.iter().map(|v| v * v).sum::<f64>();
    if !want_grad {
        return (value, None);
    }
    let g = r.mapv(|v| 2.0 * h2 * v);
    // (S Λ F)ᵀ g = Fᵀ Λ Sᵀ g, and Fᵀ is the forward transform itself.
    let mut back = t.inverse_adjoint(g.view());
    back.indexed_iter_mut()
        .for_each(|((i, j), c)| *c *= lambda(i, j));
    let grad_u = t.forward(back.view());
    (value, Some((grad_u, -g)))
}

fn dealias_mask(n: usize, dealias: Dealias) -> Array2<f64> {
    let basis = BasisDescriptor {
        kind: BasisKind::FourierPeriodic,
        grid_size: n,
    };
    Array2::from_shape_fn((n, n), |(i, j)| match dealias {
        Dealias::None => 1.0,
        Dealias::TwoThirds => {
            let keep = |k: i32| 3 * k.unsigned_abs() as usize <= n;
            if keep(basis.signed_index(i)) && keep(basis.signed_index(j)) {
                1.0
            } else {
                0.0
            }
        }
    })
}

/// Pseudo-spectral evaluator for the vorticity advection term `V(w)·∇w`.
#[derive(Debug, Clone)]
pub struct Advection {
    fft: FourierTransform,
    grad: [Array2<Complex64>; 2],
    mask: Array2<f64>,
}

/// Intermediate grid quantities of one advection evaluation, kept for the adjoint.
struct AdvectionTape {
    velocity: [Array2<f64>; 2],
    gradient: [Array2<f64>; 2],
}

impl Advection {
    pub fn new(n: usize, dealias: Dealias) -> Self {
        Self {
            fft: FourierTransform::new(n),
            grad: [gradient_multiplier(n, 0), gradient_multiplier(n, 1)],
            mask: dealias_mask(n, dealias),
        }
    }

    pub fn grid_size(&self) -> usize {
        self.fft.size()
    }

    pub fn transform(&self) -> &FourierTransform {
        &self.fft
    }

    pub fn mask(&self) -> &Array2<f64> {
        &self.mask
    }

    fn tape(&self, w_hat: &Array2<Complex64>) -> AdvectionTape {
        let (v1, v2) = biot_savart(w_hat);
        let velocity = [self.fft.inverse_real(&v1), self.fft.inverse_real(&v2)];
        let gradient = [
            self.fft.inverse_real(&(&self.grad[0] * w_hat)),
            self.fft.inverse_real(&(&self.grad[1] * w_hat)),
        ];
        AdvectionTape { velocity, gradient }
    }

    /// Coefficients of `V(w)·∇w`, dealiased, with the mean mode removed.
    pub fn apply(&self, w_hat: &Array2<Complex64>) -> Array2<Complex64> {
        let tape = self.tape(w_hat);
        let product = &tape.velocity[0] * &tape.gradient[0] + &tape.velocity[1] * &tape.gradient[1];
        let mut out = self.fft.forward_real(product.view());
        Zip::from(&mut out)
            .and(&self.mask)
            .for_each(|c, m| *c *= *m);
        out[[0, 0]] = Complex64::new(0.0, 0.0);
        out
    }

    /// Grid-space adjoint: given `h = ∂L/∂(grid values of apply(w))`, returns
    /// `∂L/∂(grid values of w)`. Biot–Savart and derivative multipliers are
    /// skew-adjoint, the mask and mean removal are self-adjoint projections.
    fn adjoint(&self, tape: &AdvectionTape, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h_hat = self.fft.forward_real(h);
        Zip::from(&mut h_hat)
            .and(&self.mask)
            .for_each(|c, m| *c *= *m);
        h_hat[[0, 0]] = Complex64::new(0.0, 0.0);
        let h = self.fft.inverse_real(&h_hat);
        let mut acc_hat = Array2::<Complex64>::zeros(h.dim());
        let hv: [Array2<f64>; 2] = [&h * &tape.velocity[0], &h * &tape.velocity[1]];
        let hg: [Array2<f64>; 2] = [&h * &tape.gradient[0], &h * &tape.gradient[1]];
        let hg_hat = [
            self.fft.forward_real(hg[0].view()),
            self.fft.forward_real(hg[1].view()),
        ];
        let (b1, _) = biot_savart(&hg_hat[0]);
        let (_, b2) = biot_savart(&hg_hat[1]);
        acc_hat = acc_hat + b1 + b2;
        for axis in 0..2 {
            let hv_hat = self.fft.forward_real(hv[axis].view());
            acc_hat = acc_hat + &self.grad[axis] * &hv_hat;
        }
        self.fft.inverse_real(&acc_hat).mapv(|v| -v)
    }
}

/// Coefficients of `V(w)·∇w` for Fourier coefficients `w_hat`.
pub fn advection_pseudospectral(w_hat: &Array2<Complex64>, dealias: Dealias) -> Array2<Complex64> {
    Advection::new(w_hat.nrows(), dealias).apply(w_hat)
}

struct NsParts<'a> {
    viscosity: f64,
    times: &'a [f64],
    forcing: &'a Array2<f64>,
    advection: Advection,
}

impl<'a> NsParts<'a> {
    fn new(spec: &'a ResidualSpec, n: usize) -> Result<Self> {
        let ResidualKind::NavierStokes {
            viscosity,
            times,
            forcing,
        } = &spec.kind
        else {
            return Err(Error::invalid("not a Navier–Stokes residual spec"));
        };
        if forcing.dim() != (n, n) {
            return Err(Error::dim(format!(
                "forcing grid {:?} does not match field grid {n}",
                forcing.dim()
            )));
        }
        Ok(Self {
            viscosity: *viscosity,
            times,
            forcing,
            advection: Advection::new(n, spec.dealias),
        })
    }

    /// Grid residual at interior step `i` together with its advection tape.
    fn step_residual(
        &self,
        w: &[Array2<f64>],
        w_hat: &[Array2<Complex64>],
        i: usize,
    ) -> (Array2<f64>, AdvectionTape) {
        let fft = &self.advection.fft;
        let dt = self.times[i + 1] - self.times[i - 1];
        let tape = self.advection.tape(&w_hat[i]);
        let product = &tape.velocity[0] * &tape.gradient[0] + &tape.velocity[1] * &tape.gradient[1];
        let mut adv_hat = fft.forward_real(product.view());
        Zip::from(&mut adv_hat)
            .and(&self.advection.mask)
            .for_each(|c, m| *c *= *m);
        adv_hat[[0, 0]] = Complex64::new(0.0, 0.0);
        let Coefficients::Fourier(lap_hat) =
            spectral_laplacian(&Coefficients::Fourier(w_hat[i].clone()))
        else {
            unreachable!("laplacian keeps the layout")
        };
        let mut linear = adv_hat;
        Zip::from(&mut linear)
            .and(&lap_hat)
            .for_each(|c, l| *c -= self.viscosity * l);
        let r = (&w[i + 1] - &w[i - 1]) / dt + fft.inverse_real(&linear) - self.forcing;
        (r, tape)
    }
}

fn ns_slices(field: &FieldGrid) -> Result<Vec<Array2<f64>>> {
    if field.domain != Domain::Torus || field.channels() != 1 {
        return Err(Error::dim(
            "Navier–Stokes residual needs a single-channel torus stack",
        ));
    }
    Ok((0..field.time_steps())
        .map(|t| field.slice(t, 0).to_owned())
        .collect())
}

/// `Σ_{i=2}^{N−1} ‖(w_{i+1} − w_{i−1})/(t_{i+1} − t_{i−1}) + V(w_i)·∇w_i − νΔw_i − q‖²_{L²(𝕋²)}`,
/// evaluated as a sum over unitary Fourier coefficients.
pub fn ns_residual(field: &FieldGrid, spec: &ResidualSpec) -> Result<ResidualValue> {
    Ok(ns_residual_impl(field, spec, false)?.0)
}

fn ns_residual_impl(
    field: &FieldGrid,
    spec: &ResidualSpec,
    want_grad: bool,
) -> Result<(ResidualValue, Option<FieldGrid>)> {
    let n = field.grid_size();
    let parts = NsParts::new(spec, n)?;
    let w = ns_slices(field)?;
    if w.len() != parts.times.len() {
        return Err(Error::dim(format!(
            "field has {} time slices, residual spec has {} times",
            w.len(),
            parts.times.len()
        )));
    }
    let fft = &parts.advection.fft;
    let w_hat: Vec<_> = w.iter().map(|s| fft.forward_real(s.view())).collect();
    let area = Domain::Torus.cell_area(n);
    let mut per_time = Vec::with_capacity(w.len() - 2);
    let mut grad = want_grad.then(|| FieldGrid::zeros(w.len(), 1, n, Domain::Torus));
    for i in 1..w.len() - 1 {
        let (r, tape) = parts.step_residual(&w, &w_hat, i);
        per_time.push(area * r.iter().map(|v| v * v).sum::<f64>());
        if let Some(grad) = grad.as_mut() {
            let g = r.mapv(|v| 2.0 * area * v);
            let dt = parts.times[i + 1] - parts.times[i - 1];
            grad.slice_mut(i + 1, 0).scaled_add(1.0 / dt, &g);
            grad.slice_mut(i - 1, 0).scaled_add(-1.0 / dt, &g);
            let Coefficients::Fourier(lap_g) =
                spectral_laplacian(&Coefficients::Fourier(fft.forward_real(g.view())))
            else {
                unreachable!("laplacian keeps the layout")
            };
            grad.slice_mut(i, 0)
                .scaled_add(-parts.viscosity, &fft.inverse_real(&lap_g));
            grad.slice_mut(i, 0)
                .scaled_add(1.0, &parts.advection.adjoint(&tape, g.view()));
        }
    }
    let value = per_time.iter().sum();
    Ok((
        ResidualValue {
            value,
            per_time: Some(per_time),
        },
        grad,
    ))
}

fn elliptic_field(
    field: &FieldGrid,
    shift: f64,
    want_grad: bool,
) -> Result<(ResidualValue, Option<FieldGrid>)> {
    if field.domain != Domain::UnitSquareDirichlet
        || field.channels() != 2
        || field.time_steps() != 1
    {
        return Err(Error::dim(
            "elliptic residuals need a [1, 2, n, n] field on the unit square",
        ));
    }
    let (value, grads) = elliptic_grid(field.slice(0, 0), field.slice(0, 1), shift, want_grad);
    let grad = grads.map(|(gu, ga)| {
        let n = field.grid_size();
        let mut g = FieldGrid::zeros(1, 2, n, Domain::UnitSquareDirichlet);
        g.slice_mut(0, 0).assign(&gu);
        g.slice_mut(0, 1).assign(&ga);
        g
    });
    Ok((ResidualValue::scalar(value), grad))
}

/// Residual of a decoded field stack.
pub fn residual_value(field: &FieldGrid, spec: &ResidualSpec) -> Result<ResidualValue> {
    Ok(residual_with_field_gradient(field, spec, false)?.0)
}

/// Residual and, when requested, its partials with respect to every grid value.
pub fn residual_with_field_gradient(
    field: &FieldGrid,
    spec: &ResidualSpec,
    want_grad: bool,
) -> Result<(ResidualValue, Option<FieldGrid>)> {
    match elliptic_shift(&spec.kind) {
        Some(shift) => elliptic_field(field, shift, want_grad),
        None => ns_residual_impl(field, spec, want_grad),
    }
}

/// Pulls a grid-space cotangent back to raw latent entries through the decoder.
pub fn field_adjoint_to_latent(codec: &Codec, cotangent: &FieldGrid) -> Vec<f64> {
    let mut grad = vec![0.0; codec.latent_dim()];
    for t in 0..codec.time_steps() {
        for c in 0..codec.channels() {
            codec.decode_slice_adjoint(cotangent.slice(t, c), t, c, &mut grad);
        }
    }
    grad
}

/// Residual of `decode(x)` and its exact gradient with respect to `x`.
pub fn residual_gradient_values(
    x: &[f64],
    codec: &Codec,
    spec: &ResidualSpec,
) -> Result<(ResidualValue, Vec<f64>)> {
    let field = codec.decode_values(x)?;
    let (value, grad) = residual_with_field_gradient(&field, spec, true)?;
    let grad = grad.expect("gradient requested");
    Ok((value, field_adjoint_to_latent(codec, &grad)))
}

/// Fingerprint-checked variant of [`residual_gradient_values`].
pub fn residual_gradient(
    latent: &crate::spectral::SpectralLatent,
    codec: &Codec,
    spec: &ResidualSpec,
) -> Result<(ResidualValue, Vec<f64>)> {
    if latent.codec_fingerprint != codec.fingerprint() {
        return Err(Error::Fingerprint {
            expected: codec.fingerprint(),
            found: latent.codec_fingerprint,
        });
    }
    residual_gradient_values(&latent.x, codec, spec)
}

/// Modes of a Fourier coefficient array that survive `dealias`.
pub fn dealiased_modes(n: usize, dealias: Dealias) -> Vec<Mode> {
    let basis = BasisDescriptor {
        kind: BasisKind::FourierPeriodic,
        grid_size: n,
    };
    let mask = dealias_mask(n, dealias);
    mask.indexed_iter()
        .filter(|(_, m)| **m > 0.0)
        .map(|((i, j), _)| Mode::new(basis.signed_index(i), basis.signed_index(j)))
        .collect()
}
