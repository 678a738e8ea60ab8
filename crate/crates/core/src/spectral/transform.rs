use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::basis::{BasisDescriptor, BasisKind};
use crate::linalg::gemm;
use crate::{Error, Result};

/// Full grid-resolvable coefficient array.
///
/// Sine coefficients are stored at `[k₁ − 1, k₂ − 1]` and are the series
/// coefficients `α` of `f = Σ α(k) sin(π k₁ x₁) sin(π k₂ x₂)`. Fourier
/// coefficients are stored at FFT index `[n₁ mod N, n₂ mod N]` and are the
/// L²(𝕋²) inner products `⟨f, e^{2πi⟨n,x⟩}⟩`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Sine(Array2<f64>),
    Fourier(Array2<Complex64>),
}

impl Coefficients {
    pub fn grid_size(&self) -> usize {
        match self {
            Coefficients::Sine(a) => a.nrows(),
            Coefficients::Fourier(a) => a.nrows(),
        }
    }

    /// Euclidean norm of the coefficient array.
    pub fn norm(&self) -> f64 {
        match self {
            Coefficients::Sine(a) => a.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Coefficients::Fourier(a) => a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt(),
        }
    }
}

/// DST-I on an `n × n` interior grid, `x_j = j/(n+1)`.
#[derive(Clone)]
pub struct SineTransform {
    n: usize,
    // table[j * n + k] = sin(π (j+1)(k+1) / (n+1)); symmetric.
    table: Vec<f64>,
}

impl fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineTransform").field("n", &self.n).finish()
    }
}

impl SineTransform {
    pub fn new(n: usize) -> Self {
        let h = PI / (n + 1) as f64;
        let mut table = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                table[j * n + k] = (h * ((j + 1) * (k + 1)) as f64).sin();
            }
        }
        Self { n, table }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn sandwich(&self, input: &[f64], scale: f64) -> Array2<f64> {
        let n = self.n;
        let mut tmp = vec![0.0; n * n];
        let mut out = vec![0.0; n * n];
        gemm(
            n,
            n,
            n,
            1.0,
            &self.table,
            false,
            input,
            false,
            0.0,
            &mut tmp,
        );
        gemm(
            n,
            n,
            n,
            scale,
            &tmp,
            false,
            &self.table,
            false,
            0.0,
            &mut out,
        );
        Array2::from_shape_vec((n, n), out).expect("square buffer")
    }

    /// Grid values to series coefficients.
    pub fn forward(&self, field: ArrayView2<'_, f64>) -> Array2<f64> {
        let data: Vec<f64> = field.iter().copied().collect();
        let c = 2.0 / (self.n + 1) as f64;
        self.sandwich(&data, c * c)
    }

    /// Series coefficients to grid values.
    pub fn inverse(&self, coeffs: ArrayView2<'_, f64>) -> Array2<f64> {
        let data: Vec<f64> = coeffs.iter().copied().collect();
        self.sandwich(&data, 1.0)
    }

    /// Transpose of [`SineTransform::inverse`]; the synthesis matrix is symmetric.
    pub fn inverse_adjoint(&self, grid_cotangent: ArrayView2<'_, f64>) -> Array2<f64> {
        self.inverse(grid_cotangent)
    }
}

/// Two-dimensional FFT on an `n × n` torus grid, `x_j = j/n`.
#[derive(Clone)]
pub struct FourierTransform {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FourierTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierTransform")
            .field("n", &self.n)
            .finish()
    }
}

impl FourierTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn apply_2d(&self, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        let n = self.n;
        plan.process(buf);
        transpose_in_place(buf, n);
        plan.process(buf);
        transpose_in_place(buf, n);
    }

    /// Unitary-in-L² forward transform: `f̂(n) = N⁻² Σ_x f(x) e^{−2πi⟨n,x⟩}`.
    pub fn forward_complex(&self, field: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = field.iter().copied().collect();
        self.apply_2d(&self.forward, &mut buf);
        let scale = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
        Array2::from_shape_vec((n, n), buf).expect("square buffer")
    }

    pub fn forward_real(&self, field: ArrayView2<'_, f64>) -> Array2<Complex64> {
        self.forward_complex(&field.mapv(|v| Complex64::new(v, 0.0)))
    }

    /// Series evaluation `f(x) = Σ_n f̂(n) e^{2πi⟨n,x⟩}`.
    pub fn inverse_complex(&self, coeffs: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = coeffs.iter().copied().collect();
        self.apply_2d(&self.inverse, &mut buf);
        Array2::from_shape_vec((n, n), buf).expect("square buffer")
    }

    /// Real part of the series evaluation; exact for Hermitian coefficient arrays.
    pub fn inverse_real(&self, coeffs: &Array2<Complex64>) -> Array2<f64> {
        self.inverse_complex(coeffs).mapv(|v| v.re)
    }
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Prepared transform for one basis.
#[derive(Debug, Clone)]
pub enum SpectralTransform {
    Sine(SineTransform),
    Fourier(FourierTransform),
}

impl SpectralTransform {
    pub fn new(basis: &BasisDescriptor) -> Self {
        match basis.kind {
            BasisKind::SineDirichlet => {
                SpectralTransform::Sine(SineTransform::new(basis.grid_size))
            }
            BasisKind::FourierPeriodic => {
                SpectralTransform::Fourier(FourierTransform::new(basis.grid_size))
            }
        }
    }

    pub fn forward(&self, field: ArrayView2<'_, f64>) -> Coefficients {
        match self {
            SpectralTransform::Sine(t) => Coefficients::Sine(t.forward(field)),
            SpectralTransform::Fourier(t) => Coefficients::Fourier(t.forward_real(field)),
        }
    }

    pub fn inverse(&self, coeffs: &Coefficients) -> Array2<f64> {
        match (self, coeffs) {
            (SpectralTransform::Sine(t), Coefficients::Sine(c)) => t.inverse(c.view()),
            (SpectralTransform::Fourier(t), Coefficients::Fourier(c)) => t.inverse_real(c),
            _ => panic!("coefficient layout does not match transform"),
        }
    }
}

fn check_grid(rows: usize, cols: usize, basis: &BasisDescriptor) -> Result<()> {
    if rows != basis.grid_size || cols != basis.grid_size {
        return Err(Error::dim(format!(
            "grid {rows}x{cols} does not match basis size {}",
            basis.grid_size
        )));
    }
    Ok(())
}

/// All grid-resolvable coefficients of `field` in `basis`.
pub fn forward_transform(
    field: ArrayView2<'_, f64>,
    basis: &BasisDescriptor,
) -> Result<Coefficients> {
    let (r, c) = field.dim();
    check_grid(r, c, basis)?;
    Ok(SpectralTransform::new(basis).forward(field))
}

/// Grid values from a full coefficient array.
pub fn inverse_transform(coeffs: &Coefficients, basis: &BasisDescriptor) -> Result<Array2<f64>> {
    let n = coeffs.grid_size();
    check_grid(n, n, basis)?;
    match (basis.kind, coeffs) {
        (BasisKind::SineDirichlet, Coefficients::Sine(_))
        | (BasisKind::FourierPeriodic, Coefficients::Fourier(_)) => {}
        _ => return Err(Error::dim("coefficient layout does not match basis kind")),
    }
    Ok(SpectralTransform::new(basis).inverse(coeffs))
}
