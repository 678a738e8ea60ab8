use std::f64::consts::PI;

use crate::{Domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    /// `sin(π k₁ x₁) sin(π k₂ x₂)`, `k_i ≥ 1`, zero on the boundary of the unit square.
    SineDirichlet,
    /// `exp(2πi ⟨n, x⟩)` on the unit torus.
    FourierPeriodic,
}

impl BasisKind {
    pub fn code(self) -> i32 {
        match self {
            BasisKind::SineDirichlet => 0,
            BasisKind::FourierPeriodic => 1,
        }
    }

    pub fn from_code(code: i32) -> Result<Self> {
        match code {
            0 => Ok(BasisKind::SineDirichlet),
            1 => Ok(BasisKind::FourierPeriodic),
            other => Err(Error::Format(format!("unknown basis code {other}"))),
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            BasisKind::SineDirichlet => Domain::UnitSquareDirichlet,
            BasisKind::FourierPeriodic => Domain::Torus,
        }
    }
}

/// Two-dimensional tensor-product basis on a square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisDescriptor {
    pub kind: BasisKind,
    pub grid_size: usize,
}

impl BasisDescriptor {
    pub const SPATIAL_DIMS: usize = 2;

    pub fn sine(grid_size: usize) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::invalid("sine grid must have at least one point"));
        }
        Ok(Self {
            kind: BasisKind::SineDirichlet,
            grid_size,
        })
    }

    pub fn fourier(grid_size: usize) -> Result<Self> {
        if grid_size < 2 || !grid_size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "Fourier grid size must be a power of two, got {grid_size}"
            )));
        }
        Ok(Self {
            kind: BasisKind::FourierPeriodic,
            grid_size,
        })
    }

    pub fn is_sine(&self) -> bool {
        self.kind == BasisKind::SineDirichlet
    }

    /// Eigenvalue of the Laplacian for `mode`: `−π²‖k‖²` (sine) or `−4π²‖n‖²` (Fourier).
    pub fn laplacian_eigenvalue(&self, mode: Mode) -> f64 {
        let k2 = mode.norm_sq();
        match self.kind {
            BasisKind::SineDirichlet => -PI * PI * k2,
            BasisKind::FourierPeriodic => -4.0 * PI * PI * k2,
        }
    }

    /// Signed wavenumber of FFT storage index `i` (Nyquist reported as `+n/2`).
    pub fn signed_index(&self, i: usize) -> i32 {
        let n = self.grid_size;
        if i <= n / 2 {
            i as i32
        } else {
            i as i32 - n as i32
        }
    }

    /// FFT storage index of signed wavenumber `k`.
    pub fn storage_index(&self, k: i32) -> usize {
        k.rem_euclid(self.grid_size as i32) as usize
    }
}

/// Integer mode index. Sine modes start at 1, Fourier modes are signed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub k1: i32,
    pub k2: i32,
}

impl Mode {
    pub const fn new(k1: i32, k2: i32) -> Self {
        Self { k1, k2 }
    }

    pub fn norm_sq(&self) -> f64 {
        (self.k1 as f64).powi(2) + (self.k2 as f64).powi(2)
    }

    pub fn norm_inf(&self) -> u32 {
        self.k1.unsigned_abs().max(self.k2.unsigned_abs())
    }
}
