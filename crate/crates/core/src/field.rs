use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2};

use crate::{Error, Result};

/// Physical domain a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Interior grid of the unit square, `x_j = j / (n + 1)` for `j = 1..=n`.
    UnitSquareDirichlet,
    /// Periodic unit torus, `x_j = j / n` for `j = 0..n`.
    Torus,
}

impl Domain {
    pub fn code(self) -> u8 {
        match self {
            Domain::UnitSquareDirichlet => 0,
            Domain::Torus => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Domain::UnitSquareDirichlet),
            1 => Ok(Domain::Torus),
            other => Err(Error::Format(format!("unknown domain code {other}"))),
        }
    }

    /// Grid coordinates along one axis.
    pub fn coordinates(self, n: usize) -> Vec<f64> {
        match self {
            Domain::UnitSquareDirichlet => (1..=n).map(|j| j as f64 / (n + 1) as f64).collect(),
            Domain::Torus => (0..n).map(|j| j as f64 / n as f64).collect(),
        }
    }

    /// Quadrature weight of one grid cell for the L² inner product.
    pub fn cell_area(self, n: usize) -> f64 {
        match self {
            Domain::UnitSquareDirichlet => 1.0 / ((n + 1) * (n + 1)) as f64,
            Domain::Torus => 1.0 / (n * n) as f64,
        }
    }
}

/// Real field stack of shape `[time_steps, channels, h, w]`.
///
/// Axis 2 runs along `x₁`, axis 3 along `x₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub data: Array4<f64>,
    pub domain: Domain,
}

impl FieldGrid {
    pub fn new(data: Array4<f64>, domain: Domain) -> Result<Self> {
        let (_, _, h, w) = data.dim();
        if h != w {
            return Err(Error::dim(format!(
                "field grid must be square, got {h}x{w}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("field contains non-finite entries".into()));
        }
        Ok(Self { data, domain })
    }

    pub fn zeros(time_steps: usize, channels: usize, n: usize, domain: Domain) -> Self {
        Self {
            data: Array4::zeros((time_steps, channels, n, n)),
            domain,
        }
    }

    /// Single time step, single channel.
    pub fn from_slice(slice: Array2<f64>, domain: Domain) -> Result<Self> {
        let (h, w) = slice.dim();
        let data = slice
            .into_shape_with_order((1, 1, h, w))
            .map_err(|e| Error::dim(e.to_string()))?;
        Self::new(data, domain)
    }

    pub fn time_steps(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn grid_size(&self) -> usize {
        self.data.dim().2
    }

    pub fn slice(&self, time: usize, channel: usize) -> ArrayView2<'_, f64> {
        self.data.slice(ndarray::s![time, channel, .., ..])
    }

    pub fn slice_mut(&mut self, time: usize, channel: usize) -> ArrayViewMut2<'_, f64> {
        self.data.slice_mut(ndarray::s![time, channel, .., ..])
    }

    /// Discrete L² norm of one slice using the domain's cell quadrature.
    pub fn l2_norm(&self, time: usize, channel: usize) -> f64 {
        let n = self.grid_size();
        let sq: f64 = self.slice(time, channel).iter().map(|v| v * v).sum();
        (sq * self.domain.cell_area(n)).sqrt()
    }
}
