use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;

use super::basis::{BasisDescriptor, Mode};
use super::codec::ScaleVector;
use super::transform::Coefficients;

/// Applies the Laplacian mode-wise: `−π²‖k‖²` for sine, `−4π²‖n‖²` for Fourier.
pub fn spectral_laplacian(coeffs: &Coefficients) -> Coefficients {
    match coeffs {
        Coefficients::Sine(c) => Coefficients::Sine(Array2::from_shape_fn(c.dim(), |(i, j)| {
            let k2 = ((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64;
            -PI * PI * k2 * c[[i, j]]
        })),
        Coefficients::Fourier(c) => {
            let basis = BasisDescriptor {
                kind: super::basis::BasisKind::FourierPeriodic,
                grid_size: c.nrows(),
            };
            Coefficients::Fourier(Array2::from_shape_fn(c.dim(), |(i, j)| {
                let m = Mode::new(basis.signed_index(i), basis.signed_index(j));
                c[[i, j]] * basis.laplacian_eigenvalue(m)
            }))
        }
    }
}

/// Spectral multiplier of `∂/∂x_axis` on an `n`-point torus: `2πi n_axis`,
/// zero on the Nyquist index where the sign is ambiguous.
pub fn gradient_multiplier(n: usize, axis: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        let idx = if axis == 0 { i } else { j };
        if n.is_multiple_of(2) && idx == n / 2 {
            return Complex64::new(0.0, 0.0);
        }
        let k = if idx <= n / 2 {
            idx as f64
        } else {
            idx as f64 - n as f64
        };
        Complex64::new(0.0, 2.0 * PI * k)
    })
}

/// Velocity coefficients from vorticity coefficients on the torus:
/// `v̂₁ = i k₂/‖k‖² ŵ`, `v̂₂ = −i k₁/‖k‖² ŵ`, zero at `k = 0` and on Nyquist lines.
pub fn biot_savart(w_hat: &Array2<Complex64>) -> (Array2<Complex64>, Array2<Complex64>) {
    let n = w_hat.nrows();
    let signed = |i: usize| -> Option<f64> {
        if n.is_multiple_of(2) && i == n / 2 {
            None
        } else if i <= n / 2 {
            Some(i as f64)
        } else {
            Some(i as f64 - n as f64)
        }
    };
    let mut v1 = Array2::zeros((n, n));
    let mut v2 = Array2::zeros((n, n));
    for ((i, j), w) in w_hat.indexed_iter() {
        let (Some(k1), Some(k2)) = (signed(i), signed(j)) else {
            continue;
        };
        let k_sq = k1 * k1 + k2 * k2;
        if k_sq == 0.0 {
            continue;
        }
        v1[[i, j]] = Complex64::new(0.0, k2 / k_sq) * w;
        v2[[i, j]] = Complex64::new(0.0, -k1 / k_sq) * w;
    }
    (v1, v2)
}

/// Pads `field` with `layers` rings; ring `j` (1 = innermost) holds the nearest
/// boundary value scaled by `(layers − j)/layers`, so the outermost ring is zero.
pub fn extend_to_zero_boundary(field: ArrayView2<'_, f64>, layers: usize) -> Array2<f64> {
    let (h, w) = field.dim();
    if layers == 0 {
        return field.to_owned();
    }
    let p = layers as isize;
    Array2::from_shape_fn((h + 2 * layers, w + 2 * layers), |(i, j)| {
        let (i, j) = (i as isize - p, j as isize - p);
        let ci = i.clamp(0, h as isize - 1);
        let cj = j.clamp(0, w as isize - 1);
        let ring = (ci - i).abs().max((cj - j).abs());
        let factor = (p - ring) as f64 / p as f64;
        let value = field[[ci as usize, cj as usize]];
        if ring == 0 {
            value
        } else {
            factor * value
        }
    })
}

/// Inverse of [`extend_to_zero_boundary`] on the interior.
pub fn restrict_interior(field: ArrayView2<'_, f64>, layers: usize) -> Array2<f64> {
    let (h, w) = field.dim();
    field
        .slice(s![layers..h - layers, layers..w - layers])
        .to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// `Σ_k s_k² ‖k‖^{2m}`
    pub lhs: f64,
    /// `Σ_k mean(|X̂(k)|²) ‖k‖^{2m}`
    pub rhs: f64,
    pub holds: bool,
}

/// Sample-level check that the latent noise `Σ s_k Z_k φ_k` inherits the
/// Sobolev-weighted second moment of the data: variance never exceeds the raw
/// second moment, mode by mode.
///
/// `samples[i][j]` is the coefficient of mode `modes[j]` in sample `i`.
pub fn lemma1_check(
    scales: &ScaleVector,
    modes: &[Mode],
    samples: &[Vec<Complex64>],
    order: u32,
) -> Lemma1Report {
    assert_eq!(scales.values.len(), modes.len(), "scale/mode alignment");
    let weight = |m: &Mode| -> f64 {
        if order == 0 {
            1.0
        } else {
            m.norm_sq().powi(order as i32)
        }
    };
    let count = samples.len().max(1) as f64;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (j, mode) in modes.iter().enumerate() {
        let w = weight(mode);
        lhs += scales.values[j].powi(2) * w;
        let second: f64 = samples.iter().map(|row| row[j].norm_sqr()).sum::<f64>() / count;
        rhs += second * w;
    }
    Lemma1Report {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_factors() {
        let mut c = Array2::zeros((4, 4));
        c[[0, 0]] = 1.0;
        let Coefficients::Sine(l) = spectral_laplacian(&Coefficients::Sine(c)) else {
            unreachable!()
        };
        assert!((l[[0, 0]] + 2.0 * PI * PI).abs() < 1e-12);

        let mut f = Array2::from_elem((8, 8), Complex64::new(0.0, 0.0));
        f[[0, 0]] = Complex64::new(3.0, 0.0);
        let Coefficients::Fourier(l) = spectral_laplacian(&Coefficients::Fourier(f)) else {
            unreachable!()
        };
        assert_eq!(l[[0, 0]], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn biot_savart_axis_modes() {
        let n = 8;
        let w = Complex64::new(0.7, -0.2);
        let mut hat = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        hat[[0, 1]] = w;
        let (v1, v2) = biot_savart(&hat);
        assert!((v1[[0, 1]] - Complex64::i() * w).norm() < 1e-15);
        assert_eq!(v2[[0, 1]], Complex64::new(0.0, 0.0));

        let mut hat = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        hat[[1, 0]] = w;
        let (v1, v2) = biot_savart(&hat);
        assert_eq!(v1[[1, 0]], Complex64::new(0.0, 0.0));
        assert!((v2[[1, 0]] + Complex64::i() * w).norm() < 1e-15);
    }

    #[test]
    fn extension_ramp_of_constant() {
        let f = Array2::from_elem((3, 3), 1.0);
        let e = extend_to_zero_boundary(f.view(), 4);
        assert_eq!(e.dim(), (11, 11));
        let column: Vec<f64> = (0..4).rev().map(|i| e[[i, 5]]).collect();
        assert_eq!(column, vec![0.75, 0.5, 0.25, 0.0]);
        assert_eq!(e[[0, 0]], 0.0);
        assert_eq!(e[[10, 10]], 0.0);
        assert_eq!(restrict_interior(e.view(), 4), f);
    }

    #[test]
    fn extension_of_zero_is_zero() {
        let e = extend_to_zero_boundary(Array2::<f64>::zeros((5, 5)).view(), 4);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lemma1_zero_mean_and_shifted_mean() {
        let modes = vec![Mode::new(1, 1), Mode::new(1, 2)];
        let zero_mean = vec![
            vec![Complex64::new(1.0, 0.0), Complex64::new(-2.0, 0.0)],
            vec![Complex64::new(-1.0, 0.0), Complex64::new(2.0, 0.0)],
        ];
        let scales = ScaleVector::new(vec![1.0, 2.0], 1e-8).unwrap();
        let r = lemma1_check(&scales, &modes, &zero_mean, 1);
        assert!((r.lhs - r.rhs).abs() < 1e-12 && r.holds);

        let shifted: Vec<Vec<Complex64>> = zero_mean
            .iter()
            .map(|row| row.iter().map(|c| c + Complex64::new(0.5, 0.0)).collect())
            .collect();
        let r = lemma1_check(&scales, &modes, &shifted, 1);
        assert!(r.lhs < r.rhs && r.holds);
    }
}
