use super::basis::{BasisDescriptor, BasisKind, Mode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TruncationKind {
    /// `‖k‖_∞ ≤ c` (Fourier) or `1 ≤ k_i ≤ c` (sine).
    Cube(u32),
    /// `|k₁ k₂| ≤ c`, with each axis additionally capped at `axis_max` when set.
    /// The Fourier variant uses `max(|k_i|, 1)` in the product.
    Hyperbolic { c: u32, axis_max: Option<u32> },
}

/// Retained modes in lexicographic `(k₁, k₂)` order.
///
/// Fourier sets keep only the Hermitian half-plane (`k₁ > 0`, or `k₁ = 0` and
/// `k₂ ≥ 0`) and never include Nyquist indices, so every stored mode has a
/// distinct conjugate partner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationSet {
    pub kind: TruncationKind,
    pub modes: Vec<Mode>,
}

impl TruncationSet {
    pub fn new(kind: TruncationKind, basis: &BasisDescriptor) -> Result<Self> {
        let keep = |m: Mode| -> bool {
            match kind {
                TruncationKind::Cube(c) => m.norm_inf() <= c,
                TruncationKind::Hyperbolic { c, axis_max } => {
                    let a = m.k1.unsigned_abs().max(1) as u64;
                    let b = m.k2.unsigned_abs().max(1) as u64;
                    let capped = axis_max.is_none_or(|cap| m.norm_inf() <= cap);
                    a * b <= c as u64 && capped
                }
            }
        };
        let n = basis.grid_size as i32;
        let mut modes = Vec::new();
        match basis.kind {
            BasisKind::SineDirichlet => {
                for k1 in 1..=n {
                    for k2 in 1..=n {
                        let m = Mode::new(k1, k2);
                        if keep(m) {
                            modes.push(m);
                        }
                    }
                }
            }
            BasisKind::FourierPeriodic => {
                let max = n / 2 - 1;
                for k1 in 0..=max {
                    for k2 in -max..=max {
                        if k1 == 0 && k2 < 0 {
                            continue;
                        }
                        let m = Mode::new(k1, k2);
                        if keep(m) {
                            modes.push(m);
                        }
                    }
                }
            }
        }
        if modes.is_empty() {
            return Err(Error::invalid(format!(
                "truncation {kind:?} retains no modes"
            )));
        }
        Ok(Self { kind, modes })
    }

    /// Number of retained modes `l`.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Real latent components used by one mode: sine modes and the Fourier
    /// mean mode are real, every other Fourier mode stores `(re, im)`.
    pub fn slots_for(basis: &BasisDescriptor, mode: Mode) -> usize {
        match basis.kind {
            BasisKind::SineDirichlet => 1,
            BasisKind::FourierPeriodic if mode.k1 == 0 && mode.k2 == 0 => 1,
            BasisKind::FourierPeriodic => 2,
        }
    }

    pub fn slot_count(&self, basis: &BasisDescriptor) -> usize {
        self.modes.iter().map(|m| Self::slots_for(basis, *m)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_cube_is_full_square() {
        let basis = BasisDescriptor::sine(16).unwrap();
        let t = TruncationSet::new(TruncationKind::Cube(4), &basis).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t.modes.first(), Some(&Mode::new(1, 1)));
        assert_eq!(t.modes.last(), Some(&Mode::new(4, 4)));
    }

    #[test]
    fn sine_hyperbolic_counts() {
        let basis = BasisDescriptor::sine(40).unwrap();
        let t = TruncationSet::new(
            TruncationKind::Hyperbolic {
                c: 24,
                axis_max: Some(12),
            },
            &basis,
        )
        .unwrap();
        // Σ_{k₁=1}^{12} min(12, ⌊24/k₁⌋)
        let want: usize = (1..=12).map(|k1: usize| (24 / k1).min(12)).sum();
        assert_eq!(t.len(), want);
        assert!(t.modes.iter().all(|m| m.k1 * m.k2 <= 24));
        assert!(t.modes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fourier_cube_is_half_plane() {
        let basis = BasisDescriptor::fourier(32).unwrap();
        let t = TruncationSet::new(TruncationKind::Cube(5), &basis).unwrap();
        assert_eq!(t.len(), (11 * 11 - 1) / 2 + 1);
        assert_eq!(t.slot_count(&basis), 11 * 11);
        assert_eq!(t.modes[0], Mode::new(0, 0));
        assert_eq!(t.modes[1], Mode::new(0, 1));
    }

    #[test]
    fn fourier_hyperbolic_keeps_axes() {
        let basis = BasisDescriptor::fourier(32).unwrap();
        let t = TruncationSet::new(
            TruncationKind::Hyperbolic {
                c: 6,
                axis_max: None,
            },
            &basis,
        )
        .unwrap();
        assert!(t.modes.contains(&Mode::new(6, 0)));
        assert!(t.modes.contains(&Mode::new(0, 6)));
        assert!(t.modes.contains(&Mode::new(2, -3)));
        assert!(!t.modes.contains(&Mode::new(2, 4)));
    }
}
