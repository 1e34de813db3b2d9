//! Families of pure states with uniform pairwise overlap.
//!
//! The security analysis only sees the Gram matrix of the prepared states,
//! so a real lower-triangular representative (Cholesky factor of the Gram
//! matrix) is enough: `G = (1-δ)·I + δ·J` with `J` the all-ones matrix.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// How the pairwise overlap δ is derived from the source assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKind {
    /// Mean photon number bound ⟨N⟩ ≤ μ on every prepared state,
    /// which forces |⟨ψx|ψy⟩| ≥ 1 − 2μ.
    EnergyBound,
    /// Direct overlap assumption |⟨ψx|ψy⟩| ≥ e^{−μ}.
    OverlapBound,
}

/// Worst-case pairwise overlap implied by the model at mean photon number μ.
///
/// Clamped to `[0, 1]`; under the energy bound the clamp engages at μ ≥ 0.5
/// (orthogonal states are the limiting case).
pub fn overlap_from_model(kind: OverlapKind, mu: f64) -> Result<f64> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    let delta = match kind {
        OverlapKind::EnergyBound => 1.0 - 2.0 * mu,
        OverlapKind::OverlapBound => (-mu).exp(),
    };
    Ok(delta.clamp(0.0, 1.0))
}

/// `n` unit vectors in R^n with ⟨ψx|ψy⟩ = δ for every pair x ≠ y.
#[derive(Debug, Clone)]
pub struct StateFamily {
    pub n: usize,
    pub delta: f64,
    /// Row x is |ψx⟩; lower-triangular by construction.
    pub vectors: Vec<DVector<f64>>,
}

impl StateFamily {
    /// Rank-one density matrix ρx = |ψx⟩⟨ψx|.
    pub fn density(&self, x: usize) -> DMatrix<f64> {
        let v = &self.vectors[x];
        v * v.transpose()
    }

    /// Recompute the Gram matrix from the stored vectors.
    pub fn gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.vectors[i].dot(&self.vectors[j]))
    }
}

/// Build the overlap-δ family as the rows of the Cholesky factor of
/// `(1-δ)·I + δ·J`.
///
/// δ = 1 is handled separately (the Gram matrix is rank one): all states
/// collapse onto the first basis vector.
pub fn build_states(n: usize, delta: f64) -> Result<StateFamily> {
    if n < 2 {
        return Err(Error::TooFewInputs(n));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::BadDelta(delta));
    }

    if delta == 1.0 {
        let mut e0 = DVector::zeros(n);
        e0[0] = 1.0;
        return Ok(StateFamily {
            n,
            delta,
            vectors: vec![e0; n],
        });
    }

    let gram = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { delta });
    // PSD is guaranteed for δ ∈ [0, 1); the guard catches roundoff at δ → 1.
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::IndefiniteGram(delta))?;
    let l = chol.l();
    let vectors = (0..n)
        .map(|x| DVector::from_fn(n, |j, _| l[(x, j)]))
        .collect();
    Ok(StateFamily { n, delta, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn overlap_examples() {
        assert_abs_diff_eq!(
            overlap_from_model(OverlapKind::EnergyBound, 0.18).unwrap(),
            0.64,
            epsilon = 1e-15
        );
        assert_eq!(overlap_from_model(OverlapKind::EnergyBound, 0.6).unwrap(), 0.0);
        assert_eq!(overlap_from_model(OverlapKind::OverlapBound, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(
            overlap_from_model(OverlapKind::OverlapBound, 0.164).unwrap(),
            (-0.164f64).exp(),
            epsilon = 1e-15
        );
        assert!(overlap_from_model(OverlapKind::EnergyBound, -0.1).is_err());
    }

    // Closed-form ternary family: ψ0 = e0, ψ1 = (δ, √(1−δ²), 0),
    // ψ2 = (δ, δ√((1−δ)/(1+δ)), √((1+δ−2δ²)/(1+δ))).
    #[test]
    fn ternary_family_matches_closed_form() {
        for k in 1..10 {
            let d = k as f64 / 10.0;
            let fam = build_states(3, d).unwrap();
            let psi1 = [d, (1.0 - d * d).sqrt(), 0.0];
            let psi2 = [
                d,
                d * ((1.0 - d) / (1.0 + d)).sqrt(),
                ((1.0 + d - 2.0 * d * d) / (1.0 + d)).sqrt(),
            ];
            assert_abs_diff_eq!(fam.vectors[0][0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(fam.vectors[0][1], 0.0, epsilon = 1e-12);
            for j in 0..3 {
                assert_abs_diff_eq!(fam.vectors[1][j], psi1[j], epsilon = 1e-10);
                assert_abs_diff_eq!(fam.vectors[2][j], psi2[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_case_is_standard_basis() {
        let fam = build_states(3, 0.0).unwrap();
        for (x, v) in fam.vectors.iter().enumerate() {
            for j in 0..3 {
                let want = if j == x { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(v[j], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn four_states_half_overlap() {
        let fam = build_states(4, 0.5).unwrap();
        for x in 0..4 {
            for y in 0..x {
                assert_abs_diff_eq!(fam.vectors[x].dot(&fam.vectors[y]), 0.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gram_matches_target_over_grid() {
        for n in 2..=8 {
            for k in 0..=10 {
                let d = k as f64 / 10.0;
                let fam = build_states(n, d).unwrap();
                let gram = fam.gram();
                for i in 0..n {
                    for j in 0..n {
                        let want = if i == j { 1.0 } else { d };
                        assert_abs_diff_eq!(gram[(i, j)], want, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_delta_one() {
        let fam = build_states(5, 1.0).unwrap();
        for v in &fam.vectors {
            assert_eq!(v[0], 1.0);
            assert_eq!(v.iter().skip(1).copied().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_states(1, 0.5).is_err());
        assert!(build_states(3, -0.1).is_err());
        assert!(build_states(3, 1.1).is_err());
    }
}
