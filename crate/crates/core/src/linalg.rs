//! Finite-dimensional complex linear algebra substrate: states, Hermitian
//! operators, projectors and unitary propagators.
//!
//! Everything works in units hbar = 1. Dense matrices throughout; the
//! intended scale is N <= 2048, where spectral decompositions are exact to
//! round-off and cheap enough to cache.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for `||M - M^dag||_max` when accepting a Hermitian operator.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Tolerance for `||P^2 - P||_max` when accepting a projector.
pub const IDEMPOTENCY_TOL: f64 = 1e-9;
/// Tolerance for `||U^dag U - 1||_max` of propagators.
pub const UNITARITY_TOL: f64 = 1e-9;
/// Squared norms at or below this floor count as an annihilated state
/// rather than round-off survival.
pub const COLLAPSE_FLOOR: f64 = 1e-14;

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Normalized state vector over a finite basis.
#[derive(Debug, Clone)]
pub struct QuantumState {
    amplitudes: DVector<C64>,
    basis_label: String,
}

impl QuantumState {
    /// Builds a state from raw amplitudes, normalizing them. Errors on an
    /// empty or numerically zero vector.
    pub fn new(amplitudes: DVector<C64>, basis_label: impl Into<String>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::validation("state dimension must be >= 1"));
        }
        let n = amplitudes.norm();
        if n * n <= COLLAPSE_FLOOR {
            return Err(Error::AnnihilatedState { norm_sq: n * n });
        }
        Ok(Self {
            amplitudes: amplitudes / C64::from(n),
            basis_label: basis_label.into(),
        })
    }

    pub fn from_components(re_im: &[(f64, f64)], basis_label: impl Into<String>) -> Result<Self> {
        let v = DVector::from_iterator(re_im.len(), re_im.iter().map(|&(r, i)| C64::new(r, i)));
        Self::new(v, basis_label)
    }

    pub fn basis_state(n: usize, index: usize, basis_label: impl Into<String>) -> Result<Self> {
        if index >= n {
            return Err(Error::dims(format!("basis index {index} >= dimension {n}")));
        }
        let mut v = DVector::zeros(n);
        v[index] = C64::new(1.0, 0.0);
        Self::new(v, basis_label)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn basis_label(&self) -> &str {
        &self.basis_label
    }

    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }
}

/// Spectral decomposition of a Hermitian operator: real eigenvalues and a
/// unitary eigenvector matrix.
#[derive(Debug, Clone)]
pub struct Eigenbasis {
    values: DVector<f64>,
    vectors: DMatrix<C64>,
}

impl Eigenbasis {
    fn of(matrix: &DMatrix<C64>) -> Self {
        let eig = nalgebra::SymmetricEigen::new(matrix.clone());
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    /// Coefficients of `psi` in this eigenbasis.
    pub fn coefficients(&self, psi: &DVector<C64>) -> DVector<C64> {
        self.vectors.adjoint() * psi
    }

    /// `exp(-i H t)` applied to precomputed eigenbasis coefficients.
    pub fn evolve_coefficients(&self, coeffs: &DVector<C64>, t: f64) -> DVector<C64> {
        let phased = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(self.values.iter())
                .map(|(c, &e)| c * C64::from_polar(1.0, -e * t)),
        );
        &self.vectors * phased
    }

    pub fn propagator_matrix(&self, t: f64) -> DMatrix<C64> {
        let n = self.values.len();
        let mut phased = self.vectors.clone();
        for (j, &e) in self.values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -e * t);
            for i in 0..n {
                phased[(i, j)] *= ph;
            }
        }
        phased * self.vectors.adjoint()
    }
}

/// Dense Hermitian operator with a lazily cached spectral decomposition, so
/// that propagators at many times reuse one eigensolve.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    matrix: DMatrix<C64>,
    eigen: OnceLock<Eigenbasis>,
}

impl HermitianOperator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::dims(format!(
                "expected square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = max_abs(&(&matrix - matrix.adjoint()));
        if defect > HERMITICITY_TOL {
            return Err(Error::NotHermitian {
                defect,
                tol: HERMITICITY_TOL,
            });
        }
        Ok(Self {
            matrix,
            eigen: OnceLock::new(),
        })
    }

    pub fn from_real(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix.map(|x| C64::new(x, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn eigen(&self) -> &Eigenbasis {
        self.eigen.get_or_init(|| Eigenbasis::of(&self.matrix))
    }

    /// `U = exp(-i H t)` via the cached spectral decomposition.
    pub fn propagator(&self, t: f64) -> UnitaryPropagator {
        UnitaryPropagator {
            matrix: self.eigen().propagator_matrix(t),
        }
    }

    /// `exp(-i H t) |psi>` without materializing the propagator.
    pub fn evolve(&self, psi: &QuantumState, t: f64) -> Result<QuantumState> {
        if psi.dim() != self.dim() {
            return Err(Error::dims(format!(
                "state dim {} vs operator dim {}",
                psi.dim(),
                self.dim()
            )));
        }
        let eig = self.eigen();
        let c = eig.coefficients(psi.amplitudes());
        QuantumState::new(eig.evolve_coefficients(&c, t), psi.basis_label())
    }

    pub fn expectation(&self, psi: &QuantumState) -> Result<f64> {
        if psi.dim() != self.dim() {
            return Err(Error::dims("expectation: dimension mismatch"));
        }
        let h_psi = &self.matrix * psi.amplitudes();
        Ok(psi.amplitudes().dotc(&h_psi).re)
    }
}

/// `U = exp(-i H t)` for some Hermitian generator.
#[derive(Debug, Clone)]
pub struct UnitaryPropagator {
    matrix: DMatrix<C64>,
}

impl UnitaryPropagator {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply_vec(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.matrix * v
    }

    pub fn apply(&self, psi: &QuantumState) -> Result<QuantumState> {
        if psi.dim() != self.dim() {
            return Err(Error::dims("propagator: dimension mismatch"));
        }
        QuantumState::new(self.apply_vec(psi.amplitudes()), psi.basis_label())
    }

    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        max_abs(&(self.matrix.adjoint() * &self.matrix - DMatrix::identity(n, n)))
    }
}

/// Hermitian idempotent operator. Diagonal 0/1 masks keep the common
/// region-projector case exact and cheap; arbitrary projectors (e.g.
/// `1 - |psi0><psi0|`) use the dense form.
#[derive(Debug, Clone)]
pub enum Projector {
    Mask(Vec<bool>),
    Dense(DMatrix<C64>),
}

/// Diagonal projector with 1 on the given basis indices.
pub fn make_projector(region: &[usize], n: usize) -> Result<Projector> {
    let mut mask = vec![false; n];
    for &i in region {
        if i >= n {
            return Err(Error::dims(format!("region index {i} >= dimension {n}")));
        }
        mask[i] = true;
    }
    Ok(Projector::Mask(mask))
}

impl Projector {
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::dims("projector must be square"));
        }
        let herm = max_abs(&(&matrix - matrix.adjoint()));
        if herm > HERMITICITY_TOL {
            return Err(Error::NotHermitian {
                defect: herm,
                tol: HERMITICITY_TOL,
            });
        }
        let idem = max_abs(&(&matrix * &matrix - &matrix));
        if idem > IDEMPOTENCY_TOL {
            return Err(Error::NotIdempotent {
                defect: idem,
                tol: IDEMPOTENCY_TOL,
            });
        }
        Ok(Projector::Dense(matrix))
    }

    /// `1 - |psi><psi|` (the decay projector).
    pub fn complement_of_state(psi: &QuantumState) -> Self {
        let n = psi.dim();
        let v = psi.amplitudes();
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] -= v[i] * v[j].conj();
            }
        }
        Projector::Dense(m)
    }

    pub fn dim(&self) -> usize {
        match self {
            Projector::Mask(m) => m.len(),
            Projector::Dense(m) => m.nrows(),
        }
    }

    /// Number of basis directions kept (trace of P, for masks).
    pub fn rank_hint(&self) -> Option<usize> {
        match self {
            Projector::Mask(m) => Some(m.iter().filter(|&&b| b).count()),
            Projector::Dense(_) => None,
        }
    }

    pub fn complement(&self) -> Projector {
        match self {
            Projector::Mask(m) => Projector::Mask(m.iter().map(|b| !b).collect()),
            Projector::Dense(m) => {
                let n = m.nrows();
                Projector::Dense(DMatrix::identity(n, n) - m)
            }
        }
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        match self {
            Projector::Mask(mask) => {
                let n = mask.len();
                let mut m = DMatrix::zeros(n, n);
                for (i, &on) in mask.iter().enumerate() {
                    if on {
                        m[(i, i)] = C64::new(1.0, 0.0);
                    }
                }
                m
            }
            Projector::Dense(m) => m.clone(),
        }
    }

    pub fn apply_vec(&self, v: &DVector<C64>) -> DVector<C64> {
        match self {
            Projector::Mask(mask) => DVector::from_iterator(
                v.len(),
                v.iter()
                    .zip(mask.iter())
                    .map(|(z, &on)| if on { *z } else { C64::new(0.0, 0.0) }),
            ),
            Projector::Dense(m) => m * v,
        }
    }

    /// `||P v||^2` without allocating for the mask case.
    pub fn weight(&self, v: &DVector<C64>) -> f64 {
        match self {
            Projector::Mask(mask) => v
                .iter()
                .zip(mask.iter())
                .filter(|(_, &on)| on)
                .map(|(z, _)| z.norm_sqr())
                .sum(),
            Projector::Dense(m) => (m * v).norm_squared(),
        }
    }

    /// Collapse rule: returns the normalized projected state and the
    /// outcome probability `n^2 = ||P psi||^2`.
    pub fn collapse(&self, psi: &QuantumState) -> Result<(QuantumState, f64)> {
        apply_and_norm_vec(|v| self.apply_vec(v), self.dim(), psi)
    }
}

fn apply_and_norm_vec(
    apply: impl Fn(&DVector<C64>) -> DVector<C64>,
    dim: usize,
    psi: &QuantumState,
) -> Result<(QuantumState, f64)> {
    if psi.dim() != dim {
        return Err(Error::dims("apply_and_norm: dimension mismatch"));
    }
    let projected = apply(psi.amplitudes());
    let n_sq = projected.norm_squared();
    if n_sq <= COLLAPSE_FLOOR {
        return Err(Error::AnnihilatedState { norm_sq: n_sq });
    }
    let out = QuantumState::new(projected, psi.basis_label())?;
    Ok((out, n_sq))
}

/// Applies an arbitrary operator matrix and returns the renormalized result
/// together with the squared norm of the image.
pub fn apply_and_norm(a: &DMatrix<C64>, psi: &QuantumState) -> Result<(QuantumState, f64)> {
    apply_and_norm_vec(|v| a * v, a.ncols(), psi)
}

/// Energy uncertainty `Delta H = sqrt(<H^2> - <H>^2)` in the state `psi`.
/// Tiny negative round-off under the square root is clamped to zero.
pub fn energy_uncertainty(h: &HermitianOperator, psi: &QuantumState) -> Result<f64> {
    if psi.dim() != h.dim() {
        return Err(Error::dims("energy_uncertainty: dimension mismatch"));
    }
    let h_psi = h.matrix() * psi.amplitudes();
    let h2 = h_psi.norm_squared();
    let h1 = psi.amplitudes().dotc(&h_psi).re;
    Ok((h2 - h1 * h1).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn sigma_x(omega: f64) -> HermitianOperator {
        HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[0.0, omega, omega, 0.0]))
            .unwrap()
    }

    #[test]
    fn projector_full_and_empty_region() {
        let full = make_projector(&[0, 1, 2], 3).unwrap();
        assert_eq!(full.matrix(), DMatrix::identity(3, 3));
        let empty = make_projector(&[], 3).unwrap();
        assert_eq!(empty.matrix(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn projector_diagonal_idempotent_exactly() {
        let p = make_projector(&[5, 6, 7], 8).unwrap();
        let m = p.matrix();
        assert_eq!(&m * &m, m);
        for i in 0..8 {
            let expect = if i >= 5 { 1.0 } else { 0.0 };
            assert_eq!(m[(i, i)], C64::new(expect, 0.0));
        }
        // complement sums to the identity
        let sum = &m + p.complement().matrix();
        assert_eq!(sum, DMatrix::identity(8, 8));
    }

    #[test]
    fn projector_rejects_out_of_range_region() {
        assert!(matches!(
            make_projector(&[8], 8),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn propagator_zero_time_is_identity() {
        let h = sigma_x(1.3);
        let u = h.propagator(0.0);
        let defect = (u.matrix() - DMatrix::<C64>::identity(2, 2))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(defect < 1e-14);
    }

    #[test]
    fn propagator_diagonal_generator() {
        let h = HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .unwrap();
        let u = h.propagator(std::f64::consts::FRAC_PI_2);
        assert!((u.matrix()[(0, 0)] - C64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((u.matrix()[(1, 1)] - C64::new(0.0, 1.0)).norm() < 1e-12);
        assert!(u.matrix()[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn propagator_matches_taylor_series_oracle() {
        // Independent oracle: 6th-order Taylor series of exp(-i H t) at t = 0.01.
        let t = 0.01;
        let h = sigma_x(1.0);
        let mut taylor = DMatrix::<C64>::identity(2, 2);
        let mut term = DMatrix::<C64>::identity(2, 2);
        for k in 1..=6 {
            term = (&term * h.matrix()) * (C64::new(0.0, -t) / C64::from(k as f64));
            taylor += &term;
        }
        let u = h.propagator(t);
        let defect = max_abs(&(u.matrix() - taylor));
        assert!(defect < 1e-14, "defect {defect}");
        // closed form: cos(t) on the diagonal, -i sin(t) off it
        assert!((u.matrix()[(0, 0)] - C64::new(t.cos(), 0.0)).norm() < 1e-14);
        assert!((u.matrix()[(0, 1)] - C64::new(0.0, -t.sin())).norm() < 1e-14);
    }

    #[test]
    fn non_hermitian_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            HermitianOperator::from_real(m),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn apply_and_norm_identity() {
        let psi = QuantumState::from_components(&[(0.6, 0.0), (0.0, 0.8)], "site").unwrap();
        let (out, n_sq) = apply_and_norm(&DMatrix::identity(2, 2), &psi).unwrap();
        assert!((n_sq - 1.0).abs() < 1e-12);
        assert!((out.amplitudes() - psi.amplitudes()).norm() < 1e-12);
    }

    #[test]
    fn apply_and_norm_orthogonal_projection_annihilates() {
        let psi = QuantumState::from_components(&[(1.0, 0.0), (0.0, 0.0)], "site").unwrap();
        let p = make_projector(&[1], 2).unwrap();
        assert!(matches!(
            p.collapse(&psi),
            Err(Error::AnnihilatedState { .. })
        ));
    }

    #[test]
    fn apply_and_norm_pythagorean_case() {
        let psi = QuantumState::from_components(&[(0.6, 0.0), (0.8, 0.0)], "site").unwrap();
        let p = make_projector(&[0], 2).unwrap();
        let (out, n_sq) = p.collapse(&psi).unwrap();
        assert!((n_sq - 0.36).abs() < 1e-12);
        assert!((out.amplitudes()[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(out.amplitudes()[1].norm() < 1e-14);
    }

    #[test]
    fn energy_uncertainty_eigenstate_is_zero() {
        let h = HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]))
            .unwrap();
        let psi = QuantumState::basis_state(2, 1, "level").unwrap();
        assert!(energy_uncertainty(&h, &psi).unwrap() < 1e-14);
    }

    #[test]
    fn energy_uncertainty_closed_forms() {
        let omega = 0.7;
        let psi = QuantumState::basis_state(2, 0, "level").unwrap();
        let dh = energy_uncertainty(&sigma_x(omega), &psi).unwrap();
        assert!((dh - omega).abs() < 1e-12);

        let h = HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]))
            .unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = QuantumState::from_components(&[(s, 0.0), (s, 0.0)], "level").unwrap();
        assert!((energy_uncertainty(&h, &psi).unwrap() - 0.5).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn random_hermitian(n: usize, entries: &[f64]) -> HermitianOperator {
            let mut m = DMatrix::<C64>::zeros(n, n);
            let mut it = entries.iter().cycle();
            for i in 0..n {
                for j in i..n {
                    let re = *it.next().unwrap();
                    let im = *it.next().unwrap();
                    if i == j {
                        m[(i, i)] = C64::new(re, 0.0);
                    } else {
                        m[(i, j)] = C64::new(re, im);
                        m[(j, i)] = C64::new(re, -im);
                    }
                }
            }
            HermitianOperator::new(m).unwrap()
        }

        fn random_state(n: usize, entries: &[f64]) -> QuantumState {
            let mut it = entries.iter().cycle();
            let v = DVector::from_iterator(
                n,
                (0..n).map(|_| C64::new(*it.next().unwrap(), *it.next().unwrap() + 0.1)),
            );
            QuantumState::new(v, "rand").unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn propagator_unitary_and_group_property(
                n in 2usize..=16,
                entries in proptest::collection::vec(-1.0f64..1.0, 64),
                t1 in 0.0f64..10.0,
                t2 in 0.0f64..10.0,
            ) {
                let h = random_hermitian(n, &entries);
                let u1 = h.propagator(t1);
                prop_assert!(u1.unitarity_defect() < UNITARITY_TOL);
                let u2 = h.propagator(t2);
                let u12 = h.propagator(t1 + t2);
                let defect = max_abs(&(u1.matrix() * u2.matrix() - u12.matrix()));
                prop_assert!(defect < 1e-8);
            }

            #[test]
            fn collapse_preserves_total_probability(
                n in 2usize..=12,
                entries in proptest::collection::vec(-1.0f64..1.0, 48),
                split in 1usize..11,
            ) {
                let split = split.min(n - 1);
                let psi = random_state(n, &entries);
                let pi = make_projector(&(0..split).collect::<Vec<_>>(), n).unwrap();
                let w_pi = pi.weight(psi.amplitudes());
                let w_bar = pi.complement().weight(psi.amplitudes());
                prop_assert!((w_pi + w_bar - 1.0).abs() < 1e-12);
            }

            #[test]
            fn uncertainty_invariant_under_identity_shift(
                n in 2usize..=10,
                entries in proptest::collection::vec(-1.0f64..1.0, 48),
                shift in -5.0f64..5.0,
            ) {
                let h = random_hermitian(n, &entries);
                let psi = random_state(n, &entries);
                let shifted = HermitianOperator::new(
                    h.matrix() + DMatrix::<C64>::identity(n, n) * C64::from(shift),
                ).unwrap();
                let a = energy_uncertainty(&h, &psi).unwrap();
                let b = energy_uncertainty(&shifted, &psi).unwrap();
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
