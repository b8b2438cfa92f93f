//! Conditional (no-detection-yet) evolution under the projected Hamiltonian
//! `Hbar = pibar H pibar`, and the hazard rate w(t) = p(t)/dt it produces.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{HermitianOperator, Projector, QuantumState, UnitaryPropagator, C64};

/// Relative tolerance for deciding a query time sits on the dt grid.
const GRID_TOL: f64 = 1e-9;
/// `pibar psi0 = psi0` must hold to this tolerance at construction.
const SUBSPACE_TOL: f64 = 1e-10;

/// `Hbar = pibar H pibar`. Rows and columns inside the detected subspace
/// vanish, so the result is Hermitian by construction.
pub fn conditional_hamiltonian(h: &HermitianOperator, pi: &Projector) -> Result<HermitianOperator> {
    if pi.dim() != h.dim() {
        return Err(Error::dims(format!(
            "projector dim {} vs Hamiltonian dim {}",
            pi.dim(),
            h.dim()
        )));
    }
    match pi {
        Projector::Mask(mask) => {
            // zero out detected rows and columns; exact for 0/1 masks
            let mut m = h.matrix().clone();
            for (i, &detected) in mask.iter().enumerate() {
                if detected {
                    for j in 0..m.ncols() {
                        m[(i, j)] = C64::new(0.0, 0.0);
                        m[(j, i)] = C64::new(0.0, 0.0);
                    }
                }
            }
            HermitianOperator::new(m)
        }
        Projector::Dense(p) => {
            let n = p.nrows();
            let pibar = nalgebra::DMatrix::identity(n, n) - p;
            let m = &pibar * h.matrix() * &pibar;
            // symmetrize away the last bits of round-off
            let sym = (&m + m.adjoint()) * C64::from(0.5);
            HermitianOperator::new(sym)
        }
    }
}

/// `epsilon = 1 - |<psi| e^{-iH dt} |psi>|`, the paper's small-dt validity
/// measure. Warn when it exceeds [`ConditionalEvolution::EPSILON_WARN`].
pub fn validity_epsilon(h: &HermitianOperator, psi: &QuantumState, dt: f64) -> Result<f64> {
    if psi.dim() != h.dim() {
        return Err(Error::dims("validity_epsilon: dimension mismatch"));
    }
    let eig = h.eigen();
    let c = eig.coefficients(psi.amplitudes());
    let amp: C64 = c
        .iter()
        .zip(eig.values().iter())
        .map(|(cj, &e)| cj.norm_sqr() * C64::from_polar(1.0, -e * dt))
        .sum();
    Ok((1.0 - amp.norm()).max(0.0))
}

/// Per-step detection probabilities `p_k` and the hazard `w_k = p_k/dt` on
/// the grid `t_k = k dt`.
#[derive(Debug, Clone)]
pub struct HazardSeries {
    pub dt: f64,
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub w: Vec<f64>,
}

impl HazardSeries {
    /// Builds a series from hazard samples (used when feeding analytic
    /// hazards, e.g. the classical packet oracle, into the distribution).
    pub fn from_hazard_samples(dt: f64, w: Vec<f64>) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::validation("dt must be > 0"));
        }
        let times = (1..=w.len()).map(|k| k as f64 * dt).collect();
        let p = w.iter().map(|&wk| wk * dt).collect();
        Ok(Self { dt, times, p, w })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Precomputed machinery for the closed-form conditional evolution
/// `psi_c(t) = e^{-iH dt} e^{-iHbar (t-dt)} psi0`.
///
/// The state at any grid point is evaluated from the two cached spectral
/// decompositions rather than by stepping, so there is no error
/// accumulation over long horizons and O(N^2) access per grid point.
pub struct ConditionalEvolution {
    h: HermitianOperator,
    hbar: HermitianOperator,
    pi: Projector,
    psi0: QuantumState,
    dt: f64,
    u_dt: UnitaryPropagator,
    /// psi0 in the Hbar eigenbasis.
    coeffs0: DVector<C64>,
}

impl ConditionalEvolution {
    /// Default threshold above which the small-dt approximation is flagged
    /// as untrustworthy.
    pub const EPSILON_WARN: f64 = 0.01;

    pub fn new(h: HermitianOperator, pi: Projector, psi0: QuantumState, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::validation("dt must be > 0"));
        }
        if pi.dim() != h.dim() || psi0.dim() != h.dim() {
            return Err(Error::dims("conditional evolution: dimension mismatch"));
        }
        let pibar = pi.complement();
        let residual = (pibar.apply_vec(psi0.amplitudes()) - psi0.amplitudes()).norm();
        if residual > SUBSPACE_TOL {
            return Err(Error::validation(format!(
                "initial state is not in the undetected subspace (||pibar psi0 - psi0|| = {residual:.3e})"
            )));
        }
        let hbar = conditional_hamiltonian(&h, &pi)?;
        let u_dt = h.propagator(dt);
        let coeffs0 = hbar.eigen().coefficients(psi0.amplitudes());
        Ok(Self {
            h,
            hbar,
            pi,
            psi0,
            dt,
            u_dt,
            coeffs0,
        })
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.h
    }

    pub fn conditional_hamiltonian_op(&self) -> &HermitianOperator {
        &self.hbar
    }

    pub fn projector(&self) -> &Projector {
        &self.pi
    }

    pub fn initial_state(&self) -> &QuantumState {
        &self.psi0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_propagator(&self) -> &UnitaryPropagator {
        &self.u_dt
    }

    /// `psibar_c(t_k - dt) = e^{-iHbar (k-1) dt} psi0` as a raw vector.
    pub fn pre_step_vec(&self, k: usize) -> DVector<C64> {
        self.hbar
            .eigen()
            .evolve_coefficients(&self.coeffs0, (k as f64 - 1.0) * self.dt)
    }

    /// The pre-step conditional state `psibar_c(t - dt)`.
    pub fn pre_step_state(&self, k: usize) -> Result<QuantumState> {
        if k < 1 {
            return Err(Error::validation("step index must be >= 1"));
        }
        QuantumState::new(self.pre_step_vec(k), self.psi0.basis_label())
    }

    /// Conditional state at step `k` (time `k dt`).
    pub fn conditional_state(&self, k: usize) -> Result<QuantumState> {
        if k < 1 {
            return Err(Error::validation("step index must be >= 1"));
        }
        let v = self.u_dt.apply_vec(&self.pre_step_vec(k));
        QuantumState::new(v, self.psi0.basis_label())
    }

    /// Conditional state at time `t`, which must lie exactly on the dt grid
    /// with `t >= dt`. Off-grid times are an error; interpolation and
    /// rounding are the caller's business.
    pub fn conditional_state_at(&self, t: f64) -> Result<QuantumState> {
        let k = (t / self.dt).round();
        if k < 1.0 || (t - k * self.dt).abs() > GRID_TOL * self.dt.max(t.abs()) {
            return Err(Error::OffGrid { t, dt: self.dt });
        }
        self.conditional_state(k as usize)
    }

    /// Per-step detection probability `p_k = <psi_c(t_k)|pi|psi_c(t_k)>`.
    pub fn step_probability(&self, k: usize) -> f64 {
        let v = self.u_dt.apply_vec(&self.pre_step_vec(k));
        self.pi.weight(&v).clamp(0.0, 1.0)
    }

    /// Hazard series over `k = 1..=k_count`, reusing the single cached
    /// eigendecomposition of `Hbar` across all grid points.
    pub fn hazard_series(&self, k_count: usize) -> Result<HazardSeries> {
        if k_count < 1 {
            return Err(Error::validation("hazard series needs K >= 1"));
        }
        let mut times = Vec::with_capacity(k_count);
        let mut p = Vec::with_capacity(k_count);
        let mut w = Vec::with_capacity(k_count);
        for k in 1..=k_count {
            let pk = self.step_probability(k);
            times.push(k as f64 * self.dt);
            p.push(pk);
            w.push(pk / self.dt);
        }
        Ok(HazardSeries {
            dt: self.dt,
            times,
            p,
            w,
        })
    }

    /// Validity measure for this evolution's own (psi0, dt).
    pub fn epsilon(&self) -> f64 {
        validity_epsilon(&self.h, &self.psi0, self.dt).expect("dimensions checked at construction")
    }
}
