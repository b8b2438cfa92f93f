//! Assembles the closed-form detection-time distribution from a hazard
//! series: cumulative hazard, density, survival, total probability, mean
//! detection time, the detection-time POVM and the integral-equation
//! residual check.

use nalgebra::{DMatrix, DVector};

use crate::conditional::{ConditionalEvolution, HazardSeries};
use crate::error::{Error, Result};
use crate::linalg::{HermitianOperator, QuantumState, C64};

/// Survival below this is numerically meaningless; reported hazards are
/// frozen from there on and the region flagged.
const SURVIVAL_CAP: f64 = 1e-12;
const NEGATIVE_HAZARD_TOL: f64 = 1e-12;

/// Detection-time distribution on the dt grid `t_k = k dt`.
///
/// Horizon truncation is explicit: `tail` carries the never-detected mass
/// within the horizon and nothing is silently renormalized.
#[derive(Debug, Clone)]
pub struct DetectionDistribution {
    pub dt: f64,
    pub times: Vec<f64>,
    /// hazard w(t_k), capped (and flagged) once survival underflows
    pub w: Vec<f64>,
    /// cumulative hazard, trapezoidal, u(0) = 0
    pub u: Vec<f64>,
    /// density w(t) e^{-u(t)}
    pub density: Vec<f64>,
    /// survival e^{-u(t)}
    pub survival: Vec<f64>,
    /// total detection probability over the horizon, 1 - e^{-u(T_max)}
    pub total: f64,
    /// never-detected mass within the horizon, e^{-u(T_max)}
    pub tail: f64,
    /// first grid index where survival fell below the cap, if any
    pub capped_from: Option<usize>,
}

/// Builds the distribution from hazard samples over `[dt, t_max]`.
///
/// The quadrature is trapezoidal on the dt grid (the hazard is only defined
/// at grid points), with the hazard at t = 0 taken as w(t_1) so that a
/// constant hazard integrates exactly.
pub fn build_distribution(hs: &HazardSeries, t_max: f64) -> Result<DetectionDistribution> {
    let dt = hs.dt;
    let k_count = ((t_max / dt) + 1e-9).floor() as usize;
    if k_count < 1 {
        return Err(Error::validation("t_max must be at least dt"));
    }
    if hs.len() < k_count {
        return Err(Error::validation(format!(
            "hazard series has {} samples but the horizon needs {}",
            hs.len(),
            k_count
        )));
    }

    let mut w = Vec::with_capacity(k_count);
    for (k, &wk) in hs.w.iter().take(k_count).enumerate() {
        if wk < -NEGATIVE_HAZARD_TOL {
            return Err(Error::validation(format!(
                "negative hazard {wk:.3e} at step {} (upstream bug)",
                k + 1
            )));
        }
        w.push(wk.max(0.0));
    }

    let mut u = Vec::with_capacity(k_count);
    let mut survival = Vec::with_capacity(k_count);
    let mut capped_from = None;
    let mut u_prev = 0.0;
    let mut w_prev = w[0]; // w(0) := w(t_1)
    for (k, wk) in w.iter_mut().enumerate() {
        if capped_from.is_some() {
            *wk = w_prev; // frozen
        }
        let u_k = u_prev + 0.5 * (w_prev + *wk) * dt;
        let s_k = (-u_k).exp();
        if capped_from.is_none() && s_k < SURVIVAL_CAP {
            capped_from = Some(k);
        }
        u.push(u_k);
        survival.push(s_k);
        u_prev = u_k;
        w_prev = *wk;
    }

    let density: Vec<f64> = w
        .iter()
        .zip(survival.iter())
        .map(|(&wk, &sk)| wk * sk)
        .collect();
    let tail = *survival.last().expect("k_count >= 1");
    let times = hs.times[..k_count].to_vec();

    Ok(DetectionDistribution {
        dt,
        times,
        w,
        u,
        density,
        survival,
        total: 1.0 - tail,
        tail,
        capped_from,
    })
}

impl DetectionDistribution {
    /// Total probability that detection happens within the horizon,
    /// `1 - e^{-u(T_max)}`.
    pub fn total_probability(&self) -> f64 {
        self.total
    }

    /// Detection is certain within the horizon (up to 1e-6 of mass).
    pub fn is_certain_within_horizon(&self) -> bool {
        self.tail < 1e-6
    }

    /// Trapezoidal `int t P(t) dt` over the horizon and the conditional
    /// mean given detection. The tail is reported alongside so callers see
    /// the truncation.
    pub fn mean_detection_time(&self) -> MeanDetectionTime {
        // trapezoid of f(t) = t P(t) with the t = 0 node contributing 0
        let k = self.times.len();
        let f = |i: usize| self.times[i] * self.density[i];
        let mut sum = 0.5 * f(k - 1);
        for i in 0..k - 1 {
            sum += f(i);
        }
        let mean = sum * self.dt;
        let conditional_mean = if self.total >= 1e-9 {
            Some(mean / self.total)
        } else {
            None
        };
        MeanDetectionTime {
            mean,
            conditional_mean,
            tail: self.tail,
        }
    }

    /// Max residual of the integral-equation form
    /// `P(t) = w(t) [1 - int_0^t P]`, normalized by max P, over the index
    /// window `[lo, hi)`.
    pub fn integral_equation_residual_window(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.times.len());
        let mut cum = 0.0; // trapezoid of P from 0, with P(0) := w(0)
        let mut p_prev = self.w[0]; // density at t=0 (survival 1)
        let mut max_res: f64 = 0.0;
        let max_p = self
            .density
            .iter()
            .take(hi.max(1))
            .fold(0.0_f64, |a, &b| a.max(b))
            .max(f64::MIN_POSITIVE);
        for k in 0..hi {
            cum += 0.5 * (p_prev + self.density[k]) * self.dt;
            p_prev = self.density[k];
            if k < lo {
                continue;
            }
            let res = self.density[k] - self.w[k] * (1.0 - cum);
            max_res = max_res.max(res.abs());
        }
        max_res / max_p
    }

    /// Residual over the whole grid.
    pub fn integral_equation_residual(&self) -> f64 {
        self.integral_equation_residual_window(0, self.times.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanDetectionTime {
    pub mean: f64,
    /// mean given detection (mean/total); `None` when essentially nothing
    /// was detected
    pub conditional_mean: Option<f64>,
    pub tail: f64,
}

/// Detection-time POVM `E(t_k) = K^dag(t_k) K(t_k)` with
/// `K(t) = e^{-u(t)/2}/sqrt(dt) pi e^{-iH dt} e^{-iHbar (t-dt)}`.
///
/// All `E_k` share the base `M = U^dag pi U` conjugated by the unitary
/// `e^{-iHbar (t-dt)}` and scaled by `e^{-u}/dt`, so the set is stored in
/// that factorized form; eigenvalues follow exactly from one
/// eigendecomposition of `M`, and individual operators are materialized on
/// demand. `E_bar` is formed by subtraction, not by building the
/// never-detected Kraus chain.
pub struct PovmSet {
    dt: f64,
    /// e^{-u(t_k)} per grid point
    weights: Vec<f64>,
    /// M = U^dag pi U (positive semidefinite, eigenvalues of pi)
    base: HermitianOperator,
    hbar: HermitianOperator,
    /// `<psi0|E_k|psi0>` computed through the operator route
    expectations: Vec<f64>,
    /// `1 - sum <psi0|E_k|psi0> dt`
    e_bar_expectation: f64,
}

/// Builds the POVM for a conditional evolution and the distribution it
/// produced. The POVM is state-dependent by construction: it carries the
/// cumulative hazard of `dd`, which was computed from `ce`'s initial state.
pub fn povm_set(ce: &ConditionalEvolution, dd: &DetectionDistribution) -> Result<PovmSet> {
    if (ce.dt() - dd.dt).abs() > 1e-12 * ce.dt() {
        return Err(Error::validation(
            "distribution was not built on this evolution's dt grid",
        ));
    }
    let u_mat = ce.step_propagator().matrix();
    let pi_u = {
        // pi U, then M = (pi U)^dag (pi U)
        let mut m = u_mat.clone();
        match ce.projector() {
            crate::linalg::Projector::Mask(mask) => {
                for (i, &on) in mask.iter().enumerate() {
                    if !on {
                        for j in 0..m.ncols() {
                            m[(i, j)] = C64::new(0.0, 0.0);
                        }
                    }
                }
                m
            }
            crate::linalg::Projector::Dense(p) => p * &m,
        }
    };
    let base = HermitianOperator::new({
        let m = pi_u.adjoint() * &pi_u;
        (&m + m.adjoint()) * C64::from(0.5)
    })?;

    // <psi0|E_k|psi0> = ||K(t_k) psi0||^2 through the operator pieces
    let mut expectations = Vec::with_capacity(dd.times.len());
    for k in 1..=dd.times.len() {
        let psibar = ce.pre_step_vec(k);
        let amp = &pi_u * psibar;
        let weight = dd.survival[k - 1];
        expectations.push(weight / dd.dt * amp.norm_squared());
    }
    let covered: f64 = expectations.iter().sum::<f64>() * dd.dt;

    Ok(PovmSet {
        dt: dd.dt,
        weights: dd.survival.clone(),
        base,
        hbar: ce.conditional_hamiltonian_op().clone(),
        expectations,
        e_bar_expectation: 1.0 - covered,
    })
}

impl PovmSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expectations(&self) -> &[f64] {
        &self.expectations
    }

    pub fn e_bar_expectation(&self) -> f64 {
        self.e_bar_expectation
    }

    /// `<psi0|E_bar|psi0> + sum <psi0|E_k|psi0> dt - 1`. The two pieces are
    /// computed through independent routes only in the tests; here the
    /// defect measures the internal consistency of the stored set.
    pub fn resolution_identity_defect(&self) -> f64 {
        let covered: f64 = self.expectations.iter().sum::<f64>() * self.dt;
        (self.e_bar_expectation + covered - 1.0).abs()
    }

    /// Smallest eigenvalue over all E_k. Exact through the factorization:
    /// every E_k is a unitary conjugation of `(e^{-u_k}/dt) M`, so its
    /// spectrum is the spectrum of M scaled by a nonnegative factor.
    pub fn min_eigenvalue(&self) -> f64 {
        let lambda_min = self
            .base
            .eigen()
            .values()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let factor = self
            .weights
            .iter()
            .map(|&s| s / self.dt)
            .fold(0.0_f64, f64::max);
        if lambda_min >= 0.0 {
            lambda_min * self.weights.iter().fold(f64::INFINITY, |a, &b| a.min(b)) / self.dt
        } else {
            lambda_min * factor
        }
    }

    /// Materializes `E_k` densely (meant for modest N and for validation).
    pub fn operator(&self, k: usize) -> DMatrix<C64> {
        let t_prev = (k as f64 - 1.0) * self.dt;
        let v = self.hbar.eigen().propagator_matrix(t_prev);
        let conj = v.adjoint() * self.base.matrix() * &v;
        conj * C64::from(self.weights[k - 1] / self.dt)
    }

    /// Materializes `E_bar = 1 - sum_k E_k dt` densely.
    pub fn e_bar_operator(&self) -> DMatrix<C64> {
        let n = self.base.dim();
        let mut acc = DMatrix::<C64>::identity(n, n);
        for k in 1..=self.len() {
            acc -= self.operator(k) * C64::from(self.dt);
        }
        acc
    }

    /// `<psi|E_k|psi>` from the materialized operator path.
    pub fn expectation_dense(&self, k: usize, psi: &QuantumState) -> f64 {
        let e = self.operator(k);
        let v: DVector<C64> = &e * psi.amplitudes();
        psi.amplitudes().dotc(&v).re
    }
}
