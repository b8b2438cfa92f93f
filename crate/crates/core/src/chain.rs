//! Ground-truth stroboscopic simulation: alternate unitary steps with
//! pibar/pi projections. This is the exact product chain the closed-form
//! distribution approximates, plus the unitary branching ledger.

use crate::error::{Error, Result};
use crate::linalg::{HermitianOperator, Projector, QuantumState, COLLAPSE_FLOOR};

const SUBSPACE_TOL: f64 = 1e-10;
/// Runs stop once the remaining survival probability drops below this.
pub const DEFAULT_SURVIVAL_FLOOR: f64 = 1e-12;
/// The ledger exists for validation; cap it so nobody runs it for 10^6 steps.
pub const LEDGER_MAX_STEPS: usize = 64;

/// Exact detection-time statistics of the measurement chain.
///
/// The chain stores normalized conditional states and per-step
/// probabilities; unnormalized `V^k psi0` products would underflow
/// exponentially while probabilities stay well-scaled.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub dt: f64,
    pub times: Vec<f64>,
    /// Conditional per-step detection probabilities p_cond(t_k).
    pub p_cond: Vec<f64>,
    /// Unconditional detection probability P(t_k) = p_cond(t_k) S_{k-1}.
    pub p_exact: Vec<f64>,
    /// Survival S_k = probability undetected through t_k.
    pub survival: Vec<f64>,
    pub terminated_early: bool,
    /// Conditional (undetected, normalized) state after the last recorded step.
    pub final_state: Option<QuantumState>,
}

impl ChainResult {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    /// S_K + sum P(t_k); equals 1 up to round-off when the run was not
    /// terminated early.
    pub fn probability_budget(&self) -> f64 {
        self.survival.last().copied().unwrap_or(1.0) + self.p_exact.iter().sum::<f64>()
    }

    pub fn total_detected(&self) -> f64 {
        self.p_exact.iter().sum()
    }

    /// Mean of t over the (possibly sub-normalized) detection record,
    /// together with the conditional mean given detection.
    pub fn mean_detection_time(&self) -> (f64, Option<f64>) {
        let total = self.total_detected();
        let mean: f64 = self
            .times
            .iter()
            .zip(self.p_exact.iter())
            .map(|(&t, &p)| t * p)
            .sum();
        let conditional = if total >= 1e-9 {
            Some(mean / total)
        } else {
            None
        };
        (mean, conditional)
    }

    /// First index at which the cumulative detected mass reaches half of
    /// the total (the median detection step), if anything was detected.
    pub fn median_step(&self) -> Option<usize> {
        let total = self.total_detected();
        if total < 1e-12 {
            return None;
        }
        let mut cum = 0.0;
        for (k, &p) in self.p_exact.iter().enumerate() {
            cum += p;
            if cum >= 0.5 * total {
                return Some(k + 1);
            }
        }
        Some(self.p_exact.len())
    }
}

fn check_initial_state(pi: &Projector, psi0: &QuantumState) -> Result<()> {
    let pibar = pi.complement();
    let residual = (pibar.apply_vec(psi0.amplitudes()) - psi0.amplitudes()).norm();
    if residual > SUBSPACE_TOL {
        return Err(Error::validation(format!(
            "initial state is not in the undetected subspace (residual {residual:.3e})"
        )));
    }
    Ok(())
}

/// Runs the exact chain: repeatedly apply `U = e^{-iH dt}`, record the
/// detection weight `||pi U psi||^2` of the normalized conditional state,
/// then collapse with `pibar` and renormalize.
pub fn run_chain(
    h: &HermitianOperator,
    pi: &Projector,
    psi0: &QuantumState,
    dt: f64,
    k_count: usize,
    survival_floor: f64,
) -> Result<ChainResult> {
    if dt <= 0.0 || k_count < 1 {
        return Err(Error::validation("run_chain needs dt > 0 and K >= 1"));
    }
    if pi.dim() != h.dim() || psi0.dim() != h.dim() {
        return Err(Error::dims("run_chain: dimension mismatch"));
    }
    check_initial_state(pi, psi0)?;

    let u = h.propagator(dt);
    let pibar = pi.complement();
    let mut psi = psi0.amplitudes().clone();
    let mut survival_prev = 1.0;

    let mut times = Vec::with_capacity(k_count);
    let mut p_cond = Vec::with_capacity(k_count);
    let mut p_exact = Vec::with_capacity(k_count);
    let mut survival = Vec::with_capacity(k_count);
    let mut terminated_early = false;
    let mut final_state = None;

    for k in 1..=k_count {
        let phi = u.apply_vec(&psi);
        let p = pi.weight(&phi).clamp(0.0, 1.0);
        times.push(k as f64 * dt);
        p_cond.push(p);
        p_exact.push(p * survival_prev);
        let s = survival_prev * (1.0 - p);
        survival.push(s);
        survival_prev = s;

        let remaining = pibar.apply_vec(&phi);
        let n_sq = remaining.norm_squared();
        if n_sq <= COLLAPSE_FLOOR {
            // the projection annihilated the undetected branch: detection
            // was certain at this step
            terminated_early = k < k_count;
            break;
        }
        psi = remaining / num_complex::Complex64::from(n_sq.sqrt());
        if s < survival_floor {
            terminated_early = k < k_count;
            final_state = QuantumState::new(psi.clone(), psi0.basis_label()).ok();
            break;
        }
        final_state = QuantumState::new(psi.clone(), psi0.basis_label()).ok();
    }

    Ok(ChainResult {
        dt,
        times,
        p_cond,
        p_exact,
        survival,
        terminated_early,
        final_state,
    })
}

/// Norm bookkeeping of the unitary branching picture: one branch per
/// possible detection step plus the undetected branch.
#[derive(Debug, Clone)]
pub struct BranchLedger {
    pub dt: f64,
    /// weight of the branch "detected at step j" (index j-1). Unitaries
    /// after the detection preserve the norm, so the weight is constant in
    /// later rows.
    pub detected: Vec<f64>,
    /// weight of the undetected branch after step k (index k-1).
    pub undetected: Vec<f64>,
}

/// A single row of the ledger: the superposition present at time t_k.
pub struct LedgerRow<'a> {
    pub detected: &'a [f64],
    pub undetected: f64,
}

impl BranchLedger {
    pub fn row(&self, k: usize) -> LedgerRow<'_> {
        LedgerRow {
            detected: &self.detected[..k],
            undetected: self.undetected[k - 1],
        }
    }

    pub fn row_weight_sum(&self, k: usize) -> f64 {
        let row = self.row(k);
        row.detected.iter().sum::<f64>() + row.undetected
    }
}

/// Tracks the unnormalized products `V^{j-1} psi0` and records the squared
/// norms `||pi U V^{j-1} psi0||^2` (detection at step j) and
/// `||V^k psi0||^2` (still undetected).
pub fn branch_ledger(
    h: &HermitianOperator,
    pi: &Projector,
    psi0: &QuantumState,
    dt: f64,
    k_max: usize,
) -> Result<BranchLedger> {
    if !(1..=LEDGER_MAX_STEPS).contains(&k_max) {
        return Err(Error::validation(format!(
            "branch ledger supports 1..={LEDGER_MAX_STEPS} steps, got {k_max}"
        )));
    }
    if pi.dim() != h.dim() || psi0.dim() != h.dim() {
        return Err(Error::dims("branch_ledger: dimension mismatch"));
    }
    check_initial_state(pi, psi0)?;

    let u = h.propagator(dt);
    let pibar = pi.complement();
    let mut v = psi0.amplitudes().clone(); // V^{j-1} psi0, unnormalized
    let mut detected = Vec::with_capacity(k_max);
    let mut undetected = Vec::with_capacity(k_max);
    for _ in 1..=k_max {
        let phi = u.apply_vec(&v);
        detected.push(pi.weight(&phi));
        v = pibar.apply_vec(&phi);
        undetected.push(v.norm_squared());
    }
    Ok(BranchLedger {
        dt,
        detected,
        undetected,
    })
}

/// First-step probabilities across a ladder of dt values, with the fitted
/// log-log slope (2 in the Zeno regime) and the quadratic coefficient
/// `<psi0|H pi H|psi0>` for comparison.
#[derive(Debug, Clone)]
pub struct ZenoSweep {
    /// (dt, p_first_step), excluding underflowed points.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of ln p vs ln dt; `None` when degenerate (fewer
    /// than two usable points).
    pub slope: Option<f64>,
    /// `<psi0|H pi H|psi0>`, the leading quadratic coefficient.
    pub coefficient: f64,
    /// p/dt^2 at the smallest usable dt, the empirical coefficient.
    pub extrapolated_coefficient: Option<f64>,
}

pub fn zeno_sweep(
    h: &HermitianOperator,
    pi: &Projector,
    psi0: &QuantumState,
    dt_list: &[f64],
) -> Result<ZenoSweep> {
    if dt_list.len() < 3 {
        return Err(Error::validation("zeno sweep needs at least 3 dt values"));
    }
    if !dt_list.windows(2).all(|w| w[0] > w[1] && w[1] > 0.0) {
        return Err(Error::validation(
            "zeno sweep dt values must be strictly decreasing and positive",
        ));
    }
    check_initial_state(pi, psi0)?;

    let coefficient = {
        let h_psi = h.matrix() * psi0.amplitudes();
        pi.weight(&h_psi)
    };

    let mut points = Vec::new();
    for &dt in dt_list {
        let phi = h.propagator(dt).apply_vec(psi0.amplitudes());
        let p = pi.weight(&phi);
        if p < 1e-300 {
            continue; // underflow guard
        }
        points.push((dt, p));
    }

    let slope = if points.len() >= 2 {
        let xs: Vec<f64> = points.iter().map(|(dt, _)| dt.ln()).collect();
        let ys: Vec<f64> = points.iter().map(|(_, p)| p.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    } else {
        None
    };

    let extrapolated_coefficient = points.last().map(|&(dt, p)| p / (dt * dt));

    Ok(ZenoSweep {
        points,
        slope,
        coefficient,
        extrapolated_coefficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{energy_uncertainty, make_projector};
    use nalgebra::DMatrix;

    fn sigma_x(omega: f64) -> HermitianOperator {
        HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[0.0, omega, omega, 0.0]))
            .unwrap()
    }

    fn two_level() -> (HermitianOperator, Projector, QuantumState) {
        (
            sigma_x(1.0),
            make_projector(&[1], 2).unwrap(),
            QuantumState::basis_state(2, 0, "level").unwrap(),
        )
    }

    #[test]
    fn decoupled_detector_never_fires() {
        // [H, pibar] = 0 and psi0 in the pibar subspace
        let h = HermitianOperator::from_real(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.0, 0.5, -1.0, 0.0, 0.0, 0.0, 2.0],
        ))
        .unwrap();
        let pi = make_projector(&[2], 3).unwrap();
        let psi0 =
            QuantumState::from_components(&[(0.6, 0.0), (0.8, 0.0), (0.0, 0.0)], "site").unwrap();
        let r = run_chain(&h, &pi, &psi0, 0.2, 50, DEFAULT_SURVIVAL_FLOOR).unwrap();
        assert!(r.p_cond.iter().all(|&p| p < 1e-14));
        assert!(r.survival.iter().all(|&s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_level_chain_is_geometric() {
        let (h, pi, psi0) = two_level();
        let dt = 0.1_f64;
        let p = dt.sin().powi(2);
        let r = run_chain(&h, &pi, &psi0, dt, 40, DEFAULT_SURVIVAL_FLOOR).unwrap();
        for k in 0..40 {
            assert!((r.p_cond[k] - p).abs() < 1e-13);
            let expect = p * (1.0 - p).powi(k as i32);
            assert!((r.p_exact[k] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn roulette_mean_is_thirty_seven_minutes() {
        // constant per-step probability 1/37 with dt = 1 minute
        let p = 1.0_f64 / 37.0;
        let omega = p.sqrt().asin(); // sin^2(omega dt) = 1/37 at dt = 1
        let h = sigma_x(omega);
        let pi = make_projector(&[1], 2).unwrap();
        let psi0 = QuantumState::basis_state(2, 0, "level").unwrap();
        let r = run_chain(&h, &pi, &psi0, 1.0, 1500, DEFAULT_SURVIVAL_FLOOR).unwrap();
        let (_, cond) = r.mean_detection_time();
        assert!((cond.unwrap() - 37.0).abs() < 0.1);
    }

    #[test]
    fn probability_budget_closes() {
        let (h, pi, psi0) = two_level();
        let r = run_chain(&h, &pi, &psi0, 0.3, 200, DEFAULT_SURVIVAL_FLOOR).unwrap();
        assert!((r.probability_budget() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ledger_single_step_unitarity() {
        let (h, pi, psi0) = two_level();
        let l = branch_ledger(&h, &pi, &psi0, 0.1, 1).unwrap();
        assert!((l.row_weight_sum(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ledger_matches_chain_and_closed_form() {
        let (h, pi, psi0) = two_level();
        let dt = 0.1;
        let k = 20;
        let l = branch_ledger(&h, &pi, &psi0, dt, k).unwrap();
        let r = run_chain(&h, &pi, &psi0, dt, k, DEFAULT_SURVIVAL_FLOOR).unwrap();
        for j in 0..k {
            assert!((l.detected[j] - r.p_exact[j]).abs() < 1e-12);
        }
        // undetected weight at step k is cos(dt)^{2k}
        for j in 1..=k {
            let expect = dt.cos().powi(2 * j as i32);
            assert!((l.undetected[j - 1] - expect).abs() < 1e-13);
            assert!((l.row_weight_sum(j) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ledger_rejects_oversized_requests() {
        let (h, pi, psi0) = two_level();
        assert!(branch_ledger(&h, &pi, &psi0, 0.1, 65).is_err());
        assert!(branch_ledger(&h, &pi, &psi0, 0.1, 0).is_err());
    }

    #[test]
    fn zeno_two_level_slope_and_coefficient() {
        let (h, pi, psi0) = two_level();
        let sweep = zeno_sweep(&h, &pi, &psi0, &[1e-2, 5e-3, 2.5e-3, 1.25e-3]).unwrap();
        let slope = sweep.slope.unwrap();
        assert!((1.98..=2.02).contains(&slope), "slope {slope}");
        assert!((sweep.coefficient - 1.0).abs() < 1e-12); // Omega^2
        let emp = sweep.extrapolated_coefficient.unwrap();
        assert!((emp - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zeno_matches_energy_uncertainty_for_decay_projector() {
        // p/(dt)^2 -> (Delta H)^2 when pi = 1 - |psi0><psi0|
        let h = sigma_x(0.7);
        let psi0 = QuantumState::basis_state(2, 0, "level").unwrap();
        let pi = Projector::complement_of_state(&psi0);
        let sweep = zeno_sweep(&h, &pi, &psi0, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        let dh = energy_uncertainty(&h, &psi0).unwrap();
        assert!((sweep.coefficient - dh * dh).abs() < 1e-10);
        let emp = sweep.extrapolated_coefficient.unwrap();
        assert!((emp - dh * dh).abs() / (dh * dh) < 1e-4);
    }

    #[test]
    fn zeno_degenerate_when_psi0_is_eigenstate() {
        let h = HermitianOperator::from_real(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .unwrap();
        let pi = make_projector(&[1], 2).unwrap();
        let psi0 = QuantumState::basis_state(2, 0, "level").unwrap();
        let sweep = zeno_sweep(&h, &pi, &psi0, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        assert!(sweep.slope.is_none());
        assert!(sweep.points.is_empty());
        assert!(sweep.coefficient < 1e-14);
    }

    #[test]
    fn zeno_rejects_bad_ladders() {
        let (h, pi, psi0) = two_level();
        assert!(zeno_sweep(&h, &pi, &psi0, &[1e-2, 5e-3]).is_err());
        assert!(zeno_sweep(&h, &pi, &psi0, &[1e-3, 5e-3, 1e-2]).is_err());
    }

    #[test]
    fn unnormalized_product_identity_small_k() {
        // ||V^k psi0||^2 = prod (1 - p_cond) at small k
        let (h, pi, psi0) = two_level();
        let l = branch_ledger(&h, &pi, &psi0, 0.2, 12).unwrap();
        let r = run_chain(&h, &pi, &psi0, 0.2, 12, DEFAULT_SURVIVAL_FLOOR).unwrap();
        let mut prod = 1.0;
        for k in 0..12 {
            prod *= 1.0 - r.p_cond[k];
            assert!((l.undetected[k] - prod).abs() < 1e-12);
        }
    }
}
