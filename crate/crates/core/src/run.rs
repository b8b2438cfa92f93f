//! Orchestration: turn a [`RunConfig`] into engine output, check results,
//! and CSV/JSON artifacts.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::chain::{run_chain, zeno_sweep, ChainResult, DEFAULT_SURVIVAL_FLOOR};
use crate::conditional::ConditionalEvolution;
use crate::config::{CheckKind, Engine, RunConfig};
use crate::distribution::{build_distribution, povm_set, DetectionDistribution};
use crate::error::{Error, Result};
use crate::linalg::energy_uncertainty;
use crate::scenarios::{boundary_contamination, Scenario, ScenarioSpec, TunnelingPlan};

/// Sup-norm relative deviation bound for the cross-engine check.
pub const CROSS_ENGINE_TOL: f64 = 0.02;
/// Renewal-equation residual bound.
pub const RESIDUAL_TOL: f64 = 1e-3;
/// POVM completeness bound.
pub const POVM_RESOLUTION_TOL: f64 = 1e-6;
/// Positivity floor for POVM element eigenvalues.
pub const POVM_EIG_FLOOR: f64 = -1e-10;
/// Positivity floor for the expectation of the leftover element.
pub const E_BAR_FLOOR: f64 = -1e-8;
/// Accepted window for the Zeno log-log slope.
pub const ZENO_SLOPE_WINDOW: (f64, f64) = (1.9, 2.1);
/// Boundary-reflection warning threshold: probability in the outer 5%.
const BOUNDARY_EDGE_FRACTION: f64 = 0.05;
const BOUNDARY_WARN: f64 = 0.01;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// headline number the pass/fail decision was made on
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub t_origin: f64,
    pub total_detected: f64,
    pub conditional_mean: Option<f64>,
}

/// Summary written to the JSON output and printed by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub label: Option<String>,
    pub scenario: String,
    pub dt: f64,
    pub t_max: f64,
    pub steps: usize,
    /// small-dt validity indicator for the closed-form engine
    pub epsilon: Option<f64>,
    pub total_approx: Option<f64>,
    pub total_exact: Option<f64>,
    pub mean_approx: Option<f64>,
    pub mean_exact: Option<f64>,
    /// stage-1 summary when the scenario is a two-stage protocol; the main
    /// fields then describe stage 2
    pub stage1: Option<StageSummary>,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckOutcome>,
}

impl Report {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Everything a single run produced, before serialization.
pub struct RunOutput {
    pub scenario: Scenario,
    pub distribution: Option<DetectionDistribution>,
    pub chain: Option<ChainResult>,
    pub conditional: Option<ConditionalEvolution>,
    pub report: Report,
}

fn engine_outputs(
    sc: &Scenario,
    engine: Engine,
) -> Result<(
    Option<ConditionalEvolution>,
    Option<DetectionDistribution>,
    Option<ChainResult>,
)> {
    let k = sc.step_count();
    if k == 0 {
        return Err(Error::validation("horizon shorter than one step"));
    }
    let mut ce = None;
    let mut dd = None;
    let mut chain = None;
    if engine != Engine::Exact {
        let c = ConditionalEvolution::new(sc.h.clone(), sc.pi.clone(), sc.psi0.clone(), sc.dt)?;
        let hs = c.hazard_series(k)?;
        dd = Some(build_distribution(&hs, sc.t_max)?);
        ce = Some(c);
    }
    if engine != Engine::Approx {
        chain = Some(run_chain(
            &sc.h,
            &sc.pi,
            &sc.psi0,
            sc.dt,
            k,
            DEFAULT_SURVIVAL_FLOOR,
        )?);
    }
    Ok((ce, dd, chain))
}

fn run_check(
    kind: CheckKind,
    sc: &Scenario,
    ce: Option<&ConditionalEvolution>,
    dd: Option<&DetectionDistribution>,
    chain: Option<&ChainResult>,
) -> Result<CheckOutcome> {
    match kind {
        CheckKind::Zeno => {
            let dts: Vec<f64> = (0..4).map(|i| sc.dt / 2f64.powi(i)).collect();
            let sweep = zeno_sweep(&sc.h, &sc.pi, &sc.psi0, &dts)?;
            let slope = sweep.slope.unwrap_or(f64::NAN);
            let dh = energy_uncertainty(&sc.h, &sc.psi0)?;
            let passed = slope >= ZENO_SLOPE_WINDOW.0 && slope <= ZENO_SLOPE_WINDOW.1;
            Ok(CheckOutcome {
                name: "zeno",
                passed,
                value: slope,
                detail: format!(
                    "log-log slope {slope:.4} (window [{}, {}]), smallest-dt coefficient \
                     {:.6e}, (Delta H)^2 = {:.6e}",
                    ZENO_SLOPE_WINDOW.0,
                    ZENO_SLOPE_WINDOW.1,
                    sweep.coefficient,
                    dh * dh
                ),
            })
        }
        CheckKind::Povm => {
            let ce = ce.ok_or_else(|| {
                Error::validation("povm check needs the hazard engine (engine approx or both)")
            })?;
            let dd = dd.ok_or_else(|| Error::validation("povm check needs a distribution"))?;
            let set = povm_set(ce, dd)?;
            let defect = set.resolution_identity_defect();
            let min_eig = set.min_eigenvalue();
            let e_bar = set.e_bar_expectation();
            let passed =
                defect <= POVM_RESOLUTION_TOL && min_eig >= POVM_EIG_FLOOR && e_bar >= E_BAR_FLOOR;
            Ok(CheckOutcome {
                name: "povm",
                passed,
                value: defect,
                detail: format!(
                    "resolution defect {defect:.3e} (tol {POVM_RESOLUTION_TOL:.0e}), min element \
                     eigenvalue {min_eig:.3e}, leftover expectation {e_bar:.3e}"
                ),
            })
        }
        CheckKind::Residual => {
            let dd = dd.ok_or_else(|| {
                Error::validation("residual check needs the hazard engine (engine approx or both)")
            })?;
            let residual = dd.integral_equation_residual();
            Ok(CheckOutcome {
                name: "residual",
                passed: residual <= RESIDUAL_TOL,
                value: residual,
                detail: format!(
                    "renewal-equation residual {residual:.3e} (tol {RESIDUAL_TOL:.0e})"
                ),
            })
        }
        CheckKind::CrossEngine => {
            let dd = dd.ok_or_else(|| {
                Error::validation("cross_engine check needs both engines (engine both)")
            })?;
            let chain = chain.ok_or_else(|| {
                Error::validation("cross_engine check needs both engines (engine both)")
            })?;
            let dev = cross_engine_deviation(dd, chain);
            Ok(CheckOutcome {
                name: "cross_engine",
                passed: dev <= CROSS_ENGINE_TOL,
                value: dev,
                detail: format!(
                    "sup-norm relative deviation {dev:.4} between hazard-engine density and \
                     exact per-step rate (tol {CROSS_ENGINE_TOL})"
                ),
            })
        }
    }
}

/// Sup-norm deviation between the closed-form density and the exact
/// per-step rate, relative to the peak exact rate. Restricted to grid
/// points where at least half the probability is still undetected, where
/// the comparison is statistically meaningful.
pub fn cross_engine_deviation(dd: &DetectionDistribution, chain: &ChainResult) -> f64 {
    let k = dd.density.len().min(chain.p_exact.len());
    let mut max_dev = 0.0_f64;
    let mut peak = 0.0_f64;
    for i in 0..k {
        if chain.survival[i] > 0.5 {
            let exact = chain.p_exact[i] / chain.dt;
            max_dev = max_dev.max((dd.density[i] - exact).abs());
            peak = peak.max(exact);
        }
    }
    if peak == 0.0 {
        // both engines see zero rate everywhere in the window
        if max_dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        max_dev / peak
    }
}

/// Builds, runs, checks. Does not touch the filesystem; see
/// [`write_outputs`].
pub fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let mut stage1_summary = None;
    let sc = if cfg.scenario.is_two_stage() {
        let plan = TunnelingPlan::from_spec(&cfg.scenario)?;
        let res = plan.execute()?;
        let (_, cond) = res.stage1.mean_detection_time();
        stage1_summary = Some(StageSummary {
            t_origin: res.t_origin,
            total_detected: res.stage1.total_detected(),
            conditional_mean: cond,
        });
        res.stage2
    } else {
        cfg.scenario.build()?
    };

    let (ce, dd, chain) = engine_outputs(&sc, cfg.engine)?;

    let mut warnings = sc.warnings.clone();
    if let Some(chain) = &chain {
        if is_lattice(&cfg.scenario) {
            if let Some(final_state) = &chain.final_state {
                let mass = boundary_contamination(final_state, BOUNDARY_EDGE_FRACTION);
                if mass > BOUNDARY_WARN {
                    warnings.push(format!(
                        "{:.1}% of the surviving probability sits in the outer 5% of the \
                         lattice at the horizon; hard-wall reflections contaminate the tail",
                        100.0 * mass
                    ));
                }
            }
        }
    }

    let mut checks = Vec::new();
    for &kind in &cfg.checks {
        checks.push(run_check(
            kind,
            &sc,
            ce.as_ref(),
            dd.as_ref(),
            chain.as_ref(),
        )?);
    }

    let report = Report {
        label: cfg.label.clone(),
        scenario: cfg.scenario.kind_name().to_string(),
        dt: sc.dt,
        t_max: sc.t_max,
        steps: sc.step_count(),
        epsilon: ce.as_ref().map(|c| c.epsilon()),
        total_approx: dd.as_ref().map(|d| d.total_probability()),
        total_exact: chain.as_ref().map(|c| c.total_detected()),
        mean_approx: dd
            .as_ref()
            .and_then(|d| d.mean_detection_time().conditional_mean),
        mean_exact: chain.as_ref().and_then(|c| c.mean_detection_time().1),
        stage1: stage1_summary,
        warnings,
        checks,
    };

    Ok(RunOutput {
        scenario: sc,
        distribution: dd,
        chain,
        conditional: ce,
        report,
    })
}

fn is_lattice(spec: &ScenarioSpec) -> bool {
    matches!(
        spec,
        ScenarioSpec::Arrival1d { .. }
            | ScenarioSpec::Dwell1d { .. }
            | ScenarioSpec::Tunneling1d { .. }
    )
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

/// One row per grid point. Columns from engines that were not run are
/// left empty.
pub fn write_csv<W: std::io::Write>(out: &mut W, run: &RunOutput) -> Result<()> {
    writeln!(
        out,
        "t,w,u,density_approx,survival_approx,p_exact_per_dt,survival_exact"
    )?;
    let dd = run.distribution.as_ref();
    let chain = run.chain.as_ref();
    let k = dd
        .map(|d| d.times.len())
        .or_else(|| chain.map(|c| c.times.len()))
        .unwrap_or(0);
    let dt = run.scenario.dt;
    for i in 0..k {
        let t = (i + 1) as f64 * dt;
        writeln!(
            out,
            "{:.16e},{},{},{},{},{},{}",
            t,
            fmt_opt(dd.map(|d| d.w[i])),
            fmt_opt(dd.map(|d| d.u[i])),
            fmt_opt(dd.map(|d| d.density[i])),
            fmt_opt(dd.map(|d| d.survival[i])),
            fmt_opt(chain.and_then(|c| c.p_exact.get(i).map(|p| p / dt))),
            fmt_opt(chain.and_then(|c| c.survival.get(i).copied())),
        )?;
    }
    Ok(())
}

/// Writes the artifacts requested in the config.
pub fn write_outputs(cfg: &RunConfig, run: &RunOutput) -> Result<()> {
    if let Some(path) = &cfg.outputs.csv {
        let mut buf = Vec::new();
        write_csv(&mut buf, run)?;
        fs::write(Path::new(path), buf)?;
    }
    if let Some(path) = &cfg.outputs.json {
        let text = serde_json::to_string_pretty(&run.report)
            .map_err(|e| Error::validation(format!("report serialization failed: {e}")))?;
        fs::write(Path::new(path), text)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub dt: f64,
    pub epsilon: f64,
    pub total_approx: f64,
    pub total_exact: f64,
    pub cross_engine_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub scenario: String,
    pub points: Vec<SweepPoint>,
}

/// Re-runs the scenario at each requested step size with both engines and
/// records how the closed-form engine converges on the exact chain.
pub fn sweep_dt(cfg: &RunConfig, dts: &[f64]) -> Result<SweepReport> {
    if dts.len() < 2 {
        return Err(Error::validation(
            "a dt sweep needs at least two step sizes",
        ));
    }
    if cfg.scenario.is_two_stage() {
        return Err(Error::validation(
            "dt sweeps are not defined for two-stage protocols",
        ));
    }
    let mut points = Vec::with_capacity(dts.len());
    for &dt in dts {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::Config {
                path: "scenario.dt".into(),
                message: format!("sweep step sizes must be positive, got {dt}"),
            });
        }
        let mut spec = cfg.scenario.clone();
        set_dt(&mut spec, dt);
        let sc = spec.build()?;
        let (ce, dd, chain) = engine_outputs(&sc, Engine::Both)?;
        let (ce, dd, chain) = (ce.unwrap(), dd.unwrap(), chain.unwrap());
        points.push(SweepPoint {
            dt,
            epsilon: ce.epsilon(),
            total_approx: dd.total_probability(),
            total_exact: chain.total_detected(),
            cross_engine_deviation: cross_engine_deviation(&dd, &chain),
        });
    }
    Ok(SweepReport {
        scenario: cfg.scenario.kind_name().to_string(),
        points,
    })
}

fn set_dt(spec: &mut ScenarioSpec, new_dt: f64) {
    match spec {
        ScenarioSpec::TwoLevelDecay { dt, .. }
        | ScenarioSpec::WwDecay { dt, .. }
        | ScenarioSpec::Arrival1d { dt, .. }
        | ScenarioSpec::Dwell1d { dt, .. }
        | ScenarioSpec::Tunneling1d { dt, .. }
        | ScenarioSpec::Custom { dt, .. } => *dt = new_dt,
    }
}
