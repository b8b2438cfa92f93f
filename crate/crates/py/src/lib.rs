//! Python bindings: the scenario/config JSON documents are the interface,
//! so the binding surface stays a handful of functions returning plain
//! lists and dict-compatible JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use detime::chain::run_chain;
use detime::conditional::ConditionalEvolution;
use detime::config::parse_config;
use detime::distribution::{build_distribution, povm_set};
use detime::run;
use detime::scenarios::Scenario;

fn err(e: detime::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn build(config: &str) -> PyResult<Scenario> {
    let cfg = parse_config(config).map_err(err)?;
    cfg.scenario.build().map_err(err)
}

/// Full run (engines, checks, warnings) returning the JSON report string.
#[pyfunction]
fn simulate(config: &str) -> PyResult<String> {
    let cfg = parse_config(config).map_err(err)?;
    let out = run::simulate(&cfg).map_err(err)?;
    serde_json::to_string(&out.report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Closed-form engine: (times, hazard w, cumulative hazard u, density,
/// survival).
#[pyfunction]
#[allow(clippy::type_complexity)]
fn distribution(config: &str) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let sc = build(config)?;
    let k = sc.step_count();
    let ce = ConditionalEvolution::new(sc.h, sc.pi, sc.psi0, sc.dt).map_err(err)?;
    let hs = ce.hazard_series(k).map_err(err)?;
    let dd = build_distribution(&hs, sc.t_max).map_err(err)?;
    Ok((
        dd.times.clone(),
        dd.w.clone(),
        dd.u.clone(),
        dd.density.clone(),
        dd.survival.clone(),
    ))
}

/// Exact stroboscopic chain: (times, per-step detection probability,
/// survival).
#[pyfunction]
fn chain(config: &str) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let sc = build(config)?;
    let k = sc.step_count();
    let r = run_chain(&sc.h, &sc.pi, &sc.psi0, sc.dt, k, 1e-12).map_err(err)?;
    Ok((r.times, r.p_exact, r.survival))
}

/// First-step probability scaling: (points as [(dt, p)], fitted log-log
/// slope, quadratic coefficient <psi0|H pi H|psi0>).
#[pyfunction]
#[allow(clippy::type_complexity)]
fn zeno(config: &str, dts: Vec<f64>) -> PyResult<(Vec<(f64, f64)>, f64, f64)> {
    let sc = build(config)?;
    let sweep = detime::chain::zeno_sweep(&sc.h, &sc.pi, &sc.psi0, &dts).map_err(err)?;
    Ok((
        sweep.points,
        sweep.slope.unwrap_or(f64::NAN),
        sweep.coefficient,
    ))
}

/// POVM summary: (resolution-of-identity defect, min element eigenvalue,
/// leftover-element expectation).
#[pyfunction]
fn povm_summary(config: &str) -> PyResult<(f64, f64, f64)> {
    let sc = build(config)?;
    let k = sc.step_count();
    let ce = ConditionalEvolution::new(sc.h, sc.pi, sc.psi0, sc.dt).map_err(err)?;
    let hs = ce.hazard_series(k).map_err(err)?;
    let dd = build_distribution(&hs, sc.t_max).map_err(err)?;
    let set = povm_set(&ce, &dd).map_err(err)?;
    Ok((
        set.resolution_identity_defect(),
        set.min_eigenvalue(),
        set.e_bar_expectation(),
    ))
}

#[pymodule]
fn detime_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(distribution, m)?)?;
    m.add_function(wrap_pyfunction!(chain, m)?)?;
    m.add_function(wrap_pyfunction!(zeno, m)?)?;
    m.add_function(wrap_pyfunction!(povm_summary, m)?)?;
    Ok(())
}
