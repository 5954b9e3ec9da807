//! Python bindings: scenarios, traces, check reports and schedules.

use std::collections::BTreeMap;

use anonsim::checks::{check_trace, validate_trace_env, CheckReport, Status};
use anonsim::consensus_ess::{leader_predicate as ess_leader_predicate, CounterMap, History};
use anonsim::scenario::{fuzz as run_fuzz, FuzzConfig, ModeSpec, Scenario};
use anonsim::schedule::{CrashPlan, EnvKind, Schedule, ScheduleParams};
use anonsim::trace::{Algorithm, Trace};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(m: &str) -> PyResult<ModeSpec> {
    match m {
        "lockstep" => Ok(ModeSpec::Lockstep),
        "skewed" => Ok(ModeSpec::Skewed),
        "mixed" => Ok(ModeSpec::Mixed),
        other => Err(value_err(format!("unknown mode `{other}`"))),
    }
}

#[pyclass(name = "Scenario", module = "anonsim")]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (algorithm, n, horizon, seed = 0))]
    fn new(algorithm: &str, n: usize, horizon: u32, seed: u64) -> PyResult<Self> {
        let alg: Algorithm = algorithm.parse().map_err(value_err)?;
        Ok(PyScenario { inner: Scenario::new(alg, n, horizon, seed) })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyScenario { inner: Scenario::from_toml(text).map_err(value_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn algorithm(&self) -> String {
        self.inner.algorithm.to_string()
    }

    #[getter]
    fn env(&self) -> String {
        self.inner.env().to_string()
    }

    #[setter]
    fn set_env(&mut self, env: &str) -> PyResult<()> {
        self.inner.env = Some(env.parse::<EnvKind>().map_err(value_err)?);
        Ok(())
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn values(&self) -> Vec<u64> {
        self.inner.proposal_values().iter().map(|v| v.0).collect()
    }

    #[setter]
    fn set_values(&mut self, values: Vec<u64>) {
        self.inner.values = Some(values);
    }

    #[setter]
    fn set_crash_count(&mut self, c: usize) {
        self.inner.crashes = None;
        self.inner.crash_count = Some(c);
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.mode = parse_mode(mode)?;
        Ok(())
    }

    #[setter]
    fn set_stabilization(&mut self, k: Option<u32>) {
        self.inner.stabilization = k;
    }

    #[setter]
    fn set_mutant(&mut self, on: bool) {
        self.inner.mutant = on;
    }

    fn run(&self, py: Python<'_>) -> PyResult<PyTrace> {
        let s = self.inner.clone();
        let trace = py.detach(move || s.run()).map_err(value_err)?;
        Ok(PyTrace { inner: trace })
    }

    fn __repr__(&self) -> String {
        format!("Scenario({}, n={}, seed={})", self.inner.algorithm, self.inner.n, self.inner.seed)
    }
}

#[pyclass(name = "Trace", module = "anonsim")]
struct PyTrace {
    inner: Trace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(PyTrace { inner: Trace::from_jsonl(text).map_err(value_err)? })
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn __len__(&self) -> usize {
        self.inner.events.len()
    }

    fn check(&self) -> PyReport {
        PyReport { inner: check_trace(&self.inner) }
    }

    /// `None` if the trace satisfies its environment, otherwise a description.
    fn environment_violation(&self) -> Option<String> {
        validate_trace_env(&self.inner).err().map(|v| v.to_string())
    }
}

#[pyclass(name = "Report", module = "anonsim")]
struct PyReport {
    inner: CheckReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    /// name -> (status, round, witness)
    #[getter]
    fn checks(&self) -> BTreeMap<String, (String, Option<u32>, String)> {
        self.inner
            .checks
            .iter()
            .map(|(k, v)| {
                let status = match v.status {
                    Status::Ok => "ok",
                    Status::Violation => "violation",
                    Status::Skipped => "skipped",
                };
                (k.clone(), (status.to_owned(), v.round, v.witness.clone()))
            })
            .collect()
    }

    /// process -> (round, value)
    #[getter]
    fn decisions(&self) -> BTreeMap<usize, (u32, u64)> {
        self.inner.decisions.iter().map(|(p, d)| (*p, (d.round, d.value.0))).collect()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("reports serialize")
    }
}

#[pyclass(name = "Schedule", module = "anonsim")]
struct PySchedule {
    inner: Schedule,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    #[pyo3(signature = (env, n, horizon, seed, crashes = 0, stabilization = None, stable_source = None))]
    fn generate(
        env: &str,
        n: usize,
        horizon: u32,
        seed: u64,
        crashes: usize,
        stabilization: Option<u32>,
        stable_source: Option<usize>,
    ) -> PyResult<Self> {
        let mut p = ScheduleParams::new(env.parse().map_err(value_err)?, n, horizon, seed)
            .crashes(CrashPlan::Count(crashes));
        p.stabilization = stabilization;
        p.stable_source = stable_source;
        Ok(PySchedule { inner: Schedule::generate(&p).map_err(value_err)? })
    }

    /// Raises `ValueError` describing the first violated clause.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn source(&self, k: u32) -> usize {
        self.inner.source(k)
    }

    fn delay(&self, s: usize, j: usize, k: u32) -> u8 {
        self.inner.delay(s, j, k)
    }

    #[getter]
    fn crash_after(&self) -> Vec<Option<u32>> {
        self.inner.crash_after.clone()
    }

    #[getter]
    fn stabilization(&self) -> Option<u32> {
        self.inner.stabilization
    }
}

/// Run `runs` randomized variations of a template; returns
/// `(seed, passed, violated check names)` sorted by seed.
#[pyfunction]
#[pyo3(signature = (template, runs, seed, mode = None))]
fn fuzz(
    py: Python<'_>,
    template: &PyScenario,
    runs: u64,
    seed: u64,
    mode: Option<&str>,
) -> PyResult<Vec<(u64, bool, Vec<String>)>> {
    let mut cfg = FuzzConfig::new(template.inner.clone(), runs, seed);
    if let Some(m) = mode {
        cfg.mode = parse_mode(m)?;
    }
    let recs = py.detach(move || run_fuzz(&cfg));
    Ok(recs
        .into_iter()
        .map(|r| {
            let bad = r.report.violations().map(|(n, _)| n.to_owned()).chain(r.error.clone()).collect();
            (r.seed, r.passed(), bad)
        })
        .collect())
}

/// Leader test on a counter map given as `[(history, counter), ...]`.
#[pyfunction]
fn leader_predicate(counters: Vec<(Vec<u64>, u64)>, own: Vec<u64>) -> PyResult<bool> {
    if own.is_empty() || counters.iter().any(|(h, _)| h.is_empty()) {
        return Err(value_err("histories are never empty"));
    }
    let mut c = CounterMap::new();
    for (h, v) in &counters {
        c.set(History::from_values(h), *v);
    }
    Ok(ess_leader_predicate(&c, &History::from_values(&own)))
}

#[pymodule]
#[pyo3(name = "anonsim")]
fn anonsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    m.add_function(wrap_pyfunction!(leader_predicate, m)?)?;
    Ok(())
}
