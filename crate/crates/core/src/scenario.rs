//! Scenario files, single runs and seeded fuzzing.
//!
//! A scenario is a small TOML document:
//!
//! ```toml
//! version = 1
//! algorithm = "ess"
//! env = "ess"
//! n = 4
//! values = [3, 7, 7, 1]
//! horizon = 120
//! stabilization = 10
//! stable_source = 2
//! crash_count = 1
//! mode = "skewed"
//! seed = 42
//! ```
//!
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checks::{check_trace, CheckReport};
use crate::consensus_es::EsState;
use crate::consensus_ess::EssState;
use crate::emulation::{Alg4Backend, EmuError, Emulator, OracleWeakSet};
use crate::schedule::{
    CrashPlan, EnvKind, Schedule, ScheduleError, ScheduleParams, SourcePolicy, DEFAULT_MAX_DELAY,
    DEFAULT_TIMELY_PROBABILITY,
};
use crate::sim::{run_simulation, Mode, SimError, DEFAULT_WINDOW};
use crate::trace::{Algorithm, BackendKind, Trace, TraceHeader};
use crate::types::{ProposalValue, Round};
use crate::weakset::{run_register, run_weakset, Workload};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    #[default]
    Lockstep,
    Skewed,
    /// Lockstep or skewed, chosen per run. Fuzzing only.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub proc: usize,
    /// Rounds completed before crashing (backend ticks for emulation).
    pub after: Round,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvKind>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crashes: Option<Vec<CrashSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilization: Option<Round>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_source: Option<usize>,
    pub horizon: Round,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay: u8,
    #[serde(default = "default_timely")]
    pub timely_probability: f64,
    #[serde(default)]
    pub source_policy: SourcePolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mutant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<Workload>,
}

fn default_max_delay() -> u8 {
    DEFAULT_MAX_DELAY
}

fn default_timely() -> f64 {
    DEFAULT_TIMELY_PROBABILITY
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Emulation(#[from] EmuError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

impl Scenario {
    /// A lockstep scenario with every optional field at its default.
    pub fn new(algorithm: Algorithm, n: usize, horizon: Round, seed: u64) -> Self {
        Scenario {
            version: SCENARIO_VERSION,
            algorithm,
            env: None,
            n,
            values: None,
            crashes: None,
            crash_count: None,
            stabilization: None,
            stable_source: None,
            horizon,
            mode: ModeSpec::Lockstep,
            seed,
            max_delay: DEFAULT_MAX_DELAY,
            timely_probability: DEFAULT_TIMELY_PROBABILITY,
            source_policy: SourcePolicy::RoundRobin,
            backend: None,
            mutant: false,
            output: None,
            workload: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    /// The environment, defaulting to the one the algorithm is designed for.
    pub fn env(&self) -> EnvKind {
        self.env.unwrap_or(match self.algorithm {
            Algorithm::Es => EnvKind::Es,
            Algorithm::Ess => EnvKind::Ess,
            _ => EnvKind::Ms,
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        if self.horizon == 0 {
            return invalid("horizon must be at least 1");
        }
        if let Some(vs) = &self.values {
            if vs.len() != self.n {
                return invalid(format!("{} values given for n = {}", vs.len(), self.n));
            }
        }
        if self.crashes.is_some() && self.crash_count.is_some() {
            return invalid("give either crashes or crash_count, not both");
        }
        if let Some(cs) = &self.crashes {
            let mut seen = vec![false; self.n];
            for c in cs {
                if c.proc >= self.n {
                    return invalid(format!("crash for process {} but n = {}", c.proc, self.n));
                }
                if std::mem::replace(&mut seen[c.proc], true) {
                    return invalid(format!("process {} crashes twice", c.proc));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.timely_probability) {
            return invalid("timely_probability must lie in [0, 1]");
        }
        if self.mode == ModeSpec::Mixed {
            return invalid("mode = \"mixed\" is only meaningful for fuzzing");
        }
        let lockstep_only = matches!(self.algorithm, Algorithm::Weakset | Algorithm::Register | Algorithm::Emulation);
        if lockstep_only && self.mode != ModeSpec::Lockstep {
            return invalid(format!("{} runs are lockstep only", self.algorithm));
        }
        if self.algorithm == Algorithm::Emulation && self.env() != EnvKind::Ms {
            return invalid("emulation provides the MS environment; env must be ms");
        }
        if self.backend.is_some() && self.algorithm != Algorithm::Emulation {
            return invalid("backend only applies to emulation");
        }
        if self.mutant && !matches!(self.algorithm, Algorithm::Es | Algorithm::Ess | Algorithm::Emulation) {
            return invalid("mutant only applies to consensus algorithms");
        }
        if self.workload.is_some() && !matches!(self.algorithm, Algorithm::Weakset | Algorithm::Register) {
            return invalid("workload only applies to weakset and register runs");
        }
        Ok(())
    }

    /// Proposal values, drawn from the seed when not given.
    pub fn proposal_values(&self) -> Vec<ProposalValue> {
        match &self.values {
            Some(vs) => vs.iter().map(|&v| ProposalValue(v)).collect(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7661_6c75_6573);
                (0..self.n).map(|_| ProposalValue(rng.random_range(0..1000))).collect()
            }
        }
    }

    fn crash_plan(&self) -> CrashPlan {
        match (&self.crashes, self.crash_count) {
            (Some(cs), _) => {
                let mut v = vec![None; self.n];
                for c in cs {
                    v[c.proc] = Some(c.after);
                }
                CrashPlan::Explicit(v)
            }
            (None, Some(c)) => CrashPlan::Count(c),
            (None, None) => CrashPlan::Count(0),
        }
    }

    pub fn schedule_params(&self, horizon: Round) -> ScheduleParams {
        let mut p = ScheduleParams::new(self.env(), self.n, horizon, self.seed)
            .crashes(self.crash_plan())
            .max_delay(self.max_delay)
            .timely_probability(self.timely_probability)
            .source_policy(self.source_policy);
        p.stabilization = self.stabilization;
        p.stable_source = self.stable_source;
        p
    }

    fn mode(&self) -> Mode {
        match self.mode {
            ModeSpec::Skewed => Mode::Skewed { seed: self.seed, window: DEFAULT_WINDOW },
            _ => Mode::Lockstep,
        }
    }

    fn header(&self, sched: Option<&Schedule>) -> TraceHeader {
        let mut h = TraceHeader::new(self.algorithm, self.env(), self.n, self.horizon, self.seed);
        h.max_delay = self.max_delay;
        h.mode = self.mode().tag();
        if let Some(s) = sched {
            h.stabilization = s.stabilization;
            h.stable_source = s.stable_source;
        }
        if matches!(self.algorithm, Algorithm::Es | Algorithm::Ess | Algorithm::Emulation) {
            h.values = self.proposal_values();
        }
        h
    }

    /// Execute the scenario and return its trace.
    pub fn run(&self) -> Result<Trace, ScenarioError> {
        self.validate()?;
        let values = self.proposal_values();
        match self.algorithm {
            Algorithm::Es | Algorithm::Ess => {
                let sched = Schedule::generate(&self.schedule_params(self.horizon))?;
                let events = if self.algorithm == Algorithm::Es {
                    run_simulation(&sched, es_automata(&values, self.mutant), self.mode())?
                } else {
                    let automata = values
                        .iter()
                        .map(|&v| if self.mutant { EssState::mutant(v) } else { EssState::new(v) })
                        .collect();
                    run_simulation(&sched, automata, self.mode())?
                };
                Ok(Trace::new(self.header(Some(&sched)), events))
            }
            Algorithm::Weakset | Algorithm::Register => {
                let sched = Schedule::generate(&self.schedule_params(self.horizon))?;
                let workload = self.workload.clone().unwrap_or_else(|| Workload::for_max_delay(self.max_delay));
                let events = if self.algorithm == Algorithm::Weakset {
                    run_weakset(&sched, &workload, self.seed)?
                } else {
                    run_register(&sched, &workload, self.seed)?
                };
                Ok(Trace::new(self.header(Some(&sched)), events))
            }
            Algorithm::Emulation => self.run_emulation(&values),
        }
    }

    fn run_emulation(&self, values: &[ProposalValue]) -> Result<Trace, ScenarioError> {
        let backend = self.backend.unwrap_or(BackendKind::Oracle);
        let mut header = self.header(None);
        header.emulated = true;
        header.backend = Some(backend);
        let automata = es_automata(values, self.mutant);
        let events = match backend {
            BackendKind::Oracle => {
                let latency = u64::from(self.max_delay);
                let budget = (u64::from(self.horizon) + 2) * (latency + 2);
                let crash_at = self.oracle_crashes(budget);
                let ws = OracleWeakSet::new(self.n, latency, budget, crash_at, self.seed);
                Emulator::new(automata, ws, self.horizon)?.run()?
            }
            BackendKind::Alg4 => {
                // Generous enough for every add to finish under the delay bound.
                let rounds = (self.horizon + 2) * (3 * Round::from(self.max_delay) + 6);
                let sched = Schedule::generate(&self.schedule_params(rounds))?;
                Emulator::new(automata, Alg4Backend::new(&sched)?, self.horizon)?.run()?
            }
        };
        Ok(Trace::new(header, events))
    }

    fn oracle_crashes(&self, budget: u64) -> Vec<Option<u64>> {
        match self.crash_plan() {
            CrashPlan::Explicit(v) => v.into_iter().map(|c| c.map(u64::from)).collect(),
            CrashPlan::Count(c) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6372_6173_68);
                let mut procs: Vec<usize> = (0..self.n).collect();
                rand::seq::SliceRandom::shuffle(procs.as_mut_slice(), &mut rng);
                let mut out = vec![None; self.n];
                for &p in procs.iter().take(c.min(self.n - 1)) {
                    out[p] = Some(rng.random_range(0..=budget / 2));
                }
                out
            }
        }
    }
}

fn es_automata(values: &[ProposalValue], mutant: bool) -> Vec<EsState> {
    values.iter().map(|&v| if mutant { EsState::mutant(v) } else { EsState::new(v) }).collect()
}

/// Run and check in one go.
pub fn run_and_check(s: &Scenario) -> Result<(Trace, CheckReport), ScenarioError> {
    let trace = s.run()?;
    let report = check_trace(&trace);
    Ok((trace, report))
}

/// Parameters for a batch of randomized runs.
#[derive(Clone, Debug)]
pub struct FuzzConfig {
    /// Fixed fields (algorithm, env, delays, backend...) for every run.
    pub template: Scenario,
    pub mode: ModeSpec,
    pub runs: u64,
    pub seed: u64,
    pub max_n: usize,
    /// Upper bound for the randomly drawn stabilization round.
    pub max_stabilization: Round,
}

impl FuzzConfig {
    pub fn new(template: Scenario, runs: u64, seed: u64) -> Self {
        FuzzConfig {
            mode: template.mode,
            max_n: template.n,
            max_stabilization: match template.algorithm {
                Algorithm::Ess => 20,
                _ => 30,
            },
            template,
            runs,
            seed,
        }
    }

    /// The concrete scenario for run `i`.
    pub fn scenario(&self, i: u64) -> Scenario {
        let seed = derive_seed(self.seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.template.clone();
        s.seed = seed;
        s.output = None;
        s.n = rng.random_range(1..=self.max_n.max(1));
        s.values = Some((0..s.n).map(|_| rng.random_range(0..=(2 * s.n as u64))).collect());
        s.crashes = None;
        s.crash_count = Some(rng.random_range(0..s.n));
        s.stable_source = None;
        s.mode = match self.mode {
            ModeSpec::Mixed if lockstep_only(s.algorithm) => ModeSpec::Lockstep,
            ModeSpec::Mixed => {
                if rng.random_bool(0.5) {
                    ModeSpec::Lockstep
                } else {
                    ModeSpec::Skewed
                }
            }
            m => m,
        };
        if s.env() != EnvKind::Ms {
            let k = rng.random_range(1..=self.max_stabilization.max(1));
            s.stabilization = Some(k);
            s.horizon = match s.algorithm {
                Algorithm::Ess => 4 * k + 100,
                Algorithm::Es => k + 20,
                _ => s.horizon.max(k + 20),
            };
        } else {
            s.stabilization = None;
        }
        s
    }
}

fn lockstep_only(a: Algorithm) -> bool {
    matches!(a, Algorithm::Weakset | Algorithm::Register | Algorithm::Emulation)
}

/// SplitMix64 step: per-run seeds that do not collide for nearby inputs.
pub fn derive_seed(base: u64, i: u64) -> u64 {
    let mut z = base.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzRecord {
    pub seed: u64,
    #[serde(skip)]
    pub scenario: Scenario,
    pub report: CheckReport,
    /// Set when the run itself could not be carried out.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FuzzRecord {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.report.passed()
    }
}

/// Run the whole batch in parallel. Records come back sorted by seed.
pub fn fuzz(cfg: &FuzzConfig) -> Vec<FuzzRecord> {
    let mut out: Vec<FuzzRecord> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| {
            let scenario = cfg.scenario(i);
            match run_and_check(&scenario) {
                Ok((_, report)) => FuzzRecord { seed: scenario.seed, scenario, report, error: None },
                Err(e) => FuzzRecord {
                    seed: scenario.seed,
                    scenario,
                    report: CheckReport::default(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    out.sort_by_key(|r| r.seed);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let s = Scenario::from_toml(
            "version = 1\nalgorithm = \"es\"\nn = 2\nvalues = [3, 7]\nhorizon = 12\nstabilization = 1\n",
        )
        .unwrap();
        assert_eq!(s.env(), EnvKind::Es);
        assert_eq!(s.max_delay, DEFAULT_MAX_DELAY);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn bad_scenarios_are_rejected() {
        for text in [
            "version = 2\nalgorithm = \"es\"\nn = 1\nhorizon = 5\n",
            "version = 1\nalgorithm = \"es\"\nn = 2\nvalues = [1]\nhorizon = 5\n",
            "version = 1\nalgorithm = \"weakset\"\nn = 2\nhorizon = 5\nmode = \"skewed\"\n",
            "version = 1\nalgorithm = \"es\"\nn = 2\nhorizon = 5\ntypo = 3\n",
            "version = 1\nalgorithm = \"es\"\nn = 2\nhorizon = 5\ncrash_count = 1\ncrashes = [{proc = 0, after = 1}]\n",
        ] {
            assert!(Scenario::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn every_algorithm_runs_and_checks_clean() {
        for alg in [Algorithm::Es, Algorithm::Ess, Algorithm::Weakset, Algorithm::Register, Algorithm::Emulation] {
            let mut s = Scenario::new(alg, 3, 40, 9);
            s.crash_count = Some(1);
            let (trace, report) = run_and_check(&s).unwrap();
            assert!(report.passed(), "{alg}: {:?}", report.violations().collect::<Vec<_>>());
            assert!(!trace.events.is_empty());
        }
        let mut s = Scenario::new(Algorithm::Emulation, 3, 12, 4);
        s.backend = Some(BackendKind::Alg4);
        let (_, report) = run_and_check(&s).unwrap();
        assert!(report.passed(), "{:?}", report.violations().collect::<Vec<_>>());
    }

    #[test]
    fn fuzz_is_sorted_and_deterministic() {
        let cfg = FuzzConfig { mode: ModeSpec::Mixed, ..FuzzConfig::new(Scenario::new(Algorithm::Es, 4, 30, 0), 24, 5) };
        let a = fuzz(&cfg);
        let b = fuzz(&cfg);
        assert!(a.windows(2).all(|w| w[0].seed <= w[1].seed));
        let digest = |rs: &[FuzzRecord]| serde_json::to_string(rs).unwrap();
        assert_eq!(digest(&a), digest(&b));
        assert!(a.iter().all(FuzzRecord::passed));
    }
}
