//! Adversary schedules for the MS, ES and ESS environments.
//!
//! A [`Schedule`] is the complete record of the adversary's choices for one
//! run: which links are timely in each round, how late the others are, when
//! processes crash, and (for ES/ESS) when the system stabilizes.
//!
//! Rounds are numbered from 1. The round-`k` message of a process is the one it
//! broadcasts after its `k`-th end-of-round; it is *timely* towards `j` if it
//! reaches `j` before `j` executes `compute(k, ·)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Round;

pub const DEFAULT_MAX_DELAY: u8 = 5;
pub const DEFAULT_TIMELY_PROBABILITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    /// Moving source: every round has some source, possibly a different one.
    Ms,
    /// Eventually synchronous: from some round on, every link is timely.
    Es,
    /// Eventually stable source: from some round on, the same source.
    Ess,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Ms => "ms",
            EnvKind::Es => "es",
            EnvKind::Ess => "ess",
        })
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ms" => Ok(EnvKind::Ms),
            "es" => Ok(EnvKind::Es),
            "ess" => Ok(EnvKind::Ess),
            other => Err(format!("unknown environment `{other}` (expected ms, es or ess)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourcePolicy {
    /// Cycle through the processes still sending in that round.
    #[default]
    RoundRobin,
    /// Seeded uniform pick each round.
    Random,
}

/// How crashes are placed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrashPlan {
    /// This many distinct processes crash at seeded rounds.
    Count(usize),
    /// Per-process number of end-of-rounds completed before crashing.
    Explicit(Vec<Option<Round>>),
}

#[derive(Clone, Debug)]
pub struct ScheduleParams {
    pub env: EnvKind,
    pub n: usize,
    pub horizon: Round,
    pub crashes: CrashPlan,
    /// Allow every process to crash. Off by default; ESS never allows it.
    pub allow_total_crash: bool,
    pub stabilization: Option<Round>,
    pub stable_source: Option<usize>,
    pub max_delay: u8,
    pub timely_probability: f64,
    pub source_policy: SourcePolicy,
    pub seed: u64,
}

impl ScheduleParams {
    pub fn new(env: EnvKind, n: usize, horizon: Round, seed: u64) -> Self {
        ScheduleParams {
            env,
            n,
            horizon,
            crashes: CrashPlan::Count(0),
            allow_total_crash: false,
            stabilization: None,
            stable_source: None,
            max_delay: DEFAULT_MAX_DELAY,
            timely_probability: DEFAULT_TIMELY_PROBABILITY,
            source_policy: SourcePolicy::RoundRobin,
            seed,
        }
    }

    pub fn crashes(mut self, plan: CrashPlan) -> Self {
        self.crashes = plan;
        self
    }

    pub fn stabilization(mut self, k: Round) -> Self {
        self.stabilization = Some(k);
        self
    }

    pub fn stable_source(mut self, s: usize) -> Self {
        self.stable_source = Some(s);
        self
    }

    pub fn source_policy(mut self, p: SourcePolicy) -> Self {
        self.source_policy = p;
        self
    }

    pub fn timely_probability(mut self, p: f64) -> Self {
        self.timely_probability = p;
        self
    }

    pub fn max_delay(mut self, d: u8) -> Self {
        self.max_delay = d;
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("a schedule needs at least one process")]
    NoProcesses,
    #[error("horizon must be at least 1 round")]
    EmptyHorizon,
    #[error("crash budget {budget} too large for {n} processes")]
    CrashBudget { budget: usize, n: usize },
    #[error("explicit crash list has {got} entries, expected {n}")]
    CrashListLength { got: usize, n: usize },
    #[error("stable source {0} is out of range")]
    StableSourceRange(usize),
    #[error("stable source {0} is scheduled to crash")]
    StableSourceCrashes(usize),
    #[error("stabilization round must be in 1..={horizon}, got {got}")]
    Stabilization { got: Round, horizon: Round },
    #[error("max delay must be at least 1")]
    MaxDelay,
    #[error("schedule violates its environment: {0}")]
    Invalid(Violation),
}

/// Which environment clause failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    NoSource,
    NotSynchronous,
    StableSourceLate,
    StableSourceCrashed,
    DelayBound,
    Shape,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::NoSource => "no source",
            Rule::NotSynchronous => "not synchronous",
            Rule::StableSourceLate => "stable source late",
            Rule::StableSourceCrashed => "stable source crashed",
            Rule::DelayBound => "delay bound",
            Rule::Shape => "malformed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub round: Round,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "round {}: {} ({})", self.round, self.rule, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub env: EnvKind,
    pub n: usize,
    pub horizon: Round,
    /// `delays[(k-1)*n*n + s*n + j]`; 0 means timely.
    delays: Vec<u8>,
    /// Designated source of each round, `sources[k-1]`.
    sources: Vec<usize>,
    /// Number of end-of-rounds a process completes before crashing.
    pub crash_after: Vec<Option<Round>>,
    pub stabilization: Option<Round>,
    pub stable_source: Option<usize>,
    pub max_delay: u8,
    pub seed: u64,
}

impl Schedule {
    /// Every link timely in every round, no crashes.
    pub fn synchronous(n: usize, horizon: Round) -> Self {
        Schedule {
            env: EnvKind::Es,
            n,
            horizon,
            delays: vec![0; horizon as usize * n * n],
            sources: (0..horizon as usize).map(|k| k % n.max(1)).collect(),
            crash_after: vec![None; n],
            stabilization: Some(1),
            stable_source: None,
            max_delay: DEFAULT_MAX_DELAY,
            seed: 0,
        }
    }

    fn index(&self, s: usize, j: usize, k: Round) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon);
        (k as usize - 1) * self.n * self.n + s * self.n + j
    }

    /// Rounds a round-`k` message from `s` to `j` is late by; 0 if timely.
    pub fn delay(&self, s: usize, j: usize, k: Round) -> u8 {
        if s == j || k == 0 || k > self.horizon {
            return 0;
        }
        self.delays[self.index(s, j, k)]
    }

    pub fn timely(&self, s: usize, j: usize, k: Round) -> bool {
        self.delay(s, j, k) == 0
    }

    pub fn set_delay(&mut self, s: usize, j: usize, k: Round, d: u8) {
        let i = self.index(s, j, k);
        self.delays[i] = d;
    }

    /// Designated source of round `k`.
    pub fn source(&self, k: Round) -> usize {
        self.sources[(k.clamp(1, self.horizon) - 1) as usize]
    }

    pub fn set_source(&mut self, k: Round, s: usize) {
        self.sources[(k - 1) as usize] = s;
    }

    pub fn is_correct(&self, p: usize) -> bool {
        self.crash_after[p].is_none()
    }

    /// Processes that broadcast a round-`k` message (ignoring halts).
    pub fn senders(&self, k: Round) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&p| self.crash_after[p].is_none_or(|c| c >= k))
    }

    /// Processes that execute `compute(k, ·)` (ignoring halts).
    pub fn recipients(&self, k: Round) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&p| self.crash_after[p].is_none_or(|c| c > k))
    }

    pub fn generate(params: &ScheduleParams) -> Result<Schedule, ScheduleError> {
        let n = params.n;
        if n == 0 {
            return Err(ScheduleError::NoProcesses);
        }
        if params.horizon == 0 {
            return Err(ScheduleError::EmptyHorizon);
        }
        if params.max_delay == 0 {
            return Err(ScheduleError::MaxDelay);
        }
        let horizon = params.horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

        let stabilization = match params.env {
            EnvKind::Ms => None,
            EnvKind::Es | EnvKind::Ess => {
                let k = match params.stabilization {
                    Some(k) => k,
                    None => rng.random_range(1..=horizon.div_ceil(2)),
                };
                if k == 0 || k > horizon {
                    return Err(ScheduleError::Stabilization { got: k, horizon });
                }
                Some(k)
            }
        };
        let stable_source = match params.env {
            EnvKind::Ess => {
                let s = match params.stable_source {
                    Some(s) => s,
                    None => rng.random_range(0..n),
                };
                if s >= n {
                    return Err(ScheduleError::StableSourceRange(s));
                }
                Some(s)
            }
            _ => None,
        };

        let crash_after = match &params.crashes {
            CrashPlan::Explicit(list) => {
                if list.len() != n {
                    return Err(ScheduleError::CrashListLength { got: list.len(), n });
                }
                list.clone()
            }
            CrashPlan::Count(budget) => {
                let budget = *budget;
                let cap = if params.allow_total_crash && params.env != EnvKind::Ess { n } else { n - 1 };
                if budget > cap {
                    return Err(ScheduleError::CrashBudget { budget, n });
                }
                let mut candidates: Vec<usize> =
                    (0..n).filter(|&p| Some(p) != stable_source).collect();
                candidates.shuffle(&mut rng);
                // Crashes land before stabilization in ES/ESS so the eventual
                // clauses talk about a fixed set of correct processes.
                let latest = stabilization.map_or(horizon, |k| k - 1);
                let mut out = vec![None; n];
                for &p in candidates.iter().take(budget) {
                    out[p] = Some(rng.random_range(0..=latest));
                }
                out
            }
        };
        if let Some(s) = stable_source {
            if crash_after[s].is_some() {
                return Err(ScheduleError::StableSourceCrashes(s));
            }
        }

        let mut sched = Schedule {
            env: params.env,
            n,
            horizon,
            delays: vec![0; horizon as usize * n * n],
            sources: vec![0; horizon as usize],
            crash_after,
            stabilization,
            stable_source,
            max_delay: params.max_delay,
            seed: params.seed,
        };

        for k in 1..=horizon {
            let senders: Vec<usize> = sched.senders(k).collect();
            let source = match (params.env, stable_source, stabilization) {
                (EnvKind::Ess, Some(s), Some(stab)) if k >= stab => s,
                _ if senders.is_empty() => 0,
                _ => match params.source_policy {
                    SourcePolicy::RoundRobin => senders[(k as usize - 1) % senders.len()],
                    SourcePolicy::Random => *senders.choose(&mut rng).unwrap(),
                },
            };
            sched.set_source(k, source);
            let synchronous = params.env == EnvKind::Es && stabilization.is_some_and(|stab| k >= stab);
            for s in 0..n {
                for j in 0..n {
                    if s == j {
                        continue;
                    }
                    let forced = synchronous || (s == source && !senders.is_empty());
                    let d = if forced || rng.random_bool(params.timely_probability) {
                        0
                    } else {
                        rng.random_range(1..=params.max_delay)
                    };
                    sched.set_delay(s, j, k, d);
                }
            }
        }
        sched.validate().map_err(ScheduleError::Invalid)?;
        Ok(sched)
    }

    /// Checks every clause of the environment definition, round by round.
    /// Returns the first failing round.
    pub fn validate(&self) -> Result<(), Violation> {
        let shape = |detail: String| Violation { round: 0, rule: Rule::Shape, detail };
        if self.crash_after.len() != self.n {
            return Err(shape(format!("crash list has {} entries", self.crash_after.len())));
        }
        if self.delays.len() != self.horizon as usize * self.n * self.n {
            return Err(shape("delay matrix has the wrong size".into()));
        }
        if self.sources.len() != self.horizon as usize || self.sources.iter().any(|&s| s >= self.n) {
            return Err(shape("source list malformed".into()));
        }
        if self.env != EnvKind::Ms && self.stabilization.is_none() {
            return Err(shape(format!("{} schedule without a stabilization round", self.env)));
        }
        let ess = match (self.env, self.stable_source) {
            (EnvKind::Ess, Some(s)) => {
                if s >= self.n {
                    return Err(shape(format!("stable source {s} out of range")));
                }
                if let Some(c) = self.crash_after[s] {
                    return Err(Violation {
                        round: c,
                        rule: Rule::StableSourceCrashed,
                        detail: format!("stable source {s} crashes after round {c}"),
                    });
                }
                Some(s)
            }
            (EnvKind::Ess, None) => return Err(shape("ESS schedule without a stable source".into())),
            _ => None,
        };

        for k in 1..=self.horizon {
            let senders: Vec<usize> = self.senders(k).collect();
            let recipients: Vec<usize> = self.recipients(k).collect();
            for &s in &senders {
                for j in 0..self.n {
                    if self.delay(s, j, k) > self.max_delay {
                        return Err(Violation {
                            round: k,
                            rule: Rule::DelayBound,
                            detail: format!("{s}->{j} late by {}", self.delay(s, j, k)),
                        });
                    }
                }
            }
            if recipients.is_empty() || senders.is_empty() {
                continue;
            }
            let has_source = senders
                .iter()
                .any(|&s| recipients.iter().all(|&j| self.timely(s, j, k)));
            if !has_source {
                return Err(Violation {
                    round: k,
                    rule: Rule::NoSource,
                    detail: "no sender is timely towards every recipient".into(),
                });
            }
            let stable = self.stabilization.is_some_and(|stab| k >= stab);
            if stable && self.env == EnvKind::Es {
                for &s in senders.iter().filter(|&&s| self.is_correct(s)) {
                    if let Some(&j) = recipients.iter().find(|&&j| !self.timely(s, j, k)) {
                        return Err(Violation {
                            round: k,
                            rule: Rule::NotSynchronous,
                            detail: format!("link {s}->{j} late after stabilization"),
                        });
                    }
                }
            }
            if let (true, Some(s)) = (stable, ess) {
                if let Some(&j) = recipients.iter().find(|&&j| !self.timely(s, j, k)) {
                    return Err(Violation {
                        round: k,
                        rule: Rule::StableSourceLate,
                        detail: format!("stable source {s} late towards {j}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// The same adversary with process labels renamed by `perm` (old -> new).
    pub fn permuted(&self, perm: &[usize]) -> Schedule {
        let mut out = self.clone();
        for k in 1..=self.horizon {
            out.set_source(k, perm[self.source(k)]);
            for s in 0..self.n {
                for j in 0..self.n {
                    out.set_delay(perm[s], perm[j], k, self.delay(s, j, k));
                }
            }
        }
        for p in 0..self.n {
            out.crash_after[perm[p]] = self.crash_after[p];
        }
        out.stable_source = self.stable_source.map(|s| perm[s]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_process_is_its_own_source() {
        let s = Schedule::generate(&ScheduleParams::new(EnvKind::Ms, 1, 10, 3)).unwrap();
        for k in 1..=10 {
            assert!(s.timely(0, 0, k));
            assert_eq!(s.source(k), 0);
        }
        assert_eq!(s.validate(), Ok(()));
    }

    #[test]
    fn es_is_synchronous_after_stabilization() {
        let p = ScheduleParams::new(EnvKind::Es, 3, 20, 11).stabilization(8);
        let s = Schedule::generate(&p).unwrap();
        for k in 8..=20 {
            for a in 0..3 {
                for b in 0..3 {
                    assert!(s.timely(a, b, k), "round {k} link {a}->{b}");
                }
            }
        }
        for k in 1..8 {
            let src = s.source(k);
            assert!((0..3).all(|j| s.timely(src, j, k)));
        }
    }

    #[test]
    fn ess_stable_source_is_timely_and_validates() {
        let p = ScheduleParams::new(EnvKind::Ess, 4, 30, 5).stabilization(10).stable_source(2);
        let s = Schedule::generate(&p).unwrap();
        for k in 10..=30 {
            assert!((0..4).all(|j| s.timely(2, j, k)));
        }
        assert_eq!(s.validate(), Ok(()));
    }

    #[test]
    fn missing_source_is_reported_at_its_round() {
        let mut s = Schedule::generate(&ScheduleParams::new(EnvKind::Ms, 3, 8, 1).timely_probability(0.0)).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    s.set_delay(a, b, 5, 1);
                }
            }
        }
        let v = s.validate().unwrap_err();
        assert_eq!((v.round, v.rule), (5, Rule::NoSource));
        assert_eq!(v.rule.to_string(), "no source");
    }

    #[test]
    fn fully_timely_es_is_ok() {
        assert_eq!(Schedule::synchronous(4, 12).validate(), Ok(()));
    }

    #[test]
    fn crashing_stable_source_is_rejected() {
        let p = ScheduleParams::new(EnvKind::Ess, 3, 20, 2).stabilization(6).stable_source(1);
        let mut s = Schedule::generate(&p).unwrap();
        s.crash_after[1] = Some(7);
        let v = s.validate().unwrap_err();
        assert_eq!(v.rule, Rule::StableSourceCrashed);
        assert_eq!(v.round, 7);

        let explicit = p.crashes(CrashPlan::Explicit(vec![None, Some(7), None]));
        assert_eq!(Schedule::generate(&explicit), Err(ScheduleError::StableSourceCrashes(1)));
    }

    #[test]
    fn crash_budget_is_bounded() {
        let p = ScheduleParams::new(EnvKind::Ms, 3, 10, 0).crashes(CrashPlan::Count(3));
        assert!(matches!(Schedule::generate(&p), Err(ScheduleError::CrashBudget { .. })));
        let mut all = p.clone();
        all.allow_total_crash = true;
        let s = Schedule::generate(&all).unwrap();
        assert!(s.crash_after.iter().all(Option::is_some));
    }

    #[test]
    fn delays_stay_within_bound() {
        let s = Schedule::generate(&ScheduleParams::new(EnvKind::Ms, 5, 40, 77).max_delay(3)).unwrap();
        for k in 1..=40 {
            for a in 0..5 {
                for b in 0..5 {
                    assert!(s.delay(a, b, k) <= 3);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = ScheduleParams::new(EnvKind::Ess, 5, 60, 1234).crashes(CrashPlan::Count(2));
        assert_eq!(Schedule::generate(&p).unwrap(), Schedule::generate(&p).unwrap());
    }

    #[test]
    fn permutation_preserves_validity() {
        let p = ScheduleParams::new(EnvKind::Ess, 4, 30, 9).crashes(CrashPlan::Count(2));
        let s = Schedule::generate(&p).unwrap();
        let q = s.permuted(&[2, 0, 3, 1]);
        assert_eq!(q.validate(), Ok(()));
        assert_eq!(q.delay(2, 0, 4), s.delay(0, 1, 4));
    }
}
