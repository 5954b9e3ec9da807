//! Offline checkers that read a finished trace and judge it.
//!
//! Everything here works from the event log alone, so a trace written to disk
//! by one run can be rechecked later by `anonsim check`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::schedule::{EnvKind, Rule, Violation};
use crate::trace::{Algorithm, Event, ModeTag, Phase, Trace};
use crate::types::{Digest, Entry, ProposalValue, Round};
use crate::weakset::register::check_regular;
use crate::weakset::{oracle_check, ops_from_events};

/// Decisions must arrive within this many rounds of stabilization (ES, lockstep).
pub const ES_DECISION_SLACK: Round = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Violation,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<Round>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub witness: String,
}

impl Verdict {
    pub fn ok() -> Self {
        Verdict { status: Status::Ok, round: None, witness: String::new() }
    }

    pub fn skipped(why: impl Into<String>) -> Self {
        Verdict { status: Status::Skipped, round: None, witness: why.into() }
    }

    pub fn violation(round: Option<Round>, witness: impl Into<String>) -> Self {
        Verdict { status: Status::Violation, round, witness: witness.into() }
    }

    fn from_result(r: Result<(), (Option<Round>, String)>) -> Self {
        match r {
            Ok(()) => Verdict::ok(),
            Err((round, w)) => Verdict::violation(round, w),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub round: Round,
    pub value: ProposalValue,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub checks: BTreeMap<String, Verdict>,
    pub decisions: BTreeMap<usize, Decision>,
    pub events: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|v| v.status != Status::Violation)
    }

    pub fn violations(&self) -> impl Iterator<Item = (&str, &Verdict)> {
        self.checks.iter().filter(|(_, v)| v.status == Status::Violation).map(|(k, v)| (k.as_str(), v))
    }

    pub fn status(&self, name: &str) -> Option<Status> {
        self.checks.get(name).map(|v| v.status)
    }

    pub fn first_decision(&self) -> Option<Round> {
        self.decisions.values().map(|d| d.round).min()
    }

    pub fn last_decision(&self) -> Option<Round> {
        self.decisions.values().map(|d| d.round).max()
    }

    fn put(&mut self, name: &str, v: Verdict) {
        self.checks.insert(name.to_owned(), v);
    }
}

struct DeliverRec<'a> {
    index: usize,
    from: Option<usize>,
    digests: &'a [Digest],
}

/// Per-process lookup tables over one event log.
struct Index<'a> {
    n: usize,
    horizon: Round,
    /// (p, k) -> event index and payload digest of p's round-k message.
    sent: HashMap<(usize, Round), (usize, Digest)>,
    /// (p, k) -> event index of p's `compute(k)`.
    computed: HashMap<(usize, Round), usize>,
    delivered: HashMap<(usize, Round), Vec<DeliverRec<'a>>>,
    mid: HashMap<(usize, Round), &'a crate::giraf::StateRecord>,
    crashed: Vec<Option<Round>>,
    decided: Vec<Option<Decision>>,
    final_round: Vec<Round>,
}

impl<'a> Index<'a> {
    fn new(trace: &'a Trace) -> Self {
        let n = trace.header.n;
        let mut ix = Index {
            n,
            horizon: trace.header.horizon,
            sent: HashMap::new(),
            computed: HashMap::new(),
            delivered: HashMap::new(),
            mid: HashMap::new(),
            crashed: vec![None; n],
            decided: vec![None; n],
            final_round: vec![0; n],
        };
        for (i, e) in trace.events.iter().enumerate() {
            match e {
                Event::EndOfRound { process, round, digest, .. } => {
                    ix.sent.insert((*process, *round), (i, *digest));
                    if *round >= 2 {
                        ix.computed.insert((*process, round - 1), i);
                    }
                    ix.final_round[*process] = ix.final_round[*process].max(*round);
                }
                Event::Decide { process, round, value, .. } => {
                    ix.computed.insert((*process, *round), i);
                    ix.decided[*process] = Some(Decision { round: *round, value: *value });
                    ix.final_round[*process] = ix.final_round[*process].max(*round);
                }
                Event::Deliver { process, from, round, digests, .. } => {
                    ix.delivered.entry((*process, *round)).or_default().push(DeliverRec {
                        index: i,
                        from: *from,
                        digests,
                    });
                }
                Event::Crash { process, round, .. } => ix.crashed[*process] = Some(*round),
                Event::Snapshot { process, round, phase: Phase::Mid, state, .. } => {
                    ix.mid.insert((*process, *round), state);
                }
                _ => {}
            }
        }
        ix
    }

    fn computes(&self, p: usize, k: Round) -> bool {
        self.computed.contains_key(&(p, k))
    }

    fn computing(&self, k: Round) -> Vec<usize> {
        (0..self.n).filter(|&p| self.computes(p, k)).collect()
    }

    fn senders(&self, k: Round) -> Vec<usize> {
        (0..self.n).filter(|&p| self.sent.contains_key(&(p, k))).collect()
    }

    /// `j` had `s`'s round-`k` message in hand when it ran `compute(k)`.
    fn received(&self, j: usize, s: usize, k: Round) -> bool {
        if j == s {
            return true;
        }
        let (Some(&at), Some(&(_, digest))) = (self.computed.get(&(j, k)), self.sent.get(&(s, k))) else {
            return false;
        };
        self.delivered.get(&(j, k)).is_some_and(|ds| {
            ds.iter().any(|d| {
                d.index < at
                    && match d.from {
                        Some(f) => f == s,
                        None => d.digests.contains(&digest),
                    }
            })
        })
    }

    fn received_ever(&self, j: usize, s: usize, k: Round) -> bool {
        self.delivered
            .get(&(j, k))
            .is_some_and(|ds| ds.iter().any(|d| d.from == Some(s)))
    }

    fn first_decision(&self) -> Option<Round> {
        self.decided.iter().flatten().map(|d| d.round).min()
    }
}

/// Check the trace against the environment named in its header: every round
/// has a source, and after stabilization the stronger ES/ESS guarantees hold.
/// Only processes that actually ran `compute(k)` count as recipients.
pub fn validate_trace_env(trace: &Trace) -> Result<(), Violation> {
    validate_env(&Index::new(trace), trace)
}

fn validate_env(ix: &Index<'_>, trace: &Trace) -> Result<(), Violation> {
    let h = &trace.header;
    let stab = h.stabilization.filter(|_| h.env != EnvKind::Ms);
    for k in 1..=ix.horizon {
        let recipients = ix.computing(k);
        let senders = ix.senders(k);
        if recipients.is_empty() || senders.is_empty() {
            continue;
        }
        let by_all = |s: usize| recipients.iter().all(|&j| ix.received(j, s, k));
        if !senders.iter().any(|&s| by_all(s)) {
            return Err(Violation {
                round: k,
                rule: Rule::NoSource,
                detail: format!("no round-{k} message reached all of {recipients:?}"),
            });
        }
        if !stab.is_some_and(|st| k >= st) {
            continue;
        }
        match h.env {
            EnvKind::Es => {
                for &s in senders.iter().filter(|&&s| ix.crashed[s].is_none()) {
                    if let Some(j) = recipients.iter().find(|&&j| !ix.received(j, s, k)) {
                        return Err(Violation {
                            round: k,
                            rule: Rule::NotSynchronous,
                            detail: format!("{j} computed round {k} without the message of {s}"),
                        });
                    }
                }
            }
            EnvKind::Ess => {
                let Some(s) = h.stable_source else {
                    return Err(Violation { round: 0, rule: Rule::Shape, detail: "no stable source in header".into() });
                };
                if let Some(c) = ix.crashed[s] {
                    return Err(Violation {
                        round: c,
                        rule: Rule::StableSourceCrashed,
                        detail: format!("stable source {s} crashed"),
                    });
                }
                if !ix.sent.contains_key(&(s, k)) {
                    continue;
                }
                if let Some(j) = recipients.iter().find(|&&j| !ix.received(j, s, k)) {
                    return Err(Violation {
                        round: k,
                        rule: Rule::StableSourceLate,
                        detail: format!("{j} computed round {k} without the stable source {s}"),
                    });
                }
            }
            EnvKind::Ms => {}
        }
    }
    Ok(())
}

type Outcome = Result<(), (Option<Round>, String)>;

fn reliability(ix: &Index<'_>, max_delay: u8) -> Outcome {
    for ((s, k), _) in ix.sent.iter().filter(|((_, k), _)| *k <= ix.horizon) {
        if ix.crashed[*s].is_some() {
            continue;
        }
        for j in (0..ix.n).filter(|&j| j != *s && ix.crashed[j].is_none()) {
            if ix.final_round[j] >= k + Round::from(max_delay) && !ix.received_ever(j, *s, *k) {
                return Err((Some(*k), format!("round-{k} message {s}->{j} never delivered")));
            }
        }
    }
    Ok(())
}

fn progress(ix: &Index<'_>) -> Outcome {
    for p in 0..ix.n {
        if ix.crashed[p].is_none() && ix.decided[p].is_none() && ix.final_round[p] <= ix.horizon {
            return Err((Some(ix.final_round[p]), format!("process {p} stalled in round {}", ix.final_round[p])));
        }
    }
    Ok(())
}

fn validity(ix: &Index<'_>, values: &[ProposalValue]) -> Outcome {
    let mut bad: Vec<(Round, usize, ProposalValue)> = ix
        .decided
        .iter()
        .enumerate()
        .filter_map(|(p, d)| d.map(|d| (d.round, p, d.value)))
        .filter(|(_, _, v)| !values.contains(v))
        .collect();
    bad.sort();
    match bad.first() {
        Some(&(r, p, v)) => Err((Some(r), format!("process {p} decided {v}, which nobody proposed"))),
        None => Ok(()),
    }
}

fn agreement(ix: &Index<'_>) -> Outcome {
    let mut ds: Vec<(Round, usize, ProposalValue)> =
        ix.decided.iter().enumerate().filter_map(|(p, d)| d.map(|d| (d.round, p, d.value))).collect();
    ds.sort();
    let Some(&(_, p0, v0)) = ds.first() else { return Ok(()) };
    match ds.iter().find(|d| d.2 != v0) {
        Some(&(r, p, v)) => Err((Some(r), format!("process {p0} decided {v0} but {p} decided {v}"))),
        None => Ok(()),
    }
}

fn decide_by(ix: &Index<'_>, bound: Round) -> Outcome {
    for p in (0..ix.n).filter(|&p| ix.crashed[p].is_none()) {
        match ix.decided[p] {
            Some(d) if d.round <= bound => {}
            Some(d) => return Err((Some(d.round), format!("process {p} decided only in round {}", d.round))),
            None => return Err((Some(bound), format!("process {p} did not decide by round {bound}"))),
        }
    }
    Ok(())
}

fn lemma_limit(ix: &Index<'_>, always: bool) -> Round {
    if always {
        ix.horizon
    } else {
        ix.first_decision().unwrap_or(ix.horizon).min(ix.horizon)
    }
}

/// A value one process saw in every message of a round is in everybody's
/// proposals after that round.
fn lemma1(ix: &Index<'_>, always: bool) -> Outcome {
    for k in 1..=lemma_limit(ix, always) {
        let procs: Vec<usize> = ix.computing(k).into_iter().filter(|p| ix.mid.contains_key(&(*p, k))).collect();
        for &i in &procs {
            for v in &ix.mid[&(i, k)].written {
                if let Some(j) = procs.iter().find(|&&j| !ix.mid[&(j, k)].proposed.contains(v)) {
                    return Err((Some(k), format!("{i} wrote {v:?} in round {k} but {j} never heard of it")));
                }
            }
        }
    }
    Ok(())
}

/// What was written in an odd round is written by everybody in the next one.
fn lemma2(ix: &Index<'_>) -> Outcome {
    for k in (2..=lemma_limit(ix, false)).step_by(2) {
        let procs: Vec<usize> = ix.computing(k).into_iter().filter(|p| ix.mid.contains_key(&(*p, k))).collect();
        for &i in &procs {
            for v in &ix.mid[&(i, k)].written_old {
                if let Some(j) = procs.iter().find(|&&j| !ix.mid[&(j, k)].written.contains(v)) {
                    return Err((
                        Some(k),
                        format!("{i} wrote {v:?} in round {} but {j} did not write it in round {k}", k - 1),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// A process decides `v` only when its last two rounds carried nothing but
/// `v` and ⊥.
fn bot_free(ix: &Index<'_>) -> Outcome {
    for (p, d) in ix.decided.iter().enumerate().filter_map(|(p, d)| d.map(|d| (p, d))) {
        let ok_set: BTreeSet<Entry> = [Entry::Bot, Entry::from(d.value)].into();
        for k in [d.round.saturating_sub(1), d.round] {
            let Some(mid) = ix.mid.get(&(p, k)) else { continue };
            if !mid.proposed.is_subset(&ok_set) {
                return Err((Some(k), format!("{p} decided {} with proposals {:?}", d.value, mid.proposed)));
            }
            if !matches!(mid.val, Some(Entry::Value(_))) {
                return Err((Some(k), format!("{p} holds {:?} instead of a value", mid.val)));
            }
        }
    }
    Ok(())
}

/// Causal heard-of matrix: `known[(i, r)][j]` is the highest round of `j` that
/// `i` has (transitively) heard of when it runs `compute(r)`.
fn heard_of(trace: &Trace) -> HashMap<(usize, Round), Vec<Round>> {
    let n = trace.header.n;
    let mut cur: Vec<Vec<Round>> = vec![vec![0; n]; n];
    let mut sent: HashMap<(usize, Round), Vec<Round>> = HashMap::new();
    let mut known = HashMap::new();
    let merge = |into: &mut Vec<Round>, from: &[Round]| {
        for (a, b) in into.iter_mut().zip(from) {
            *a = (*a).max(*b);
        }
    };
    for e in &trace.events {
        match e {
            Event::EndOfRound { process, round, .. } => {
                let p = *process;
                if *round >= 2 {
                    let mut k = cur[p].clone();
                    k[p] = round - 1;
                    known.insert((p, round - 1), k);
                }
                cur[p][p] = *round;
                sent.insert((p, *round), cur[p].clone());
            }
            Event::Decide { process, round, .. } => {
                let mut k = cur[*process].clone();
                k[*process] = *round;
                known.insert((*process, *round), k);
            }
            Event::Deliver { process, from: Some(s), round, .. } => {
                if let Some(v) = sent.get(&(*s, *round)) {
                    let v = v.clone();
                    merge(&mut cur[*process], &v);
                }
            }
            _ => {}
        }
    }
    known
}

struct Window {
    source: usize,
    rounds: std::ops::RangeInclusive<Round>,
    connected: Vec<usize>,
}

/// The last quarter of the rounds between stabilization and the first
/// decision, plus the processes the stable source heard from during it.
fn ess_window(ix: &Index<'_>, trace: &Trace) -> Result<Window, String> {
    let h = &trace.header;
    let (Some(k0), Some(s)) = (h.stabilization, h.stable_source) else {
        return Err("no stable source".into());
    };
    let d = ix.first_decision().ok_or("nobody decided")?;
    if d <= k0 {
        return Err(format!("decided in round {d}, before stabilization at {k0}"));
    }
    let q0 = d - (d - k0).div_ceil(4);
    let known = heard_of(trace);
    let ks = known.get(&(s, d - 1)).ok_or("stable source did not compute the last window round")?;
    let connected = (0..ix.n).filter(|&p| p == s || ks[p] >= q0).collect();
    Ok(Window { source: s, rounds: q0..=d - 1, connected })
}

fn leaders(ix: &Index<'_>, k: Round) -> BTreeSet<usize> {
    ix.computing(k)
        .into_iter()
        .filter(|p| ix.mid.get(&(*p, k)).is_some_and(|m| m.leader == Some(true)))
        .collect()
}

fn leader_stable(ix: &Index<'_>, w: &Window) -> Outcome {
    let first = leaders(ix, *w.rounds.start());
    if first.is_empty() {
        return Err((Some(*w.rounds.start()), "no leader".into()));
    }
    for k in w.rounds.clone() {
        let now = leaders(ix, k);
        if now != first {
            return Err((Some(k), format!("leaders changed from {first:?} to {now:?}")));
        }
    }
    Ok(())
}

fn leader_received(ix: &Index<'_>, w: &Window) -> Outcome {
    for k in w.rounds.clone() {
        for l in leaders(ix, k) {
            if let Some(j) = w.connected.iter().find(|&&j| ix.computes(j, k) && !ix.received(j, l, k)) {
                return Err((Some(k), format!("{j} missed the message of leader {l}")));
            }
        }
    }
    Ok(())
}

fn counter_growth(ix: &Index<'_>, w: &Window) -> Outcome {
    let hist = |k: Round| ix.mid.get(&(w.source, k)).and_then(|m| m.history);
    let fresh = |j: usize, k: Round| {
        let h = hist(k)?;
        ix.mid.get(&(j, k))?.fresh_counters.as_ref()?.get(&h).copied()
    };
    for k in *w.rounds.start()..*w.rounds.end() {
        for &j in w.connected.iter().filter(|&&j| ix.computes(j, k) && ix.computes(j, k + 1)) {
            match (fresh(j, k), fresh(j, k + 1)) {
                (Some(a), Some(b)) if b == a + 1 => {}
                (a, b) => {
                    return Err((
                        Some(k + 1),
                        format!("counter of the stable source at {j} went {a:?} -> {b:?}"),
                    ))
                }
            }
        }
    }
    Ok(())
}

fn adds_complete(trace: &Trace, ix: &Index<'_>) -> Outcome {
    let mut open: BTreeMap<(usize, u64), u64> = BTreeMap::new();
    for e in &trace.events {
        match e {
            Event::AddStart { process, op, tick, .. } => {
                open.insert((*process, *op), *tick);
            }
            Event::AddEnd { process, op, .. } => {
                open.remove(&(*process, *op));
            }
            _ => {}
        }
    }
    match open.iter().find(|((p, _), _)| ix.crashed[*p].is_none()) {
        Some(((p, op), t)) => Err((None, format!("add {op} of correct process {p} (tick {t}) never finished"))),
        None => Ok(()),
    }
}

/// Run every checker that applies to this kind of trace.
pub fn check_trace(trace: &Trace) -> CheckReport {
    let ix = Index::new(trace);
    let h = &trace.header;
    let mut r = CheckReport { events: trace.events.len(), ..Default::default() };
    r.decisions = ix.decided.iter().enumerate().filter_map(|(p, d)| d.map(|d| (p, d))).collect();

    r.put(
        "environment",
        match validate_env(&ix, trace) {
            Ok(()) => Verdict::ok(),
            Err(v) => Verdict::violation(Some(v.round), format!("{}: {}", v.rule, v.detail)),
        },
    );
    r.put(
        "reliability",
        if h.emulated {
            Verdict::skipped("emulated links have no delay bound")
        } else {
            Verdict::from_result(reliability(&ix, h.max_delay))
        },
    );

    match h.algorithm {
        Algorithm::Weakset => {
            r.put("lemma1", Verdict::from_result(lemma1(&ix, true)));
            r.put(
                "weakset_oracle",
                match oracle_check(&ops_from_events(&trace.events)) {
                    Ok(()) => Verdict::ok(),
                    Err(v) => Verdict::violation(None, v.to_string()),
                },
            );
            r.put("adds_complete", Verdict::from_result(adds_complete(trace, &ix)));
        }
        Algorithm::Register => {
            r.put("lemma1", Verdict::from_result(lemma1(&ix, true)));
            r.put(
                "register_regular",
                match check_regular(&trace.events) {
                    Ok(()) => Verdict::ok(),
                    Err(v) => Verdict::violation(None, v.to_string()),
                },
            );
            r.put("adds_complete", Verdict::from_result(adds_complete(trace, &ix)));
        }
        Algorithm::Es | Algorithm::Ess | Algorithm::Emulation => {
            r.put("progress", Verdict::from_result(progress(&ix)));
            r.put("validity", Verdict::from_result(validity(&ix, &h.values)));
            r.put("agreement", Verdict::from_result(agreement(&ix)));
            r.put("lemma1", Verdict::from_result(lemma1(&ix, false)));
            r.put("lemma2", Verdict::from_result(lemma2(&ix)));
            r.put("termination", termination(&ix, trace));
            if h.algorithm == Algorithm::Ess {
                r.put("bot_free", Verdict::from_result(bot_free(&ix)));
                ess_windowed(&mut r, &ix, trace);
            }
        }
    }
    r
}

fn termination(ix: &Index<'_>, trace: &Trace) -> Verdict {
    let h = &trace.header;
    if h.mode != ModeTag::Lockstep || h.emulated {
        return Verdict::skipped("no bound outside lockstep network runs");
    }
    let Some(k0) = h.stabilization.filter(|_| h.env != EnvKind::Ms) else {
        return Verdict::skipped("environment never stabilizes");
    };
    match (h.algorithm, h.env) {
        (Algorithm::Es, EnvKind::Es) => {
            let bound = k0 + ES_DECISION_SLACK;
            if bound > h.horizon {
                return Verdict::skipped(format!("horizon {} ends before round {bound}", h.horizon));
            }
            Verdict::from_result(decide_by(ix, bound))
        }
        (Algorithm::Ess, EnvKind::Ess | EnvKind::Es) => Verdict::from_result(decide_by(ix, h.horizon)),
        _ => Verdict::skipped("algorithm not designed for this environment"),
    }
}

fn ess_windowed(r: &mut CheckReport, ix: &Index<'_>, trace: &Trace) {
    let names = ["leader_stable", "leader_received", "counter_growth"];
    if trace.header.env != EnvKind::Ess || trace.header.emulated {
        for n in names {
            r.put(n, Verdict::skipped("needs a network run in the ESS environment"));
        }
        return;
    }
    match ess_window(ix, trace) {
        Ok(w) => {
            r.put(names[0], Verdict::from_result(leader_stable(ix, &w)));
            r.put(names[1], Verdict::from_result(leader_received(ix, &w)));
            r.put(names[2], Verdict::from_result(counter_growth(ix, &w)));
        }
        Err(why) => {
            for n in names {
                r.put(n, Verdict::skipped(why.clone()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus_es::EsState;
    use crate::schedule::{Schedule, ScheduleParams};
    use crate::sim::{run_simulation, Mode};
    use crate::trace::TraceHeader;

    fn es_trace(sched: &Schedule, values: &[u64], mutant: bool) -> Trace {
        let automata = values
            .iter()
            .map(|&v| if mutant { EsState::mutant(ProposalValue(v)) } else { EsState::new(ProposalValue(v)) })
            .collect();
        let events = run_simulation(sched, automata, Mode::Lockstep).unwrap();
        let mut h = TraceHeader::new(Algorithm::Es, sched.env, sched.n, sched.horizon, sched.seed);
        h.values = values.iter().map(|&v| ProposalValue(v)).collect();
        h.max_delay = sched.max_delay;
        h.stabilization = sched.stabilization;
        Trace::new(h, events)
    }

    #[test]
    fn synchronous_run_passes_everything() {
        let t = es_trace(&Schedule::synchronous(3, 12), &[3, 7, 5], false);
        let r = check_trace(&t);
        assert!(r.passed(), "{:?}", r.checks);
        assert_eq!(r.decisions.len(), 3);
        assert!(r.decisions.values().all(|d| d.value == ProposalValue(7)));
    }

    #[test]
    fn missing_source_is_caught() {
        let mut t = es_trace(&Schedule::synchronous(2, 8), &[3, 7], false);
        t.events.retain(|e| !matches!(e, Event::Deliver { round: 3, .. }));
        let v = validate_trace_env(&t).unwrap_err();
        assert_eq!((v.round, v.rule), (3, Rule::NoSource));
    }

    #[test]
    fn disagreement_reports_the_later_decision() {
        let mut t = es_trace(&Schedule::synchronous(2, 8), &[3, 7], false);
        for e in &mut t.events {
            if let Event::Decide { process: 1, value, .. } = e {
                *value = ProposalValue(3);
            }
        }
        let r = check_trace(&t);
        assert_eq!(r.status("agreement"), Some(Status::Violation));
        assert_eq!(r.status("validity"), Some(Status::Ok));
    }

    #[test]
    fn mutant_trips_the_lemmas() {
        let tripped = (0..40).any(|seed| {
            let s = Schedule::generate(&ScheduleParams::new(EnvKind::Ms, 4, 30, seed)).unwrap();
            let r = check_trace(&es_trace(&s, &[1, 2, 3, 4], true));
            r.status("lemma1") == Some(Status::Violation) || r.status("lemma2") == Some(Status::Violation)
        });
        assert!(tripped);
    }

    #[test]
    fn es_runs_decide_in_time() {
        for seed in 0..30 {
            let p = ScheduleParams::new(EnvKind::Es, 4, 40, seed).stabilization(1 + seed as Round % 20);
            let s = Schedule::generate(&p).unwrap();
            let r = check_trace(&es_trace(&s, &[4, 1, 9, 2], false));
            assert!(r.passed(), "seed {seed}: {:?}", r.violations().collect::<Vec<_>>());
        }
    }
}
