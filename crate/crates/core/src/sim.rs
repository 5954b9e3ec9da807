//! Drives a set of processes through a [`Schedule`].
//!
//! Delivery rule, shared by both modes: a round-`k` bundle sent from `s` to
//! `j` with scheduled delay `d` is handed to `j` as soon as `j` is in round
//! `k + d` or later. A delay of 0 therefore means the bundle is in `M_j[k]`
//! before `j` runs `compute(k)`.
//!
//! * **Lockstep**: tick `t` steps every live process once, in label order, so
//!   after tick `t` everyone is in round `t`. Tick `horizon + 1` runs the last
//!   `compute(horizon)`; what it produces is never sent.
//! * **Skewed**: one process steps per tick, picked by a seeded RNG among the
//!   processes allowed to move. A process may run `compute(k)` only once every
//!   sender the schedule marks timely towards it has sent its round-`k`
//!   bundle or will never send it.
//!
//! When the designated source of round `k` halted before sending, the first
//! process after it in label rotation that did send stands in for it, and its
//! round-`k` bundle is promoted to timely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::giraf::{Automaton, Bundle, KernelError, Payload, Process, RoundEnd};
use crate::schedule::Schedule;
use crate::trace::{Event, ModeTag, Phase};
use crate::types::Round;

/// Default starvation bound for the skewed scheduler, in steps.
pub const DEFAULT_WINDOW: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Lockstep,
    Skewed { seed: u64, window: u32 },
}

impl Mode {
    pub fn skewed(seed: u64) -> Self {
        Mode::Skewed { seed, window: DEFAULT_WINDOW }
    }

    pub fn tag(&self) -> ModeTag {
        match self {
            Mode::Lockstep => ModeTag::Lockstep,
            Mode::Skewed { .. } => ModeTag::Skewed,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("schedule is for {expected} processes but {got} automata were supplied")]
    Arity { expected: usize, got: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

struct Pending<P> {
    from: usize,
    to: usize,
    due: Round,
    bundle: std::rc::Rc<Bundle<P>>,
}

pub struct Simulation<A: Automaton> {
    sched: Schedule,
    mode: Mode,
    procs: Vec<Process<A>>,
    pending: Vec<Pending<A::Payload>>,
    events: Vec<Event>,
    tick: u64,
    rng: Option<ChaCha8Rng>,
    starving: Vec<u32>,
    snapshots: bool,
    quiet: bool,
}

impl<A: Automaton> Simulation<A> {
    pub fn new(sched: Schedule, mode: Mode, automata: Vec<A>) -> Result<Self, SimError> {
        if automata.len() != sched.n {
            return Err(SimError::Arity { expected: sched.n, got: automata.len() });
        }
        let procs: Vec<_> = automata.into_iter().enumerate().map(|(i, a)| Process::new(i, a)).collect();
        let rng = match mode {
            Mode::Skewed { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Lockstep => None,
        };
        let n = sched.n;
        let mut sim = Simulation {
            sched,
            mode,
            procs,
            pending: Vec::new(),
            events: Vec::new(),
            tick: 0,
            rng,
            starving: vec![0; n],
            snapshots: true,
            quiet: false,
        };
        for p in 0..n {
            if sim.sched.crash_after[p] == Some(0) {
                sim.procs[p].crash();
                sim.events.push(Event::Crash { process: p, round: 0, tick: 0 });
            }
        }
        Ok(sim)
    }

    /// Turn per-step state snapshots on or off (on by default).
    pub fn record_snapshots(mut self, on: bool) -> Self {
        self.snapshots = on;
        self
    }

    /// Record no events at all. For simulations used as building blocks.
    pub fn quiet(mut self) -> Self {
        self.quiet = true;
        self.snapshots = false;
        self.events.clear();
        self
    }

    pub fn schedule(&self) -> &Schedule {
        &self.sched
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn process(&self, p: usize) -> &Process<A> {
        &self.procs[p]
    }

    pub fn process_mut(&mut self, p: usize) -> &mut Process<A> {
        &mut self.procs[p]
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Append an application-level event (weak-set or register operation).
    pub fn record(&mut self, e: Event) {
        if !self.quiet {
            self.events.push(e);
        }
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    fn wants_step(&self, p: usize) -> bool {
        self.procs[p].is_active() && self.procs[p].round() <= self.sched.horizon
    }

    /// `p` will never send a round-`k` bundle.
    fn dead(&self, p: usize, k: Round) -> bool {
        let proc = &self.procs[p];
        self.sched.crash_after[p].is_some_and(|c| c < k) || (proc.is_halted() && proc.round() < k)
    }

    fn sent(&self, p: usize, k: Round) -> bool {
        self.procs[p].round() >= k
    }

    /// Stand-in source for round `k`: the designated one unless it is dead.
    fn effective_source(&self, k: Round) -> Option<usize> {
        let n = self.sched.n;
        let start = self.sched.source(k);
        (0..n).map(|i| (start + i) % n).find(|&s| !self.dead(s, k))
    }

    fn enabled(&self, p: usize) -> bool {
        if !self.wants_step(p) {
            return false;
        }
        let Mode::Skewed { .. } = self.mode else { return true };
        let k = self.procs[p].round();
        if k == 0 {
            return true;
        }
        let timely_ok = (0..self.sched.n)
            .filter(|&s| s != p && self.sched.timely(s, p, k))
            .all(|s| self.sent(s, k) || self.dead(s, k));
        timely_ok && self.effective_source(k).is_none_or(|s| self.sent(s, k))
    }

    pub fn is_done(&self) -> bool {
        !(0..self.sched.n).any(|p| self.wants_step(p))
    }

    fn deliver(&mut self, item: Pending<A::Payload>) {
        let to = item.to;
        self.procs[to].receive(&item.bundle);
        self.record(Event::Deliver {
            process: to,
            from: Some(item.from),
            round: item.bundle.round,
            at: self.procs[to].round(),
            digests: item.bundle.digests(),
            tick: self.tick,
        });
    }

    /// Hand over every bundle whose due round has been reached, in send order.
    fn flush(&mut self) {
        let procs = &self.procs;
        self.pending.retain(|it| !procs[it.to].is_crashed());
        let (ready, waiting): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|it| procs[it.to].round() >= it.due);
        self.pending = waiting;
        for item in ready {
            self.deliver(item);
        }
    }

    fn promote(&mut self, p: usize, k: Round) {
        let Some(s) = self.effective_source(k) else { return };
        if s == p {
            return;
        }
        if let Some(idx) = self
            .pending
            .iter()
            .position(|it| it.from == s && it.to == p && it.bundle.round == k)
        {
            let item = self.pending.remove(idx);
            self.deliver(item);
        }
    }

    fn step_process(&mut self, p: usize) -> Result<(), SimError> {
        let k = self.procs[p].round();
        if k >= 1 {
            self.promote(p, k);
        }
        let end = self.procs[p].end_of_round()?;
        let tick = self.tick;
        if self.snapshots {
            if let Some(mid) = self.procs[p].automaton().checkpoint() {
                self.record(Event::Snapshot { process: p, round: k, phase: Phase::Mid, state: mid, tick });
            }
            let state = self.procs[p].automaton().observe();
            self.record(Event::Snapshot { process: p, round: k, phase: Phase::End, state, tick });
        }
        match end {
            RoundEnd::Broadcast { bundle, own } => {
                let r = bundle.round;
                self.record(Event::EndOfRound { process: p, round: r, digest: own.digest(), tick });
                if r <= self.sched.horizon {
                    let bundle = std::rc::Rc::new(bundle);
                    for j in (0..self.sched.n).filter(|&j| j != p && !self.procs[j].is_crashed()) {
                        let due = r + Round::from(self.sched.delay(p, j, r));
                        self.pending.push(Pending { from: p, to: j, due, bundle: bundle.clone() });
                    }
                }
                if self.sched.crash_after[p] == Some(r) {
                    self.procs[p].crash();
                    self.record(Event::Crash { process: p, round: r, tick });
                }
            }
            RoundEnd::Halted { round, value } => {
                self.record(Event::Decide { process: p, round, value, tick });
            }
        }
        self.flush();
        Ok(())
    }

    /// One tick. Returns `false` once nothing is left to do.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.is_done() {
            return Ok(false);
        }
        self.tick += 1;
        match self.mode {
            Mode::Lockstep => {
                for p in 0..self.sched.n {
                    if self.wants_step(p) {
                        self.step_process(p)?;
                    }
                }
            }
            Mode::Skewed { window, .. } => {
                let enabled: Vec<usize> = (0..self.sched.n).filter(|&p| self.enabled(p)).collect();
                // The lowest-round live process is always enabled.
                debug_assert!(!enabled.is_empty());
                let forced = enabled
                    .iter()
                    .copied()
                    .filter(|&p| self.starving[p] >= window)
                    .max_by_key(|&p| (self.starving[p], std::cmp::Reverse(p)));
                let pick = match forced {
                    Some(p) => p,
                    None => {
                        let rng = self.rng.as_mut().expect("skewed mode owns an rng");
                        enabled[rng.random_range(0..enabled.len())]
                    }
                };
                for &p in &enabled {
                    self.starving[p] = if p == pick { 0 } else { self.starving[p] + 1 };
                }
                self.step_process(pick)?;
            }
        }
        Ok(true)
    }

    pub fn run(mut self) -> Result<Vec<Event>, SimError> {
        while self.step()? {}
        Ok(self.events)
    }
}

/// Run `automata` to the horizon and return the event log.
pub fn run_simulation<A: Automaton>(
    sched: &Schedule,
    automata: Vec<A>,
    mode: Mode,
) -> Result<Vec<Event>, SimError> {
    Simulation::new(sched.clone(), mode, automata)?.run()
}
