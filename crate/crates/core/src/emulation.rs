//! Running round-based automata on top of a weak-set instead of a network.
//!
//! Each emulated process stores its outgoing ⟨M, k⟩ in the weak-set and waits
//! for the add to finish. It then reads the weak-set, delivers every pair it
//! has not delivered before and ends its round. Whoever finishes adding its
//! round-`k` pair first is seen by everyone who ends round `k` afterwards, so
//! every round has a source.
//!
//! Two backends are provided: [`OracleWeakSet`], an in-memory linearizable
//! object with random latencies, and [`Alg4Backend`], the message-passing
//! weak-set running on its own simulated moving-source network.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::giraf::{Automaton, Bundle, KernelError, Payload, Process, RoundEnd};
use crate::schedule::Schedule;
use crate::sim::{Mode, SimError, Simulation};
use crate::trace::{Event, Phase};
use crate::types::{Digest, DigestBuilder, Digestible, Round};
use crate::weakset::{Element, WeakSetError, WeakSetNode};

/// A ⟨M, k⟩ pair as stored in the weak-set.
#[derive(Clone)]
pub struct RoundMessage<P> {
    round: Round,
    payloads: Arc<Vec<P>>,
    digest: Digest,
}

impl<P: Payload> RoundMessage<P> {
    pub fn new(bundle: &Bundle<P>) -> Self {
        let mut payloads = bundle.payloads.clone();
        payloads.sort_by_key(Payload::digest);
        let mut h = DigestBuilder::new();
        h.tag(b'e').u64(u64::from(bundle.round)).u64(payloads.len() as u64);
        for p in &payloads {
            h.digest(&p.digest());
        }
        RoundMessage { round: bundle.round, payloads: Arc::new(payloads), digest: h.finish() }
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn bundle(&self) -> Bundle<P> {
        Bundle { round: self.round, payloads: self.payloads.to_vec() }
    }

    pub fn payload_digests(&self) -> Vec<Digest> {
        self.payloads.iter().map(Payload::digest).collect()
    }
}

impl<P> PartialEq for RoundMessage<P> {
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round && self.digest == other.digest
    }
}

impl<P> Eq for RoundMessage<P> {}

impl<P> PartialOrd for RoundMessage<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for RoundMessage<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.round, self.digest).cmp(&(other.round, other.digest))
    }
}

impl<P> fmt::Debug for RoundMessage<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{:?}, {}>", self.digest, self.round)
    }
}

impl<P> Digestible for RoundMessage<P> {
    fn digest(&self) -> Digest {
        self.digest
    }
}

/// What happened during one backend tick.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Advance {
    pub crashed: Vec<usize>,
    /// Processes whose add finished, in the order they finished.
    pub completed: Vec<usize>,
}

/// A weak-set shared by `n` processes, advanced in discrete ticks.
pub trait WeakSetBackend<T> {
    fn n(&self) -> usize;
    fn now(&self) -> u64;
    fn start_add(&mut self, p: usize, v: T) -> Result<(), WeakSetError>;
    fn get(&self, p: usize) -> BTreeSet<T>;
    /// Run one tick; `None` once the backend has nothing left to do.
    fn advance(&mut self) -> Option<Advance>;
    fn is_crashed(&self, p: usize) -> bool;
}

struct OracleAdd<T> {
    process: usize,
    value: T,
    effect: u64,
    end: u64,
    done: bool,
    void: bool,
}

/// Linearizable weak-set: each add takes effect at one instant inside its
/// interval. Completion latency is 1 to `1 + latency` ticks.
pub struct OracleWeakSet<T> {
    n: usize,
    now: u64,
    latency: u64,
    budget: u64,
    crash_at: Vec<Option<u64>>,
    crashed: Vec<bool>,
    adds: Vec<OracleAdd<T>>,
    rng: ChaCha8Rng,
}

impl<T: Element> OracleWeakSet<T> {
    /// `crash_at[p] = Some(t)`: process `p` crashes at the start of tick `t`;
    /// `Some(0)` means it never starts.
    pub fn new(n: usize, latency: u64, budget: u64, crash_at: Vec<Option<u64>>, seed: u64) -> Self {
        assert_eq!(crash_at.len(), n, "one crash entry per process");
        OracleWeakSet {
            n,
            now: 0,
            latency,
            budget,
            crashed: crash_at.iter().map(|c| *c == Some(0)).collect(),
            crash_at,
            adds: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<T: Element> WeakSetBackend<T> for OracleWeakSet<T> {
    fn n(&self) -> usize {
        self.n
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn start_add(&mut self, p: usize, value: T) -> Result<(), WeakSetError> {
        if self.crashed[p] {
            return Err(WeakSetError::Crashed(p));
        }
        if self.adds.iter().any(|a| a.process == p && !a.done && !a.void) {
            return Err(WeakSetError::Busy(p));
        }
        let end = self.now + 1 + self.rng.random_range(0..=self.latency);
        let effect = self.rng.random_range(self.now..=end);
        self.adds.push(OracleAdd { process: p, value, effect, end, done: false, void: false });
        Ok(())
    }

    fn get(&self, _p: usize) -> BTreeSet<T> {
        self.adds
            .iter()
            .filter(|a| !a.void && a.effect <= self.now)
            .map(|a| a.value.clone())
            .collect()
    }

    fn advance(&mut self) -> Option<Advance> {
        if self.now >= self.budget {
            return None;
        }
        self.now += 1;
        let now = self.now;
        let mut out = Advance::default();
        for p in 0..self.n {
            if !self.crashed[p] && self.crash_at[p].is_some_and(|t| t <= now) {
                self.crashed[p] = true;
                out.crashed.push(p);
                for a in self.adds.iter_mut().filter(|a| a.process == p && !a.done) {
                    // An add interrupted before its effect point never happens.
                    a.void = a.effect >= now;
                    a.done = true;
                }
            }
        }
        for a in self.adds.iter_mut().filter(|a| !a.done && a.end == now) {
            a.done = true;
            out.completed.push(a.process);
        }
        out.completed.shuffle(&mut self.rng);
        Some(out)
    }

    fn is_crashed(&self, p: usize) -> bool {
        self.crashed[p]
    }
}

/// The message-passing weak-set on a lockstep moving-source network.
pub struct Alg4Backend<T: Element> {
    sim: Simulation<WeakSetNode<T>>,
}

impl<T: Element> Alg4Backend<T> {
    pub fn new(sched: &Schedule) -> Result<Self, SimError> {
        let nodes = (0..sched.n).map(WeakSetNode::new).collect();
        Ok(Alg4Backend { sim: Simulation::new(sched.clone(), Mode::Lockstep, nodes)?.quiet() })
    }
}

impl<T: Element> WeakSetBackend<T> for Alg4Backend<T> {
    fn n(&self) -> usize {
        self.sim.schedule().n
    }

    fn now(&self) -> u64 {
        self.sim.tick()
    }

    fn start_add(&mut self, p: usize, v: T) -> Result<(), WeakSetError> {
        if self.sim.process(p).is_crashed() {
            return Err(WeakSetError::Crashed(p));
        }
        self.sim.process_mut(p).automaton_mut().add(v)
    }

    fn get(&self, p: usize) -> BTreeSet<T> {
        self.sim.process(p).automaton().get().clone()
    }

    fn advance(&mut self) -> Option<Advance> {
        let n = self.n();
        let before: Vec<bool> = (0..n).map(|p| self.sim.process(p).is_crashed()).collect();
        if !self.sim.step().expect("weak-set nodes never halt") {
            return None;
        }
        let mut out = Advance::default();
        for p in 0..n {
            if !before[p] && self.sim.process(p).is_crashed() {
                out.crashed.push(p);
            }
            // Label order breaks ties between adds finishing in the same tick.
            if self.sim.process_mut(p).automaton_mut().take_completion() {
                out.completed.push(p);
            }
        }
        Some(out)
    }

    fn is_crashed(&self, p: usize) -> bool {
        self.sim.process(p).is_crashed()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EmuError {
    #[error("process {0} was booted twice")]
    DoubleBoot(usize),
    #[error("backend has {backend} processes but {got} automata were supplied")]
    Arity { backend: usize, got: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    WeakSet(#[from] WeakSetError),
}

struct EmuProcess<A: Automaton> {
    kernel: Process<A>,
    delivered: HashSet<(Round, Digest)>,
    booted: bool,
    finished: bool,
}

/// Drives one automaton per backend process through emulated rounds.
pub struct Emulator<A: Automaton, B> {
    procs: Vec<EmuProcess<A>>,
    backend: B,
    horizon: Round,
    events: Vec<Event>,
}

impl<A, B> Emulator<A, B>
where
    A: Automaton,
    B: WeakSetBackend<RoundMessage<A::Payload>>,
{
    pub fn new(automata: Vec<A>, backend: B, horizon: Round) -> Result<Self, EmuError> {
        if automata.len() != backend.n() {
            return Err(EmuError::Arity { backend: backend.n(), got: automata.len() });
        }
        let procs = automata
            .into_iter()
            .enumerate()
            .map(|(i, a)| EmuProcess {
                kernel: Process::new(i, a),
                delivered: HashSet::new(),
                booted: false,
                finished: false,
            })
            .collect();
        Ok(Emulator { procs, backend, horizon, events: Vec::new() })
    }

    pub fn process(&self, p: usize) -> &Process<A> {
        &self.procs[p].kernel
    }

    /// Start process `p`: its first end-of-round fires immediately.
    pub fn boot(&mut self, p: usize) -> Result<(), EmuError> {
        if std::mem::replace(&mut self.procs[p].booted, true) {
            return Err(EmuError::DoubleBoot(p));
        }
        self.end_of_round(p)
    }

    fn end_of_round(&mut self, p: usize) -> Result<(), EmuError> {
        let tick = self.backend.now();
        let proc = &mut self.procs[p];
        let k = proc.kernel.round();
        let end = proc.kernel.end_of_round()?;
        if let Some(mid) = proc.kernel.automaton().checkpoint() {
            self.events.push(Event::Snapshot { process: p, round: k, phase: Phase::Mid, state: mid, tick });
        }
        let state = proc.kernel.automaton().observe();
        self.events.push(Event::Snapshot { process: p, round: k, phase: Phase::End, state, tick });
        match end {
            RoundEnd::Broadcast { bundle, own } => {
                let r = bundle.round;
                self.events.push(Event::EndOfRound { process: p, round: r, digest: own.digest(), tick });
                if r <= self.horizon {
                    self.backend.start_add(p, RoundMessage::new(&bundle))?;
                } else {
                    self.procs[p].finished = true;
                }
            }
            RoundEnd::Halted { round, value } => {
                self.events.push(Event::Decide { process: p, round, value, tick });
                self.procs[p].finished = true;
            }
        }
        Ok(())
    }

    /// The add of `p` finished: deliver what is new, then end the round.
    fn add_completed(&mut self, p: usize) -> Result<(), EmuError> {
        let tick = self.backend.now();
        for pair in self.backend.get(p) {
            let proc = &mut self.procs[p];
            if !proc.delivered.insert((pair.round, pair.digest)) {
                continue;
            }
            proc.kernel.receive(&pair.bundle());
            self.events.push(Event::Deliver {
                process: p,
                from: None,
                round: pair.round,
                at: proc.kernel.round(),
                digests: pair.payload_digests(),
                tick,
            });
        }
        self.end_of_round(p)
    }

    fn live(&self, p: usize) -> bool {
        !self.procs[p].finished && !self.procs[p].kernel.is_crashed()
    }

    /// Boot everyone and run until every live process is finished or the
    /// backend runs out of ticks.
    pub fn run(mut self) -> Result<Vec<Event>, EmuError> {
        for p in 0..self.procs.len() {
            if self.backend.is_crashed(p) {
                self.procs[p].kernel.crash();
                let tick = self.backend.now();
                self.events.push(Event::Crash { process: p, round: 0, tick });
            } else {
                self.boot(p)?;
            }
        }
        while (0..self.procs.len()).any(|p| self.live(p)) {
            let Some(adv) = self.backend.advance() else { break };
            let tick = self.backend.now();
            for p in adv.crashed {
                let proc = &mut self.procs[p];
                proc.kernel.crash();
                self.events.push(Event::Crash { process: p, round: proc.kernel.round(), tick });
            }
            for p in adv.completed {
                if self.live(p) {
                    self.add_completed(p)?;
                }
            }
        }
        Ok(self.events)
    }
}
