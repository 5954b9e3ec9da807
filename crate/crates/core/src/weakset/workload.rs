//! Randomized operation workloads on top of replicated weak-sets.
//!
//! Operations are issued between lockstep ticks. Each live process may start
//! an add (if none is pending) and may read. No new adds start during the last
//! `quiet_rounds` rounds, so that every add by a correct process has time to
//! finish before the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::register::{read_rule, RegisterEntry};
use super::{Element, WeakSetNode};
use crate::giraf::entries;
use crate::schedule::Schedule;
use crate::sim::{Mode, SimError, Simulation};
use crate::trace::Event;
use crate::types::{ProposalValue, Round};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub add_probability: f64,
    pub get_probability: f64,
    pub quiet_rounds: Round,
}

impl Workload {
    /// Quiet period long enough for any add to finish under `max_delay`.
    pub fn for_max_delay(max_delay: u8) -> Self {
        Workload { add_probability: 0.3, get_probability: 0.4, quiet_rounds: 3 * Round::from(max_delay) + 6 }
    }
}

impl Default for Workload {
    fn default() -> Self {
        Self::for_max_delay(crate::schedule::DEFAULT_MAX_DELAY)
    }
}

struct Driver<T: Element> {
    sim: Simulation<WeakSetNode<T>>,
    rng: ChaCha8Rng,
    pending: Vec<Option<u64>>,
    next_op: u64,
    next_value: u64,
    last_add_round: Round,
}

impl<T: Element> Driver<T> {
    fn new(sched: &Schedule, workload: &Workload, seed: u64) -> Result<Self, SimError> {
        let nodes = (0..sched.n).map(WeakSetNode::new).collect();
        Ok(Driver {
            sim: Simulation::new(sched.clone(), Mode::Lockstep, nodes)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: vec![None; sched.n],
            next_op: 0,
            next_value: 1,
            last_add_round: sched.horizon.saturating_sub(workload.quiet_rounds),
        })
    }

    /// Processes that may issue operations now.
    fn live(&self) -> Vec<usize> {
        let horizon = self.sim.schedule().horizon;
        (0..self.sim.schedule().n)
            .filter(|&p| self.sim.process(p).is_active() && self.sim.process(p).round() <= horizon)
            .collect()
    }

    fn may_add(&mut self, p: usize, probability: f64) -> bool {
        self.pending[p].is_none()
            && self.sim.process(p).round() <= self.last_add_round
            && self.rng.random_bool(probability)
    }

    fn fresh_value(&mut self) -> ProposalValue {
        self.next_value += 1;
        ProposalValue(self.next_value - 1)
    }

    fn start_add(&mut self, p: usize, v: T) -> u64 {
        let op = self.next_op;
        self.next_op += 1;
        let tick = self.sim.tick();
        self.sim.record(Event::AddStart { process: p, op, value: v.entry(), tick });
        self.sim.process_mut(p).automaton_mut().add(v).expect("driver never overlaps adds");
        self.pending[p] = Some(op);
        op
    }

    fn get(&mut self, p: usize) -> Vec<T> {
        let items: Vec<T> = self.sim.process(p).automaton().get().iter().cloned().collect();
        let tick = self.sim.tick();
        self.sim.record(Event::Get { process: p, values: entries(&items).into_iter().collect(), tick });
        items
    }

    /// Step one tick and report which processes finished their add.
    fn step(&mut self) -> Result<Option<Vec<(usize, u64)>>, SimError> {
        if !self.sim.step()? {
            return Ok(None);
        }
        let mut done = Vec::new();
        for p in 0..self.sim.schedule().n {
            if self.sim.process_mut(p).automaton_mut().take_completion() {
                let op = self.pending[p].take().expect("completion without a pending add");
                let tick = self.sim.tick();
                self.sim.record(Event::AddEnd { process: p, op, tick });
                done.push((p, op));
            }
        }
        Ok(Some(done))
    }
}

/// Random adds of fresh values and gets, lockstep over `sched`.
pub fn run_weakset(sched: &Schedule, workload: &Workload, seed: u64) -> Result<Vec<Event>, SimError> {
    let mut d: Driver<ProposalValue> = Driver::new(sched, workload, seed)?;
    loop {
        for p in d.live() {
            if d.may_add(p, workload.add_probability) {
                let v = d.fresh_value();
                d.start_add(p, v);
            }
            if d.rng.random_bool(workload.get_probability) {
                d.get(p);
            }
        }
        if d.step()?.is_none() {
            break;
        }
    }
    Ok(d.sim.into_events())
}

/// Random register writes and reads, lockstep over `sched`.
pub fn run_register(sched: &Schedule, workload: &Workload, seed: u64) -> Result<Vec<Event>, SimError> {
    let mut d: Driver<RegisterEntry> = Driver::new(sched, workload, seed)?;
    loop {
        for p in d.live() {
            if d.may_add(p, workload.add_probability) {
                let value = d.fresh_value();
                let tick = d.sim.tick();
                d.sim.record(Event::WriteStart { process: p, op: d.next_op, value, tick });
                let seen = d.get(p);
                d.start_add(p, RegisterEntry::new(value, &seen));
            }
            if d.rng.random_bool(workload.get_probability) {
                let seen = d.get(p);
                let tick = d.sim.tick();
                d.sim.record(Event::Read { process: p, value: read_rule(&seen), tick });
            }
        }
        let Some(done) = d.step()? else { break };
        for (p, op) in done {
            let tick = d.sim.tick();
            d.sim.record(Event::WriteEnd { process: p, op, tick });
        }
    }
    Ok(d.sim.into_events())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{CrashPlan, EnvKind, ScheduleParams};
    use crate::weakset::register::check_regular;
    use crate::weakset::{oracle_check, ops_from_events, OpKind};

    #[test]
    fn weakset_runs_satisfy_the_oracle_and_finish_adds() {
        for seed in 0..40 {
            let n = 1 + (seed as usize % 5);
            let p = ScheduleParams::new(EnvKind::Ms, n, 60, seed)
                .crashes(CrashPlan::Count((seed as usize % 2).min(n - 1)));
            let sched = Schedule::generate(&p).unwrap();
            let events = run_weakset(&sched, &Workload::default(), seed).unwrap();
            let log = ops_from_events(&events);
            assert_eq!(oracle_check(&log), Ok(()), "seed {seed}");
            for op in &log {
                if let OpKind::Add(_) = op.kind {
                    assert!(op.end.is_some() || sched.crash_after[op.process].is_some(), "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn register_runs_are_regular() {
        for seed in 0..40 {
            let p = ScheduleParams::new(EnvKind::Ms, 2 + (seed as usize % 4), 60, seed);
            let sched = Schedule::generate(&p).unwrap();
            let events = run_register(&sched, &Workload::default(), seed).unwrap();
            assert_eq!(check_regular(&events), Ok(()), "seed {seed}");
            assert_eq!(oracle_check(&ops_from_events(&events)), Ok(()));
        }
    }
}
