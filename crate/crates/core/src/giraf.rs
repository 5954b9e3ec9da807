//! Round-based kernel with set-valued inboxes.
//!
//! A [`Process`] owns one [`Automaton`] and the per-round message sets
//! `M[k]`. The automaton never sees the process label: it is handed the round
//! number and the inbox, nothing else.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Digest, DigestBuilder, Digestible, Entry, ProposalValue, Round};

/// A message body. Equality is structural, so two processes that produce the
/// same content produce the same set element.
pub trait Payload: Clone + Eq + fmt::Debug {
    fn digest(&self) -> Digest;
}

/// An immutable set used as a message body. Cloning is cheap and equality
/// compares content digests.
#[derive(Clone)]
pub struct ValueSet<T> {
    items: Arc<BTreeSet<T>>,
    digest: Digest,
}

impl<T: Digestible + Ord> ValueSet<T> {
    pub fn new(items: BTreeSet<T>) -> Self {
        let mut h = DigestBuilder::new();
        h.tag(b's').u64(items.len() as u64);
        for it in &items {
            h.digest(&it.digest());
        }
        ValueSet { items: Arc::new(items), digest: h.finish() }
    }

    pub fn empty() -> Self {
        Self::new(BTreeSet::new())
    }

    pub fn items(&self) -> &BTreeSet<T> {
        &self.items
    }

    pub fn contains(&self, v: &T) -> bool {
        self.items.contains(v)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl<T: Digestible + Ord> FromIterator<T> for ValueSet<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl<T> PartialEq for ValueSet<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.items, &other.items) || self.digest == other.digest
    }
}

impl<T> Eq for ValueSet<T> {}

impl<T: fmt::Debug> fmt::Debug for ValueSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.items.iter()).finish()
    }
}

impl<T: Digestible + Ord + Clone + fmt::Debug> Payload for ValueSet<T> {
    fn digest(&self) -> Digest {
        self.digest
    }
}

/// Intersection of all sets; empty input gives the empty set.
pub fn intersection<'a, T, I>(sets: I) -> BTreeSet<T>
where
    T: Ord + Clone + 'a,
    I: IntoIterator<Item = &'a BTreeSet<T>>,
{
    let mut it = sets.into_iter();
    let Some(first) = it.next() else { return BTreeSet::new() };
    let mut acc = first.clone();
    for s in it {
        acc.retain(|v| s.contains(v));
        if acc.is_empty() {
            break;
        }
    }
    acc
}

/// Union of all sets.
pub fn union<'a, T, I>(sets: I) -> BTreeSet<T>
where
    T: Ord + Clone + 'a,
    I: IntoIterator<Item = &'a BTreeSet<T>>,
{
    let mut acc = BTreeSet::new();
    for s in sets {
        acc.extend(s.iter().cloned());
    }
    acc
}

/// Snapshot form of a set of proposal slots.
pub fn entries<'a, T: Digestible + 'a>(set: impl IntoIterator<Item = &'a T>) -> BTreeSet<Entry> {
    set.into_iter().map(Digestible::entry).collect()
}

/// Result of one `compute` invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome<P> {
    Send(P),
    Decide(ProposalValue),
}

/// The two callbacks that instantiate the generic round-based algorithm.
///
/// Both must be deterministic and must not wait on anything.
pub trait Automaton {
    type Payload: Payload;

    fn initialize(&mut self) -> Self::Payload;

    fn compute(&mut self, round: Round, inbox: &Inbox<Self::Payload>) -> Outcome<Self::Payload>;

    /// Read-only copy of the automaton variables as they are now.
    fn observe(&self) -> StateRecord;

    /// Variables captured part-way through the most recent `compute`, at the
    /// point the analysis refers to (after the proposal union). `None` for
    /// automata that do not record one.
    fn checkpoint(&self) -> Option<StateRecord> {
        None
    }
}

/// Observable automaton variables. Fields an automaton does not have stay
/// empty / `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<Entry>,
    #[serde(default)]
    pub written: BTreeSet<Entry>,
    #[serde(default)]
    pub written_old: BTreeSet<Entry>,
    #[serde(default)]
    pub proposed: BTreeSet<Entry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Digest>,
    /// Counters assigned this round to the histories carried by received
    /// messages, keyed by history digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_counters: Option<BTreeMap<Digest, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub own_counter: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocked: Option<bool>,
}

/// `⟨M, k⟩`: a set of payloads tagged with the round they belong to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Bundle<P> {
    pub round: Round,
    pub payloads: Vec<P>,
}

impl<P: Payload> Bundle<P> {
    pub fn digests(&self) -> Vec<Digest> {
        self.payloads.iter().map(Payload::digest).collect()
    }
}

/// Per-round message sets `M[k]`.
///
/// Insertion is set union. Every genuinely new element is also appended to an
/// arrival log so automata that read all rounds can do so incrementally.
#[derive(Clone, Debug)]
pub struct Inbox<P> {
    rounds: BTreeMap<Round, Vec<P>>,
    log: Vec<(Round, usize)>,
}

impl<P> Default for Inbox<P> {
    fn default() -> Self {
        Inbox { rounds: BTreeMap::new(), log: Vec::new() }
    }
}

impl<P: Payload> Inbox<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `true` if `payload` was not already in `M[round]`.
    pub fn insert(&mut self, round: Round, payload: P) -> bool {
        let set = self.rounds.entry(round).or_default();
        if set.contains(&payload) {
            return false;
        }
        set.push(payload);
        self.log.push((round, set.len() - 1));
        true
    }

    pub fn merge(&mut self, bundle: &Bundle<P>) -> usize {
        bundle
            .payloads
            .iter()
            .filter(|p| self.insert(bundle.round, (*p).clone()))
            .count()
    }

    pub fn round(&self, round: Round) -> &[P] {
        self.rounds.get(&round).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, round: Round, payload: &P) -> bool {
        self.round(round).contains(payload)
    }

    pub fn arrival_count(&self) -> usize {
        self.log.len()
    }

    /// Elements inserted after the first `from` arrivals, in arrival order.
    pub fn arrivals_since(&self, from: usize) -> impl Iterator<Item = (Round, &P)> + '_ {
        self.log[from.min(self.log.len())..]
            .iter()
            .map(move |&(k, i)| (k, &self.rounds[&k][i]))
    }

    /// Every element of every round up to and including `upto`.
    pub fn all_upto(&self, upto: Round) -> impl Iterator<Item = &P> + '_ {
        self.rounds.range(..=upto).flat_map(|(_, v)| v.iter())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("process {0} has crashed and takes no steps")]
    Crashed(usize),
    #[error("process {0} has halted and takes no steps")]
    Halted(usize),
}

/// What an end-of-round produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoundEnd<P> {
    /// The process entered `bundle.round` and broadcasts `M[bundle.round]`.
    /// `own` is the payload it just produced.
    Broadcast { bundle: Bundle<P>, own: P },
    /// `compute(round, ·)` decided; the process halted without broadcasting.
    Halted { round: Round, value: ProposalValue },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub label: usize,
    pub round: Round,
    pub state: StateRecord,
}

/// One process of the round-based framework.
pub struct Process<A: Automaton> {
    label: usize,
    round: Round,
    halted: bool,
    crashed: bool,
    inbox: Inbox<A::Payload>,
    automaton: A,
}

impl<A: Automaton> Process<A> {
    pub fn new(label: usize, automaton: A) -> Self {
        Process {
            label,
            round: 0,
            halted: false,
            crashed: false,
            inbox: Inbox::new(),
            automaton,
        }
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Number of end-of-round invocations completed so far.
    pub fn round(&self) -> Round {
        self.round
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn is_active(&self) -> bool {
        !self.halted && !self.crashed
    }

    pub fn inbox(&self) -> &Inbox<A::Payload> {
        &self.inbox
    }

    pub fn automaton(&self) -> &A {
        &self.automaton
    }

    /// Application-facing access (weak-set add/get) between kernel steps.
    pub fn automaton_mut(&mut self) -> &mut A {
        &mut self.automaton
    }

    pub fn crash(&mut self) {
        self.crashed = true;
    }

    /// The `end-of-round` input action followed by the single `send` output.
    pub fn end_of_round(&mut self) -> Result<RoundEnd<A::Payload>, KernelError> {
        if self.crashed {
            return Err(KernelError::Crashed(self.label));
        }
        if self.halted {
            return Err(KernelError::Halted(self.label));
        }
        let produced = if self.round == 0 {
            self.automaton.initialize()
        } else {
            match self.automaton.compute(self.round, &self.inbox) {
                Outcome::Send(m) => m,
                Outcome::Decide(value) => {
                    self.halted = true;
                    return Ok(RoundEnd::Halted { round: self.round, value });
                }
            }
        };
        let next = self.round + 1;
        self.inbox.insert(next, produced.clone());
        self.round = next;
        let bundle = Bundle { round: next, payloads: self.inbox.round(next).to_vec() };
        Ok(RoundEnd::Broadcast { bundle, own: produced })
    }

    /// The `receive(⟨M, k⟩)` input action. Crashed processes ignore it.
    pub fn receive(&mut self, bundle: &Bundle<A::Payload>) -> usize {
        if self.crashed {
            return 0;
        }
        self.inbox.merge(bundle)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { label: self.label, round: self.round, state: self.automaton.observe() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DigestBuilder;

    #[derive(Clone, Debug, PartialEq, Eq)]
    struct Tok(u64);

    impl Payload for Tok {
        fn digest(&self) -> Digest {
            let mut h = DigestBuilder::new();
            h.u64(self.0);
            h.finish()
        }
    }

    /// Sends a fixed token every round; decides when `decide_at` is reached.
    struct Echo {
        token: u64,
        decide_at: Option<Round>,
        seen: usize,
    }

    impl Automaton for Echo {
        type Payload = Tok;

        fn initialize(&mut self) -> Tok {
            Tok(self.token)
        }

        fn compute(&mut self, round: Round, inbox: &Inbox<Tok>) -> Outcome<Tok> {
            self.seen = inbox.round(round).len();
            if Some(round) == self.decide_at {
                return Outcome::Decide(ProposalValue(self.token));
            }
            Outcome::Send(Tok(self.token))
        }

        fn observe(&self) -> StateRecord {
            StateRecord { val: Some(Entry::Value(self.seen as u64)), ..Default::default() }
        }
    }

    fn echo(token: u64) -> Process<Echo> {
        Process::new(0, Echo { token, decide_at: None, seen: 0 })
    }

    #[test]
    fn first_end_of_round_initializes_and_self_delivers() {
        let mut p = echo(4);
        let RoundEnd::Broadcast { bundle, own } = p.end_of_round().unwrap() else { panic!() };
        assert_eq!(bundle.round, 1);
        assert_eq!(bundle.payloads, vec![Tok(4)]);
        assert_eq!(own, Tok(4));
        assert!(p.inbox().contains(1, &Tok(4)));
        assert_eq!(p.round(), 1);
    }

    #[test]
    fn reinserting_present_payload_is_idempotent() {
        let mut p = echo(9);
        for _ in 0..3 {
            p.end_of_round().unwrap();
        }
        assert_eq!(p.round(), 3);
        p.receive(&Bundle { round: 4, payloads: vec![Tok(9)] });
        p.end_of_round().unwrap();
        assert_eq!(p.inbox().round(4), &[Tok(9)]);
    }

    #[test]
    fn equal_payloads_from_distinct_senders_collapse() {
        let mut p = echo(1);
        p.end_of_round().unwrap();
        p.end_of_round().unwrap();
        let from_a = Bundle { round: 3, payloads: vec![Tok(5)] };
        let from_b = Bundle { round: 3, payloads: vec![Tok(5)] };
        assert_eq!(p.receive(&from_a), 1);
        assert_eq!(p.receive(&from_b), 0);
        assert_eq!(p.inbox().round(3).len(), 1);
    }

    #[test]
    fn receive_is_union() {
        let mut p = echo(0);
        p.receive(&Bundle { round: 2, payloads: vec![Tok(1), Tok(2)] });
        p.receive(&Bundle { round: 2, payloads: vec![Tok(2), Tok(3)] });
        assert_eq!(p.inbox().round(2), &[Tok(1), Tok(2), Tok(3)]);
    }

    #[test]
    fn late_delivery_lands_in_past_round() {
        let mut p = echo(0);
        for _ in 0..5 {
            p.end_of_round().unwrap();
        }
        p.receive(&Bundle { round: 2, payloads: vec![Tok(8)] });
        assert!(p.inbox().contains(2, &Tok(8)));
        let arrivals: Vec<_> = p.inbox().arrivals_since(5).collect();
        assert_eq!(arrivals, vec![(2, &Tok(8))]);
    }

    #[test]
    fn crashed_process_ignores_deliveries_and_steps() {
        let mut p = echo(0);
        p.end_of_round().unwrap();
        let before = p.snapshot();
        p.crash();
        assert_eq!(p.receive(&Bundle { round: 1, payloads: vec![Tok(3)] }), 0);
        assert_eq!(p.end_of_round(), Err(KernelError::Crashed(0)));
        assert_eq!(p.snapshot(), before);
    }

    #[test]
    fn decide_halts_without_broadcast() {
        let mut p = Process::new(3, Echo { token: 2, decide_at: Some(2), seen: 0 });
        p.end_of_round().unwrap();
        p.end_of_round().unwrap();
        let end = p.end_of_round().unwrap();
        assert_eq!(end, RoundEnd::Halted { round: 2, value: ProposalValue(2) });
        assert!(p.is_halted());
        assert_eq!(p.round(), 2);
        assert_eq!(p.end_of_round(), Err(KernelError::Halted(3)));
    }

    #[test]
    fn snapshot_is_stable_without_steps() {
        let mut p = echo(1);
        p.end_of_round().unwrap();
        assert_eq!(p.snapshot(), p.snapshot());
    }
}
