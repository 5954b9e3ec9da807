//! Consensus for the eventually stable source environment.
//!
//! Processes have no names, so the algorithm names them by the sequence of
//! values they have proposed (their *history*). Each process keeps a counter
//! per history it has heard of. A history whose owner keeps getting its
//! messages through timely sees its counter grow by one every round; a process
//! whose own history carries a maximal counter considers itself a leader.
//! Non-leaders propose ⊥ unless they already agree with what they have seen,
//! which keeps every round's source relaying *something*.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{BuildHasherDefault, Hash, Hasher};
use std::sync::Arc;

use crate::giraf::{entries, intersection, union, Automaton, Inbox, Outcome, Payload, StateRecord, ValueSet};
use crate::types::{Digest, DigestBuilder, Entry, Proposal, ProposalValue, Round};

struct Node {
    value: ProposalValue,
    len: usize,
    parent: Option<History>,
    digest: Digest,
}

/// Non-empty sequence of proposal values, stored as a shared linked list so
/// that extending a history and keeping its prefixes around are both cheap.
///
/// Each node carries a digest chained over its prefix. Equality and hashing go
/// through that digest.
#[derive(Clone)]
pub struct History(Arc<Node>);

impl History {
    pub fn new(first: ProposalValue) -> Self {
        let mut h = DigestBuilder::new();
        h.tag(b'h').u64(first.0);
        History(Arc::new(Node { value: first, len: 1, parent: None, digest: h.finish() }))
    }

    /// `self` followed by `v`.
    pub fn push(&self, v: ProposalValue) -> Self {
        let mut h = DigestBuilder::new();
        h.tag(b'h').digest(&self.0.digest).u64(v.0);
        History(Arc::new(Node { value: v, len: self.0.len + 1, parent: Some(self.clone()), digest: h.finish() }))
    }

    /// Panics on an empty slice: histories are never empty.
    pub fn from_values(values: &[u64]) -> Self {
        let (first, rest) = values.split_first().expect("a history has at least one value");
        rest.iter().fold(History::new(ProposalValue(*first)), |h, &v| h.push(ProposalValue(v)))
    }

    pub fn len(&self) -> usize {
        self.0.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> ProposalValue {
        self.0.value
    }

    pub fn digest(&self) -> Digest {
        self.0.digest
    }

    /// `self`, its parent, its grandparent, ... down to the first value.
    pub fn prefixes(&self) -> impl Iterator<Item = &History> + '_ {
        std::iter::successors(Some(self), |h| h.0.parent.as_ref())
    }

    pub fn values(&self) -> Vec<ProposalValue> {
        let mut v: Vec<_> = self.prefixes().map(History::last).collect();
        v.reverse();
        v
    }

    /// The prefix of length `len`, if `len` is in `1..=self.len()`.
    pub fn ancestor(&self, len: usize) -> Option<&History> {
        if len == 0 || len > self.len() {
            return None;
        }
        self.prefixes().nth(self.len() - len)
    }
}

impl PartialEq for History {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || (self.0.len == other.0.len && self.0.digest == other.0.digest)
    }
}

impl Eq for History {}

impl Hash for History {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.digest.prefix_u64());
    }
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.values().iter().map(|v| v.0)).finish()
    }
}

/// `h1` is a prefix of `h2`. Every history is a prefix of itself.
pub fn is_prefix(h1: &History, h2: &History) -> bool {
    h2.ancestor(h1.len()).is_some_and(|a| a == h1)
}

type Map = HashMap<History, u64, BuildHasherDefault<DefaultHasher>>;

/// Counter per history. Absent keys read as 0 and zero entries are never
/// stored, so two maps with the same meaning have the same representation.
#[derive(Clone, Default)]
pub struct CounterMap {
    map: Map,
}

impl CounterMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, h: &History) -> u64 {
        self.map.get(h).copied().unwrap_or(0)
    }

    pub fn set(&mut self, h: History, c: u64) {
        if c == 0 {
            self.map.remove(&h);
        } else {
            self.map.insert(h, c);
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&History, u64)> + '_ {
        self.map.iter().map(|(h, &c)| (h, c))
    }

    pub fn max_counter(&self) -> u64 {
        self.map.values().copied().max().unwrap_or(0)
    }

    /// Entries in canonical order (by history digest).
    pub fn sorted(&self) -> Vec<(&History, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable_by_key(|(h, _)| h.digest());
        v
    }

    pub fn digest(&self) -> Digest {
        let mut d = DigestBuilder::new();
        d.tag(b'c').u64(self.len() as u64);
        for (h, c) in self.sorted() {
            d.digest(&h.digest()).u64(c);
        }
        d.finish()
    }
}

impl PartialEq for CounterMap {
    fn eq(&self, other: &Self) -> bool {
        self.map == other.map
    }
}

impl Eq for CounterMap {}

impl fmt::Debug for CounterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.sorted().into_iter().map(|(h, c)| (h.clone(), c))).finish()
    }
}

/// ⟨proposed, history, counters⟩.
#[derive(Clone)]
pub struct EssMessage {
    proposed: ValueSet<Proposal>,
    history: History,
    counters: Arc<CounterMap>,
    digest: Digest,
}

impl EssMessage {
    pub fn new(proposed: ValueSet<Proposal>, history: History, counters: Arc<CounterMap>) -> Self {
        let mut d = DigestBuilder::new();
        d.tag(b'm')
            .digest(&Payload::digest(&proposed))
            .digest(&history.digest())
            .digest(&counters.digest());
        EssMessage { proposed, history, counters, digest: d.finish() }
    }

    pub fn proposed(&self) -> &BTreeSet<Proposal> {
        self.proposed.items()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn counters(&self) -> &CounterMap {
        &self.counters
    }
}

impl PartialEq for EssMessage {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
    }
}

impl Eq for EssMessage {}

impl fmt::Debug for EssMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EssMessage")
            .field("proposed", &self.proposed)
            .field("history", &self.history)
            .field("counters", &self.counters)
            .finish()
    }
}

impl Payload for EssMessage {
    fn digest(&self) -> Digest {
        self.digest
    }
}

/// New counter map from one round's messages.
///
/// First every counter becomes the minimum over all messages, absent entries
/// counting as 0. Then each message's history gets one more than the largest
/// first-step counter among its prefixes (itself included).
pub fn counter_merge(msgs: &[EssMessage]) -> CounterMap {
    let Some((first, rest)) = msgs.split_first() else { return CounterMap::new() };
    let mut step1 = CounterMap::new();
    // A key missing from any message has minimum 0, so only keys of the first
    // map can survive.
    for (h, c) in first.counters.iter() {
        let m = rest.iter().map(|m| m.counters.get(h)).fold(c, u64::min);
        step1.set(h.clone(), m);
    }
    let fresh: Vec<(History, u64)> = msgs
        .iter()
        .map(|m| {
            let best = m.history.prefixes().map(|p| step1.get(p)).max().unwrap_or(0);
            (m.history.clone(), best + 1)
        })
        .collect();
    let mut out = step1;
    for (h, c) in fresh {
        out.set(h, c);
    }
    out
}

/// The owner of `own` counts as leader: no key in `c` has a larger counter.
pub fn leader_predicate(c: &CounterMap, own: &History) -> bool {
    let mine = c.get(own);
    c.iter().all(|(_, v)| mine >= v)
}

#[derive(Clone, Debug)]
pub struct EssState {
    val: ProposalValue,
    written: BTreeSet<Proposal>,
    written_old: BTreeSet<Proposal>,
    proposed: BTreeSet<Proposal>,
    history: History,
    counters: Arc<CounterMap>,
    mid: Option<StateRecord>,
    mutant: bool,
}

impl EssState {
    pub fn new(v: ProposalValue) -> Self {
        EssState {
            val: v,
            written: BTreeSet::new(),
            written_old: BTreeSet::new(),
            proposed: BTreeSet::new(),
            history: History::new(v),
            counters: Arc::new(CounterMap::new()),
            mid: None,
            mutant: false,
        }
    }

    /// Union instead of intersection for `written`; for checker tests only.
    pub fn mutant(v: ProposalValue) -> Self {
        EssState { mutant: true, ..Self::new(v) }
    }

    pub fn val(&self) -> ProposalValue {
        self.val
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn counters(&self) -> &CounterMap {
        &self.counters
    }

    pub fn proposed(&self) -> &BTreeSet<Proposal> {
        &self.proposed
    }

    fn message(&self) -> EssMessage {
        EssMessage::new(ValueSet::new(self.proposed.clone()), self.history.clone(), self.counters.clone())
    }

    fn record(&self) -> StateRecord {
        StateRecord {
            val: Some(Entry::from(self.val)),
            written: entries(&self.written),
            written_old: entries(&self.written_old),
            proposed: entries(&self.proposed),
            history: Some(self.history.digest()),
            history_len: Some(self.history.len()),
            own_counter: Some(self.counters.get(&self.history)),
            ..Default::default()
        }
    }

    fn within_val_or_bot(&self, s: &BTreeSet<Proposal>) -> bool {
        s.iter().all(|p| *p == Proposal::Bot || *p == Proposal::Value(self.val))
    }
}

impl Automaton for EssState {
    type Payload = EssMessage;

    fn initialize(&mut self) -> EssMessage {
        self.message()
    }

    fn compute(&mut self, k: Round, inbox: &Inbox<EssMessage>) -> Outcome<EssMessage> {
        let msgs = inbox.round(k);
        let sets = msgs.iter().map(EssMessage::proposed);
        self.written = if self.mutant { union(sets.clone()) } else { intersection(sets.clone()) };
        self.proposed.extend(union(sets));
        let merged = counter_merge(msgs);
        let fresh: BTreeMap<Digest, u64> =
            msgs.iter().map(|m| (m.history.digest(), merged.get(&m.history))).collect();
        let leader = leader_predicate(&merged, &self.history);
        self.counters = Arc::new(merged);
        self.mid = Some(StateRecord {
            fresh_counters: Some(fresh),
            leader: Some(leader),
            ..self.record()
        });

        if k % 2 == 0 {
            let val = Proposal::Value(self.val);
            if self.written_old.len() == 1
                && self.written_old.contains(&val)
                && self.within_val_or_bot(&self.proposed)
            {
                return Outcome::Decide(self.val);
            }
            if let Some(max) = self.written.iter().filter_map(|p| p.value()).max() {
                self.val = max;
            }
            let keep = leader || self.within_val_or_bot(&self.proposed);
            self.proposed = BTreeSet::from([if keep { Proposal::Value(self.val) } else { Proposal::Bot }]);
        }
        self.written_old = std::mem::replace(&mut self.written, self.proposed.clone());
        self.history = self.history.push(self.val);
        Outcome::Send(self.message())
    }

    fn observe(&self) -> StateRecord {
        self.record()
    }

    fn checkpoint(&self) -> Option<StateRecord> {
        self.mid.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: &[u64]) -> History {
        History::from_values(v)
    }

    fn msg(history: &[u64], counters: &[(&[u64], u64)]) -> EssMessage {
        let mut c = CounterMap::new();
        for (k, v) in counters {
            c.set(h(k), *v);
        }
        EssMessage::new(ValueSet::empty(), h(history), Arc::new(c))
    }

    #[test]
    fn prefix_examples() {
        assert!(is_prefix(&h(&[1, 2]), &h(&[1, 2, 3])));
        assert!(!is_prefix(&h(&[2]), &h(&[1, 2])));
        assert!(is_prefix(&h(&[4, 4]), &h(&[4, 4])));
        assert!(!is_prefix(&h(&[1, 2, 3]), &h(&[1, 2])));
    }

    #[test]
    fn independently_built_histories_are_equal() {
        let a = h(&[3, 1, 4]);
        let b = History::new(ProposalValue(3)).push(ProposalValue(1)).push(ProposalValue(4));
        assert_eq!(a, b);
        assert_eq!(a.values(), vec![ProposalValue(3), ProposalValue(1), ProposalValue(4)]);
        assert_ne!(h(&[1, 2]), h(&[2, 1]));
    }

    #[test]
    fn merge_single_message_fresh_history() {
        let c = counter_merge(&[msg(&[3], &[])]);
        assert_eq!(c.get(&h(&[3])), 1);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn merge_takes_minimum_over_messages() {
        let a = msg(&[1], &[(&[9], 3)]);
        let b = msg(&[2], &[(&[9], 4)]);
        assert_eq!(counter_merge(&[a.clone(), b]).get(&h(&[9])), 3);
        let c = msg(&[2], &[]);
        assert_eq!(counter_merge(&[a, c]).get(&h(&[9])), 0);
    }

    #[test]
    fn merge_uses_max_over_prefixes() {
        let m = msg(&[5, 5], &[(&[5], 7), (&[5, 5], 2)]);
        assert_eq!(counter_merge(&[m]).get(&h(&[5, 5])), 8);
    }

    #[test]
    fn merge_reads_first_step_values_only() {
        // [1] is both a received history and a prefix of [1,2]; the [1,2]
        // update must see [1]'s minimum, not its bumped value.
        let a = msg(&[1], &[(&[1], 4)]);
        let b = msg(&[1, 2], &[(&[1], 4)]);
        let c = counter_merge(&[a, b]);
        assert_eq!(c.get(&h(&[1])), 5);
        assert_eq!(c.get(&h(&[1, 2])), 5);
    }

    #[test]
    fn leader_examples() {
        let (h1, h2) = (h(&[1]), h(&[2]));
        let mut c = CounterMap::new();
        c.set(h1.clone(), 5);
        c.set(h2.clone(), 5);
        assert!(leader_predicate(&c, &h1));
        c.set(h2, 6);
        assert!(!leader_predicate(&c, &h1));
        assert!(leader_predicate(&CounterMap::new(), &h1));
    }

    #[test]
    fn initial_message_shape() {
        let mut st = EssState::new(ProposalValue(7));
        let m = st.initialize();
        assert!(m.proposed().is_empty());
        assert_eq!(m.history(), &h(&[7]));
        assert!(m.counters().is_empty());
        assert_eq!(EssState::new(ProposalValue(7)).initialize(), m);
        assert_ne!(EssState::new(ProposalValue(0)).initialize(), m);
    }

    #[test]
    fn even_round_with_only_bot_written_changes_nothing() {
        let mut st = EssState::new(ProposalValue(4));
        st.written_old = BTreeSet::from([Proposal::Bot]);
        let mut inbox = Inbox::new();
        let bot = EssMessage::new(ValueSet::new(BTreeSet::from([Proposal::Bot])), h(&[4]), Arc::new(CounterMap::new()));
        inbox.insert(2, bot);
        let out = st.compute(2, &inbox);
        assert!(matches!(out, Outcome::Send(_)));
        assert_eq!(st.val(), ProposalValue(4));
    }

    #[test]
    fn non_leader_that_agrees_still_proposes_its_value() {
        let mut st = EssState::new(ProposalValue(4));
        // Someone else's history has a far larger counter.
        let mut c = CounterMap::new();
        c.set(h(&[9]), 50);
        let other = EssMessage::new(
            ValueSet::new(BTreeSet::from([Proposal::Value(ProposalValue(4)), Proposal::Bot])),
            h(&[9]),
            Arc::new(c.clone()),
        );
        let own = EssMessage::new(ValueSet::empty(), h(&[4]), Arc::new(c));
        let mut inbox = Inbox::new();
        inbox.insert(2, other);
        inbox.insert(2, own);
        let Outcome::Send(m) = st.compute(2, &inbox) else { panic!("no decision expected") };
        assert_eq!(st.checkpoint().unwrap().leader, Some(false));
        assert_eq!(m.proposed(), &BTreeSet::from([Proposal::Value(ProposalValue(4))]));
    }

    #[test]
    fn non_leader_that_disagrees_proposes_bot() {
        let mut st = EssState::new(ProposalValue(4));
        let mut c = CounterMap::new();
        c.set(h(&[9]), 50);
        let other = EssMessage::new(
            ValueSet::new(BTreeSet::from([Proposal::Value(ProposalValue(9))])),
            h(&[9]),
            Arc::new(c.clone()),
        );
        let own = EssMessage::new(ValueSet::empty(), h(&[4]), Arc::new(c));
        let mut inbox = Inbox::new();
        inbox.insert(2, other);
        inbox.insert(2, own);
        let Outcome::Send(m) = st.compute(2, &inbox) else { panic!() };
        assert_eq!(m.proposed(), &BTreeSet::from([Proposal::Bot]));
        assert_eq!(m.history(), &h(&[4, 4]));
    }
}
