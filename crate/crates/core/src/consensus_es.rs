//! Consensus for the eventually synchronous environment.
//!
//! Every process broadcasts a set of proposals. A value contained in *every*
//! bundle a process receives in a round has necessarily been relayed by that
//! round's source, so everybody else received it too; such a value is called
//! *written*. A process decides in an even round once its own value was
//! written in the previous round and it has heard of nothing else.

use std::collections::BTreeSet;

use crate::giraf::{entries, intersection, union, Automaton, Inbox, Outcome, StateRecord, ValueSet};
use crate::types::{Entry, ProposalValue, Round};

pub type EsMessage = ValueSet<ProposalValue>;

#[derive(Clone, Debug)]
pub struct EsState {
    val: ProposalValue,
    written: BTreeSet<ProposalValue>,
    written_old: BTreeSet<ProposalValue>,
    proposed: BTreeSet<ProposalValue>,
    mid: Option<StateRecord>,
    mutant: bool,
}

impl EsState {
    pub fn new(v: ProposalValue) -> Self {
        EsState {
            val: v,
            written: BTreeSet::new(),
            written_old: BTreeSet::new(),
            proposed: BTreeSet::new(),
            mid: None,
            mutant: false,
        }
    }

    /// Deliberately broken variant that takes the union where the intersection
    /// belongs. Only useful for showing that the invariant checkers bite.
    pub fn mutant(v: ProposalValue) -> Self {
        EsState { mutant: true, ..Self::new(v) }
    }

    pub fn val(&self) -> ProposalValue {
        self.val
    }

    pub fn proposed(&self) -> &BTreeSet<ProposalValue> {
        &self.proposed
    }

    pub fn written(&self) -> &BTreeSet<ProposalValue> {
        &self.written
    }

    pub fn written_old(&self) -> &BTreeSet<ProposalValue> {
        &self.written_old
    }

    fn record(&self) -> StateRecord {
        StateRecord {
            val: Some(Entry::from(self.val)),
            written: entries(&self.written),
            written_old: entries(&self.written_old),
            proposed: entries(&self.proposed),
            ..Default::default()
        }
    }
}

impl Automaton for EsState {
    type Payload = EsMessage;

    fn initialize(&mut self) -> EsMessage {
        ValueSet::new(self.proposed.clone())
    }

    fn compute(&mut self, k: Round, inbox: &Inbox<EsMessage>) -> Outcome<EsMessage> {
        let msgs = inbox.round(k);
        let sets = msgs.iter().map(ValueSet::items);
        self.written = if self.mutant { union(sets.clone()) } else { intersection(sets.clone()) };
        self.proposed.extend(union(sets));
        self.mid = Some(self.record());

        if k % 2 == 0 {
            let only_val = |s: &BTreeSet<ProposalValue>| s.len() == 1 && s.contains(&self.val);
            if only_val(&self.proposed) && only_val(&self.written_old) {
                return Outcome::Decide(self.val);
            }
            if let Some(&max) = self.written.last() {
                self.val = max;
            }
            self.proposed = BTreeSet::from([self.val]);
        }
        self.written_old = self.written.clone();
        Outcome::Send(ValueSet::new(self.proposed.clone()))
    }

    fn observe(&self) -> StateRecord {
        self.record()
    }

    fn checkpoint(&self) -> Option<StateRecord> {
        self.mid.clone()
    }
}
