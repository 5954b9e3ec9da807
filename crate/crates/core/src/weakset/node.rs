use std::collections::BTreeSet;

use super::{Element, WeakSetError};
use crate::giraf::{entries, intersection, Automaton, Inbox, Outcome, StateRecord, ValueSet};
use crate::types::Round;

/// Weak-set replica driven by the round kernel.
///
/// Every round a replica broadcasts everything it has ever seen. A value is
/// safely stored once it appears in every bundle received in one round: that
/// round's source relayed it, so every other replica has it as well.
#[derive(Clone, Debug)]
pub struct WeakSetNode<T> {
    label: usize,
    val: Option<T>,
    proposed: BTreeSet<T>,
    written: BTreeSet<T>,
    block: bool,
    /// Inbox arrivals already folded into `proposed`.
    cursor: usize,
    completed: bool,
    mid: Option<StateRecord>,
}

impl<T: Element> WeakSetNode<T> {
    /// `label` is used in error messages only; the algorithm never reads it.
    pub fn new(label: usize) -> Self {
        WeakSetNode {
            label,
            val: None,
            proposed: BTreeSet::new(),
            written: BTreeSet::new(),
            block: false,
            cursor: 0,
            completed: false,
            mid: None,
        }
    }

    /// Start adding `v`. The add completes during a later `compute`; poll
    /// [`take_completion`](Self::take_completion) to learn when.
    pub fn add(&mut self, v: T) -> Result<(), WeakSetError> {
        if self.block {
            return Err(WeakSetError::Busy(self.label));
        }
        self.proposed.insert(v.clone());
        self.val = Some(v);
        self.block = true;
        Ok(())
    }

    pub fn get(&self) -> &BTreeSet<T> {
        &self.proposed
    }

    pub fn is_blocked(&self) -> bool {
        self.block
    }

    /// `true` exactly once after the pending add finished.
    pub fn take_completion(&mut self) -> bool {
        std::mem::take(&mut self.completed)
    }

    fn record(&self) -> StateRecord {
        StateRecord {
            val: self.val.as_ref().map(|v| v.entry()),
            written: entries(&self.written),
            proposed: entries(&self.proposed),
            blocked: Some(self.block),
            ..Default::default()
        }
    }
}

impl<T: Element> Automaton for WeakSetNode<T> {
    type Payload = ValueSet<T>;

    fn initialize(&mut self) -> ValueSet<T> {
        ValueSet::new(self.proposed.clone())
    }

    fn compute(&mut self, k: Round, inbox: &Inbox<ValueSet<T>>) -> Outcome<ValueSet<T>> {
        self.written = intersection(inbox.round(k).iter().map(ValueSet::items));
        // Union over every round up to k, including bundles that arrived late.
        let mut next = self.cursor;
        for (r, m) in inbox.arrivals_since(self.cursor) {
            if r > k {
                break;
            }
            self.proposed.extend(m.items().iter().cloned());
            next += 1;
        }
        self.cursor = next;
        if self.block && self.val.as_ref().is_some_and(|v| self.written.contains(v)) {
            self.block = false;
            self.completed = true;
        }
        self.mid = Some(self.record());
        Outcome::Send(ValueSet::new(self.proposed.clone()))
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
    use crate::giraf::Process;
    use crate::types::ProposalValue;

    type Node = WeakSetNode<ProposalValue>;

    fn set(vs: &[u64]) -> ValueSet<ProposalValue> {
        vs.iter().map(|&v| ProposalValue(v)).collect()
    }

    #[test]
    fn get_before_any_add_is_empty() {
        assert!(Node::new(0).get().is_empty());
    }

    #[test]
    fn single_process_add_completes_two_rounds_later() {
        let mut p = Process::new(0, Node::new(0));
        p.end_of_round().unwrap();
        p.automaton_mut().add(ProposalValue(4)).unwrap();
        p.end_of_round().unwrap(); // compute(1): own round-1 bundle is still empty
        assert!(p.automaton().is_blocked());
        p.end_of_round().unwrap(); // compute(2): {4} everywhere
        assert!(!p.automaton().is_blocked());
        assert!(p.automaton_mut().take_completion());
        assert!(!p.automaton_mut().take_completion());
        assert!(p.automaton().get().contains(&ProposalValue(4)));
    }

    #[test]
    fn second_add_while_blocked_is_rejected() {
        let mut n = Node::new(3);
        n.add(ProposalValue(1)).unwrap();
        assert_eq!(n.add(ProposalValue(2)), Err(WeakSetError::Busy(3)));
    }

    #[test]
    fn late_bundle_joins_proposed_but_not_written() {
        let mut n = Node::new(0);
        let mut inbox = Inbox::new();
        for k in 1..=6 {
            inbox.insert(k, set(&[]));
        }
        n.compute(5, &inbox);
        inbox.insert(2, set(&[8]));
        inbox.insert(6, set(&[1]));
        n.compute(6, &inbox);
        assert!(n.get().contains(&ProposalValue(8)));
        assert!(n.written.is_empty());
    }

    #[test]
    fn self_only_inbox_writes_own_set() {
        let mut n = Node::new(0);
        let mut inbox = Inbox::new();
        inbox.insert(1, set(&[2, 3]));
        n.compute(1, &inbox);
        assert_eq!(n.written, BTreeSet::from([ProposalValue(2), ProposalValue(3)]));
    }
}
