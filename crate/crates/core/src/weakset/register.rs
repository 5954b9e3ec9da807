//! A regular multi-writer multi-reader register over a weak-set.
//!
//! A write first reads the weak-set and stores a digest of everything it saw
//! next to the new value. A read returns the highest value among the entries
//! with the longest such history.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::trace::Event;
use crate::types::{Digest, DigestBuilder, Digestible, ProposalValue};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegisterEntry {
    pub value: ProposalValue,
    /// Digests of the weak-set content seen when the write began.
    pub history: BTreeSet<Digest>,
}

impl RegisterEntry {
    pub fn new<'a>(value: ProposalValue, seen: impl IntoIterator<Item = &'a RegisterEntry>) -> Self {
        RegisterEntry { value, history: seen.into_iter().map(Digestible::digest).collect() }
    }
}

impl Digestible for RegisterEntry {
    fn digest(&self) -> Digest {
        let mut h = DigestBuilder::new();
        h.tag(b'r').u64(self.value.0).u64(self.history.len() as u64);
        for d in &self.history {
            h.digest(d);
        }
        h.finish()
    }
}

/// Longest history first, then largest value. `None` when nothing was written.
pub fn read_rule<'a>(entries: impl IntoIterator<Item = &'a RegisterEntry>) -> Option<ProposalValue> {
    entries.into_iter().map(|e| (e.history.len(), e.value)).max().map(|(_, v)| v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularityViolation {
    /// Event index of the read.
    pub index: usize,
    pub process: usize,
    pub value: Option<ProposalValue>,
    pub allowed: Vec<Option<ProposalValue>>,
}

impl fmt::Display for RegularityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "read at event {} by process {} returned {:?}; allowed {:?}",
            self.index, self.process, self.value, self.allowed
        )
    }
}

struct Write {
    value: ProposalValue,
    start: usize,
    end: Option<usize>,
}

/// Check every read in the event log against regular-register semantics.
///
/// A read may return the value of any completed write that no later completed
/// write strictly follows, or of any write overlapping the read. Before any
/// write has completed it may also return nothing.
pub fn check_regular(events: &[Event]) -> Result<(), RegularityViolation> {
    let mut writes: Vec<Write> = Vec::new();
    let mut open: HashMap<(usize, u64), usize> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        match e {
            Event::WriteStart { process, op, value, .. } => {
                open.insert((*process, *op), writes.len());
                writes.push(Write { value: *value, start: i, end: None });
            }
            Event::WriteEnd { process, op, .. } => {
                if let Some(&j) = open.get(&(*process, *op)) {
                    writes[j].end = Some(i);
                }
            }
            _ => {}
        }
    }
    for (t, e) in events.iter().enumerate() {
        let Event::Read { process, value, .. } = e else { continue };
        let completed: Vec<&Write> = writes.iter().filter(|w| w.end.is_some_and(|end| end < t)).collect();
        let mut allowed: BTreeSet<Option<ProposalValue>> = completed
            .iter()
            .filter(|w| {
                let end = w.end.expect("completed");
                !completed.iter().any(|o| end < o.start)
            })
            .map(|w| Some(w.value))
            .collect();
        allowed.extend(
            writes
                .iter()
                .filter(|w| w.start < t && w.end.is_none_or(|end| end > t))
                .map(|w| Some(w.value)),
        );
        if completed.is_empty() {
            allowed.insert(None);
        }
        if !allowed.contains(value) {
            return Err(RegularityViolation {
                index: t,
                process: *process,
                value: *value,
                allowed: allowed.into_iter().collect(),
            });
        }
    }
    Ok(())
}
