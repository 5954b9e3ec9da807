//! The weak-set shared object.
//!
//! A weak-set supports `add(v)` and `get()`. A `get` must return every value
//! whose `add` completed before the `get` began, and must not return a value
//! whose `add` had not started by the time the `get` finished. Adds that
//! overlap the `get` may or may not show up.
//!
//! * [`oracle_check`] decides whether an operation log respects that contract.
//! * [`WeakSetNode`] implements the object on top of moving-source rounds.
//! * [`register`] builds a regular multi-writer register out of any weak-set.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Event;
use crate::types::{Digestible, Entry};

mod node;
pub mod register;
mod workload;

pub use node::WeakSetNode;
pub use workload::{run_register, run_weakset, Workload};

/// What can be stored in a weak-set.
pub trait Element: Digestible + Ord + Clone + fmt::Debug {}

impl<T: Digestible + Ord + Clone + fmt::Debug> Element for T {}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeakSetError {
    #[error("process {0} already has an add in progress")]
    Busy(usize),
    #[error("process {0} has crashed")]
    Crashed(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpKind<T> {
    Add(T),
    Get(BTreeSet<T>),
}

/// One operation with its real-time interval. `end` is `None` while pending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord<T> {
    pub process: usize,
    pub kind: OpKind<T>,
    pub start: u64,
    pub end: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleViolation {
    /// Position of the offending `get` in the log.
    pub index: usize,
    pub reason: String,
}

impl fmt::Display for OracleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "operation {}: {}", self.index, self.reason)
    }
}

/// Check every completed `get` in `log` against the weak-set contract.
pub fn oracle_check<T: Ord + Clone + fmt::Debug>(log: &[OpRecord<T>]) -> Result<(), OracleViolation> {
    let adds: Vec<(&T, u64, Option<u64>)> = log
        .iter()
        .filter_map(|op| match &op.kind {
            OpKind::Add(v) => Some((v, op.start, op.end)),
            OpKind::Get(_) => None,
        })
        .collect();
    for (index, op) in log.iter().enumerate() {
        let (OpKind::Get(result), Some(end)) = (&op.kind, op.end) else { continue };
        if end < op.start {
            return Err(OracleViolation { index, reason: format!("ends at {end} before it starts at {}", op.start) });
        }
        let missing: Vec<&T> = adds
            .iter()
            .filter(|(_, _, e)| e.is_some_and(|e| e < op.start))
            .map(|(v, _, _)| *v)
            .filter(|v| !result.contains(v))
            .collect();
        if let Some(v) = missing.first() {
            return Err(OracleViolation {
                index,
                reason: format!("misses {v:?}, whose add completed before the get started"),
            });
        }
        if let Some(v) = result.iter().find(|v| !adds.iter().any(|(a, s, _)| a == v && *s <= end)) {
            return Err(OracleViolation {
                index,
                reason: format!("returns {v:?}, which nobody had started adding"),
            });
        }
    }
    Ok(())
}

/// Rebuild the weak-set operation log from trace events, using event
/// positions as time.
pub fn ops_from_events(events: &[Event]) -> Vec<OpRecord<Entry>> {
    let mut log: Vec<OpRecord<Entry>> = Vec::new();
    let mut open = std::collections::HashMap::new();
    for (i, e) in events.iter().enumerate() {
        let t = i as u64;
        match e {
            Event::AddStart { process, op, value, .. } => {
                open.insert((*process, *op), log.len());
                log.push(OpRecord { process: *process, kind: OpKind::Add(value.clone()), start: t, end: None });
            }
            Event::AddEnd { process, op, .. } => {
                if let Some(&j) = open.get(&(*process, *op)) {
                    log[j].end = Some(t);
                }
            }
            Event::Get { process, values, .. } => log.push(OpRecord {
                process: *process,
                kind: OpKind::Get(values.iter().cloned().collect()),
                start: t,
                end: Some(t),
            }),
            _ => {}
        }
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add(v: u64, start: u64, end: Option<u64>) -> OpRecord<u64> {
        OpRecord { process: 0, kind: OpKind::Add(v), start, end }
    }

    fn get(vs: &[u64], start: u64, end: u64) -> OpRecord<u64> {
        OpRecord { process: 1, kind: OpKind::Get(vs.iter().copied().collect()), start, end: Some(end) }
    }

    #[test]
    fn missing_completed_value_is_a_violation() {
        let err = oracle_check(&[add(1, 0, Some(2)), get(&[], 3, 4)]).unwrap_err();
        assert_eq!(err.index, 1);
    }

    #[test]
    fn concurrent_add_may_show() {
        assert_eq!(oracle_check(&[add(1, 0, Some(5)), get(&[1], 2, 3)]), Ok(()));
        assert_eq!(oracle_check(&[add(1, 0, Some(5)), get(&[], 2, 3)]), Ok(()));
    }

    #[test]
    fn phantom_value_is_a_violation() {
        assert!(oracle_check(&[get(&[9], 0, 1)]).is_err());
        assert!(oracle_check(&[get(&[9], 0, 1), add(9, 2, Some(3))]).is_err());
    }

    #[test]
    fn pending_add_of_crashed_process_is_optional() {
        assert_eq!(oracle_check(&[add(4, 0, None), get(&[4], 5, 5)]), Ok(()));
        assert_eq!(oracle_check(&[add(4, 0, None), get(&[], 5, 5)]), Ok(()));
    }
}
