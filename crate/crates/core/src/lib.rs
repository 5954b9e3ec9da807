//! Consensus and shared-object emulation for anonymous, unknown networks.
//!
//! Processes run identical code, carry no identifiers and do not know how
//! many peers exist. Communication is organised in rounds; each process's
//! round-`k` inbox is a *set* of payloads, so identical messages from different
//! senders are indistinguishable.
//!
//! The crate provides:
//!
//! * [`giraf`]: the round-based kernel and the automaton contract.
//! * [`schedule`] and [`sim`]: the adversary (MS, ES and ESS environments)
//!   and a deterministic simulator with lockstep and skewed execution.
//! * [`consensus_es`] and [`consensus_ess`]: consensus automata.
//! * [`weakset`]: the weak-set object, its message-passing implementation and
//!   a regular register built on top of it.
//! * [`emulation`]: running any round-based automaton over a weak-set.
//! * [`checks`]: property checkers that work on traces alone.
//! * [`scenario`]: scenario files, single runs and fuzzing.

pub mod checks;
pub mod consensus_es;
pub mod consensus_ess;
pub mod emulation;
pub mod giraf;
pub mod scenario;
pub mod schedule;
pub mod sim;
pub mod trace;
pub mod types;
pub mod weakset;
