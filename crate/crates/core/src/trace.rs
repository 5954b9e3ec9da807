//! Line-delimited trace records.
//!
//! A trace file is JSON Lines. The first line is a [`TraceHeader`]; every
//! other line is one [`Event`]. Every record carries a `type` field. Field
//! order is fixed by the struct definitions and maps are sorted, so a given
//! run always serializes to the same bytes.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::giraf::StateRecord;
use crate::schedule::EnvKind;
use crate::types::{Digest, Entry, ProposalValue, Round};

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Consensus for the eventually synchronous environment.
    Es,
    /// Consensus for the eventually stable source environment.
    Ess,
    Weakset,
    Register,
    /// Consensus (ES automaton) running over an emulated MS environment.
    Emulation,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Es => "es",
            Algorithm::Ess => "ess",
            Algorithm::Weakset => "weakset",
            Algorithm::Register => "register",
            Algorithm::Emulation => "emulation",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "es" => Ok(Algorithm::Es),
            "ess" => Ok(Algorithm::Ess),
            "weakset" => Ok(Algorithm::Weakset),
            "register" => Ok(Algorithm::Register),
            "emulation" => Ok(Algorithm::Emulation),
            other => Err(format!(
                "unknown algorithm `{other}` (expected es, ess, weakset, register or emulation)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeTag {
    Lockstep,
    Skewed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Linearizable in-memory weak-set.
    Oracle,
    /// The message-passing weak-set running on its own simulated network.
    Alg4,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(BackendKind::Oracle),
            "alg4" | "weakset" => Ok(BackendKind::Alg4),
            other => Err(format!("unknown backend `{other}` (expected oracle or alg4)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum HeaderTag {
    Header,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    #[serde(rename = "type")]
    tag: HeaderTag,
    pub version: u32,
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub n: usize,
    pub horizon: Round,
    #[serde(default)]
    pub stabilization: Option<Round>,
    #[serde(default)]
    pub stable_source: Option<usize>,
    pub max_delay: u8,
    pub mode: ModeTag,
    pub seed: u64,
    #[serde(default)]
    pub values: Vec<ProposalValue>,
    #[serde(default)]
    pub emulated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
}

impl TraceHeader {
    pub fn new(algorithm: Algorithm, env: EnvKind, n: usize, horizon: Round, seed: u64) -> Self {
        TraceHeader {
            tag: HeaderTag::Header,
            version: TRACE_VERSION,
            algorithm,
            env,
            n,
            horizon,
            stabilization: None,
            stable_source: None,
            max_delay: crate::schedule::DEFAULT_MAX_DELAY,
            mode: ModeTag::Lockstep,
            seed,
            values: Vec::new(),
            emulated: false,
            backend: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Right after the proposal union (and counter merge), before any branch.
    Mid,
    /// After the step has finished.
    End,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// The process completed an end-of-round and entered `round`; `digest`
    /// identifies the payload it produced for that round.
    EndOfRound {
        #[serde(rename = "proc")]
        process: usize,
        round: Round,
        digest: Digest,
        tick: u64,
    },
    /// A round-`round` bundle reached `proc` while it was in round `at`.
    /// `from` is absent when the sender is unknown (emulated runs).
    Deliver {
        #[serde(rename = "proc")]
        process: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<usize>,
        round: Round,
        at: Round,
        digests: Vec<Digest>,
        tick: u64,
    },
    Decide {
        #[serde(rename = "proc")]
        process: usize,
        round: Round,
        value: ProposalValue,
        tick: u64,
    },
    Crash {
        #[serde(rename = "proc")]
        process: usize,
        round: Round,
        tick: u64,
    },
    /// Automaton variables after `compute(round)`; round 0 is the initial state.
    Snapshot {
        #[serde(rename = "proc")]
        process: usize,
        round: Round,
        phase: Phase,
        state: StateRecord,
        tick: u64,
    },
    AddStart {
        #[serde(rename = "proc")]
        process: usize,
        op: u64,
        value: Entry,
        tick: u64,
    },
    AddEnd {
        #[serde(rename = "proc")]
        process: usize,
        op: u64,
        tick: u64,
    },
    Get {
        #[serde(rename = "proc")]
        process: usize,
        values: Vec<Entry>,
        tick: u64,
    },
    WriteStart {
        #[serde(rename = "proc")]
        process: usize,
        op: u64,
        value: ProposalValue,
        tick: u64,
    },
    WriteEnd {
        #[serde(rename = "proc")]
        process: usize,
        op: u64,
        tick: u64,
    },
    /// A register read; `value` is absent for a never-written register.
    Read {
        #[serde(rename = "proc")]
        process: usize,
        #[serde(default)]
        value: Option<ProposalValue>,
        tick: u64,
    },
}

impl Event {
    pub fn process(&self) -> usize {
        match self {
            Event::EndOfRound { process, .. }
            | Event::Deliver { process, .. }
            | Event::Decide { process, .. }
            | Event::Crash { process, .. }
            | Event::Snapshot { process, .. }
            | Event::AddStart { process, .. }
            | Event::AddEnd { process, .. }
            | Event::Get { process, .. }
            | Event::WriteStart { process, .. }
            | Event::WriteEnd { process, .. }
            | Event::Read { process, .. } => *process,
        }
    }

    pub fn tick(&self) -> u64 {
        match self {
            Event::EndOfRound { tick, .. }
            | Event::Deliver { tick, .. }
            | Event::Decide { tick, .. }
            | Event::Crash { tick, .. }
            | Event::Snapshot { tick, .. }
            | Event::AddStart { tick, .. }
            | Event::AddEnd { tick, .. }
            | Event::Get { tick, .. }
            | Event::WriteStart { tick, .. }
            | Event::WriteEnd { tick, .. }
            | Event::Read { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("line {line}: process {process} out of range for n = {n}")]
    ProcessRange { line: usize, process: usize, n: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(header: TraceHeader, events: Vec<Event>) -> Self {
        Trace { header, events }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(s) => !s.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|source| TraceError::Parse { line: 1, source })?;
        if header.version != TRACE_VERSION {
            return Err(TraceError::Version(header.version));
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let e: Event = serde_json::from_str(&line?)
                .map_err(|source| TraceError::Parse { line: line_no, source })?;
            if e.process() >= header.n {
                return Err(TraceError::ProcessRange { line: line_no, process: e.process(), n: header.n });
            }
            if let Event::Deliver { from: Some(s), .. } = &e {
                if *s >= header.n {
                    return Err(TraceError::ProcessRange { line: line_no, process: *s, n: header.n });
                }
            }
            events.push(e);
        }
        Ok(Trace { header, events })
    }

    pub fn from_jsonl(s: &str) -> Result<Trace, TraceError> {
        Self::read_jsonl(s.as_bytes())
    }
}
