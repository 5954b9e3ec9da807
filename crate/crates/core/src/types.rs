//! Value types shared by every automaton and checker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Digest as _;

/// Round index. Round `k` is the interval after the `k`-th end-of-round.
pub type Round = u32;

/// An application value proposed to consensus. Totally ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProposalValue(pub u64);

impl fmt::Display for ProposalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for ProposalValue {
    fn from(v: u64) -> Self {
        ProposalValue(v)
    }
}

/// A proposal slot: either a real value or the "nothing to propose" marker ⊥.
///
/// `Bot` orders below every value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Proposal {
    Bot,
    Value(ProposalValue),
}

impl Proposal {
    pub fn value(self) -> Option<ProposalValue> {
        match self {
            Proposal::Bot => None,
            Proposal::Value(v) => Some(v),
        }
    }

    pub fn is_bot(self) -> bool {
        matches!(self, Proposal::Bot)
    }
}

impl From<ProposalValue> for Proposal {
    fn from(v: ProposalValue) -> Self {
        Proposal::Value(v)
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proposal::Bot => write!(f, "⊥"),
            Proposal::Value(v) => write!(f, "{v}"),
        }
    }
}

/// 128-bit content digest (truncated SHA-256). Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 16]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        let mut h = DigestBuilder::new();
        h.bytes(bytes);
        h.finish()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight bytes as an integer, used as a cheap hash key.
    pub fn prefix_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[..8]);
        u64::from_le_bytes(b)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", &self.to_hex()[..8])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Incremental builder over SHA-256 with length-prefixed framing helpers.
pub struct DigestBuilder(sha2::Sha256);

impl DigestBuilder {
    pub fn new() -> Self {
        DigestBuilder(sha2::Sha256::new())
    }

    pub fn tag(&mut self, tag: u8) -> &mut Self {
        self.0.update([tag]);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.0.update(b);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.0.update(d.0);
        self
    }

    pub fn finish(self) -> Digest {
        let full = self.0.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&full[..16]);
        Digest(out)
    }
}

impl Default for DigestBuilder {
    fn default() -> Self {
        Self::new()
    }
}

/// Anything with a canonical content digest.
pub trait Digestible {
    fn digest(&self) -> Digest;

    /// How this item appears inside an observable state record.
    fn entry(&self) -> Entry {
        Entry::Opaque(self.digest())
    }
}

impl Digestible for ProposalValue {
    fn digest(&self) -> Digest {
        let mut h = DigestBuilder::new();
        h.tag(b'v').u64(self.0);
        h.finish()
    }

    fn entry(&self) -> Entry {
        Entry::Value(self.0)
    }
}

impl Digestible for Proposal {
    fn digest(&self) -> Digest {
        let mut h = DigestBuilder::new();
        match self {
            Proposal::Bot => h.tag(b'b'),
            Proposal::Value(v) => h.tag(b'v').u64(v.0),
        };
        h.finish()
    }

    fn entry(&self) -> Entry {
        match self {
            Proposal::Bot => Entry::Bot,
            Proposal::Value(v) => Entry::Value(v.0),
        }
    }
}

/// Element of a set as it appears in snapshots and trace files.
///
/// Serialized untagged: `null` for ⊥, a number for a value, a hex string for
/// any other element (by digest).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Bot,
    Value(u64),
    Opaque(Digest),
}

impl From<ProposalValue> for Entry {
    fn from(v: ProposalValue) -> Self {
        Entry::Value(v.0)
    }
}

impl From<Proposal> for Entry {
    fn from(p: Proposal) -> Self {
        p.entry()
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Bot => write!(f, "⊥"),
            Entry::Value(v) => write!(f, "{v}"),
            Entry::Opaque(d) => write!(f, "{d:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bot_orders_below_values() {
        assert!(Proposal::Bot < Proposal::Value(ProposalValue(0)));
        assert!(Proposal::Value(ProposalValue(1)) < Proposal::Value(ProposalValue(2)));
    }

    #[test]
    fn entry_serializes_untagged() {
        let entries = vec![Entry::Bot, Entry::Value(7), Entry::Opaque(Digest::of(b"x"))];
        let s = serde_json::to_string(&entries).unwrap();
        assert!(s.starts_with("[null,7,\""));
        let back: Vec<Entry> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn digest_hex_roundtrip() {
        let d = Digest::of(b"anonymous");
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        assert_ne!(Digest::of(b"a"), Digest::of(b"b"));
    }
}
