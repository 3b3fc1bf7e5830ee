//! Packet formats, identifiers and routing-table entries.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation time in integer ticks.
pub type Tick = u64;

/// Planar node position, in the scenario's distance units.
pub type Position = [f64; 2];

/// Node identifier. The total order is used for every deterministic tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Per-node sequence number; only its owner ever increments it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeqNum(pub u32);

impl SeqNum {
    pub fn next(self) -> SeqNum {
        SeqNum(self.0.wrapping_add(1))
    }
}

/// Identifies one RREQ wave: the originator plus a per-originator counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RreqId {
    pub origin: NodeId,
    pub id: u32,
}

impl fmt::Display for RreqId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.origin.0, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rreq {
    pub rreq_id: RreqId,
    pub origin: NodeId,
    pub origin_seq: SeqNum,
    pub dest: NodeId,
    pub dest_seq_known: Option<SeqNum>,
    pub hop_count: u32,
    /// Remaining relays this copy may still undergo. A copy holding `ttl == 0`
    /// is delivered but never relayed, so a wave emitted with `ttl = r - 1`
    /// reaches exactly `r` hops.
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrep {
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seq: SeqNum,
    pub hop_count: u32,
    pub rreq_id: RreqId,
    /// Set once the reply has crossed a link that came up after the start of
    /// the run; nodes upstream use it to boost their connectivity index.
    pub new_link: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, SeqNum)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub sender: NodeId,
    pub seq: SeqNum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Data {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Hello(Hello),
    Data(Data),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketKind {
    Rreq,
    Rrep,
    Rerr,
    Hello,
    Data,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Rreq => "RREQ",
            PacketKind::Rrep => "RREP",
            PacketKind::Rerr => "RERR",
            PacketKind::Hello => "HELLO",
            PacketKind::Data => "DATA",
        }
    }
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::Rreq(_) => PacketKind::Rreq,
            Packet::Rrep(_) => PacketKind::Rrep,
            Packet::Rerr(_) => PacketKind::Rerr,
            Packet::Hello(_) => PacketKind::Hello,
            Packet::Data(_) => PacketKind::Data,
        }
    }

    /// One-line summary used by the event trace. Node ids are rendered by the
    /// supplied closure so the trace can show scenario names.
    pub fn summary(&self, name: impl Fn(NodeId) -> String) -> String {
        match self {
            Packet::Rreq(r) => format!(
                "RREQ id={}/{} {}->{} hop={} ttl={}",
                name(r.rreq_id.origin),
                r.rreq_id.id,
                name(r.origin),
                name(r.dest),
                r.hop_count,
                r.ttl
            ),
            Packet::Rrep(r) => format!(
                "RREP id={}/{} {}->{} seq={} hop={}{}",
                name(r.rreq_id.origin),
                r.rreq_id.id,
                name(r.dest),
                name(r.origin),
                r.dest_seq.0,
                r.hop_count,
                if r.new_link { " new-link" } else { "" }
            ),
            Packet::Rerr(r) => {
                let list: Vec<String> = r.unreachable.iter().map(|(d, s)| format!("{}:{}", name(*d), s.0)).collect();
                format!("RERR [{}]", list.join(","))
            }
            Packet::Hello(h) => format!("HELLO {} seq={}", name(h.sender), h.seq.0),
            Packet::Data(d) => format!("DATA {}->{} payload={}", name(d.src), name(d.dst), d.payload_id),
        }
    }
}

/// Forward route to one destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: SeqNum,
    pub expiry: Tick,
}

impl RoutingEntry {
    /// Expired entries (`expiry <= now`) are never used for forwarding.
    pub fn is_valid(&self, now: Tick) -> bool {
        self.expiry > now
    }
}

/// Route request table entry: where the first copy of a wave came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReversePathEntry {
    pub rreq_id: RreqId,
    pub previous_hop: NodeId,
    pub created_at: Tick,
}

pub fn is_duplicate(seen: &BTreeSet<RreqId>, rreq: &Rreq) -> bool {
    seen.contains(&rreq.rreq_id)
}

impl Rreq {
    pub fn relayed(&self) -> Result<Rreq> {
        if self.ttl == 0 {
            return Err(Error::NotRelayable);
        }
        Ok(Rreq { hop_count: self.hop_count + 1, ttl: self.ttl - 1, ..self.clone() })
    }
}

impl Rrep {
    pub fn relayed(&self) -> Rrep {
        Rrep { hop_count: self.hop_count + 1, ..self.clone() }
    }
}

/// Hop/TTL bookkeeping for a relayed packet. Only RREQ and RREP are relayed
/// hop-by-hop with a header update.
pub fn relay_transform(p: &Packet) -> Result<Packet> {
    match p {
        Packet::Rreq(r) => r.relayed().map(Packet::Rreq),
        Packet::Rrep(r) => Ok(Packet::Rrep(r.relayed())),
        _ => Err(Error::NotRelayable),
    }
}
