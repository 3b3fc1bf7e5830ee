//! Per-node AODV state machine.
//!
//! A [`Node`] is driven entirely by the engine: every packet arrival, timer
//! expiry or injected command goes in, and a list of [`Emission`]s comes out.
//! Nodes never see the clock except through [`Ctx::now`] and never send on
//! their own; this keeps a run reproducible from its seed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::protocol::{
    is_duplicate, Data, Hello, NodeId, Packet, Position, Rerr, ReversePathEntry, RoutingEntry, Rrep, Rreq, RreqId,
    SeqNum, Tick,
};
use crate::suppression::{select_targets, ConnectivityTable, Resolution, SelectionView, Strategy};

/// Protocol parameters shared by every node of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub strategy: Strategy,
    pub node_count: u32,
    pub hello_interval: Tick,
    pub hello_timeout: Tick,
    pub route_lifetime: Tick,
    pub discovery_deadline: Tick,
    /// Extra attempts after the first discovery attempt times out.
    pub max_retries: u32,
    /// Query quenching: intermediate nodes with a fresh route answer RREQs.
    pub intermediate_reply: bool,
    pub per_neighbor_aggregate: bool,
}

impl NodeConfig {
    pub fn attempt_timeout(&self) -> Tick {
        self.strategy.connectivity().and_then(|c| c.attempt_timeout).unwrap_or(self.discovery_deadline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    Hello,
    RouteExpiry,
    DiscoveryDeadline {
        dest: NodeId,
        rreq_id: RreqId,
    },
    AttemptTimeout {
        rreq_id: RreqId,
    },
    /// Counter-based scheme: end of the copy-counting window for a wave.
    ForwardDecision {
        rreq_id: RreqId,
    },
}

impl TimerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TimerKind::Hello => "hello",
            TimerKind::RouteExpiry => "route-expiry",
            TimerKind::DiscoveryDeadline { .. } => "discovery-deadline",
            TimerKind::AttemptTimeout { .. } => "attempt-timeout",
            TimerKind::ForwardDecision { .. } => "forward-decision",
        }
    }
}

/// Work injected into a node by the scenario's traffic schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Start a fresh discovery for `dest` (even if a route exists) and send
    /// one payload once it resolves.
    Discover {
        dest: NodeId,
        payload_id: u64,
    },
    SendData {
        dest: NodeId,
        payload_id: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    TtlExpired,
    NoReversePath,
    NoRoute,
    DiscoveryFailed,
    LinkAbsent,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TtlExpired => "ttl-expired",
            DropReason::NoReversePath => "no-reverse-path",
            DropReason::NoRoute => "no-route",
            DropReason::DiscoveryFailed => "discovery-failed",
            DropReason::LinkAbsent => "link-absent",
        }
    }
}

/// Observations reported to the metrics collector.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    RedundantRreq {
        rreq_id: RreqId,
    },
    Suppressed {
        rreq_id: RreqId,
        count: u32,
    },
    DiscoveryStarted {
        dest: NodeId,
        rreq_id: RreqId,
        attempt: u32,
        radius: u32,
    },
    DiscoveryResolved {
        dest: NodeId,
        rreq_id: RreqId,
        hop_count: u32,
    },
    DiscoveryFailed {
        dest: NodeId,
    },
    /// An RREP arrived for an attempt that was already resolved.
    LateReply {
        rreq_id: RreqId,
        neighbor: NodeId,
    },
    LinkBroken {
        neighbor: NodeId,
    },
    Boosted {
        dest: NodeId,
        neighbor: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    Send {
        to: NodeId,
        packet: Packet,
    },
    /// Link-local broadcast (HELLO); the engine sends one copy per live link.
    Broadcast {
        packet: Packet,
    },
    SetTimer {
        kind: TimerKind,
        at: Tick,
    },
    DeliverUp {
        payload_id: u64,
    },
    Drop {
        packet: Packet,
        reason: DropReason,
    },
    Signal(Signal),
}

/// Per-event context handed in by the engine.
pub struct Ctx<'a> {
    pub now: Tick,
    pub rng: &'a mut dyn RngCore,
    pub positions: &'a BTreeMap<NodeId, Position>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDiscovery {
    pub rreq_id: RreqId,
    pub attempt_index: u32,
    pub deadline: Tick,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub me: NodeId,
    pub seq: SeqNum,
    next_rreq: u32,
    pub routes: BTreeMap<NodeId, RoutingEntry>,
    pub reverse_paths: BTreeMap<RreqId, ReversePathEntry>,
    pub seen_rreqs: BTreeSet<RreqId>,
    /// Neighbor -> last tick anything (normally a HELLO) was heard from it.
    pub neighbors: BTreeMap<NodeId, Tick>,
    pub pending_discoveries: BTreeMap<NodeId, PendingDiscovery>,
    pub connectivity: ConnectivityTable,
    pub outbox: BTreeMap<NodeId, VecDeque<u64>>,
    /// Highest destination sequence number ever learned, per destination.
    known_seqs: BTreeMap<NodeId, SeqNum>,
    copies_heard: BTreeMap<RreqId, u32>,
    /// Sequence number this node answered each wave with, as a destination.
    answered: BTreeMap<RreqId, SeqNum>,
    pending_forwards: BTreeMap<RreqId, (Rreq, NodeId)>,
    /// Destinations this node originates traffic to over a live route.
    active_dests: BTreeSet<NodeId>,
    /// Peers across links that appeared during the run and have not yet
    /// carried a successful reply.
    new_links: BTreeSet<NodeId>,
}

impl NodeState {
    pub fn new(me: NodeId, aggregate: bool) -> Self {
        NodeState {
            me,
            seq: SeqNum(0),
            next_rreq: 0,
            routes: BTreeMap::new(),
            reverse_paths: BTreeMap::new(),
            seen_rreqs: BTreeSet::new(),
            neighbors: BTreeMap::new(),
            pending_discoveries: BTreeMap::new(),
            connectivity: ConnectivityTable::new(aggregate),
            outbox: BTreeMap::new(),
            known_seqs: BTreeMap::new(),
            copies_heard: BTreeMap::new(),
            answered: BTreeMap::new(),
            pending_forwards: BTreeMap::new(),
            active_dests: BTreeSet::new(),
            new_links: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    state: NodeState,
    config: Arc<NodeConfig>,
}

type Out = Vec<Emission>;

impl Node {
    pub fn new(me: NodeId, config: Arc<NodeConfig>) -> Self {
        Node { state: NodeState::new(me, config.per_neighbor_aggregate), config }
    }

    pub fn id(&self) -> NodeId {
        self.state.me
    }

    pub fn state(&self) -> &NodeState {
        &self.state
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn connectivity(&self) -> &ConnectivityTable {
        &self.state.connectivity
    }

    pub fn route(&self, dest: NodeId) -> Option<&RoutingEntry> {
        self.state.routes.get(&dest)
    }

    /// Records a link that came up during the run.
    pub fn note_new_link(&mut self, peer: NodeId) {
        self.state.new_links.insert(peer);
    }

    pub fn on_packet(&mut self, packet: Packet, from: NodeId, ctx: &mut Ctx<'_>) -> Result<Out> {
        self.state.neighbors.insert(from, ctx.now);
        let mut out = Vec::new();
        match packet {
            Packet::Rreq(rreq) => self.on_rreq(rreq, from, ctx, &mut out)?,
            Packet::Rrep(rrep) => self.on_rrep(rrep, from, ctx, &mut out)?,
            Packet::Rerr(rerr) => self.on_rerr(&rerr, from, ctx, &mut out)?,
            Packet::Hello(_) => {}
            Packet::Data(data) => self.on_data(data, ctx, &mut out),
        }
        Ok(out)
    }

    pub fn on_timer(&mut self, kind: TimerKind, ctx: &mut Ctx<'_>) -> Result<Out> {
        let mut out = Vec::new();
        match kind {
            TimerKind::Hello => self.on_hello_tick(ctx, &mut out)?,
            TimerKind::RouteExpiry => self.on_route_timer(ctx, &mut out)?,
            TimerKind::DiscoveryDeadline { dest, rreq_id } => {
                self.on_discovery_timeout(dest, rreq_id, ctx, &mut out)?
            }
            TimerKind::AttemptTimeout { rreq_id } => {
                if let Some(cfg) = self.config.strategy.connectivity() {
                    self.state.connectivity.fail_pending(rreq_id, cfg)?;
                }
            }
            TimerKind::ForwardDecision { rreq_id } => {
                if let Some((rreq, from)) = self.state.pending_forwards.remove(&rreq_id) {
                    self.forward_rreq(rreq, Some(from), ctx, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    pub fn on_command(&mut self, command: Command, ctx: &mut Ctx<'_>) -> Result<Out> {
        let mut out = Vec::new();
        match command {
            Command::Discover { dest, payload_id } => {
                if dest == self.state.me {
                    return Err(Error::InvalidDestination(dest));
                }
                self.state.outbox.entry(dest).or_default().push_back(payload_id);
                if !self.state.pending_discoveries.contains_key(&dest) {
                    self.start_discovery(dest, 0, ctx, &mut out)?;
                }
            }
            Command::SendData { dest, payload_id } => self.send_data(dest, payload_id, ctx, &mut out)?,
        }
        Ok(out)
    }

    /// The link-layer could not deliver to `to`; treat the link as broken.
    pub fn on_send_failed(&mut self, to: NodeId, packet: &Packet, ctx: &mut Ctx<'_>) -> Result<Out> {
        let mut out = Vec::new();
        if let (Packet::Rreq(r), Some(cfg)) = (packet, self.config.strategy.connectivity()) {
            self.state.connectivity.entry(r.dest, to, cfg).resolve_attempt(r.rreq_id, false, cfg)?;
        }
        if self.state.neighbors.contains_key(&to) {
            self.on_link_break(to, ctx, &mut out)?;
        }
        Ok(out)
    }

    /// Starts a discovery for `dest`. Fails if one is already in progress.
    pub fn initiate_discovery(&mut self, dest: NodeId, ctx: &mut Ctx<'_>) -> Result<Out> {
        let mut out = Vec::new();
        self.start_discovery(dest, 0, ctx, &mut out)?;
        Ok(out)
    }

    pub fn send_data_now(&mut self, dest: NodeId, payload_id: u64, ctx: &mut Ctx<'_>) -> Result<Out> {
        let mut out = Vec::new();
        self.send_data(dest, payload_id, ctx, &mut out)?;
        Ok(out)
    }

    fn start_discovery(&mut self, dest: NodeId, attempt_index: u32, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let st = &mut self.state;
        if dest == st.me {
            return Err(Error::InvalidDestination(dest));
        }
        if st.pending_discoveries.contains_key(&dest) {
            return Err(Error::DiscoveryInProgress(dest));
        }
        st.seq = st.seq.next();
        st.next_rreq += 1;
        let rreq_id = RreqId { origin: st.me, id: st.next_rreq };
        let radius = self.config.strategy.search_radius(attempt_index, self.config.node_count);
        let rreq = Rreq {
            rreq_id,
            origin: st.me,
            origin_seq: st.seq,
            dest,
            dest_seq_known: st.known_seqs.get(&dest).copied(),
            hop_count: 0,
            ttl: radius.saturating_sub(1),
        };
        st.seen_rreqs.insert(rreq_id);
        st.copies_heard.insert(rreq_id, 1);
        let deadline = ctx.now + self.config.discovery_deadline;
        st.pending_discoveries.insert(dest, PendingDiscovery { rreq_id, attempt_index, deadline });
        out.push(Emission::Signal(Signal::DiscoveryStarted { dest, rreq_id, attempt: attempt_index, radius }));
        out.push(Emission::SetTimer { kind: TimerKind::DiscoveryDeadline { dest, rreq_id }, at: deadline });
        self.forward_rreq(rreq, None, ctx, out)
    }

    /// Sends `rreq` to the strategy-selected subset of live neighbors other
    /// than `previous_hop`, opening a connectivity attempt on each.
    fn forward_rreq(
        &mut self,
        rreq: Rreq,
        previous_hop: Option<NodeId>,
        ctx: &mut Ctx<'_>,
        out: &mut Out,
    ) -> Result<()> {
        let st = &mut self.state;
        let candidates: Vec<NodeId> = st.neighbors.keys().copied().filter(|n| Some(*n) != previous_hop).collect();
        let view = SelectionView {
            me: st.me,
            previous_hop,
            connectivity: &st.connectivity,
            copies_heard: st.copies_heard.get(&rreq.rreq_id).copied().unwrap_or(1),
            my_position: ctx.positions.get(&st.me).copied(),
            previous_hop_position: previous_hop.and_then(|p| ctx.positions.get(&p).copied()),
        };
        let targets = select_targets(&self.config.strategy, &view, &rreq, &candidates, &mut *ctx.rng);
        let suppressed = candidates.len() - targets.len();
        if suppressed > 0 {
            out.push(Emission::Signal(Signal::Suppressed { rreq_id: rreq.rreq_id, count: suppressed as u32 }));
        }
        if let Some(cfg) = self.config.strategy.connectivity() {
            for t in &targets {
                st.connectivity.entry(rreq.dest, *t, cfg).open_attempt(rreq.rreq_id, ctx.now)?;
            }
            if !targets.is_empty() {
                out.push(Emission::SetTimer {
                    kind: TimerKind::AttemptTimeout { rreq_id: rreq.rreq_id },
                    at: ctx.now + self.config.attempt_timeout(),
                });
            }
        }
        for to in targets {
            out.push(Emission::Send { to, packet: Packet::Rreq(rreq.clone()) });
        }
        Ok(())
    }

    fn on_rreq(&mut self, rreq: Rreq, from: NodeId, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let me = self.state.me;
        if is_duplicate(&self.state.seen_rreqs, &rreq) {
            *self.state.copies_heard.entry(rreq.rreq_id).or_insert(1) += 1;
            out.push(Emission::Signal(Signal::RedundantRreq { rreq_id: rreq.rreq_id }));
            // The destination answers every copy that reaches it, one reply per
            // arriving link, so each disjoint path learns that it works.
            if rreq.dest == me {
                if let Some(seq) = self.state.answered.get(&rreq.rreq_id).copied() {
                    out.push(Emission::Send { to: from, packet: Packet::Rrep(self.reply_as_destination(&rreq, seq)) });
                }
            }
            return Ok(());
        }
        self.state.seen_rreqs.insert(rreq.rreq_id);
        self.state.copies_heard.insert(rreq.rreq_id, 1);
        self.state
            .reverse_paths
            .insert(rreq.rreq_id, ReversePathEntry { rreq_id: rreq.rreq_id, previous_hop: from, created_at: ctx.now });

        if rreq.dest == me {
            let st = &mut self.state;
            if let Some(known) = rreq.dest_seq_known {
                st.seq = st.seq.max(known);
            }
            st.seq = st.seq.next();
            st.answered.insert(rreq.rreq_id, st.seq);
            let seq = st.seq;
            out.push(Emission::Send { to: from, packet: Packet::Rrep(self.reply_as_destination(&rreq, seq)) });
            return Ok(());
        }

        if self.config.intermediate_reply {
            if let Some(route) = self.state.routes.get(&rreq.dest) {
                let fresh_enough = rreq.dest_seq_known.map_or(true, |k| route.dest_seq >= k);
                if route.is_valid(ctx.now) && fresh_enough {
                    let rrep = Rrep {
                        origin: rreq.origin,
                        dest: rreq.dest,
                        dest_seq: route.dest_seq,
                        hop_count: route.hop_count,
                        rreq_id: rreq.rreq_id,
                        new_link: false,
                    };
                    out.push(Emission::Send { to: from, packet: Packet::Rrep(rrep) });
                    return Ok(());
                }
            }
        }

        let relayed = match rreq.relayed() {
            Ok(r) => r,
            Err(_) => {
                out.push(Emission::Drop { packet: Packet::Rreq(rreq), reason: DropReason::TtlExpired });
                return Ok(());
            }
        };
        if matches!(self.config.strategy, Strategy::CounterBased { .. }) {
            let rreq_id = relayed.rreq_id;
            self.state.pending_forwards.insert(rreq_id, (relayed, from));
            out.push(Emission::SetTimer { kind: TimerKind::ForwardDecision { rreq_id }, at: ctx.now + 1 });
            return Ok(());
        }
        self.forward_rreq(relayed, Some(from), ctx, out)
    }

    fn reply_as_destination(&self, rreq: &Rreq, seq: SeqNum) -> Rrep {
        Rrep {
            origin: rreq.origin,
            dest: self.state.me,
            dest_seq: seq,
            hop_count: 0,
            rreq_id: rreq.rreq_id,
            new_link: false,
        }
    }

    fn on_rrep(&mut self, rrep: Rrep, from: NodeId, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let me = self.state.me;
        let mut new_link = rrep.new_link;
        if let Some(cfg) = self.config.strategy.connectivity() {
            let table = &mut self.state.connectivity;
            if table.entry(rrep.dest, from, cfg).resolve_attempt(rrep.rreq_id, true, cfg)? == Resolution::Unknown {
                out.push(Emission::Signal(Signal::LateReply { rreq_id: rrep.rreq_id, neighbor: from }));
            }
            let crossed_new_link = self.state.new_links.remove(&from);
            new_link |= crossed_new_link;
            if new_link && me != rrep.origin {
                self.state.connectivity.entry(rrep.dest, from, cfg).boost_new_link(cfg);
                out.push(Emission::Signal(Signal::Boosted { dest: rrep.dest, neighbor: from }));
            }
        }

        let hop_count = rrep.hop_count + 1;
        let st = &mut self.state;
        let install = match st.routes.get(&rrep.dest) {
            None => true,
            Some(r) => {
                !r.is_valid(ctx.now)
                    || rrep.dest_seq > r.dest_seq
                    || (rrep.dest_seq == r.dest_seq && hop_count < r.hop_count)
            }
        };
        if install {
            let expiry = ctx.now + self.config.route_lifetime;
            st.routes.insert(
                rrep.dest,
                RoutingEntry { dest: rrep.dest, next_hop: from, hop_count, dest_seq: rrep.dest_seq, expiry },
            );
            out.push(Emission::SetTimer { kind: TimerKind::RouteExpiry, at: expiry });
        }
        let known = st.known_seqs.entry(rrep.dest).or_insert(rrep.dest_seq);
        *known = (*known).max(rrep.dest_seq);

        if me == rrep.origin {
            if st.pending_discoveries.remove(&rrep.dest).is_some() {
                let route_hops = st.routes.get(&rrep.dest).map_or(hop_count, |r| r.hop_count);
                out.push(Emission::Signal(Signal::DiscoveryResolved {
                    dest: rrep.dest,
                    rreq_id: rrep.rreq_id,
                    hop_count: route_hops,
                }));
                let queued = st.outbox.remove(&rrep.dest).unwrap_or_default();
                for payload_id in queued {
                    self.send_data(rrep.dest, payload_id, ctx, out)?;
                }
            }
            return Ok(());
        }

        let Some(reverse) = st.reverse_paths.get(&rrep.rreq_id) else {
            out.push(Emission::Drop { packet: Packet::Rrep(rrep), reason: DropReason::NoReversePath });
            return Ok(());
        };
        let to = reverse.previous_hop;
        let relayed = Rrep { new_link, ..rrep.relayed() };
        if st.neighbors.contains_key(&to) {
            out.push(Emission::Send { to, packet: Packet::Rrep(relayed) });
        } else {
            out.push(Emission::Drop { packet: Packet::Rrep(relayed), reason: DropReason::LinkAbsent });
        }
        Ok(())
    }

    fn on_rerr(&mut self, rerr: &Rerr, from: NodeId, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let st = &mut self.state;
        let mut lost = Vec::new();
        for (dest, seq) in &rerr.unreachable {
            if st.routes.get(dest).is_some_and(|r| r.next_hop == from) {
                st.routes.remove(dest);
                let known = st.known_seqs.entry(*dest).or_insert(*seq);
                *known = (*known).max(*seq);
                lost.push((*dest, *seq));
            }
        }
        if lost.is_empty() {
            return Ok(());
        }
        for n in st.neighbors.keys().filter(|n| **n != from) {
            out.push(Emission::Send { to: *n, packet: Packet::Rerr(Rerr { unreachable: lost.clone() }) });
        }
        self.rediscover_active(lost.iter().map(|(d, _)| *d), ctx, out)
    }

    fn on_data(&mut self, data: Data, ctx: &mut Ctx<'_>, out: &mut Out) {
        if data.dst == self.state.me {
            out.push(Emission::DeliverUp { payload_id: data.payload_id });
            return;
        }
        match self.state.routes.get_mut(&data.dst) {
            Some(r) if r.is_valid(ctx.now) => {
                r.expiry = r.expiry.max(ctx.now + self.config.route_lifetime);
                out.push(Emission::Send { to: r.next_hop, packet: Packet::Data(data) });
            }
            _ => out.push(Emission::Drop { packet: Packet::Data(data), reason: DropReason::NoRoute }),
        }
    }

    fn send_data(&mut self, dest: NodeId, payload_id: u64, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let me = self.state.me;
        if dest == me {
            out.push(Emission::DeliverUp { payload_id });
            return Ok(());
        }
        if let Some(r) = self.state.routes.get(&dest).filter(|r| r.is_valid(ctx.now)) {
            let to = r.next_hop;
            self.state.active_dests.insert(dest);
            out.push(Emission::Send { to, packet: Packet::Data(Data { src: me, dst: dest, payload_id }) });
            return Ok(());
        }
        self.state.outbox.entry(dest).or_default().push_back(payload_id);
        if !self.state.pending_discoveries.contains_key(&dest) {
            self.start_discovery(dest, 0, ctx, out)?;
        }
        Ok(())
    }

    fn on_discovery_timeout(&mut self, dest: NodeId, rreq_id: RreqId, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let st = &mut self.state;
        let live = st.pending_discoveries.get(&dest).is_some_and(|p| p.rreq_id == rreq_id);
        if !live {
            return Ok(());
        }
        let pending = st.pending_discoveries.remove(&dest).expect("checked above");
        if let Some(cfg) = self.config.strategy.connectivity() {
            st.connectivity.fail_pending(rreq_id, cfg)?;
        }
        if pending.attempt_index < self.config.max_retries {
            return self.start_discovery(dest, pending.attempt_index + 1, ctx, out);
        }
        out.push(Emission::Signal(Signal::DiscoveryFailed { dest }));
        let me = st.me;
        for payload_id in st.outbox.remove(&dest).unwrap_or_default() {
            out.push(Emission::Drop {
                packet: Packet::Data(Data { src: me, dst: dest, payload_id }),
                reason: DropReason::DiscoveryFailed,
            });
        }
        Ok(())
    }

    fn on_hello_tick(&mut self, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let cutoff = ctx.now.saturating_sub(self.config.hello_timeout);
        let silent: Vec<NodeId> =
            self.state.neighbors.iter().filter(|(_, last)| **last < cutoff).map(|(n, _)| *n).collect();
        for n in silent {
            self.on_link_break(n, ctx, out)?;
        }
        let hello = Hello { sender: self.state.me, seq: self.state.seq };
        out.push(Emission::Broadcast { packet: Packet::Hello(hello) });
        out.push(Emission::SetTimer { kind: TimerKind::Hello, at: ctx.now + self.config.hello_interval });
        Ok(())
    }

    /// Drops `lost` from the neighbor table, invalidates every route through
    /// it and reports the loss with an RERR to the remaining neighbors.
    pub fn on_link_break(&mut self, lost: NodeId, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let st = &mut self.state;
        if st.neighbors.remove(&lost).is_none() {
            return Ok(());
        }
        out.push(Emission::Signal(Signal::LinkBroken { neighbor: lost }));
        st.new_links.remove(&lost);
        let broken: Vec<(NodeId, SeqNum)> =
            st.routes.values().filter(|r| r.next_hop == lost).map(|r| (r.dest, r.dest_seq.next())).collect();
        if broken.is_empty() {
            return Ok(());
        }
        for (dest, seq) in &broken {
            st.routes.remove(dest);
            st.known_seqs.insert(*dest, *seq);
        }
        for n in st.neighbors.keys() {
            out.push(Emission::Send { to: *n, packet: Packet::Rerr(Rerr { unreachable: broken.clone() }) });
        }
        self.rediscover_active(broken.iter().map(|(d, _)| *d), ctx, out)
    }

    fn rediscover_active(
        &mut self,
        dests: impl IntoIterator<Item = NodeId>,
        ctx: &mut Ctx<'_>,
        out: &mut Out,
    ) -> Result<()> {
        for dest in dests {
            if self.state.active_dests.remove(&dest) && !self.state.pending_discoveries.contains_key(&dest) {
                self.start_discovery(dest, 0, ctx, out)?;
            }
        }
        Ok(())
    }

    fn on_route_timer(&mut self, ctx: &mut Ctx<'_>, out: &mut Out) -> Result<()> {
        let now = ctx.now;
        let expired: Vec<NodeId> = self.state.routes.values().filter(|r| r.expiry <= now).map(|r| r.dest).collect();
        for dest in expired {
            self.state.routes.remove(&dest);
            self.state.active_dests.remove(&dest);
            let waiting = self.state.outbox.get(&dest).is_some_and(|q| !q.is_empty());
            if waiting && !self.state.pending_discoveries.contains_key(&dest) {
                self.start_discovery(dest, 0, ctx, out)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suppression::ConnectivityConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S: NodeId = NodeId(0);
    const N1: NodeId = NodeId(1);
    const N4: NodeId = NodeId(4);
    const N7: NodeId = NodeId(7);
    const D: NodeId = NodeId(20);

    fn config(strategy: Strategy) -> Arc<NodeConfig> {
        Arc::new(NodeConfig {
            strategy,
            node_count: 11,
            hello_interval: 10,
            hello_timeout: 25,
            route_lifetime: 300,
            discovery_deadline: 22,
            max_retries: 2,
            intermediate_reply: true,
            per_neighbor_aggregate: false,
        })
    }

    struct Harness {
        rng: ChaCha8Rng,
        positions: BTreeMap<NodeId, Position>,
    }

    impl Harness {
        fn new() -> Self {
            Harness { rng: ChaCha8Rng::seed_from_u64(0), positions: BTreeMap::new() }
        }
        fn ctx(&mut self, now: Tick) -> Ctx<'_> {
            Ctx { now, rng: &mut self.rng, positions: &self.positions }
        }
    }

    fn node_with(me: NodeId, neighbors: &[NodeId], strategy: Strategy) -> Node {
        let mut n = Node::new(me, config(strategy));
        for nb in neighbors {
            n.state.neighbors.insert(*nb, 0);
        }
        n
    }

    fn sends(out: &[Emission]) -> Vec<(NodeId, Packet)> {
        out.iter()
            .filter_map(|e| match e {
                Emission::Send { to, packet } => Some((*to, packet.clone())),
                _ => None,
            })
            .collect()
    }

    fn rreq(origin: NodeId, id: u32, dest: NodeId, ttl: u32) -> Rreq {
        Rreq {
            rreq_id: RreqId { origin, id },
            origin,
            origin_seq: SeqNum(1),
            dest,
            dest_seq_known: None,
            hop_count: 0,
            ttl,
        }
    }

    #[test]
    fn source_floods_to_every_neighbor() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1, N4, N7], Strategy::Flood);
        let out = s.initiate_discovery(D, &mut h.ctx(50)).unwrap();
        let to: Vec<NodeId> = sends(&out).into_iter().map(|(t, _)| t).collect();
        assert_eq!(to, vec![N1, N4, N7]);
        assert_eq!(s.state.seq, SeqNum(1));
        assert!(out.contains(&Emission::SetTimer {
            kind: TimerKind::DiscoveryDeadline { dest: D, rreq_id: RreqId { origin: S, id: 1 } },
            at: 72
        }));
        let Packet::Rreq(r) = &sends(&out)[0].1 else { panic!() };
        assert_eq!((r.hop_count, r.ttl), (0, 10));
    }

    #[test]
    fn isolated_source_only_arms_deadline() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[], Strategy::Flood);
        let out = s.initiate_discovery(D, &mut h.ctx(0)).unwrap();
        assert!(sends(&out).is_empty());
        assert!(out.iter().any(|e| matches!(e, Emission::SetTimer { kind: TimerKind::DiscoveryDeadline { .. }, .. })));
        let mut out = Vec::new();
        // Exhaust all retries.
        for t in [22, 44, 66] {
            let rid_now = s.state.pending_discoveries[&D].rreq_id;
            out = s.on_timer(TimerKind::DiscoveryDeadline { dest: D, rreq_id: rid_now }, &mut h.ctx(t)).unwrap();
        }
        assert!(!s.state.pending_discoveries.contains_key(&D));
        assert!(out.contains(&Emission::Signal(Signal::DiscoveryFailed { dest: D })));
    }

    #[test]
    fn discovery_for_self_is_rejected() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1], Strategy::Flood);
        assert!(matches!(s.initiate_discovery(S, &mut h.ctx(0)), Err(Error::InvalidDestination(_))));
    }

    #[test]
    fn duplicate_copy_only_counts_redundancy() {
        let mut h = Harness::new();
        let n13 = NodeId(13);
        let mut n = node_with(n13, &[N4, N7], Strategy::Flood);
        let first = n.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), N4, &mut h.ctx(2)).unwrap();
        assert_eq!(sends(&first).len(), 1);
        let before = n.state.reverse_paths.clone();
        let second = n.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), N7, &mut h.ctx(2)).unwrap();
        assert_eq!(second, vec![Emission::Signal(Signal::RedundantRreq { rreq_id: RreqId { origin: S, id: 1 } })]);
        assert_eq!(n.state.reverse_paths, before);
    }

    #[test]
    fn destination_replies_and_stops_the_wave() {
        let mut h = Harness::new();
        let n3 = NodeId(3);
        let mut d = node_with(D, &[n3, NodeId(6)], Strategy::Flood);
        let out = d.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), n3, &mut h.ctx(4)).unwrap();
        let s = sends(&out);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, n3);
        let Packet::Rrep(rrep) = &s[0].1 else { panic!("expected RREP") };
        assert_eq!((rrep.hop_count, rrep.dest_seq), (0, SeqNum(1)));
        // A second copy over another link gets its own reply with the same seq.
        let out = d.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), NodeId(6), &mut h.ctx(4)).unwrap();
        let s = sends(&out);
        assert_eq!(s.len(), 1);
        let Packet::Rrep(again) = &s[0].1 else { panic!() };
        assert_eq!(again.dest_seq, SeqNum(1));
        assert_eq!(d.state.seq, SeqNum(1));
    }

    #[test]
    fn intermediate_with_fresh_route_quenches() {
        let mut h = Harness::new();
        let mut n = node_with(N4, &[S, NodeId(5)], Strategy::Flood);
        n.state
            .routes
            .insert(D, RoutingEntry { dest: D, next_hop: NodeId(5), hop_count: 3, dest_seq: SeqNum(2), expiry: 500 });
        let out = n.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), S, &mut h.ctx(1)).unwrap();
        let s = sends(&out);
        assert_eq!(s.len(), 1);
        let Packet::Rrep(r) = &s[0].1 else { panic!() };
        assert_eq!((s[0].0, r.hop_count), (S, 3));

        // A stale route (older seq than the source knows) does not answer.
        let mut stale = rreq(S, 2, D, 9);
        stale.dest_seq_known = Some(SeqNum(5));
        let out = n.on_packet(Packet::Rreq(stale), S, &mut h.ctx(1)).unwrap();
        assert!(matches!(&sends(&out)[0].1, Packet::Rreq(_)));
    }

    #[test]
    fn ttl_exhausted_copy_is_dropped() {
        let mut h = Harness::new();
        let mut n = node_with(N1, &[S, NodeId(2)], Strategy::Flood);
        let out = n.on_packet(Packet::Rreq(rreq(S, 1, D, 0)), S, &mut h.ctx(1)).unwrap();
        assert!(sends(&out).is_empty());
        assert!(out.iter().any(|e| matches!(e, Emission::Drop { reason: DropReason::TtlExpired, .. })));
    }

    #[test]
    fn rrep_is_relayed_along_reverse_path() {
        let mut h = Harness::new();
        let n2 = NodeId(2);
        let n3 = NodeId(3);
        let mut n = node_with(n3, &[n2, D], Strategy::Flood);
        n.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), n2, &mut h.ctx(3)).unwrap();
        let rrep = Rrep {
            origin: S,
            dest: D,
            dest_seq: SeqNum(1),
            hop_count: 0,
            rreq_id: RreqId { origin: S, id: 1 },
            new_link: false,
        };
        let out = n.on_packet(Packet::Rrep(rrep), D, &mut h.ctx(5)).unwrap();
        let s = sends(&out);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, n2);
        assert_eq!(n.route(D).unwrap().next_hop, D);
        assert_eq!(n.route(D).unwrap().hop_count, 1);
    }

    #[test]
    fn rrep_for_unknown_wave_is_dropped() {
        let mut h = Harness::new();
        let mut n = node_with(N1, &[S, NodeId(2)], Strategy::Flood);
        let rrep = Rrep {
            origin: S,
            dest: D,
            dest_seq: SeqNum(1),
            hop_count: 2,
            rreq_id: RreqId { origin: S, id: 9 },
            new_link: false,
        };
        let out = n.on_packet(Packet::Rrep(rrep), NodeId(2), &mut h.ctx(5)).unwrap();
        assert!(out.iter().any(|e| matches!(e, Emission::Drop { reason: DropReason::NoReversePath, .. })));
    }

    #[test]
    fn origin_installs_route_and_flushes_queue() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1, N4], Strategy::Flood);
        let out = s.on_command(Command::SendData { dest: D, payload_id: 7 }, &mut h.ctx(0)).unwrap();
        assert_eq!(sends(&out).len(), 2);
        assert_eq!(s.state.outbox[&D].len(), 1);
        // Second payload while discovery is live: queued, no second wave.
        let out = s.on_command(Command::SendData { dest: D, payload_id: 8 }, &mut h.ctx(1)).unwrap();
        assert!(sends(&out).is_empty());
        assert_eq!(s.state.outbox[&D].len(), 2);

        let rid = s.state.pending_discoveries[&D].rreq_id;
        let rrep = Rrep { origin: S, dest: D, dest_seq: SeqNum(1), hop_count: 3, rreq_id: rid, new_link: false };
        let out = s.on_packet(Packet::Rrep(rrep), N1, &mut h.ctx(8)).unwrap();
        let r = s.route(D).unwrap();
        assert_eq!((r.next_hop, r.hop_count), (N1, 4));
        assert!(out.contains(&Emission::Signal(Signal::DiscoveryResolved { dest: D, rreq_id: rid, hop_count: 4 })));
        let data: Vec<_> =
            sends(&out).into_iter().filter(|(to, p)| *to == N1 && matches!(p, Packet::Data(_))).collect();
        assert_eq!(data.len(), 2);
        assert!(s.state.pending_discoveries.is_empty());

        // Stale deadline afterwards is a no-op.
        let out = s.on_timer(TimerKind::DiscoveryDeadline { dest: D, rreq_id: rid }, &mut h.ctx(22)).unwrap();
        assert!(out.is_empty());

        // With a route in place, data goes straight to the next hop.
        let out = s.send_data_now(D, 9, &mut h.ctx(30)).unwrap();
        assert_eq!(sends(&out).len(), 1);
        assert_eq!(sends(&out)[0].0, N1);
    }

    #[test]
    fn timeout_retries_with_fresh_wave() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1], Strategy::Flood);
        s.initiate_discovery(D, &mut h.ctx(0)).unwrap();
        let first = s.state.pending_discoveries[&D].clone();
        let out = s.on_timer(TimerKind::DiscoveryDeadline { dest: D, rreq_id: first.rreq_id }, &mut h.ctx(22)).unwrap();
        let second = s.state.pending_discoveries[&D].clone();
        assert_eq!(second.attempt_index, 1);
        assert_ne!(second.rreq_id, first.rreq_id);
        assert!(out.contains(&Emission::Signal(Signal::DiscoveryStarted {
            dest: D,
            rreq_id: second.rreq_id,
            attempt: 1,
            radius: 11
        })));
    }

    #[test]
    fn hello_tick_expires_silent_neighbors() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1, N4], Strategy::Flood);
        s.state.neighbors.insert(N1, 100);
        s.state.neighbors.insert(N4, 70);
        s.state
            .routes
            .insert(D, RoutingEntry { dest: D, next_hop: N4, hop_count: 4, dest_seq: SeqNum(3), expiry: 999 });
        s.state.active_dests.insert(D);
        let out = s.on_timer(TimerKind::Hello, &mut h.ctx(110)).unwrap();
        assert!(s.state.neighbors.contains_key(&N1));
        assert!(!s.state.neighbors.contains_key(&N4));
        assert!(s.route(D).is_none());
        let rerr: Vec<_> = sends(&out).into_iter().filter(|(_, p)| matches!(p, Packet::Rerr(_))).collect();
        assert_eq!(rerr.len(), 1);
        assert_eq!(rerr[0].0, N1);
        // S was using the route, so it looks for a new one.
        assert!(s.state.pending_discoveries.contains_key(&D));
        assert!(out.iter().any(|e| matches!(e, Emission::Broadcast { .. })));

        // Nothing expires when everyone is fresh.
        let mut fresh = node_with(S, &[N1], Strategy::Flood);
        fresh.state.neighbors.insert(N1, 105);
        let out = fresh.on_timer(TimerKind::Hello, &mut h.ctx(110)).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn unused_link_break_is_silent() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1, N4], Strategy::Flood);
        let mut out = Vec::new();
        s.on_link_break(N4, &mut h.ctx(5), &mut out).unwrap();
        assert!(sends(&out).is_empty());
    }

    #[test]
    fn rerr_propagates_only_for_routes_via_sender() {
        let mut h = Harness::new();
        let mut n = node_with(N4, &[S, NodeId(5), NodeId(13)], Strategy::Flood);
        n.state
            .routes
            .insert(D, RoutingEntry { dest: D, next_hop: NodeId(5), hop_count: 3, dest_seq: SeqNum(1), expiry: 999 });
        let rerr = Packet::Rerr(Rerr { unreachable: vec![(D, SeqNum(2))] });
        let out = n.on_packet(rerr.clone(), NodeId(13), &mut h.ctx(5)).unwrap();
        assert!(out.is_empty(), "not routed via N13");
        let out = n.on_packet(rerr, NodeId(5), &mut h.ctx(5)).unwrap();
        let to: Vec<NodeId> = sends(&out).into_iter().map(|(t, _)| t).collect();
        assert_eq!(to, vec![S, NodeId(13)]);
        assert!(n.route(D).is_none());
    }

    #[test]
    fn route_timer_boundary_and_rediscovery() {
        let mut h = Harness::new();
        let mut s = node_with(S, &[N1], Strategy::Flood);
        s.state
            .routes
            .insert(D, RoutingEntry { dest: D, next_hop: N1, hop_count: 1, dest_seq: SeqNum(1), expiry: 100 });
        let other = NodeId(9);
        s.state
            .routes
            .insert(other, RoutingEntry { dest: other, next_hop: N1, hop_count: 1, dest_seq: SeqNum(1), expiry: 101 });
        s.state.outbox.entry(D).or_default().push_back(1);
        let out = s.on_timer(TimerKind::RouteExpiry, &mut h.ctx(100)).unwrap();
        assert!(s.route(D).is_none());
        assert!(s.route(other).is_some());
        assert!(out.iter().any(|e| matches!(e, Emission::Signal(Signal::DiscoveryStarted { .. }))));
    }

    #[test]
    fn connectivity_attempts_open_and_resolve() {
        let mut h = Harness::new();
        let cfg = ConnectivityConfig::default();
        let mut s = node_with(S, &[N1, N4, N7], Strategy::Connectivity(cfg.clone()));
        s.initiate_discovery(D, &mut h.ctx(0)).unwrap();
        let rid = s.state.pending_discoveries[&D].rreq_id;
        for n in [N1, N4, N7] {
            assert_eq!(s.connectivity().get(D, n).unwrap().attempts, 1);
        }
        let rrep = Rrep { origin: S, dest: D, dest_seq: SeqNum(1), hop_count: 3, rreq_id: rid, new_link: false };
        s.on_packet(Packet::Rrep(rrep.clone()), N1, &mut h.ctx(8)).unwrap();
        s.on_packet(Packet::Rrep(rrep.clone()), N4, &mut h.ctx(8)).unwrap();
        s.on_timer(TimerKind::AttemptTimeout { rreq_id: rid }, &mut h.ctx(22)).unwrap();
        assert_eq!(s.connectivity().mu(D, N1, &cfg), 1.0);
        assert_eq!(s.connectivity().mu(D, N4, &cfg), 1.0);
        assert_eq!(s.connectivity().mu(D, N7, &cfg), 0.0);
        // A reply after the timeout is ignored with a warning signal.
        let out = s.on_packet(Packet::Rrep(rrep), N7, &mut h.ctx(30)).unwrap();
        assert!(out.contains(&Emission::Signal(Signal::LateReply { rreq_id: rid, neighbor: N7 })));
        assert_eq!(s.connectivity().mu(D, N7, &cfg), 0.0);
    }

    #[test]
    fn reply_over_new_link_boosts_upstream() {
        let mut h = Harness::new();
        let cfg = ConnectivityConfig { mode: crate::suppression::MuMode::Ema, ..Default::default() };
        let n6 = NodeId(6);
        let mut n7 = node_with(N7, &[S, n6], Strategy::Connectivity(cfg.clone()));
        n7.note_new_link(n6);
        n7.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), S, &mut h.ctx(1)).unwrap();
        let rid = RreqId { origin: S, id: 1 };
        // Pretend earlier history had dragged this link down.
        n7.state.connectivity.entry(D, n6, &cfg).mu = 0.2;
        let rrep = Rrep { origin: S, dest: D, dest_seq: SeqNum(1), hop_count: 1, rreq_id: rid, new_link: false };
        let out = n7.on_packet(Packet::Rrep(rrep), n6, &mut h.ctx(4)).unwrap();
        // EMA success from 0.2 gives 0.44, the boost adds 0.1.
        assert!((n7.connectivity().mu(D, n6, &cfg) - 0.54).abs() < 1e-12);
        let Packet::Rrep(up) = &sends(&out)[0].1 else { panic!() };
        assert!(up.new_link);
        assert!(n7.state.new_links.is_empty());
    }

    #[test]
    fn counter_based_defers_forwarding_one_tick() {
        let mut h = Harness::new();
        let mut n = node_with(N4, &[S, NodeId(5), NodeId(13)], Strategy::CounterBased { c: 1 });
        let out = n.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), S, &mut h.ctx(1)).unwrap();
        assert!(sends(&out).is_empty());
        let rid = RreqId { origin: S, id: 1 };
        n.on_packet(Packet::Rreq(rreq(S, 1, D, 9)), NodeId(13), &mut h.ctx(1)).unwrap();
        let out = n.on_timer(TimerKind::ForwardDecision { rreq_id: rid }, &mut h.ctx(2)).unwrap();
        assert!(sends(&out).is_empty(), "heard twice with c = 1");
        assert!(out.contains(&Emission::Signal(Signal::Suppressed { rreq_id: rid, count: 2 })));
    }
}
