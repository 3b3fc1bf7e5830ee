//! Discrete-event engine: event queue, link model, mobility and the glue that
//! turns node emissions into scheduled deliveries and metrics.
//!
//! Events at the same tick run in a fixed order: topology changes, packet
//! deliveries (lowest sender first), timers (lowest node first), then traffic.
//! Together with a single seeded RNG this makes every run reproducible.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{DiscoveryOutcome, DiscoveryRecord, MetricEvent, MetricsReport};
use crate::node::{Command, Ctx, Emission, Node, Signal, TimerKind};
use crate::protocol::{NodeId, Packet, PacketKind, Position, RreqId, Tick};
use crate::scenario::{Mobility, Scenario, ScriptedEvent};
use crate::suppression::distance;

/// Drops whatever `from` transmits to `to` at tick `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ScriptedDrop {
    pub at: Tick,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: Option<PacketKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmission {
    Scheduled { at: Tick },
    Lost,
    LinkAbsent,
}

/// Undirected links with per-link delay, node positions and scripted losses.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<(NodeId, NodeId), Tick>,
    positions: BTreeMap<NodeId, Position>,
    drops: BTreeSet<ScriptedDrop>,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, pos: Option<Position>) {
        self.nodes.insert(id);
        if let Some(p) = pos {
            self.positions.insert(id, p);
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn positions(&self) -> &BTreeMap<NodeId, Position> {
        &self.positions
    }

    /// Returns false if the link already existed.
    pub fn link_up(&mut self, a: NodeId, b: NodeId, delay: Tick) -> bool {
        self.links.insert(key(a, b), delay).is_none()
    }

    /// Returns false if there was no such link.
    pub fn link_down(&mut self, a: NodeId, b: NodeId) -> bool {
        self.links.remove(&key(a, b)).is_some()
    }

    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        self.links.contains_key(&key(a, b))
    }

    pub fn delay(&self, a: NodeId, b: NodeId) -> Option<Tick> {
        self.links.get(&key(a, b)).copied()
    }

    pub fn links(&self) -> impl Iterator<Item = (NodeId, NodeId, Tick)> + '_ {
        self.links.iter().map(|((a, b), d)| (*a, *b, *d))
    }

    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        self.links
            .keys()
            .filter_map(|&(a, b)| match () {
                _ if a == n => Some(b),
                _ if b == n => Some(a),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn add_drop(&mut self, drop: ScriptedDrop) {
        self.drops.insert(drop);
    }

    pub fn transmit(&self, now: Tick, from: NodeId, to: NodeId, kind: PacketKind) -> Transmission {
        let Some(delay) = self.delay(from, to) else {
            return Transmission::LinkAbsent;
        };
        let dropped = self
            .drops
            .range(ScriptedDrop { at: now, from, to, kind: None }..)
            .take_while(|d| d.at == now && d.from == from && d.to == to)
            .any(|d| d.kind.map_or(true, |k| k == kind));
        if dropped {
            Transmission::Lost
        } else {
            Transmission::Scheduled { at: now + delay }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Topology(usize),
    MobilityStep,
    Deliver { from: NodeId, to: NodeId, packet_slot: usize },
    Timer { node: NodeId, kind: TimerKind },
    Traffic { flow: usize, round: u32 },
}

impl EventKind {
    fn order(&self) -> (u8, NodeId, NodeId) {
        match self {
            EventKind::Topology(_) | EventKind::MobilityStep => (0, NodeId(0), NodeId(0)),
            EventKind::Deliver { from, to, .. } => (1, *from, *to),
            EventKind::Timer { node, .. } => (2, *node, NodeId(0)),
            EventKind::Traffic { .. } => (3, NodeId(0), NodeId(0)),
        }
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Queued {
    at: Tick,
    order: (u8, NodeId, NodeId),
    seq: u64,
    kind: EventKind,
}

#[derive(Debug, Clone)]
struct Walker {
    target: Position,
    speed: f64,
    pause_left: Tick,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Option<String>,
}

pub struct Engine {
    now: Tick,
    t_max: Tick,
    seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    packets: BTreeMap<usize, Packet>,
    next_slot: usize,
    topology: Topology,
    nodes: BTreeMap<NodeId, Node>,
    rng: ChaCha8Rng,
    mobility: Mobility,
    mobility_rng: ChaCha8Rng,
    walkers: BTreeMap<NodeId, Walker>,
    events: Vec<ScriptedEvent>,
    flows: Vec<(NodeId, NodeId, Tick, Tick, u32)>,
    names: BTreeMap<NodeId, String>,
    ids: BTreeMap<String, NodeId>,
    report: MetricsReport,
    rreq_round: BTreeMap<RreqId, Option<u32>>,
    open_discovery: BTreeMap<(NodeId, NodeId), usize>,
    current_round: Option<u32>,
    next_payload: u64,
    trace: Option<String>,
}

impl Engine {
    pub fn new(scenario: &Scenario) -> Result<Engine> {
        scenario.validate()?;
        let config = Arc::new(scenario.node_config());
        let mut topology = Topology::new();
        let mut nodes = BTreeMap::new();
        for n in &scenario.nodes {
            let id = NodeId(n.id);
            topology.add_node(id, n.pos);
            nodes.insert(id, Node::new(id, Arc::clone(&config)));
        }
        for (a, b, d) in scenario.link_ids() {
            topology.link_up(a, b, d);
        }
        let ids: BTreeMap<String, NodeId> = scenario.nodes.iter().map(|n| (n.name.clone(), NodeId(n.id))).collect();
        let mut engine = Engine {
            now: 0,
            t_max: scenario.t_max,
            seq: 0,
            queue: BinaryHeap::new(),
            packets: BTreeMap::new(),
            next_slot: 0,
            topology,
            nodes,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            mobility: scenario.mobility.clone(),
            mobility_rng: ChaCha8Rng::seed_from_u64(0),
            walkers: BTreeMap::new(),
            events: scenario.events.clone(),
            flows: scenario.traffic_ids(),
            names: scenario.names(),
            ids,
            report: MetricsReport::default(),
            rreq_round: BTreeMap::new(),
            open_discovery: BTreeMap::new(),
            current_round: None,
            next_payload: 0,
            trace: None,
        };
        engine.schedule_initial();
        Ok(engine)
    }

    fn schedule_initial(&mut self) {
        for i in 0..self.events.len() {
            let ev = self.events[i].clone();
            match ev {
                ScriptedEvent::Drop { at, from, to, packet } => {
                    let (from, to) = (self.ids[&from], self.ids[&to]);
                    self.topology.add_drop(ScriptedDrop { at, from, to, kind: packet });
                }
                ScriptedEvent::LinkUp { at, .. } | ScriptedEvent::LinkDown { at, .. } => {
                    self.push(at, EventKind::Topology(i));
                }
            }
        }
        if let Mobility::RandomWaypoint { area, speed, seed, .. } = self.mobility {
            self.mobility_rng = ChaCha8Rng::seed_from_u64(seed);
            let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
            for id in ids {
                let start = [self.mobility_rng.gen_range(0.0..area[0]), self.mobility_rng.gen_range(0.0..area[1])];
                self.topology.positions.entry(id).or_insert(start);
                let w = self.new_walker(area, speed);
                self.walkers.insert(id, w);
            }
            self.refresh_radio_links(false);
            self.push(1, EventKind::MobilityStep);
        }
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            self.push(0, EventKind::Timer { node: id, kind: TimerKind::Hello });
        }
        for flow in 0..self.flows.len() {
            let (_, _, start, _, rounds) = self.flows[flow];
            if rounds > 0 {
                self.push(start, EventKind::Traffic { flow, round: 1 });
            }
        }
    }

    fn new_walker(&mut self, area: [f64; 2], speed: [f64; 2]) -> Walker {
        let target = [self.mobility_rng.gen_range(0.0..area[0]), self.mobility_rng.gen_range(0.0..area[1])];
        let speed = if speed[0] < speed[1] { self.mobility_rng.gen_range(speed[0]..speed[1]) } else { speed[0] };
        Walker { target, speed, pause_left: 0 }
    }

    /// Enables the event trace; must be called before running.
    pub fn with_trace(mut self) -> Engine {
        self.trace = Some(String::new());
        self
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn report(&self) -> &MetricsReport {
        &self.report
    }

    pub fn name(&self, id: NodeId) -> String {
        self.names.get(&id).cloned().unwrap_or_else(|| id.to_string())
    }

    fn push(&mut self, at: Tick, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Queued { at, order: kind.order(), seq: self.seq, kind }));
    }

    fn log(&mut self, node: NodeId, kind: &str, summary: impl FnOnce(&Engine) -> String) {
        if self.trace.is_some() {
            let line = format!("{}\t{}\t{}\t{}\n", self.now, self.name(node), kind, summary(self));
            if let Some(t) = self.trace.as_mut() {
                t.push_str(&line);
            }
        }
    }

    fn summary(&self, packet: &Packet) -> String {
        packet.summary(|id| self.name(id))
    }

    /// Processes every event scheduled at or before `until` (capped at
    /// `t_max`).
    pub fn run_until(&mut self, until: Tick) -> Result<()> {
        let until = until.min(self.t_max);
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.at > until {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.now = ev.at;
            self.dispatch(ev.kind)?;
        }
        self.now = self.now.max(until);
        Ok(())
    }

    /// Runs to `t_max` and closes the books: discoveries still open are
    /// recorded as failed.
    pub fn run(mut self) -> Result<MetricsReport> {
        self.run_to_end()?;
        Ok(self.report)
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_until(self.t_max)?;
        let open: Vec<usize> = std::mem::take(&mut self.open_discovery).into_values().collect();
        if !open.is_empty() {
            self.report.timed_out = true;
        }
        for i in open {
            self.report.discoveries[i].outcome = DiscoveryOutcome::Failed { at: self.t_max };
        }
        Ok(())
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.take()
    }

    pub fn into_report(self) -> MetricsReport {
        self.report
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::Topology(i) => self.apply_topology_event(i),
            EventKind::MobilityStep => {
                self.mobility_step();
                let next = self.now + 1;
                self.push(next, EventKind::MobilityStep);
                Ok(())
            }
            EventKind::Deliver { from, to, packet_slot } => {
                let packet = self.packets.remove(&packet_slot).expect("packet slot is live");
                if !self.topology.has_link(from, to) {
                    self.report.record(MetricEvent::Loss);
                    self.log(to, "lost", |e| format!("from {} (link down) {}", e.name(from), e.summary(&packet)));
                    return Ok(());
                }
                if packet.kind() != PacketKind::Hello {
                    self.log(to, "recv", |e| format!("from {} {}", e.name(from), e.summary(&packet)));
                }
                let out = self.with_node(to, |node, ctx| node.on_packet(packet, from, ctx))?;
                self.process(to, out)
            }
            EventKind::Timer { node, kind } => {
                if kind != TimerKind::Hello && kind != TimerKind::RouteExpiry {
                    self.log(node, "timer", |_| kind.name().to_string());
                }
                let out = self.with_node(node, |n, ctx| n.on_timer(kind, ctx))?;
                self.process(node, out)
            }
            EventKind::Traffic { flow, round } => {
                let (origin, dest, _, interval, rounds) = self.flows[flow];
                if round < rounds {
                    let next = self.now + interval;
                    self.push(next, EventKind::Traffic { flow, round: round + 1 });
                }
                self.next_payload += 1;
                let payload_id = self.next_payload;
                self.log(origin, "traffic", |e| format!("round {round} to {} payload={payload_id}", e.name(dest)));
                self.current_round = Some(round);
                let result = self.with_node(origin, |n, ctx| n.on_command(Command::Discover { dest, payload_id }, ctx));
                let out = match result {
                    Ok(out) => out,
                    Err(e) => {
                        self.current_round = None;
                        return Err(e);
                    }
                };
                let r = self.process(origin, out);
                self.current_round = None;
                r
            }
        }
    }

    fn with_node<T>(&mut self, id: NodeId, f: impl FnOnce(&mut Node, &mut Ctx<'_>) -> Result<T>) -> Result<T> {
        let node =
            self.nodes.get_mut(&id).ok_or_else(|| Error::InvariantViolation(format!("event for unknown node {id}")))?;
        let mut ctx = Ctx { now: self.now, rng: &mut self.rng, positions: &self.topology.positions };
        f(node, &mut ctx)
    }

    fn apply_topology_event(&mut self, i: usize) -> Result<()> {
        match self.events[i].clone() {
            ScriptedEvent::LinkUp { a, b, delay, .. } => {
                let (a, b) = (self.ids[&a], self.ids[&b]);
                self.bring_up(a, b, delay);
            }
            ScriptedEvent::LinkDown { a, b, .. } => {
                let (a, b) = (self.ids[&a], self.ids[&b]);
                if self.topology.link_down(a, b) {
                    self.log(a, "link-down", |e| e.name(b));
                }
            }
            ScriptedEvent::Drop { .. } => {}
        }
        Ok(())
    }

    fn bring_up(&mut self, a: NodeId, b: NodeId, delay: Tick) {
        if self.topology.link_up(a, b, delay) {
            self.log(a, "link-up", |e| e.name(b));
            if let Some(n) = self.nodes.get_mut(&a) {
                n.note_new_link(b);
            }
            if let Some(n) = self.nodes.get_mut(&b) {
                n.note_new_link(a);
            }
        }
    }

    fn mobility_step(&mut self) {
        let Mobility::RandomWaypoint { area, speed, pause, .. } = self.mobility else {
            return;
        };
        let ids: Vec<NodeId> = self.walkers.keys().copied().collect();
        for id in ids {
            let pos = self.topology.positions[&id];
            let w = self.walkers.get_mut(&id).expect("walker exists");
            if w.pause_left > 0 {
                w.pause_left -= 1;
                continue;
            }
            let d = distance(pos, w.target);
            let new_pos = if d <= w.speed {
                w.pause_left = pause;
                let arrived = w.target;
                let fresh = {
                    let rng = &mut self.mobility_rng;
                    let target = [rng.gen_range(0.0..area[0]), rng.gen_range(0.0..area[1])];
                    let s = if speed[0] < speed[1] { rng.gen_range(speed[0]..speed[1]) } else { speed[0] };
                    (target, s)
                };
                w.target = fresh.0;
                w.speed = fresh.1;
                arrived
            } else {
                let f = w.speed / d;
                [pos[0] + (w.target[0] - pos[0]) * f, pos[1] + (w.target[1] - pos[1]) * f]
            };
            self.topology.positions.insert(id, new_pos);
        }
        self.refresh_radio_links(true);
    }

    fn refresh_radio_links(&mut self, notify: bool) {
        let Mobility::RandomWaypoint { radio_range, .. } = self.mobility else {
            return;
        };
        let ids: Vec<NodeId> = self.topology.nodes().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let close = distance(self.topology.positions[&a], self.topology.positions[&b]) <= radio_range;
                match (close, self.topology.has_link(a, b)) {
                    (true, false) if notify => self.bring_up(a, b, 1),
                    (true, false) => {
                        self.topology.link_up(a, b, 1);
                    }
                    (false, true) => {
                        self.topology.link_down(a, b);
                        self.log(a, "link-down", |e| e.name(b));
                    }
                    _ => {}
                }
            }
        }
    }

    fn round_of_packet(&self, packet: &Packet) -> Option<u32> {
        match packet {
            Packet::Rreq(r) => self.rreq_round.get(&r.rreq_id).copied().flatten(),
            _ => None,
        }
    }

    fn process(&mut self, node: NodeId, out: Vec<Emission>) -> Result<()> {
        let mut work: std::collections::VecDeque<(NodeId, Emission)> = out.into_iter().map(|e| (node, e)).collect();
        while let Some((me, em)) = work.pop_front() {
            match em {
                Emission::Send { to, packet } => {
                    if let Some(more) = self.send(me, to, packet, true)? {
                        work.extend(more.into_iter().map(|e| (me, e)));
                    }
                }
                Emission::Broadcast { packet } => {
                    let kind = packet.kind();
                    if kind != PacketKind::Hello {
                        self.log(me, "bcast", |e| e.summary(&packet));
                    }
                    for to in self.topology.neighbors(me) {
                        self.report.record(MetricEvent::Transmit { kind, from: me, to, round: None });
                        self.deliver_later(me, to, packet.clone());
                    }
                }
                Emission::SetTimer { kind, at } => {
                    if at <= self.t_max {
                        self.push(at.max(self.now), EventKind::Timer { node: me, kind });
                    }
                }
                Emission::DeliverUp { payload_id } => {
                    self.report.record(MetricEvent::DataDelivered);
                    self.log(me, "deliver", |_| format!("payload={payload_id}"));
                }
                Emission::Drop { packet, reason } => {
                    self.log(me, "drop", |e| format!("{} {}", reason.as_str(), e.summary(&packet)));
                }
                Emission::Signal(signal) => self.on_signal(me, signal),
            }
        }
        Ok(())
    }

    fn deliver_later(&mut self, from: NodeId, to: NodeId, packet: Packet) {
        match self.topology.transmit(self.now, from, to, packet.kind()) {
            Transmission::Scheduled { at } => {
                let slot = self.next_slot;
                self.next_slot += 1;
                self.packets.insert(slot, packet);
                self.push(at, EventKind::Deliver { from, to, packet_slot: slot });
            }
            Transmission::Lost | Transmission::LinkAbsent => self.report.record(MetricEvent::Loss),
        }
    }

    /// Unicast. Returns the node's reaction when the link layer reports that
    /// `to` is unreachable.
    fn send(&mut self, from: NodeId, to: NodeId, packet: Packet, notify: bool) -> Result<Option<Vec<Emission>>> {
        let kind = packet.kind();
        match self.topology.transmit(self.now, from, to, kind) {
            Transmission::LinkAbsent => {
                self.report.record(MetricEvent::Loss);
                self.log(from, "fail", |e| format!("to {} {}", e.name(to), e.summary(&packet)));
                if !notify {
                    return Ok(None);
                }
                let out = self.with_node(from, |n, ctx| n.on_send_failed(to, &packet, ctx))?;
                Ok(Some(out))
            }
            Transmission::Lost => {
                let round = self.round_of_packet(&packet);
                self.report.record(MetricEvent::Transmit { kind, from, to, round });
                self.report.record(MetricEvent::Loss);
                self.log(from, "lost", |e| format!("to {} {}", e.name(to), e.summary(&packet)));
                Ok(None)
            }
            Transmission::Scheduled { at } => {
                let round = self.round_of_packet(&packet);
                self.report.record(MetricEvent::Transmit { kind, from, to, round });
                self.log(from, "send", |e| format!("to {} {}", e.name(to), e.summary(&packet)));
                let slot = self.next_slot;
                self.next_slot += 1;
                self.packets.insert(slot, packet);
                self.push(at, EventKind::Deliver { from, to, packet_slot: slot });
                Ok(None)
            }
        }
    }

    fn on_signal(&mut self, me: NodeId, signal: Signal) {
        match signal {
            Signal::RedundantRreq { .. } => self.report.record(MetricEvent::RedundantRreq { at: me }),
            Signal::Suppressed { rreq_id, count } => {
                let round = self.rreq_round.get(&rreq_id).copied().flatten();
                self.report.record(MetricEvent::Suppressed { count, round });
                self.log(me, "suppress", |_| format!("id={rreq_id} count={count}"));
            }
            Signal::DiscoveryStarted { dest, rreq_id, attempt, radius } => {
                let key = (me, dest);
                let round = match self.open_discovery.get(&key) {
                    Some(&i) if attempt > 0 => {
                        self.report.discoveries[i].attempt_radii.push(radius);
                        self.report.discoveries[i].round
                    }
                    _ => {
                        let round = self.current_round;
                        self.report.discoveries.push(DiscoveryRecord {
                            origin: me,
                            dest,
                            round,
                            started_at: self.now,
                            outcome: DiscoveryOutcome::Pending,
                            attempt_radii: vec![radius],
                        });
                        self.open_discovery.insert(key, self.report.discoveries.len() - 1);
                        round
                    }
                };
                self.rreq_round.insert(rreq_id, round);
                self.log(me, "discover", |e| {
                    format!("to {} id={rreq_id} attempt={attempt} radius={radius}", e.name(dest))
                });
            }
            Signal::DiscoveryResolved { dest, rreq_id, hop_count } => {
                if let Some(i) = self.open_discovery.remove(&(me, dest)) {
                    self.report.discoveries[i].outcome = DiscoveryOutcome::Resolved { at: self.now, hop_count };
                }
                self.log(me, "resolved", |e| format!("to {} id={rreq_id} hops={hop_count}", e.name(dest)));
            }
            Signal::DiscoveryFailed { dest } => {
                if let Some(i) = self.open_discovery.remove(&(me, dest)) {
                    self.report.discoveries[i].outcome = DiscoveryOutcome::Failed { at: self.now };
                }
                self.log(me, "failed", |e| format!("to {}", e.name(dest)));
            }
            Signal::LateReply { rreq_id, neighbor } => {
                self.log(me, "late-reply", |e| format!("id={rreq_id} from {}", e.name(neighbor)));
            }
            Signal::LinkBroken { neighbor } => {
                self.log(me, "link-broken", |e| e.name(neighbor));
            }
            Signal::Boosted { dest, neighbor } => {
                self.report.record(MetricEvent::Boost);
                self.log(me, "boost", |e| format!("{} via {}", e.name(dest), e.name(neighbor)));
            }
        }
    }
}

/// Runs `scenario` to completion, optionally recording the event trace.
pub fn run(scenario: &Scenario, trace: bool) -> Result<RunOutput> {
    let mut engine = Engine::new(scenario)?;
    if trace {
        engine = engine.with_trace();
    }
    engine.run_to_end()?;
    let trace = engine.take_trace();
    Ok(RunOutput { report: engine.into_report(), trace })
}

/// Tab-separated trace header line.
pub const TRACE_HEADER: &str = "tick\tnode\tkind\tsummary\n";

impl RunOutput {
    /// The trace with its header, or an empty string when tracing was off.
    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        if let Some(t) = &self.trace {
            s.push_str(TRACE_HEADER);
            let _ = write!(s, "{t}");
        }
        s
    }
}
