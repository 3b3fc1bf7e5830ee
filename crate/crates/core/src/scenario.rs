//! Scenario files (JSON, `schema: 1`) and the built-in scenarios.
//!
//! Nodes are referenced by name everywhere in the file; the numeric `id` of
//! each node is what the simulator uses for tie-breaks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::NodeConfig;
use crate::protocol::{NodeId, PacketKind, Position, Tick};
use crate::suppression::{distance, ConnectivityConfig, Strategy};

pub const SCHEMA_VERSION: u32 = 1;

pub const BUILTINS: [&str; 4] = ["fig1", "fig1-tables", "ring-demo", "random-N"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub mobility: Mobility,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<ScriptedEvent>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    pub t_max: Tick,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Position>,
}

fn one() -> Tick {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(default = "one")]
    pub delay: Tick,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mobility {
    #[default]
    Static,
    /// Topology changes come only from the scripted `events`.
    Scripted,
    /// Nodes move toward random waypoints; links exist between nodes within
    /// `radio_range` and are recomputed every tick.
    RandomWaypoint { area: [f64; 2], speed: [f64; 2], pause: Tick, radio_range: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptedEvent {
    LinkUp {
        at: Tick,
        a: String,
        b: String,
        #[serde(default = "one")]
        delay: Tick,
    },
    LinkDown {
        at: Tick,
        a: String,
        b: String,
    },
    /// Drop whatever `from` transmits to `to` at tick `at` (optionally only
    /// packets of one kind).
    Drop {
        at: Tick,
        from: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        packet: Option<PacketKind>,
    },
}

impl ScriptedEvent {
    fn node_names(&self) -> [&str; 2] {
        match self {
            ScriptedEvent::LinkUp { a, b, .. } | ScriptedEvent::LinkDown { a, b, .. } => [a, b],
            ScriptedEvent::Drop { from, to, .. } => [from, to],
        }
    }
}

fn default_interval() -> Tick {
    100
}

/// `rounds` discoveries from `origin` to `dest`, the first at `start` and then
/// every `interval` ticks. Each round forces a fresh discovery and sends one
/// data packet once a route is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub origin: String,
    pub dest: String,
    pub start: Tick,
    #[serde(default = "default_interval")]
    pub interval: Tick,
    pub rounds: u32,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    #[serde(default = "yes")]
    pub intermediate_reply: bool,
    #[serde(default)]
    pub per_neighbor_aggregate: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags { intermediate_reply: true, per_neighbor_aggregate: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    pub hello_interval: Tick,
    pub hello_timeout: Tick,
    pub route_lifetime: Tick,
    pub max_retries: u32,
    /// Defaults to `2 * node_count * max_link_delay`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discovery_deadline: Option<Tick>,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { hello_interval: 10, hello_timeout: 25, route_lifetime: 300, max_retries: 2, discovery_deadline: None }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Loads a built-in by name, or reads a scenario file from `path`.
    pub fn load(name_or_path: &str) -> Result<Scenario> {
        let path = Path::new(name_or_path);
        match builtin(name_or_path) {
            Ok(s) => return Ok(s),
            Err(e) if !path.exists() && path.extension().is_none() && path.components().count() == 1 => return Err(e),
            Err(_) => {}
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        parse_scenario(&text)
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| NodeId(n.id))
    }

    fn id_of(&self, name: &str) -> NodeId {
        self.node_id(name).expect("validated scenario references known nodes")
    }

    pub fn names(&self) -> BTreeMap<NodeId, String> {
        self.nodes.iter().map(|n| (NodeId(n.id), n.name.clone())).collect()
    }

    pub fn max_link_delay(&self) -> Tick {
        let events = self.events.iter().filter_map(|e| match e {
            ScriptedEvent::LinkUp { delay, .. } => Some(*delay),
            _ => None,
        });
        self.links.iter().map(|l| l.delay).chain(events).max().unwrap_or(1)
    }

    pub fn discovery_deadline(&self) -> Tick {
        self.timing.discovery_deadline.unwrap_or(2 * self.nodes.len() as Tick * self.max_link_delay())
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            strategy: self.strategy.clone(),
            node_count: self.nodes.len() as u32,
            hello_interval: self.timing.hello_interval,
            hello_timeout: self.timing.hello_timeout,
            route_lifetime: self.timing.route_lifetime,
            discovery_deadline: self.discovery_deadline(),
            max_retries: self.timing.max_retries,
            intermediate_reply: self.flags.intermediate_reply,
            per_neighbor_aggregate: self.flags.per_neighbor_aggregate,
        }
    }

    /// Resolved traffic: (origin, dest, start, interval, rounds).
    pub fn traffic_ids(&self) -> Vec<(NodeId, NodeId, Tick, Tick, u32)> {
        self.traffic
            .iter()
            .map(|t| (self.id_of(&t.origin), self.id_of(&t.dest), t.start, t.interval, t.rounds))
            .collect()
    }

    pub fn link_ids(&self) -> Vec<(NodeId, NodeId, Tick)> {
        self.links.iter().map(|l| (self.id_of(&l.a), self.id_of(&l.b), l.delay)).collect()
    }

    /// Sets every traffic entry to `rounds` rounds and stretches `t_max` so
    /// the last round has a full interval to finish.
    pub fn with_rounds(mut self, rounds: u32) -> Scenario {
        for t in &mut self.traffic {
            t.rounds = rounds;
            self.t_max = self.t_max.max(t.start + Tick::from(rounds) * t.interval);
        }
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Scenario {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::Validation(m));
        if self.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.nodes.is_empty() {
            return invalid("scenario has no nodes".into());
        }
        let mut names = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return invalid(format!("duplicate node name `{}`", n.name));
            }
            if !ids.insert(n.id) {
                return invalid(format!("duplicate node id {}", n.id));
            }
            if let Some(p) = n.pos {
                if !p.iter().all(|c| c.is_finite()) {
                    return invalid(format!("node `{}` has a non-finite position", n.name));
                }
            }
        }
        let known = |name: &str, what: &str| -> Result<()> {
            if names.contains(name) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{what} references unknown node `{name}`")))
            }
        };
        let mut pairs = BTreeSet::new();
        for l in &self.links {
            known(&l.a, "link")?;
            known(&l.b, "link")?;
            if l.a == l.b {
                return invalid(format!("self-link on `{}`", l.a));
            }
            if l.delay == 0 {
                return invalid(format!("link {}-{} has zero delay", l.a, l.b));
            }
            let key = if l.a < l.b { (&l.a, &l.b) } else { (&l.b, &l.a) };
            if !pairs.insert(key) {
                return invalid(format!("duplicate link {}-{}", l.a, l.b));
            }
        }
        for e in &self.events {
            for n in e.node_names() {
                known(n, "event")?;
            }
            let [a, b] = e.node_names();
            if a == b {
                return invalid(format!("event on self-link `{a}`"));
            }
            if let ScriptedEvent::LinkUp { delay: 0, .. } = e {
                return invalid("link_up with zero delay".into());
            }
        }
        let deadline = self.discovery_deadline();
        for t in &self.traffic {
            known(&t.origin, "traffic")?;
            known(&t.dest, "traffic")?;
            if t.origin == t.dest {
                return invalid(format!("traffic from `{}` to itself", t.origin));
            }
            if t.rounds > 1 && t.interval < 4 * deadline {
                return invalid(format!(
                    "traffic rounds every {} ticks overlap; need at least {} (4 x discovery deadline)",
                    t.interval,
                    4 * deadline
                ));
            }
        }
        self.strategy.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if matches!(self.strategy, Strategy::DistanceBased { .. }) && self.nodes.iter().any(|n| n.pos.is_none()) {
            return invalid("distance-based strategy needs a position for every node".into());
        }
        if let Mobility::RandomWaypoint { area, speed, radio_range, .. } = self.mobility {
            if !(area[0] > 0.0 && area[1] > 0.0) || !(0.0 < speed[0] && speed[0] <= speed[1]) || radio_range <= 0.0 {
                return invalid(
                    "random waypoint needs a positive area, 0 < min speed <= max speed and a positive range".into(),
                );
            }
        }
        if self.timing.hello_interval == 0 || self.timing.hello_timeout < self.timing.hello_interval {
            return invalid("hello interval must be positive and no longer than the hello timeout".into());
        }
        if self.timing.route_lifetime == 0 || deadline == 0 {
            return invalid("route lifetime and discovery deadline must be positive".into());
        }
        Ok(())
    }
}

pub fn builtin(name: &str) -> Result<Scenario> {
    let scenario = match name {
        "fig1" => fig1(),
        "fig1-tables" => fig1_tables(),
        "ring-demo" => ring_demo(),
        _ => match name.strip_prefix("random-").and_then(|n| n.parse::<u32>().ok()) {
            Some(n) if (2..=1000).contains(&n) => random_geometric(n, 1),
            _ => return Err(Error::UnknownScenario(name.to_string())),
        },
    };
    debug_assert!(scenario.validate().is_ok(), "builtin {name} is valid");
    Ok(scenario)
}

fn node(name: &str, id: u32, pos: Position) -> NodeSpec {
    NodeSpec { name: name.into(), id, pos: Some(pos) }
}

fn link(a: &str, b: &str) -> LinkSpec {
    LinkSpec { a: a.into(), b: b.into(), delay: 1 }
}

/// Static 11-node network with three disjoint-ish routes from S to D plus the
/// dead-end branch through N7, N8 and N13.
pub fn fig1() -> Scenario {
    let nodes = vec![
        node("S", 0, [0.0, 2.0]),
        node("N1", 1, [1.0, 3.2]),
        node("N2", 2, [2.2, 3.6]),
        node("N3", 3, [3.4, 3.0]),
        node("N4", 4, [1.0, 2.0]),
        node("N5", 5, [2.3, 2.1]),
        node("N6", 6, [3.4, 1.4]),
        node("N7", 7, [0.8, 0.6]),
        node("N8", 8, [0.4, -0.5]),
        node("N13", 13, [1.8, 0.9]),
        node("D", 20, [4.5, 2.2]),
    ];
    let links = [
        ("S", "N1"),
        ("S", "N4"),
        ("S", "N7"),
        ("N1", "N2"),
        ("N2", "N3"),
        ("N3", "D"),
        ("N4", "N5"),
        ("N5", "N6"),
        ("N6", "D"),
        ("N5", "N3"),
        ("N4", "N13"),
        ("N7", "N13"),
        ("N7", "N8"),
    ]
    .iter()
    .map(|(a, b)| link(a, b))
    .collect();
    Scenario {
        schema: SCHEMA_VERSION,
        name: "fig1".into(),
        comment: Some(
            "Node N17 is not modelled: S has exactly three neighbors (N1, N4, N7). \
             Node ids order tie-breaks: N2 beats N5 at N3, N4 beats N7 at N13."
                .into(),
        ),
        nodes,
        links,
        mobility: Mobility::Static,
        events: Vec::new(),
        traffic: vec![TrafficSpec { origin: "S".into(), dest: "D".into(), start: 50, interval: 100, rounds: 1 }],
        strategy: Strategy::Flood,
        seed: 0,
        t_max: 150,
        flags: Flags { intermediate_reply: false, per_neighbor_aggregate: false },
        timing: Timing::default(),
    }
}

/// Ten discovery rounds over `fig1`, scripted so that after the last round
/// S holds N1 1.0, N4 0.6, N7 0.0; N4 holds N5 0.7, N13 0.0; and N7 holds 0.0
/// for both N13 and N8:
///
/// * round 7: the reply N4 sends to S is lost (N4 still learns that N5 works);
/// * rounds 8-10: links N5-N3 and N5-N6 are down, so nothing through N4
///   reaches D. Both links come back before an eleventh round.
pub fn fig1_tables() -> Scenario {
    let mut s = fig1();
    s.name = "fig1-tables".into();
    s.strategy = Strategy::Connectivity(ConnectivityConfig::default());
    let round_start = |r: u64| 50 + (r - 1) * 100;
    s.traffic[0].rounds = 10;
    s.t_max = round_start(11);
    let ev = |kind: &str, at: Tick, a: &str, b: &str| match kind {
        "down" => ScriptedEvent::LinkDown { at, a: a.into(), b: b.into() },
        _ => ScriptedEvent::LinkUp { at, a: a.into(), b: b.into(), delay: 1 },
    };
    s.events = vec![
        // The RREP leaves N4 seven ticks after S starts round 7.
        ScriptedEvent::Drop {
            at: round_start(7) + 7,
            from: "N4".into(),
            to: "S".into(),
            packet: Some(PacketKind::Rrep),
        },
        ev("down", round_start(8) - 50, "N5", "N3"),
        ev("down", round_start(8) - 50, "N5", "N6"),
        ev("up", round_start(11) - 50, "N5", "N3"),
        ev("up", round_start(11) - 50, "N5", "N6"),
    ];
    s
}

/// A six-hop chain searched with expanding rings of radius 1, 3, 5, 7.
pub fn ring_demo() -> Scenario {
    let names = ["S", "R1", "R2", "R3", "R4", "R5", "D"];
    let nodes = names.iter().enumerate().map(|(i, n)| node(n, i as u32, [i as f64, 0.0])).collect();
    let links = names.windows(2).map(|w| link(w[0], w[1])).collect();
    Scenario {
        schema: SCHEMA_VERSION,
        name: "ring-demo".into(),
        comment: None,
        nodes,
        links,
        mobility: Mobility::Static,
        events: Vec::new(),
        traffic: vec![TrafficSpec { origin: "S".into(), dest: "D".into(), start: 20, interval: 100, rounds: 1 }],
        strategy: Strategy::ExpandingRing { ttl_start: 1, ttl_increment: 2, ttl_threshold: 7 },
        seed: 0,
        t_max: 200,
        flags: Flags { intermediate_reply: false, per_neighbor_aggregate: false },
        timing: Timing { max_retries: 4, ..Timing::default() },
    }
}

/// `n` nodes dropped uniformly on a 100 x 100 square, linked when closer than
/// a radius that makes the graph connected with high probability.
pub fn random_geometric(n: u32, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 100.0;
    let nf = f64::from(n.max(2));
    let radius = side * ((nf.ln() + 2.0) / (std::f64::consts::PI * nf)).sqrt();
    let nodes: Vec<NodeSpec> = (0..n)
        .map(|i| {
            let pos = [rng.gen_range(0.0..side), rng.gen_range(0.0..side)];
            NodeSpec { name: format!("n{i}"), id: i, pos: Some(round2(pos)) }
        })
        .collect();
    let mut links = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if distance(a.pos.unwrap(), b.pos.unwrap()) <= radius {
                links.push(link(&a.name, &b.name));
            }
        }
    }
    let deadline = 2 * Tick::from(n);
    let interval = (4 * deadline).max(100);
    let rounds = 5;
    Scenario {
        schema: SCHEMA_VERSION,
        name: format!("random-{n}"),
        comment: Some(format!("random geometric graph, radius {radius:.2}")),
        nodes,
        links,
        mobility: Mobility::Static,
        events: Vec::new(),
        traffic: vec![TrafficSpec { origin: "n0".into(), dest: format!("n{}", n - 1), start: 20, interval, rounds }],
        strategy: Strategy::Flood,
        seed,
        t_max: 20 + interval * Tick::from(rounds),
        flags: Flags::default(),
        timing: Timing::default(),
    }
}

fn round2(p: Position) -> Position {
    [(p[0] * 100.0).round() / 100.0, (p[1] * 100.0).round() / 100.0]
}
