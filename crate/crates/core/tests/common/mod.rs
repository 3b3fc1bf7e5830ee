//! Independent oracles shared by the integration tests. None of this code
//! calls into the simulator's routing logic; it only reads scenario data.

#![allow(dead_code)]

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use aodvsim_core::scenario::{Flags, LinkSpec, Mobility, NodeSpec, Scenario, Timing, TrafficSpec};
use aodvsim_core::{NodeId, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Adj = BTreeMap<NodeId, BTreeSet<NodeId>>;

pub fn adjacency(s: &Scenario) -> Adj {
    let mut adj: Adj = s.nodes.iter().map(|n| (NodeId(n.id), BTreeSet::new())).collect();
    for (a, b, _) in s.link_ids() {
        adj.get_mut(&a).unwrap().insert(b);
        adj.get_mut(&b).unwrap().insert(a);
    }
    adj
}

pub fn id(s: &Scenario, name: &str) -> NodeId {
    s.node_id(name).unwrap_or_else(|| panic!("no node {name}"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodWalk {
    /// Directed-link RREQ transmissions.
    pub tx: u64,
    /// Receptions of an already-seen copy.
    pub redundant: u64,
    pub redundant_at: BTreeMap<NodeId, u64>,
    pub reached_dest: bool,
    pub depth: BTreeMap<NodeId, u32>,
    pub links: BTreeSet<(NodeId, NodeId)>,
}

/// Graph walk of one RREQ wave with unit link delays. The source sends to all
/// neighbors; a node first reached at depth `d` relays to every neighbor but
/// the one it heard from, unless it is the destination or `d >= radius`.
pub fn flood_walk(adj: &Adj, src: NodeId, dst: NodeId, radius: u32) -> FloodWalk {
    walk(adj, src, dst, radius, |_, _| true)
}

/// [`flood_walk`] where node `u` only sends to neighbor `v` if
/// `forwards(u, v)`. Copies arriving in the same tick are taken lowest sender
/// first, so the first sender is the one a node excludes when relaying.
pub fn walk(adj: &Adj, src: NodeId, dst: NodeId, radius: u32, forwards: impl Fn(NodeId, NodeId) -> bool) -> FloodWalk {
    let mut links = BTreeSet::new();
    let mut depth = BTreeMap::from([(src, 0u32)]);
    let mut tx = 0;
    let mut redundant_at: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut frontier: Vec<(NodeId, Option<NodeId>)> = vec![(src, None)];
    let mut d = 0;
    while !frontier.is_empty() {
        // Everything sent by depth-d relays arrives together at d+1.
        let mut arrivals: Vec<(NodeId, NodeId)> = Vec::new();
        for (u, prev) in &frontier {
            let relays = *u == src || (*u != dst && d < radius);
            if !relays {
                continue;
            }
            for v in &adj[u] {
                if Some(*v) != *prev && forwards(*u, *v) {
                    tx += 1;
                    links.insert((*u, *v));
                    arrivals.push((*u, *v));
                }
            }
        }
        arrivals.sort();
        let mut next = Vec::new();
        for (from, v) in arrivals {
            match depth.entry(v) {
                Entry::Occupied(_) => *redundant_at.entry(v).or_default() += 1,
                Entry::Vacant(slot) => {
                    slot.insert(d + 1);
                    next.push((v, Some(from)));
                }
            }
        }
        frontier = next;
        d += 1;
    }
    FloodWalk {
        tx,
        redundant: redundant_at.values().sum(),
        redundant_at,
        reached_dest: depth.contains_key(&dst),
        depth,
        links,
    }
}

/// Plain BFS reachability within `max_hops`.
pub fn reachable_within(adj: &Adj, src: NodeId, dst: NodeId, max_hops: u32) -> bool {
    let mut seen = BTreeSet::from([src]);
    let mut q = VecDeque::from([(src, 0u32)]);
    while let Some((u, d)) = q.pop_front() {
        if u == dst {
            return true;
        }
        if d == max_hops {
            continue;
        }
        for v in &adj[&u] {
            if seen.insert(*v) {
                q.push_back((*v, d + 1));
            }
        }
    }
    false
}

/// A random graph of 2..=12 nodes. About a third are split into two
/// components on purpose.
pub fn random_graph_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: u32 = rng.gen_range(2..=12);
    let p: f64 = rng.gen_range(0.15..0.6);
    let split = rng.gen_bool(0.35);
    let cut = rng.gen_range(1..n);
    let nodes: Vec<NodeSpec> = (0..n).map(|i| NodeSpec { name: format!("v{i}"), id: i, pos: None }).collect();
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let across = (a < cut) != (b < cut);
            if split && across {
                continue;
            }
            if rng.gen_bool(p) {
                links.push(LinkSpec { a: format!("v{a}"), b: format!("v{b}"), delay: 1 });
            }
        }
    }
    let deadline = 2 * u64::from(n);
    Scenario {
        schema: 1,
        name: format!("graph-{seed}"),
        comment: None,
        nodes,
        links,
        mobility: Mobility::Static,
        events: Vec::new(),
        traffic: vec![TrafficSpec {
            origin: "v0".into(),
            dest: format!("v{}", n - 1),
            start: 20,
            interval: 100,
            rounds: 1,
        }],
        strategy: Strategy::Flood,
        seed,
        t_max: 20 + 4 * deadline,
        flags: Flags::default(),
        timing: Timing::default(),
    }
}
