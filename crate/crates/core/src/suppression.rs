//! RREQ forwarding-set policies.
//!
//! Every policy answers one question: given the neighbors a node could relay
//! an RREQ to, which ones actually get it? [`Strategy::Flood`] answers "all of
//! them". [`Strategy::Connectivity`] keeps a per-link success statistic (the
//! connectivity index, `mu`) and only relays on links whose index clears a
//! threshold once a warm-up period is over. The remaining strategies are the
//! classic broadcast-storm schemes used as comparison points.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{NodeId, Position, Rreq, RreqId, Tick};

/// How `mu` is recomputed when an attempt resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuMode {
    /// `mu = successes / attempts`.
    #[default]
    Raw,
    /// `mu = alpha * outcome + (1 - alpha) * mu`.
    Ema,
    /// `mu = alpha * (successes / attempts) + (1 - alpha) * mu`.
    Blend,
}

impl MuMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MuMode::Raw => "raw",
            MuMode::Ema => "ema",
            MuMode::Blend => "blend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectivityConfig {
    #[serde(default)]
    pub mode: MuMode,
    #[serde(default = "ConnectivityConfig::default_alpha")]
    pub alpha: f64,
    #[serde(default = "ConnectivityConfig::default_threshold")]
    pub threshold: f64,
    #[serde(default = "ConnectivityConfig::default_initial_mu")]
    pub initial_mu: f64,
    #[serde(default = "ConnectivityConfig::default_warmup")]
    pub warmup_attempts: u32,
    #[serde(default = "ConnectivityConfig::default_boost")]
    pub new_link_boost: f64,
    /// Ticks an attempt may stay open. `None` uses the discovery deadline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt_timeout: Option<Tick>,
}

impl ConnectivityConfig {
    fn default_alpha() -> f64 {
        0.3
    }
    fn default_threshold() -> f64 {
        0.5
    }
    fn default_initial_mu() -> f64 {
        1.0
    }
    fn default_warmup() -> u32 {
        10
    }
    fn default_boost() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        // Thresholds outside [0, 1] are allowed: below 0 every link is
        // eligible, above 1 none is.
        if !self.threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_mu) {
            return Err(Error::Config(format!("initial_mu must lie in [0, 1], got {}", self.initial_mu)));
        }
        if !(0.0..=1.0).contains(&self.new_link_boost) {
            return Err(Error::Config(format!("new_link_boost must lie in [0, 1], got {}", self.new_link_boost)));
        }
        Ok(())
    }
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        ConnectivityConfig {
            mode: MuMode::Raw,
            alpha: Self::default_alpha(),
            threshold: Self::default_threshold(),
            initial_mu: Self::default_initial_mu(),
            warmup_attempts: Self::default_warmup(),
            new_link_boost: Self::default_boost(),
            attempt_timeout: None,
        }
    }
}

pub fn mu_raw(successes: u32, attempts: u32, initial_mu: f64) -> Result<f64> {
    if successes > attempts {
        return Err(Error::InvariantViolation(format!("{successes} successes out of {attempts} attempts")));
    }
    if attempts == 0 {
        return Ok(initial_mu);
    }
    Ok(f64::from(successes) / f64::from(attempts))
}

pub fn mu_ema_step(mu_prev: f64, success: bool, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let outcome = if success { 1.0 } else { 0.0 };
    Ok((alpha * outcome + (1.0 - alpha) * mu_prev).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Resolved,
    /// No open attempt for this wave, e.g. a reply arriving after timeout.
    Unknown,
}

/// Attempt/success statistics of one outgoing link.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityRecord {
    pub attempts: u32,
    pub successes: u32,
    pub mu: f64,
    pub pending: BTreeMap<RreqId, Tick>,
}

impl ConnectivityRecord {
    pub fn new(config: &ConnectivityConfig) -> Self {
        ConnectivityRecord { attempts: 0, successes: 0, mu: config.initial_mu, pending: BTreeMap::new() }
    }

    /// Counts an attempt. `mu` is left alone until the attempt resolves.
    pub fn open_attempt(&mut self, rreq_id: RreqId, now: Tick) -> Result<()> {
        if self.pending.contains_key(&rreq_id) {
            return Err(Error::InvariantViolation(format!("attempt {rreq_id} opened twice")));
        }
        self.attempts += 1;
        self.pending.insert(rreq_id, now);
        Ok(())
    }

    pub fn resolve_attempt(
        &mut self,
        rreq_id: RreqId,
        success: bool,
        config: &ConnectivityConfig,
    ) -> Result<Resolution> {
        if self.pending.remove(&rreq_id).is_none() {
            return Ok(Resolution::Unknown);
        }
        if success {
            self.successes += 1;
        }
        self.mu = match config.mode {
            MuMode::Raw => mu_raw(self.successes, self.attempts, config.initial_mu)?,
            MuMode::Ema => mu_ema_step(self.mu, success, config.alpha)?,
            MuMode::Blend => {
                let ratio = mu_raw(self.successes, self.attempts, config.initial_mu)?;
                (config.alpha * ratio + (1.0 - config.alpha) * self.mu).clamp(0.0, 1.0)
            }
        };
        Ok(Resolution::Resolved)
    }

    pub fn boost_new_link(&mut self, config: &ConnectivityConfig) {
        self.mu = (self.mu + config.new_link_boost).min(1.0);
    }
}

/// Warm-up links are always eligible; after that `mu` must be strictly above
/// the threshold.
pub fn eligible(record: &ConnectivityRecord, config: &ConnectivityConfig) -> bool {
    record.attempts < config.warmup_attempts || record.mu > config.threshold
}

/// A node's connectivity records, keyed by (destination, neighbor). In
/// aggregate mode the destination is dropped from the key.
#[derive(Debug, Clone, Default)]
pub struct ConnectivityTable {
    aggregate: bool,
    records: BTreeMap<(Option<NodeId>, NodeId), ConnectivityRecord>,
}

impl ConnectivityTable {
    pub fn new(aggregate: bool) -> Self {
        ConnectivityTable { aggregate, records: BTreeMap::new() }
    }

    fn key(&self, dest: NodeId, neighbor: NodeId) -> (Option<NodeId>, NodeId) {
        ((!self.aggregate).then_some(dest), neighbor)
    }

    pub fn get(&self, dest: NodeId, neighbor: NodeId) -> Option<&ConnectivityRecord> {
        self.records.get(&self.key(dest, neighbor))
    }

    pub fn entry(&mut self, dest: NodeId, neighbor: NodeId, config: &ConnectivityConfig) -> &mut ConnectivityRecord {
        let key = self.key(dest, neighbor);
        self.records.entry(key).or_insert_with(|| ConnectivityRecord::new(config))
    }

    /// Current `mu` for a link, `initial_mu` if it has never been used.
    pub fn mu(&self, dest: NodeId, neighbor: NodeId, config: &ConnectivityConfig) -> f64 {
        self.get(dest, neighbor).map_or(config.initial_mu, |r| r.mu)
    }

    pub fn is_eligible(&self, dest: NodeId, neighbor: NodeId, config: &ConnectivityConfig) -> bool {
        match self.get(dest, neighbor) {
            Some(r) => eligible(r, config),
            None => eligible(&ConnectivityRecord::new(config), config),
        }
    }

    /// Resolves every still-open attempt of `rreq_id` as a failure and returns
    /// the neighbors affected.
    pub fn fail_pending(&mut self, rreq_id: RreqId, config: &ConnectivityConfig) -> Result<Vec<NodeId>> {
        let mut failed = Vec::new();
        for ((_, neighbor), record) in self.records.iter_mut() {
            if record.pending.contains_key(&rreq_id) {
                record.resolve_attempt(rreq_id, false, config)?;
                failed.push(*neighbor);
            }
        }
        Ok(failed)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Option<NodeId>, NodeId, &ConnectivityRecord)> {
        self.records.iter().map(|((d, n), r)| (*d, *n, r))
    }
}

/// Forwarding policy for RREQ relays. Exactly one is active per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Flood,
    Connectivity(ConnectivityConfig),
    Probabilistic { p: f64 },
    CounterBased { c: u64 },
    DistanceBased { d_min: f64 },
    ExpandingRing { ttl_start: u32, ttl_increment: u32, ttl_threshold: u32 },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Connectivity(cfg) => cfg.validate(),
            Strategy::Probabilistic { p } if !(0.0..=1.0).contains(p) => {
                Err(Error::Config(format!("probability must lie in [0, 1], got {p}")))
            }
            Strategy::DistanceBased { d_min } if !d_min.is_finite() || *d_min < 0.0 => {
                Err(Error::Config(format!("d_min must be a non-negative distance, got {d_min}")))
            }
            Strategy::ExpandingRing { ttl_start, ttl_threshold, .. }
                if *ttl_start == 0 || ttl_threshold < ttl_start =>
            {
                Err(Error::Config("expanding ring needs 1 <= ttl_start <= ttl_threshold".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short, comma-free label for CSV rows and charts.
    pub fn label(&self) -> String {
        match self {
            Strategy::Flood => "flood".into(),
            Strategy::Connectivity(cfg) if cfg.mode == MuMode::Raw => "connectivity".into(),
            Strategy::Connectivity(cfg) => format!("connectivity-{}", cfg.mode.as_str()),
            Strategy::Probabilistic { p } => format!("probabilistic:{p}"),
            Strategy::CounterBased { c } => format!("counter:{c}"),
            Strategy::DistanceBased { d_min } => format!("distance:{d_min}"),
            Strategy::ExpandingRing { ttl_start, ttl_increment, ttl_threshold } => {
                format!("ring:{ttl_start}:{ttl_increment}:{ttl_threshold}")
            }
        }
    }

    pub fn connectivity(&self) -> Option<&ConnectivityConfig> {
        match self {
            Strategy::Connectivity(cfg) => Some(cfg),
            _ => None,
        }
    }

    /// How many hops the wave of discovery attempt `attempt_index` may travel.
    pub fn search_radius(&self, attempt_index: u32, node_count: u32) -> u32 {
        match *self {
            Strategy::ExpandingRing { ttl_start, ttl_increment, ttl_threshold } => {
                expanding_ring_next_ttl(ttl_start, ttl_increment, ttl_threshold, attempt_index, node_count)
            }
            _ => node_count,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    /// Parses the command-line form, which is also what [`Strategy::label`]
    /// prints: `flood`, `connectivity[-ema|-blend]`, `probabilistic:P`,
    /// `counter:C`, `distance:D`, `ring:START:INC:THRESHOLD`.
    fn from_str(s: &str) -> Result<Strategy> {
        let bad = || Error::Config(format!("unrecognised strategy `{s}`"));
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> {
            let v: f64 = args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            v.is_finite().then_some(v).ok_or_else(bad)
        };
        let int = |i: usize| -> Result<u64> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(bad()) };
        let connectivity = |mode| Strategy::Connectivity(ConnectivityConfig { mode, ..ConnectivityConfig::default() });
        let strategy = match head {
            "flood" => arity(0).map(|_| Strategy::Flood)?,
            "connectivity" | "connectivity-raw" => arity(0).map(|_| connectivity(MuMode::Raw))?,
            "connectivity-ema" => arity(0).map(|_| connectivity(MuMode::Ema))?,
            "connectivity-blend" => arity(0).map(|_| connectivity(MuMode::Blend))?,
            "probabilistic" => arity(1).and_then(|_| num(0)).map(|p| Strategy::Probabilistic { p })?,
            "counter" => arity(1).and_then(|_| int(0)).map(|c| Strategy::CounterBased { c })?,
            "distance" => arity(1).and_then(|_| num(0)).map(|d_min| Strategy::DistanceBased { d_min })?,
            "ring" => {
                arity(3)?;
                let small = |i| int(i).and_then(|v| u32::try_from(v).map_err(|_| bad()));
                Strategy::ExpandingRing { ttl_start: small(0)?, ttl_increment: small(1)?, ttl_threshold: small(2)? }
            }
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// TTL schedule of expanding ring search: grow by `increment` per attempt,
/// cap at `threshold`, and flood network-wide once the cap has been tried.
pub fn expanding_ring_next_ttl(start: u32, increment: u32, threshold: u32, attempt_index: u32, node_count: u32) -> u32 {
    let ttl_at = |i: u32| start.saturating_add(i.saturating_mul(increment));
    if attempt_index > 0 && ttl_at(attempt_index - 1) >= threshold {
        return node_count;
    }
    ttl_at(attempt_index).min(threshold)
}

/// What a node knows when choosing relay targets.
pub struct SelectionView<'a> {
    pub me: NodeId,
    /// Sender of the copy being relayed; `None` at the originator.
    pub previous_hop: Option<NodeId>,
    pub connectivity: &'a ConnectivityTable,
    /// Copies of this wave heard so far, including the first.
    pub copies_heard: u32,
    pub my_position: Option<Position>,
    pub previous_hop_position: Option<Position>,
}

/// Chooses the RREQ recipients among `candidates` (which already exclude the
/// previous hop). The result is a subset of `candidates`, in their order.
pub fn select_targets<R: Rng + ?Sized>(
    strategy: &Strategy,
    view: &SelectionView<'_>,
    rreq: &Rreq,
    candidates: &[NodeId],
    rng: &mut R,
) -> Vec<NodeId> {
    let all = || candidates.to_vec();
    // The gossip-style schemes govern relaying only; an originator always
    // sends its own request.
    let relaying = view.previous_hop.is_some();
    match strategy {
        Strategy::Flood | Strategy::ExpandingRing { .. } => all(),
        Strategy::Connectivity(cfg) => {
            candidates.iter().copied().filter(|n| view.connectivity.is_eligible(rreq.dest, *n, cfg)).collect()
        }
        Strategy::Probabilistic { p } => {
            if !relaying || candidates.is_empty() || rng.gen_bool(*p) {
                all()
            } else {
                Vec::new()
            }
        }
        Strategy::CounterBased { c } => {
            if !relaying || u64::from(view.copies_heard) <= *c {
                all()
            } else {
                Vec::new()
            }
        }
        Strategy::DistanceBased { d_min } => match (relaying, view.my_position, view.previous_hop_position) {
            (true, Some(a), Some(b)) if distance(a, b) < *d_min => Vec::new(),
            _ => all(),
        },
    }
}

pub fn distance(a: Position, b: Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
