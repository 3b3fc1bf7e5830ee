//! Overhead accounting: per-run counters, the fixed-column metrics CSV and
//! cross-strategy comparison tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{NodeId, PacketKind, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryOutcome {
    Pending,
    Resolved { at: Tick, hop_count: u32 },
    Failed { at: Tick },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryRecord {
    pub origin: NodeId,
    pub dest: NodeId,
    /// Traffic round that started it; `None` for discoveries triggered by
    /// route errors or expiry.
    pub round: Option<u32>,
    pub started_at: Tick,
    pub outcome: DiscoveryOutcome,
    /// Search radius of every attempt, in order.
    pub attempt_radii: Vec<u32>,
}

impl DiscoveryRecord {
    pub fn latency(&self) -> Option<Tick> {
        match self.outcome {
            DiscoveryOutcome::Resolved { at, .. } => Some(at - self.started_at),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundStats {
    pub rreq_tx: u64,
    pub suppressed_forwards: u64,
    /// RREQ transmissions per directed link.
    pub rreq_links: BTreeMap<(NodeId, NodeId), u64>,
}

/// One countable occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricEvent {
    Transmit { kind: PacketKind, from: NodeId, to: NodeId, round: Option<u32> },
    Loss,
    RedundantRreq { at: NodeId },
    Suppressed { count: u32, round: Option<u32> },
    DataDelivered,
    Boost,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rreq_tx: u64,
    pub rrep_tx: u64,
    pub rerr_tx: u64,
    pub hello_tx: u64,
    pub data_tx: u64,
    pub redundant_rreq_rx: u64,
    pub per_node_rreq_tx: BTreeMap<NodeId, u64>,
    pub per_node_redundant_rx: BTreeMap<NodeId, u64>,
    pub discoveries: Vec<DiscoveryRecord>,
    pub suppressed_forwards: u64,
    pub data_delivered: u64,
    pub losses: u64,
    pub boosts: u64,
    pub rounds: BTreeMap<u32, RoundStats>,
    /// The run hit `t_max` with protocol work still pending.
    pub timed_out: bool,
}

impl MetricsReport {
    pub fn record(&mut self, event: MetricEvent) {
        match event {
            MetricEvent::Transmit { kind, from, to, round } => match kind {
                PacketKind::Rreq => {
                    self.rreq_tx += 1;
                    *self.per_node_rreq_tx.entry(from).or_default() += 1;
                    if let Some(r) = round {
                        let stats = self.rounds.entry(r).or_default();
                        stats.rreq_tx += 1;
                        *stats.rreq_links.entry((from, to)).or_default() += 1;
                    }
                }
                PacketKind::Rrep => self.rrep_tx += 1,
                PacketKind::Rerr => self.rerr_tx += 1,
                PacketKind::Hello => self.hello_tx += 1,
                PacketKind::Data => self.data_tx += 1,
            },
            MetricEvent::Loss => self.losses += 1,
            MetricEvent::RedundantRreq { at } => {
                self.redundant_rreq_rx += 1;
                *self.per_node_redundant_rx.entry(at).or_default() += 1;
            }
            MetricEvent::Suppressed { count, round } => {
                self.suppressed_forwards += u64::from(count);
                if let Some(r) = round {
                    self.rounds.entry(r).or_default().suppressed_forwards += u64::from(count);
                }
            }
            MetricEvent::DataDelivered => self.data_delivered += 1,
            MetricEvent::Boost => self.boosts += 1,
        }
    }

    pub fn discoveries_ok(&self) -> u64 {
        self.discoveries.iter().filter(|d| matches!(d.outcome, DiscoveryOutcome::Resolved { .. })).count() as u64
    }

    pub fn discoveries_failed(&self) -> u64 {
        self.discoveries.iter().filter(|d| matches!(d.outcome, DiscoveryOutcome::Failed { .. })).count() as u64
    }

    pub fn mean_latency(&self) -> Option<f64> {
        let lat: Vec<Tick> = self.discoveries.iter().filter_map(DiscoveryRecord::latency).collect();
        if lat.is_empty() {
            return None;
        }
        Some(lat.iter().sum::<Tick>() as f64 / lat.len() as f64)
    }

    pub fn last_round(&self) -> Option<(u32, &RoundStats)> {
        self.rounds.iter().next_back().map(|(r, s)| (*r, s))
    }

    pub fn row(&self, scenario: &str, strategy: &str, seed: u64) -> MetricsRow {
        MetricsRow {
            scenario: scenario.to_string(),
            strategy: strategy.to_string(),
            seed,
            rreq_tx: self.rreq_tx,
            rrep_tx: self.rrep_tx,
            rerr_tx: self.rerr_tx,
            hello_tx: self.hello_tx,
            data_tx: self.data_tx,
            redundant_rreq_rx: self.redundant_rreq_rx,
            suppressed_forwards: self.suppressed_forwards,
            discoveries_ok: self.discoveries_ok(),
            discoveries_failed: self.discoveries_failed(),
            mean_latency_ticks: self.mean_latency(),
        }
    }
}

/// One line of the metrics CSV. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub rreq_tx: u64,
    pub rrep_tx: u64,
    pub rerr_tx: u64,
    pub hello_tx: u64,
    pub data_tx: u64,
    pub redundant_rreq_rx: u64,
    pub suppressed_forwards: u64,
    pub discoveries_ok: u64,
    pub discoveries_failed: u64,
    pub mean_latency_ticks: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario",
    "strategy",
    "seed",
    "rreq_tx",
    "rrep_tx",
    "rerr_tx",
    "hello_tx",
    "data_tx",
    "redundant_rreq_rx",
    "suppressed_forwards",
    "discoveries_ok",
    "discoveries_failed",
    "mean_latency_ticks",
];

/// Writes the header (always) followed by one line per row.
pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Validation(format!(
            "unexpected metrics CSV header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub rreq_tx: u64,
    pub rrep_tx: u64,
    pub rerr_tx: u64,
    pub hello_tx: u64,
    pub data_tx: u64,
    pub redundant_rreq_rx: u64,
    pub suppressed_forwards: u64,
    pub discoveries_ok: u64,
    pub discoveries_failed: u64,
    pub success_rate: Option<f64>,
    pub mean_latency_ticks: Option<f64>,
    /// Baseline RREQ transmissions minus this row's; positive means fewer.
    pub rreq_saved: i64,
    pub control_saved: i64,
    pub last_round_rreq_tx: Option<u64>,
    pub last_round_rreq_saved: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// A comparison input: a metrics row plus, when known, the RREQ count of the
/// final traffic round.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonInput {
    pub row: MetricsRow,
    pub last_round_rreq_tx: Option<u64>,
}

impl From<MetricsRow> for ComparisonInput {
    fn from(row: MetricsRow) -> Self {
        ComparisonInput { row, last_round_rreq_tx: None }
    }
}

/// Reads either a metrics CSV or a comparison-table CSV back into comparison
/// inputs, so every CSV this crate writes can be fed to [`compare_rows`].
pub fn read_inputs<R: Read>(input: R) -> Result<Vec<ComparisonInput>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().eq(CSV_COLUMNS.iter().copied()) {
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        return Ok(rows.into_iter().map(ComparisonInput::from).collect());
    }
    if headers.get(0) != Some("strategy") {
        return Err(Error::Validation(format!(
            "not a metrics or comparison CSV (header starts with {:?})",
            headers.get(0).unwrap_or("")
        )));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<ComparisonRow>, _>>()?;
    Ok(rows
        .into_iter()
        .map(|c| ComparisonInput {
            row: MetricsRow {
                scenario: String::new(),
                strategy: c.strategy,
                seed: 0,
                rreq_tx: c.rreq_tx,
                rrep_tx: c.rrep_tx,
                rerr_tx: c.rerr_tx,
                hello_tx: c.hello_tx,
                data_tx: c.data_tx,
                redundant_rreq_rx: c.redundant_rreq_rx,
                suppressed_forwards: c.suppressed_forwards,
                discoveries_ok: c.discoveries_ok,
                discoveries_failed: c.discoveries_failed,
                mean_latency_ticks: c.mean_latency_ticks,
            },
            last_round_rreq_tx: c.last_round_rreq_tx,
        })
        .collect())
}

pub fn compare(reports: &[(String, MetricsReport)]) -> Result<ComparisonTable> {
    let inputs: Vec<ComparisonInput> = reports
        .iter()
        .map(|(label, r)| ComparisonInput {
            row: r.row("", label, 0),
            last_round_rreq_tx: r.last_round().map(|(_, s)| s.rreq_tx),
        })
        .collect();
    compare_rows(&inputs)
}

/// Builds the table. The row labelled `flood` is the baseline if present,
/// otherwise the first row.
pub fn compare_rows(inputs: &[ComparisonInput]) -> Result<ComparisonTable> {
    let first = inputs.first().ok_or(Error::EmptyComparison)?;
    let base = inputs.iter().find(|i| i.row.strategy == "flood").unwrap_or(first);
    let control = |r: &MetricsRow| (r.rreq_tx + r.rrep_tx + r.rerr_tx) as i64;
    let rows = inputs
        .iter()
        .map(|i| {
            let r = &i.row;
            let total = r.discoveries_ok + r.discoveries_failed;
            ComparisonRow {
                strategy: r.strategy.clone(),
                rreq_tx: r.rreq_tx,
                rrep_tx: r.rrep_tx,
                rerr_tx: r.rerr_tx,
                hello_tx: r.hello_tx,
                data_tx: r.data_tx,
                redundant_rreq_rx: r.redundant_rreq_rx,
                suppressed_forwards: r.suppressed_forwards,
                discoveries_ok: r.discoveries_ok,
                discoveries_failed: r.discoveries_failed,
                success_rate: (total > 0).then(|| r.discoveries_ok as f64 / total as f64),
                mean_latency_ticks: r.mean_latency_ticks,
                rreq_saved: base.row.rreq_tx as i64 - r.rreq_tx as i64,
                control_saved: control(&base.row) - control(r),
                last_round_rreq_tx: i.last_round_rreq_tx,
                last_round_rreq_saved: match (base.last_round_rreq_tx, i.last_round_rreq_tx) {
                    (Some(b), Some(x)) => Some(b as i64 - x as i64),
                    _ => None,
                },
            }
        })
        .collect();
    Ok(ComparisonTable { baseline: base.row.strategy.clone(), rows })
}

impl ComparisonTable {
    pub fn row(&self, strategy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Bar chart of RREQ transmissions per strategy as a standalone SVG.
    pub fn to_svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 400.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 60.0;
        const SIDE: f64 = 50.0;
        let max = self.rows.iter().map(|r| r.rreq_tx).max().unwrap_or(0).max(1) as f64;
        let n = self.rows.len().max(1) as f64;
        let slot = (W - 2.0 * SIDE) / n;
        let bar = slot * 0.6;
        let plot_h = H - TOP - BOTTOM;
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
        ));
        svg.push_str("<rect x=\"0\" y=\"0\" width=\"800\" height=\"400\" fill=\"white\"/>\n");
        svg.push_str(
            "<text x=\"400\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">RREQ transmissions per strategy</text>\n",
        );
        svg.push_str(&format!(
            "<line x1=\"{SIDE}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n",
            y = H - BOTTOM,
            x2 = W - SIDE
        ));
        for (i, r) in self.rows.iter().enumerate() {
            let h = plot_h * r.rreq_tx as f64 / max;
            let x = SIDE + slot * i as f64 + (slot - bar) / 2.0;
            let y = H - BOTTOM - h;
            let fill = if r.strategy == self.baseline { "#9e9e9e" } else { "#3f6fb5" };
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar:.1}\" height=\"{h:.1}\" fill=\"{fill}\"/>\n"
            ));
            svg.push_str(&format!(
                "<text x=\"{cx:.1}\" y=\"{ty:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{v}</text>\n",
                cx = x + bar / 2.0,
                ty = y - 4.0,
                v = r.rreq_tx
            ));
            svg.push_str(&format!(
                "<text x=\"{cx:.1}\" y=\"{ly:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
                cx = x + bar / 2.0,
                ly = H - BOTTOM + 18.0,
                label = xml_escape(&r.strategy)
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
