//! `aodvsim`: run scenarios, compare forwarding strategies, dump traces.
//!
//! Exit codes: 0 success, 1 bad input (flags, scenario files), 2 failure while
//! running or writing results.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aodvsim_core::engine::run;
use aodvsim_core::metrics::{compare_rows, read_inputs, write_csv, ComparisonInput};
use aodvsim_core::suppression::MuMode;
use aodvsim_core::{Error, MetricsReport, Scenario, Strategy};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aodvsim", version, about = "Deterministic AODV route-discovery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its metrics CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the scenario's strategy.
        #[arg(long)]
        strategy: Option<String>,
        /// Metrics CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the event trace (TSV) here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one scenario under several strategies, or tabulate earlier CSVs.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategies, e.g. `flood,connectivity,counter:3`.
        #[arg(long, value_delimiter = ',', required_unless_present = "inputs")]
        strategies: Vec<String>,
        /// Comma-separated metrics or comparison CSVs to tabulate instead.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["strategies", "scenario", "seed", "rounds"])]
        inputs: Vec<PathBuf>,
        /// Comparison CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bar chart of RREQ transmissions per strategy.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Print the event trace of one run.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<String>,
        /// Trace path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of traffic rounds per flow.
    #[arg(long)]
    rounds: Option<u32>,
    #[command(flatten)]
    tuning: Tuning,
}

/// Connectivity-strategy overrides.
#[derive(Args, Debug, Default)]
struct Tuning {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    warmup: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Raw,
    Ema,
    Blend,
}

impl Tuning {
    fn is_empty(&self) -> bool {
        self.alpha.is_none() && self.threshold.is_none() && self.warmup.is_none() && self.mode.is_none()
    }

    fn apply(&self, strategy: Strategy) -> Result<Strategy, Failure> {
        let Strategy::Connectivity(mut cfg) = strategy else {
            return Ok(strategy);
        };
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        if let Some(w) = self.warmup {
            cfg.warmup_attempts = w;
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                Mode::Raw => MuMode::Raw,
                Mode::Ema => MuMode::Ema,
                Mode::Blend => MuMode::Blend,
            };
        }
        cfg.validate()?;
        Ok(Strategy::Connectivity(cfg))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Output(PathBuf, io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) if e.is_input_error() => 1,
            Failure::Core(_) | Failure::Output(..) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Output(p, e) => write!(f, "cannot write {}: {e}", p.display()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, strategy, out, trace } => cmd_run(&common, strategy.as_deref(), out, trace),
        Command::Compare { common, strategies, inputs, out, svg } => {
            if inputs.is_empty() {
                cmd_compare(&common, &strategies, out, svg)
            } else {
                if !common.tuning.is_empty() {
                    return Err(Failure::Usage("connectivity flags cannot be combined with --inputs".into()));
                }
                cmd_tabulate(&inputs, out, svg)
            }
        }
        Command::Trace { common, strategy, out } => cmd_trace(&common, strategy.as_deref(), out),
        Command::List => {
            let mut stdout = io::stdout().lock();
            for name in aodvsim_core::scenario::BUILTINS {
                let _ = writeln!(stdout, "{name}");
            }
            Ok(())
        }
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let name = common.scenario.as_deref().ok_or_else(|| Failure::Usage("--scenario is required".into()))?;
    let mut s = Scenario::load(name)?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if let Some(r) = common.rounds {
        s = s.with_rounds(r);
    }
    Ok(s)
}

fn parse_strategy(text: &str, tuning: &Tuning) -> Result<Strategy, Failure> {
    let s: Strategy = text.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    tuning.apply(s)
}

/// Scenario with the requested strategy and tuning applied.
fn prepared(common: &Common, strategy: Option<&str>) -> Result<Scenario, Failure> {
    let s = load(common)?;
    let strategy = match strategy {
        Some(text) => parse_strategy(text, &common.tuning)?,
        None => common.tuning.apply(s.strategy.clone())?,
    };
    if !common.tuning.is_empty() && strategy.connectivity().is_none() {
        return Err(Failure::Usage("--alpha/--threshold/--warmup/--mode need the connectivity strategy".into()));
    }
    let s = s.with_strategy(strategy);
    s.validate()?;
    Ok(s)
}

fn write_to(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Output(p.to_path_buf(), e)),
        None => io::stdout().lock().write_all(bytes).map_err(|e| Failure::Output("<stdout>".into(), e)),
    }
}

fn csv_bytes(s: &Scenario, report: &MetricsReport) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_csv(&[report.row(&s.name, &s.strategy.label(), s.seed)], &mut buf)?;
    Ok(buf)
}

fn summary(s: &Scenario, report: &MetricsReport) -> String {
    let latency = report.mean_latency().map_or("-".to_string(), |l| format!("{l:.2}"));
    format!(
        "{} [{}] seed {}: {} RREQ, {} RREP, {} RERR, {} redundant, {} suppressed; discoveries {} ok / {} failed; mean latency {} ticks\n",
        s.name,
        s.strategy.label(),
        s.seed,
        report.rreq_tx,
        report.rrep_tx,
        report.rerr_tx,
        report.redundant_rreq_rx,
        report.suppressed_forwards,
        report.discoveries_ok(),
        report.discoveries_failed(),
        latency
    )
}

fn cmd_run(
    common: &Common,
    strategy: Option<&str>,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<(), Failure> {
    let s = prepared(common, strategy)?;
    let output = run(&s, trace.is_some())?;
    let csv = csv_bytes(&s, &output.report)?;
    if let Some(path) = &trace {
        write_to(Some(path), output.trace_text().as_bytes())?;
    }
    write_to(out.as_deref(), &csv)?;
    let text = summary(&s, &output.report);
    if out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    Ok(())
}

fn cmd_trace(common: &Common, strategy: Option<&str>, out: Option<PathBuf>) -> Result<(), Failure> {
    let s = prepared(common, strategy)?;
    let output = run(&s, true)?;
    write_to(out.as_deref(), output.trace_text().as_bytes())
}

fn cmd_compare(
    common: &Common,
    strategies: &[String],
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
) -> Result<(), Failure> {
    let base = load(common)?;
    let variants = strategies
        .iter()
        .map(|t| parse_strategy(t, &common.tuning).map(|st| base.clone().with_strategy(st)))
        .collect::<Result<Vec<_>, _>>()?;
    if !common.tuning.is_empty() && variants.iter().all(|v| v.strategy.connectivity().is_none()) {
        return Err(Failure::Usage("--alpha/--threshold/--warmup/--mode need a connectivity strategy".into()));
    }
    for v in &variants {
        v.validate()?;
    }
    // Independent engines; results are collected in list order.
    let results: Vec<Result<MetricsReport, Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants.iter().map(|v| scope.spawn(move || run(v, false).map(|o| o.report))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut inputs = Vec::new();
    let mut text = String::new();
    for (v, result) in variants.iter().zip(results) {
        let report = result?;
        text.push_str(&summary(v, &report));
        if let Some((round, stats)) = report.last_round() {
            let names = v.names();
            let links: Vec<String> =
                stats.rreq_links.keys().map(|(a, b)| format!("{}->{}", names[a], names[b])).collect();
            text.push_str(&format!("  round {round}: {} RREQ on {}\n", stats.rreq_tx, links.join(" ")));
        }
        inputs.push(ComparisonInput {
            row: report.row(&v.name, &v.strategy.label(), v.seed),
            last_round_rreq_tx: report.last_round().map(|(_, st)| st.rreq_tx),
        });
    }
    emit_table(&inputs, out.as_deref(), svg.as_deref(), &text)
}

fn cmd_tabulate(paths: &[PathBuf], out: Option<PathBuf>, svg: Option<PathBuf>) -> Result<(), Failure> {
    let mut inputs = Vec::new();
    for p in paths {
        let file = fs::File::open(p).map_err(|source| Error::Io { path: p.clone(), source })?;
        let rows = read_inputs(file).map_err(|e| match e {
            Error::Csv(c) => Error::Validation(format!("{}: {c}", p.display())),
            other => other,
        })?;
        inputs.extend(rows);
    }
    emit_table(&inputs, out.as_deref(), svg.as_deref(), "")
}

fn emit_table(inputs: &[ComparisonInput], out: Option<&Path>, svg: Option<&Path>, text: &str) -> Result<(), Failure> {
    let table = compare_rows(inputs)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_to(out, &buf)?;
    if let Some(p) = svg {
        write_to(Some(p), table.to_svg().as_bytes())?;
    }
    if out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    Ok(())
}
