use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aodvsim_core::metrics::read_csv;
use aodvsim_core::scenario::builtin;

fn aodvsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aodvsim")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_flood_writes_fifteen_rreqs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = aodvsim(&["run", "--scenario", "fig1", "--strategy", "flood", "--seed", "7", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].rreq_tx, rows[0].discoveries_ok, rows[0].seed), (15, 1, 7));
    assert!(String::from_utf8_lossy(&o.stdout).contains("15 RREQ"));
}

#[test]
fn compare_shows_round_eleven_pruning() {
    let dir = tempfile::tempdir().unwrap();
    let (out, svg) = (dir.path().join("table.csv"), dir.path().join("chart.svg"));
    let o = aodvsim(&[
        "compare",
        "--scenario",
        "fig1-tables",
        "--strategies",
        "flood,connectivity",
        "--rounds",
        "11",
        "--out",
        p(&out),
        "--svg",
        p(&svg),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(&out).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let row = table.lines().find(|l| l.starts_with("connectivity,")).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    let saved: i64 = cells[col("last_round_rreq_saved")].parse().unwrap();
    assert!(saved >= 5, "saved {saved}");

    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let links = text.lines().skip_while(|l| !l.contains("[connectivity]")).nth(1).unwrap();
    assert!(links.contains("round 11"), "{links}");
    for n in ["N7", "N8", "N13"] {
        assert!(!links.split_whitespace().any(|l| l.split("->").any(|end| end == n)), "{n} in {links}");
    }
    let chart = fs::read_to_string(&svg).unwrap();
    assert!(chart.starts_with("<svg") && chart.contains("viewBox=\"0 0 800 400\""));
}

#[test]
fn compare_reads_back_its_own_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, t) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("t.csv"));
    for (strategy, path) in [("flood", &a), ("counter:2", &b)] {
        let o = aodvsim(&["run", "--scenario", "fig1", "--strategy", strategy, "--out", p(path)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let inputs = format!("{},{}", p(&a), p(&b));
    let o = aodvsim(&["compare", "--inputs", &inputs, "--out", p(&t)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = aodvsim(&["compare", "--inputs", p(&t)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout), fs::read_to_string(&t).unwrap());
}

#[test]
fn missing_scenario_file_exits_one_naming_the_path() {
    let o = aodvsim(&["run", "--scenario", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut s = builtin("fig1").unwrap();
    s.links[0].b = "N99".into();
    fs::write(&bad, s.to_json()).unwrap();
    for args in [
        vec!["run", "--scenario", p(&bad)],
        vec!["run", "--scenario", "fig9"],
        vec!["run", "--scenario", "fig1", "--strategy", "sometimes"],
        vec!["run", "--scenario", "fig1", "--strategy", "flood", "--alpha", "0.2"],
        vec!["run", "--scenario", "fig1", "--strategy", "connectivity", "--alpha", "1.5"],
        vec!["compare", "--scenario", "fig1", "--strategies", "flood", "--inputs", "x.csv"],
        vec!["compare", "--scenario", "fig1"],
        vec!["run", "--bogus"],
        vec![],
    ] {
        let o = aodvsim(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert!(stderr(&aodvsim(&["run", "--scenario", p(&bad)])).contains("N99"));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("no/such/dir/out.csv");
    let o = aodvsim(&["run", "--scenario", "fig1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn trace_and_list() {
    let o = aodvsim(&["trace", "--scenario", "ring-demo"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("tick\tnode\tkind\tsummary\n"));
    assert_eq!(text.lines().filter(|l| l.contains("\tdiscover\t")).count(), 4);

    let o = aodvsim(&["list"]);
    let names: Vec<String> = String::from_utf8_lossy(&o.stdout).lines().map(String::from).collect();
    assert_eq!(names, ["fig1", "fig1-tables", "ring-demo", "random-N"]);
}

#[test]
fn tuning_flags_reach_the_strategy() {
    let run = |extra: &[&str]| {
        let mut args = vec!["run", "--scenario", "fig1-tables", "--rounds", "12", "--strategy", "connectivity"];
        args.extend_from_slice(extra);
        let o = aodvsim(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        stderr(&o)
    };
    // A negative threshold never filters, so the row matches flood.
    let open = run(&["--threshold", "-1"]);
    assert!(open.contains(", 0 suppressed;"), "{open}");
    let pruned = run(&["--warmup", "10"]);
    assert!(!pruned.contains(", 0 suppressed;"), "{pruned}");
    let ema = run(&["--mode", "ema", "--alpha", "0.5"]);
    assert!(ema.contains("[connectivity-ema]"), "{ema}");
}

#[test]
fn trace_file_matches_trace_command() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, tsv) = (dir.path().join("m.csv"), dir.path().join("t.tsv"));
    let o = aodvsim(&["run", "--scenario", "fig1", "--out", p(&csv), "--trace", p(&tsv)]);
    assert!(o.status.success());
    let o = aodvsim(&["trace", "--scenario", "fig1"]);
    assert_eq!(fs::read(&tsv).unwrap(), o.stdout);
}
