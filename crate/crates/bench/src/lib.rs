//! Benchmark fixtures: the scenarios the criterion benches run, built once so
//! the timed loop only measures simulation.

use aodvsim_core::scenario::builtin;
use aodvsim_core::{Engine, MetricsReport, Scenario, Strategy};

/// (label, scenario) pairs, smallest first.
pub fn fixtures() -> Vec<(String, Scenario)> {
    let mut out = vec![
        ("fig1/flood".to_string(), builtin("fig1").expect("builtin")),
        ("fig1-tables/connectivity".to_string(), builtin("fig1-tables").expect("builtin")),
        ("ring-demo".to_string(), builtin("ring-demo").expect("builtin")),
    ];
    for n in [50, 200] {
        let s = builtin(&format!("random-{n}")).expect("builtin");
        out.push((format!("random-{n}/flood"), s.clone()));
        out.push((format!("random-{n}/counter:3"), s.with_strategy(Strategy::CounterBased { c: 3 })));
    }
    out
}

pub fn simulate(s: &Scenario) -> MetricsReport {
    Engine::new(s).and_then(Engine::run).expect("benchmark scenario runs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_runs() {
        for (label, s) in fixtures().iter().take(4) {
            assert!(simulate(s).rreq_tx > 0, "{label}");
        }
    }
}
