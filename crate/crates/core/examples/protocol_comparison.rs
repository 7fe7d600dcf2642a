//! Run every protocol on the same 20-client heterogeneous fleet and print
//! a one-line summary for each.

use std::time::Instant;

use apfl::config::{ExperimentConfig, Protocol};
use apfl::sim::{run, Direction};

fn main() -> apfl::Result<()> {
    // optional TOML config path; the default fleet otherwise
    let base = match std::env::args().nth(1) {
        Some(path) => apfl::config::parse_config(path)?,
        None => ExperimentConfig::default().with_seed(7),
    };
    for protocol in [Protocol::Apfl, Protocol::SyncClustered, Protocol::SyncFedavg, Protocol::AsyncDecay, Protocol::Standalone] {
        let started = Instant::now();
        let trace = run(&base.clone().with_protocol(protocol))?;
        let t90 = |acc: f64| trace.time_to_reach(acc).map_or("never".to_string(), |t| format!("{t:.1}"));
        println!(
            "{:<15} mean {:.3} min {:.3} t(0.6) {:>7} t(0.8) {:>7} qmax {:>3} up {:>9} peak-up {:>7} peak-down {:>7} clusters {:?} ({:.1?})",
            protocol.as_str(),
            trace.final_mean_accuracy(),
            trace.final_min_accuracy(),
            t90(0.6),
            t90(0.8),
            trace.staleness.q_max,
            trace.total_bytes(Direction::Up),
            trace.peak_concurrency(Direction::Up, 1.0),
            trace.peak_concurrency(Direction::Down, 1.0),
            trace.assignments,
            started.elapsed(),
        );
    }
    Ok(())
}
