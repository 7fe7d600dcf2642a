//! Write metrics.csv and summary.csv for a few protocols, read them back
//! and print the comparison table the `compare` subcommand shows.

use std::fs::File;

use apfl::config::{ExperimentConfig, Protocol};
use apfl::report::{compare, read_metrics, write_run};
use apfl::sim::run;

fn main() -> apfl::Result<()> {
    let out = std::env::temp_dir().join("apfl-csv-reports");
    let mut cfg = ExperimentConfig::default().with_seed(3);
    cfg.stop.time_budget = 200.0;
    cfg.stop.target_accuracy = Some(0.8);
    let mut summaries = Vec::new();
    for protocol in [Protocol::Apfl, Protocol::SyncClustered, Protocol::SyncFedavg, Protocol::AsyncDecay] {
        let trace = run(&cfg.clone().with_protocol(protocol))?;
        let (metrics, summary) = write_run(&out.join(protocol.as_str()), &trace)?;
        let rows = read_metrics(File::open(&metrics)?, &metrics)?;
        println!("{}: {} metric rows in {}", protocol.as_str(), rows.len(), metrics.display());
        summaries.push(summary);
    }
    print!("{}", compare(&summaries)?);
    Ok(())
}
