//! Run the asynchronous protocol once on the default 20-client fleet and
//! print how accuracy, staleness and traffic evolved.

use apfl::config::ExperimentConfig;
use apfl::sim::{run, Direction};

fn main() -> apfl::Result<()> {
    let cfg = ExperimentConfig::default().with_seed(1);
    let trace = run(&cfg)?;

    for t in [10.0, 30.0, 60.0, 120.0, 300.0, cfg.stop.time_budget] {
        println!("t = {t:>5.0}s  mean accuracy {:.3}", trace.mean_accuracy_at(t));
    }
    println!("final mean {:.3}, worst client {:.3}", trace.final_mean_accuracy(), trace.final_min_accuracy());
    println!(
        "staleness: Q_max {}, Q_avg {:.2} over {} pushes",
        trace.staleness.q_max, trace.staleness.q_avg, trace.accepted_pushes
    );
    println!(
        "traffic: {} B up, {} B down, upload peak {} B/s",
        trace.total_bytes(Direction::Up),
        trace.total_bytes(Direction::Down),
        trace.peak_concurrency(Direction::Up, 1.0)
    );
    println!("cluster of each client: {:?}", trace.assignments);
    Ok(())
}
