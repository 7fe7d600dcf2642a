//! Same fleet, same seed, different broadcast policies. Broadcasting costs
//! only downstream bandwidth and keeps clients close to their branch head.

use apfl::broadcast::BroadcastMode;
use apfl::config::ExperimentConfig;
use apfl::sim::{run, Direction};

fn main() -> apfl::Result<()> {
    let mut base = ExperimentConfig::default().with_seed(1);
    base.stop.time_budget = 200.0;
    println!("{:<15} {:>6} {:>7} {:>11} {:>8}", "mode", "Q_max", "Q_avg", "down bytes", "mean acc");
    for mode in BroadcastMode::ALL {
        let trace = run(&base.clone().with_broadcast_mode(mode))?;
        println!(
            "{:<15} {:>6} {:>7.2} {:>11} {:>8.3}",
            mode.as_str(),
            trace.staleness.q_max,
            trace.staleness.q_avg,
            trace.total_bytes(Direction::Down),
            trace.final_mean_accuracy()
        );
    }
    Ok(())
}
