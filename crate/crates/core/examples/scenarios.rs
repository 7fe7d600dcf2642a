//! The four built-in five-client scenarios: A (same data, same speed),
//! B (same speed, different data), C (same data, mixed speed) and D (both
//! differ). Prints per-client accuracy under the asynchronous protocol and
//! under staleness-decayed asynchronous averaging.

use apfl::config::{scenario_config, Protocol};
use apfl::sim::run;

fn main() -> apfl::Result<()> {
    for name in ["A", "B", "C", "D"] {
        let cfg = scenario_config(name)?.with_seed(1);
        println!("scenario {name}: devices {:?}", cfg.fleet.classes(cfg.client_count()));
        for protocol in [Protocol::Apfl, Protocol::AsyncDecay] {
            let trace = run(&cfg.clone().with_protocol(protocol))?;
            let accs: Vec<String> = trace.final_accuracy.iter().map(|a| format!("{a:.2}")).collect();
            println!("  {:<12} [{}] Q_max {}", protocol.as_str(), accs.join(", "), trace.staleness.q_max);
        }
    }
    Ok(())
}
