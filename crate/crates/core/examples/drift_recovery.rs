//! One client's data changes mid-run to another group's label mix. The
//! server notices through client feedback, splits the client off or moves
//! it, and its accuracy comes back within a few refinements.

use apfl::config::{DriftConfig, ExperimentConfig};
use apfl::sim::{run, EventKind};

fn main() -> apfl::Result<()> {
    let mut cfg = ExperimentConfig::default().with_seed(1);
    cfg.apfl.refine_period = 5;
    cfg.stop.time_budget = 260.0;
    let spec = cfg.population_spec();
    let (client, at) = (3, 200.0);
    cfg.drift.push(DriftConfig {
        client,
        trigger_time: at,
        new_class_skew: spec.class_skew[2].clone(),
        feature_group: Some(2),
    });
    let trace = run(&cfg)?;

    println!("client {client} before drift: {:.3}", trace.client_accuracy_at(client, at - 1e-3));
    let mut cluster = None;
    for r in trace.rows.iter().filter(|r| r.sim_time >= at && r.sim_time <= at + 6.0) {
        if r.client == Some(client) && r.event == EventKind::UploadArrive {
            cluster = r.cluster;
        }
        if r.event == EventKind::RefinementTick || r.event == EventKind::DriftTrigger {
            println!(
                "{:>7.2}s {:<16} client {client} in cluster {:?}, accuracy {:.3}, {} clusters",
                r.sim_time,
                r.event.as_str(),
                cluster,
                trace.client_accuracy_at(client, r.sim_time),
                r.cluster_count
            );
        }
    }
    println!("client {client} at end: {:.3} in cluster {:?}", trace.final_accuracy[client], trace.assignments[client]);
    Ok(())
}
