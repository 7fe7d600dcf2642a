//! Drive the asynchronous server by hand, without the event simulator:
//! clients push updates, pull their branch head, and the server refines
//! its clusters.

use std::collections::BTreeSet;

use apfl::broadcast::{BroadcastMode, PredictorConfig, RnnPredictor};
use apfl::coordination::{PullResponse, PushRequest, Server, ServerConfig};
use apfl::data::{generate_population, PopulationSpec};
use apfl::model::{LocalDataset, Mlp, ParamVector, SgdConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> apfl::Result<()> {
    let spec = PopulationSpec::disjoint(2, 3, 10, 5);
    let pop = generate_population(&spec)?;
    let mlp = Mlp::new(spec.feature_dim, 16, spec.classes);
    let init = mlp.init(&mut ChaCha8Rng::seed_from_u64(5));
    let sgd = SgdConfig::default();
    let config = ServerConfig { mode: BroadcastMode::Always, refine_period: 4, ..ServerConfig::default() };
    let probe = LocalDataset::concat(&pop.datasets)?;
    let predictor = RnnPredictor::new(PredictorConfig::default(), 0);
    let mut server = Server::new(mlp, config, pop.datasets.clone(), probe, predictor)?;

    // each client's current start point and the head it came from
    let n = pop.datasets.len();
    let mut start: Vec<ParamVector> = vec![init; n];
    let mut base: Vec<Option<(usize, u64)>> = vec![None; n];
    let no_lookahead = |_: usize, _: &BTreeSet<usize>| None;
    for round in 0..6 {
        for c in 0..n {
            let params = mlp.sgd_train(&start[c], &pop.datasets[c], &sgd, (round * n + c) as u64)?;
            let req = PushRequest {
                client: c,
                params,
                base_cluster: base[c].map(|b| b.0),
                base_version: base[c].map_or(0, |b| b.1),
            };
            let ack = server.push(&req, (round * n + c) as f64, &no_lookahead)?;
            if round == 0 || ack.staleness > 0 {
                println!(
                    "round {round} client {c}: cluster {} v{} staleness {} broadcast to {:?}",
                    ack.cluster, ack.version, ack.staleness, ack.broadcast_to
                );
            }
            if let PullResponse::Model(m) = server.pull(c)? {
                start[c] = m.params;
                base[c] = Some((m.cluster, m.version));
            }
            if ack.refine_due {
                let out = server.refine_now((round * n + c) as f64)?;
                if !out.actions.is_empty() {
                    println!("refinement: {:?}", out.actions);
                }
            }
        }
    }
    for b in server.branches() {
        println!("branch {} v{} members {:?}", b.state.id, b.state.version, b.state.members);
    }
    println!("ground truth {:?}", pop.ground_truth);
    println!("partition intact: {}, Q_max {}", server.check_partition(), server.staleness_metrics().q_max);
    Ok(())
}
