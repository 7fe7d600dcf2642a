use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, OnceLock};

use super::{mix_seed, Direction, Env, EventKind, EventQueue, RunTrace};
use crate::broadcast::{pretrain, BroadcastMode, RnnPredictor};
use crate::config::ExperimentConfig;
use crate::coordination::{PullResponse, PushRequest, Server, VersionedModel};
use crate::error::Result;
use crate::model::ParamVector;

enum Payload {
    Train(usize),
    Upload(PushRequest),
    Deliver(usize, VersionedModel),
    Pull(usize, PullResponse),
    Refine,
    Drift(usize),
}

struct ClientSim {
    start: ParamVector,
    start_base: Option<(usize, u64)>,
    latest: ParamVector,
    latest_base: Option<(usize, u64)>,
}

impl ClientSim {
    fn receive(&mut self, m: &VersionedModel) {
        let newer = match self.latest_base {
            Some((c, v)) => c != m.cluster || m.version > v,
            None => true,
        };
        if newer {
            self.latest = m.params.clone();
            self.latest_base = Some((m.cluster, m.version));
        }
    }
}

/// Run the asynchronous personalized protocol. In predictor mode the
/// predictor is first pretrained on states harvested from an oracle-driven
/// warm-up run.
pub fn run_apfl(config: &ExperimentConfig) -> Result<RunTrace> {
    let predictor = if config.apfl.broadcast_mode == BroadcastMode::Predictor && config.apfl.pretrain_pairs > 0 {
        pretrained_predictor(config)?
    } else {
        RnnPredictor::new(config.predictor_config(), mix_seed(config.seed(), 0x4e4e))
    };
    Ok(simulate(config, predictor, None)?.0)
}

/// Run with the oracle deciding and return the labeled predictor states
/// resolved along the way, stopping early once `limit` are collected.
pub fn run_apfl_harvest(config: &ExperimentConfig, limit: Option<usize>) -> Result<(RunTrace, Vec<(Vec<f64>, bool)>)> {
    let cfg = config.clone().with_broadcast_mode(BroadcastMode::Oracle);
    let predictor = RnnPredictor::new(cfg.predictor_config(), mix_seed(cfg.seed(), 0x4e4e));
    simulate(&cfg, predictor, limit)
}

/// Predictor pretrained on a warm-up run with seed `seed + 1`. Results are
/// memoised per configuration within the process.
pub fn pretrained_predictor(config: &ExperimentConfig) -> Result<RnnPredictor> {
    static CACHE: OnceLock<Mutex<HashMap<String, RnnPredictor>>> = OnceLock::new();
    let mut warm = config.clone().with_seed(config.seed().wrapping_add(1));
    warm.drift.clear();
    warm.stop.stop_at_target = false;
    let key = format!("{warm:?}");
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().expect("cache lock").get(&key) {
        return Ok(p.clone());
    }
    let want = config.apfl.pretrain_pairs;
    let mut pairs = Vec::new();
    let mut budget = warm.stop.time_budget;
    for _ in 0..6 {
        warm.stop.time_budget = budget;
        pairs = run_apfl_harvest(&warm, Some(want))?.1;
        if pairs.len() >= want {
            break;
        }
        budget *= 2.0;
    }
    pairs.truncate(want);
    let mut predictor = RnnPredictor::new(config.predictor_config(), mix_seed(config.seed(), 0x4e4e));
    pretrain(&mut predictor, &pairs, config.apfl.pretrain_epochs, 32, mix_seed(config.seed(), 0x9a7))?;
    cache.lock().expect("cache lock").insert(key, predictor.clone());
    Ok(predictor)
}

fn simulate(
    config: &ExperimentConfig,
    predictor: RnnPredictor,
    harvest_limit: Option<usize>,
) -> Result<(RunTrace, Vec<(Vec<f64>, bool)>)> {
    let mut env = Env::new(config)?;
    let n = env.clients();
    let mut server = Server::new(
        env.mlp,
        config.server_config()?,
        env.train.clone(),
        env.probe.clone(),
        predictor,
    )?;
    let mut queue: EventQueue<Payload> = EventQueue::new();
    let mut clients: Vec<ClientSim> = (0..n)
        .map(|_| ClientSim {
            start: env.init.clone(),
            start_base: None,
            latest: env.init.clone(),
            latest_base: None,
        })
        .collect();
    // upload params in flight, keyed by client, with arrival order
    let mut inflight: BTreeMap<usize, (f64, u64, ParamVector)> = BTreeMap::new();
    let mut refine_pending = false;
    let mut refinement_times = Vec::new();
    let epochs = config.model.local_epochs;

    for c in 0..n {
        env.evaluate(c, 0.0, &env.init.clone());
    }
    for c in 0..n {
        let dt = env.compute_time(c, epochs);
        queue.schedule(dt, EventKind::TrainingComplete, Payload::Train(c));
    }
    for (i, d) in config.drift.iter().enumerate() {
        queue.schedule(d.trigger_time, EventKind::DriftTrigger, Payload::Drift(i));
    }

    let budget = config.stop.time_budget;
    let mut now = 0.0;
    while let Some(ev) = queue.pop() {
        if ev.at > budget {
            break;
        }
        now = ev.at;
        match ev.payload {
            Payload::Train(c) => {
                let mode = server.training_mode(c)?;
                let st = &clients[c];
                let start = st.start.clone();
                let trained = env.train(c, &start, mode, epochs)?;
                let st = &clients[c];
                let (params, base) = if st.latest_base != st.start_base {
                    (st.latest.add(&trained.sub(&st.start)?)?, st.latest_base)
                } else {
                    (trained, st.start_base)
                };
                let req = PushRequest {
                    client: c,
                    params: params.clone(),
                    base_cluster: base.map(|b| b.0),
                    base_version: base.map_or(0, |b| b.1),
                };
                let at = now + env.up_time();
                let seq = queue.schedule(at, EventKind::UploadArrive, Payload::Upload(req));
                inflight.insert(c, (at, seq, params));
                let cluster = server.client(c)?.cluster;
                env.row(now, EventKind::TrainingComplete, Some(c), cluster, None, server.cluster_count());
            }
            Payload::Upload(req) => {
                let c = req.client;
                inflight.remove(&c);
                env.transfer(now, c, Direction::Up);
                let look = |_cluster: usize, members: &std::collections::BTreeSet<usize>| {
                    inflight
                        .iter()
                        .filter(|(k, _)| members.contains(k))
                        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.1 .1.cmp(&b.1 .1)))
                        .map(|(_, v)| v.2.clone())
                };
                let ack = server.push(&req, now, &look)?;
                let branch = server.branch(ack.cluster).expect("acked branch exists");
                let center = branch.state.center.clone();
                let members: Vec<usize> = branch.state.members.iter().copied().collect();
                for &m in &members {
                    env.evaluate(m, now, &center);
                }
                if !ack.broadcast_to.is_empty() {
                    let model = VersionedModel {
                        params: center.clone(),
                        cluster: ack.cluster,
                        version: ack.version,
                        produced_at: now,
                    };
                    let at = now + env.down_time();
                    for &m in &ack.broadcast_to {
                        queue.schedule(at, EventKind::BroadcastDeliver, Payload::Deliver(m, model.clone()));
                    }
                }
                let resp = server.pull(c)?;
                let at = match resp {
                    PullResponse::Model(_) => now + env.down_time(),
                    PullResponse::NoChange => now,
                };
                queue.schedule(at, EventKind::PullPoll, Payload::Pull(c, resp));
                if ack.refine_due && !refine_pending {
                    refine_pending = true;
                    queue.schedule(now, EventKind::RefinementTick, Payload::Refine);
                }
                env.row(now, EventKind::UploadArrive, Some(c), Some(ack.cluster), Some(ack.staleness), server.cluster_count());
                if harvest_limit.is_some_and(|l| server.harvested().len() >= l) {
                    break;
                }
            }
            Payload::Deliver(m, model) => {
                env.transfer(now, m, Direction::Down);
                clients[m].receive(&model);
                env.row(now, EventKind::BroadcastDeliver, Some(m), Some(model.cluster), None, server.cluster_count());
            }
            Payload::Pull(c, resp) => {
                if let PullResponse::Model(m) = &resp {
                    env.transfer(now, c, Direction::Down);
                    clients[c].receive(m);
                }
                let st = &mut clients[c];
                st.start = st.latest.clone();
                st.start_base = st.latest_base;
                let dt = env.compute_time(c, epochs);
                queue.schedule(now + dt, EventKind::TrainingComplete, Payload::Train(c));
                let cluster = server.client(c)?.cluster;
                env.row(now, EventKind::PullPoll, Some(c), cluster, None, server.cluster_count());
            }
            Payload::Refine => {
                refine_pending = false;
                let outcome = server.refine_now(now)?;
                refinement_times.push(now);
                let at = now + env.down_time();
                for (cluster, recipients) in &outcome.broadcasts {
                    let b = server.branch(*cluster).expect("merged branch exists");
                    let model = VersionedModel {
                        params: b.state.center.clone(),
                        cluster: *cluster,
                        version: b.state.version,
                        produced_at: now,
                    };
                    for &m in recipients {
                        queue.schedule(at, EventKind::BroadcastDeliver, Payload::Deliver(m, model.clone()));
                    }
                }
                for c in 0..n {
                    let model = server.model_for(c)?.cloned().unwrap_or_else(|| clients[c].latest.clone());
                    env.evaluate(c, now, &model);
                }
                env.row(now, EventKind::RefinementTick, None, None, None, server.cluster_count());
            }
            Payload::Drift(i) => {
                let c = env.drift(i)?;
                server.set_client_data(c, env.train[c].clone())?;
                let model = server.model_for(c)?.cloned().unwrap_or_else(|| clients[c].latest.clone());
                env.evaluate(c, now, &model);
                let cluster = server.client(c)?.cluster;
                env.row(now, EventKind::DriftTrigger, Some(c), cluster, None, server.cluster_count());
            }
        }
        if env.reached_target() {
            break;
        }
    }

    let assignments = server.clients().iter().map(|r| r.cluster).collect();
    let harvested = server.harvested().to_vec();
    let trace = env.finish(
        "apfl",
        now,
        server.staleness_metrics(),
        server.ledger().len(),
        server.accepted_pushes(),
        assignments,
        refinement_times,
    );
    Ok((trace, harvested))
}
