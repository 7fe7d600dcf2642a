//! Reference protocols on the same simulator, data and devices:
//! synchronous FedAvg, staleness-decayed asynchronous averaging,
//! synchronous clustered training and isolated local training.

use std::collections::BTreeMap;

use crate::clustering::batch_cluster;
use crate::config::{ExperimentConfig, Protocol};
use crate::coordination::StalenessLedger;
use crate::error::Result;
use crate::model::{ParamVector, TrainMode};
use crate::sim::{Direction, Env, EventKind, EventQueue, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    SyncFedavg,
    AsyncDecay,
    SyncClustered,
    Standalone,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::SyncFedavg, Self::AsyncDecay, Self::SyncClustered, Self::Standalone];

    pub fn protocol(self) -> Protocol {
        match self {
            Self::SyncFedavg => Protocol::SyncFedavg,
            Self::AsyncDecay => Protocol::AsyncDecay,
            Self::SyncClustered => Protocol::SyncClustered,
            Self::Standalone => Protocol::Standalone,
        }
    }

    pub fn tag(self) -> &'static str {
        self.protocol().as_str()
    }

    pub fn run(self, config: &ExperimentConfig) -> Result<RunTrace> {
        match self {
            Self::SyncFedavg => run_sync_fedavg(config),
            Self::AsyncDecay => run_async_decay(config),
            Self::SyncClustered => run_sync_clustered(config),
            Self::Standalone => run_standalone(config),
        }
    }
}

/// Mixing weight of an update with the given staleness.
pub fn decay_weight(alpha0: f64, exponent: f64, staleness: u64) -> f64 {
    alpha0 * ((staleness + 1) as f64).powf(-exponent)
}

enum Msg {
    Train(usize),
    Upload(usize, ParamVector, u64),
    Deliver(usize, ParamVector, u64),
    Drift(usize),
}

fn schedule_drifts(env: &Env, queue: &mut EventQueue<Msg>) {
    for (i, d) in env.config.drift.iter().enumerate() {
        queue.schedule(d.trigger_time, EventKind::DriftTrigger, Msg::Drift(i));
    }
}

/// Group barrier rounds shared by sync-fedavg and sync-clustered: each group
/// trains from its model, waits for every member's upload, averages
/// uniformly and sends the result to all members at once.
struct Barrier {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    models: Vec<ParamVector>,
    versions: Vec<u64>,
    pending: Vec<BTreeMap<usize, ParamVector>>,
}

impl Barrier {
    fn new(groups: Vec<Vec<usize>>, models: Vec<ParamVector>, n: usize) -> Self {
        let mut group_of = vec![0; n];
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                group_of[m] = g;
            }
        }
        let k = groups.len();
        Self { groups, group_of, models, versions: vec![0; k], pending: vec![BTreeMap::new(); k] }
    }

    /// Record an upload; returns the group if its barrier just completed.
    fn arrive(&mut self, client: usize, params: ParamVector) -> Result<Option<usize>> {
        let g = self.group_of[client];
        self.pending[g].insert(client, params);
        if self.pending[g].len() < self.groups[g].len() {
            return Ok(None);
        }
        let uploads = std::mem::take(&mut self.pending[g]);
        self.models[g] = ParamVector::mean(uploads.values())?;
        self.versions[g] += 1;
        Ok(Some(g))
    }
}

pub fn run_sync_fedavg(config: &ExperimentConfig) -> Result<RunTrace> {
    let mut env = Env::new(config)?;
    let n = env.clients();
    let barrier = Barrier::new(vec![(0..n).collect()], vec![env.init.clone()], n);
    let (now, ledger, barrier) = run_barrier(&mut env, barrier, 0.0, None)?;
    let assignments = barrier.group_of.iter().map(|&g| Some(g)).collect();
    Ok(env.finish(Protocol::SyncFedavg.as_str(), now, ledger.metrics(), ledger.len(), ledger.len(), assignments, vec![]))
}

/// Event loop for barrier protocols. All clients start training at
/// `start_at` from their group's model. `queue` may carry events left over
/// from a previous phase.
fn run_barrier(
    env: &mut Env,
    mut barrier: Barrier,
    start_at: f64,
    queue: Option<EventQueue<Msg>>,
) -> Result<(f64, StalenessLedger, Barrier)> {
    let n = env.clients();
    let epochs = env.config.model.local_epochs;
    let mut queue = queue.unwrap_or_else(|| {
        let mut q = EventQueue::new();
        schedule_drifts(env, &mut q);
        q
    });
    let mut ledger = StalenessLedger::new();
    let mut start: Vec<(ParamVector, u64)> = (0..n).map(|c| {
        let g = barrier.group_of[c];
        (barrier.models[g].clone(), barrier.versions[g])
    }).collect();
    if start_at == 0.0 {
        for c in 0..n {
            let m = start[c].0.clone();
            env.evaluate(c, 0.0, &m);
        }
    }
    for c in 0..n {
        let dt = env.compute_time(c, epochs);
        queue.schedule(start_at + dt, EventKind::TrainingComplete, Msg::Train(c));
    }
    let clusters = barrier.groups.len();
    let budget = env.config.stop.time_budget;
    let mut now = start_at;
    while let Some(ev) = queue.pop() {
        if ev.at > budget {
            break;
        }
        now = ev.at;
        match ev.payload {
            Msg::Train(c) => {
                let from = start[c].0.clone();
                let trained = env.train(c, &from, TrainMode::Full, epochs)?;
                let at = now + env.up_time();
                queue.schedule(at, EventKind::UploadArrive, Msg::Upload(c, trained, start[c].1));
                env.row(now, EventKind::TrainingComplete, Some(c), Some(barrier.group_of[c]), None, clusters);
            }
            Msg::Upload(c, params, base) => {
                env.transfer(now, c, Direction::Up);
                let g = barrier.group_of[c];
                let staleness = barrier.versions[g] - base;
                ledger.record(staleness);
                if let Some(g) = barrier.arrive(c, params)? {
                    let model = barrier.models[g].clone();
                    let version = barrier.versions[g];
                    let at = now + env.down_time();
                    for &m in &barrier.groups[g] {
                        env.evaluate(m, now, &model);
                        queue.schedule(at, EventKind::BroadcastDeliver, Msg::Deliver(m, model.clone(), version));
                    }
                }
                env.row(now, EventKind::UploadArrive, Some(c), Some(g), Some(staleness), clusters);
            }
            Msg::Deliver(c, model, version) => {
                env.transfer(now, c, Direction::Down);
                start[c] = (model, version);
                let dt = env.compute_time(c, epochs);
                queue.schedule(now + dt, EventKind::TrainingComplete, Msg::Train(c));
                env.row(now, EventKind::BroadcastDeliver, Some(c), Some(barrier.group_of[c]), None, clusters);
            }
            Msg::Drift(i) => {
                let c = env.drift(i)?;
                let m = barrier.models[barrier.group_of[c]].clone();
                env.evaluate(c, now, &m);
                env.row(now, EventKind::DriftTrigger, Some(c), Some(barrier.group_of[c]), None, clusters);
            }
        }
        if env.reached_target() {
            break;
        }
    }
    Ok((now, ledger, barrier))
}

pub fn run_async_decay(config: &ExperimentConfig) -> Result<RunTrace> {
    let mut env = Env::new(config)?;
    let n = env.clients();
    let epochs = config.model.local_epochs;
    let (alpha0, exponent) = (config.baselines.alpha0, config.baselines.decay_exponent);
    let mut queue = EventQueue::new();
    schedule_drifts(&env, &mut queue);
    let mut global = env.init.clone();
    let mut version = 0u64;
    let mut start: Vec<(ParamVector, u64)> = vec![(global.clone(), 0); n];
    let mut ledger = StalenessLedger::new();
    for c in 0..n {
        env.evaluate(c, 0.0, &global);
        let dt = env.compute_time(c, epochs);
        queue.schedule(dt, EventKind::TrainingComplete, Msg::Train(c));
    }
    let budget = config.stop.time_budget;
    let mut now = 0.0;
    while let Some(ev) = queue.pop() {
        if ev.at > budget {
            break;
        }
        now = ev.at;
        match ev.payload {
            Msg::Train(c) => {
                let from = start[c].0.clone();
                let trained = env.train(c, &from, TrainMode::Full, epochs)?;
                queue.schedule(now + env.up_time(), EventKind::UploadArrive, Msg::Upload(c, trained, start[c].1));
                env.row(now, EventKind::TrainingComplete, Some(c), Some(0), None, 1);
            }
            Msg::Upload(c, params, base) => {
                env.transfer(now, c, Direction::Up);
                let staleness = version - base;
                ledger.record(staleness);
                global = global.mix(&params, decay_weight(alpha0, exponent, staleness))?;
                version += 1;
                for m in 0..n {
                    env.evaluate(m, now, &global);
                }
                queue.schedule(now + env.down_time(), EventKind::PullPoll, Msg::Deliver(c, global.clone(), version));
                env.row(now, EventKind::UploadArrive, Some(c), Some(0), Some(staleness), 1);
            }
            Msg::Deliver(c, model, v) => {
                env.transfer(now, c, Direction::Down);
                start[c] = (model, v);
                let dt = env.compute_time(c, epochs);
                queue.schedule(now + dt, EventKind::TrainingComplete, Msg::Train(c));
                env.row(now, EventKind::PullPoll, Some(c), Some(0), None, 1);
            }
            Msg::Drift(i) => {
                let c = env.drift(i)?;
                env.evaluate(c, now, &global);
                env.row(now, EventKind::DriftTrigger, Some(c), Some(0), None, 1);
            }
        }
        if env.reached_target() {
            break;
        }
    }
    let assignments = vec![Some(0); n];
    Ok(env.finish(Protocol::AsyncDecay.as_str(), now, ledger.metrics(), ledger.len(), ledger.len(), assignments, vec![]))
}

/// Local warm-up, one batch clustering of all uploaded models, then
/// synchronous rounds inside each cluster.
pub fn run_sync_clustered(config: &ExperimentConfig) -> Result<RunTrace> {
    let mut env = Env::new(config)?;
    let n = env.clients();
    let warm = config.baselines.warmup_epochs.max(1);
    let mut queue = EventQueue::new();
    schedule_drifts(&env, &mut queue);
    for c in 0..n {
        let init = env.init.clone();
        env.evaluate(c, 0.0, &init);
        let dt = env.compute_time(c, warm);
        queue.schedule(dt, EventKind::TrainingComplete, Msg::Train(c));
    }
    let mut uploads: BTreeMap<usize, ParamVector> = BTreeMap::new();
    let budget = config.stop.time_budget;
    let mut now = 0.0;
    let mut clustered_at = None;
    // warm-up phase
    while let Some(ev) = queue.pop() {
        if ev.at > budget {
            break;
        }
        now = ev.at;
        match ev.payload {
            Msg::Train(c) => {
                let init = env.init.clone();
                let trained = env.train(c, &init, TrainMode::Full, warm)?;
                queue.schedule(now + env.up_time(), EventKind::UploadArrive, Msg::Upload(c, trained, 0));
                env.row(now, EventKind::TrainingComplete, Some(c), None, None, 0);
            }
            Msg::Upload(c, params, _) => {
                env.transfer(now, c, Direction::Up);
                uploads.insert(c, params);
                env.row(now, EventKind::UploadArrive, Some(c), None, Some(0), 0);
                if uploads.len() == n {
                    clustered_at = Some(now);
                    break;
                }
            }
            Msg::Drift(i) => {
                let c = env.drift(i)?;
                let init = env.init.clone();
                env.evaluate(c, now, &init);
                env.row(now, EventKind::DriftTrigger, Some(c), None, None, 0);
            }
            Msg::Deliver(..) => unreachable!("no deliveries during warm-up"),
        }
    }
    let Some(t0) = clustered_at else {
        let warmup_pushes = uploads.len();
        return Ok(env.finish(
            Protocol::SyncClustered.as_str(),
            now,
            StalenessLedger::new().metrics(),
            warmup_pushes,
            warmup_pushes,
            vec![None; n],
            vec![],
        ));
    };
    let models: Vec<ParamVector> = uploads.into_values().collect();
    let max_clusters = config.apfl.hm * config.apfl.c;
    let labels = batch_cluster(&env.mlp, &models, &env.probe, max_clusters, config.baselines.kl_gap)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (c, &l) in labels.iter().enumerate() {
        groups[l].push(c);
    }
    let centers = groups
        .iter()
        .map(|g| ParamVector::mean(g.iter().map(|&c| &models[c])))
        .collect::<Result<Vec<_>>>()?;
    let barrier = Barrier::new(groups, centers, n);
    // the first cluster models go out as a broadcast at t0
    let down = env.down_time();
    for c in 0..n {
        let m = barrier.models[barrier.group_of[c]].clone();
        env.evaluate(c, t0, &m);
        env.transfer(t0 + down, c, Direction::Down);
    }
    let (now, mut ledger, barrier) = run_barrier(&mut env, barrier, t0 + down, Some(queue))?;
    let warm_ledger = n;
    let mut merged = StalenessLedger::new();
    for _ in 0..warm_ledger {
        merged.record(0);
    }
    for &s in ledger.values() {
        merged.record(s);
    }
    ledger = merged;
    let assignments = barrier.group_of.iter().map(|&g| Some(g)).collect();
    Ok(env.finish(Protocol::SyncClustered.as_str(), now, ledger.metrics(), ledger.len(), ledger.len(), assignments, vec![]))
}

pub fn run_standalone(config: &ExperimentConfig) -> Result<RunTrace> {
    let mut env = Env::new(config)?;
    let n = env.clients();
    let epochs = config.model.local_epochs;
    let mut queue = EventQueue::new();
    schedule_drifts(&env, &mut queue);
    let mut local: Vec<ParamVector> = vec![env.init.clone(); n];
    for c in 0..n {
        env.evaluate(c, 0.0, &local[c].clone());
        let dt = env.compute_time(c, epochs);
        queue.schedule(dt, EventKind::TrainingComplete, Msg::Train(c));
    }
    let budget = config.stop.time_budget;
    let mut now = 0.0;
    while let Some(ev) = queue.pop() {
        if ev.at > budget {
            break;
        }
        now = ev.at;
        match ev.payload {
            Msg::Train(c) => {
                local[c] = env.train(c, &local[c].clone(), TrainMode::Full, epochs)?;
                env.evaluate(c, now, &local[c].clone());
                let dt = env.compute_time(c, epochs);
                queue.schedule(now + dt, EventKind::TrainingComplete, Msg::Train(c));
                env.row(now, EventKind::TrainingComplete, Some(c), Some(c), None, n);
            }
            Msg::Drift(i) => {
                let c = env.drift(i)?;
                env.evaluate(c, now, &local[c].clone());
                env.row(now, EventKind::DriftTrigger, Some(c), Some(c), None, n);
            }
            Msg::Upload(..) | Msg::Deliver(..) => unreachable!("standalone clients never communicate"),
        }
        if env.reached_target() {
            break;
        }
    }
    let assignments = (0..n).map(Some).collect();
    Ok(env.finish(Protocol::Standalone.as_str(), now, StalenessLedger::new().metrics(), 0, 0, assignments, vec![]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_examples() {
        assert_eq!(decay_weight(0.6, 0.5, 0), 0.6);
        assert!((decay_weight(0.6, 0.5, 3) - 0.3).abs() < 1e-15);
    }

    fn small(protocol: Protocol) -> ExperimentConfig {
        let mut cfg = crate::config::scenario_config("C").unwrap().with_seed(2).with_protocol(protocol);
        cfg.stop.time_budget = 40.0;
        cfg
    }

    #[test]
    fn barrier_rounds_are_never_stale() {
        for kind in [BaselineKind::SyncFedavg, BaselineKind::SyncClustered] {
            let trace = kind.run(&small(kind.protocol())).unwrap();
            assert_eq!(trace.staleness.q_max, 0, "{}", kind.tag());
            assert_eq!(trace.ledger_entries, trace.accepted_pushes);
        }
    }

    #[test]
    fn clustered_baseline_respects_the_cluster_cap() {
        let mut cfg = small(Protocol::SyncClustered);
        // long enough for the warm-up to finish on the slowest device
        cfg.stop.time_budget = 200.0;
        let cap = cfg.apfl.hm * cfg.apfl.c;
        let trace = run_sync_clustered(&cfg).unwrap();
        let groups: std::collections::BTreeSet<_> = trace.assignments.iter().flatten().collect();
        assert!(!groups.is_empty() && groups.len() <= cap);
        assert!(trace.rows.iter().all(|r| r.cluster_count <= cap));
    }

    #[test]
    fn async_decay_sees_stale_pushes_on_mixed_devices() {
        let trace = run_async_decay(&small(Protocol::AsyncDecay)).unwrap();
        assert!(trace.accepted_pushes > 0);
        assert!(trace.staleness.q_max > 0);
    }

    #[test]
    fn standalone_trains_every_client() {
        let trace = run_standalone(&small(Protocol::Standalone)).unwrap();
        assert!(trace.local_rounds.iter().all(|&r| r > 0));
        assert_eq!(trace.accepted_pushes, 0);
    }
}
