//! The asynchronous server: one versioned branch per cluster, push/pull,
//! per-branch aggregation, refinement and staleness accounting.
//!
//! Every method takes `&mut self`, so a branch is never written twice at
//! once. A networked port would guard each branch with a read-write lock and
//! take the two locks of a merge in ascending cluster-id order.

mod ledger;
mod messages;

use std::collections::{BTreeMap, BTreeSet};

pub use ledger::{StalenessLedger, StalenessMetrics};
pub use messages::{PullResponse, PushAck, PushRequest, VersionedModel};

use crate::broadcast::{BroadcastMode, ClusterBroadcast, RnnPredictor};
use crate::clustering::{
    compute_feedback, expand_cluster, init_or_assign, merge_centers, refine, ClientId, ClusterId, ClusterState,
    FeedbackReport, RefineParams, RefinementActions,
};
use crate::error::{Error, Result};
use crate::model::{l1_distance, LocalDataset, Mlp, ParamVector, SgdConfig, TrainMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub refine: RefineParams,
    /// Mixing rate of the in-branch aggregation.
    pub eta: f64,
    /// Aggregations of one branch between refinements.
    pub refine_period: usize,
    pub base_k: usize,
    pub mode: BroadcastMode,
    /// Fine-tune the predictor online while it drives decisions.
    pub online_predictor: bool,
    /// Local pass used for the posterior direction of a merge.
    pub merge_pass: SgdConfig,
    /// Last-layer adaptation of a freshly expanded center.
    pub adapt: SgdConfig,
    pub seed: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            refine: RefineParams::default(),
            eta: 0.5,
            refine_period: 10,
            base_k: 10,
            mode: BroadcastMode::Predictor,
            online_predictor: true,
            merge_pass: SgdConfig::default(),
            adapt: SgdConfig { epochs: 5, ..SgdConfig::default() },
            seed: 0,
        }
    }
}

/// Server-side view of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub id: ClientId,
    pub cluster: Option<ClusterId>,
    /// Head last delivered to the client, by pull or broadcast.
    pub base_cluster: Option<ClusterId>,
    pub base_version: u64,
    /// Branch version when the client was moved into its current cluster.
    pub joined_version: u64,
    /// Center change caused by the client's latest upload.
    pub last_change: f64,
}

/// One branch: the cluster plus its broadcast state.
#[derive(Debug, Clone)]
pub struct Branch {
    pub state: ClusterState,
    pub broadcast: ClusterBroadcast,
    pub updated_at: f64,
    since_refine: usize,
    last_uploader: Option<ClientId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefinementOutcome {
    pub actions: RefinementActions,
    /// Merged branches and who gets the merged center now.
    pub broadcasts: Vec<(ClusterId, Vec<ClientId>)>,
    /// New branches created by expansion, with their parents.
    pub created: Vec<(ClusterId, ClusterId)>,
}

pub struct Server {
    mlp: Mlp,
    config: ServerConfig,
    data: Vec<LocalDataset>,
    probe: LocalDataset,
    clients: Vec<ClientRecord>,
    branches: BTreeMap<ClusterId, Branch>,
    next_id: ClusterId,
    ledger: StalenessLedger,
    base_predictor: RnnPredictor,
    pushes: usize,
    refinements: usize,
    harvested: Vec<(Vec<f64>, bool)>,
}

impl Server {
    /// `data[i]` is client `i`'s training set, used server-side only for
    /// feedback, merge posterior passes and expansion adaptation.
    pub fn new(
        mlp: Mlp,
        config: ServerConfig,
        data: Vec<LocalDataset>,
        probe: LocalDataset,
        base_predictor: RnnPredictor,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.eta) {
            return Err(Error::invalid(format!("eta must lie in [0, 1], got {}", config.eta)));
        }
        if config.refine.c == 0 {
            return Err(Error::invalid("C must be at least 1"));
        }
        let clients = (0..data.len())
            .map(|id| ClientRecord {
                id,
                cluster: None,
                base_cluster: None,
                base_version: 0,
                joined_version: 0,
                last_change: 0.0,
            })
            .collect();
        Ok(Self {
            mlp,
            config,
            data,
            probe,
            clients,
            branches: BTreeMap::new(),
            next_id: 0,
            ledger: StalenessLedger::new(),
            base_predictor,
            pushes: 0,
            refinements: 0,
            harvested: Vec::new(),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn client(&self, id: ClientId) -> Result<&ClientRecord> {
        self.clients.get(id).ok_or(Error::UnknownClient(id))
    }

    pub fn clients(&self) -> &[ClientRecord] {
        &self.clients
    }

    pub fn branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.values()
    }

    pub fn branch(&self, id: ClusterId) -> Option<&Branch> {
        self.branches.get(&id)
    }

    pub fn cluster_states(&self) -> Vec<ClusterState> {
        self.branches.values().map(|b| b.state.clone()).collect()
    }

    pub fn cluster_count(&self) -> usize {
        self.branches.len()
    }

    pub fn ledger(&self) -> &StalenessLedger {
        &self.ledger
    }

    pub fn staleness_metrics(&self) -> StalenessMetrics {
        self.ledger.metrics()
    }

    pub fn accepted_pushes(&self) -> usize {
        self.pushes
    }

    pub fn refinements(&self) -> usize {
        self.refinements
    }

    /// Labeled predictor states resolved so far, in order.
    pub fn harvested(&self) -> &[(Vec<f64>, bool)] {
        &self.harvested
    }

    /// Model the client currently personalizes against.
    pub fn model_for(&self, client: ClientId) -> Result<Option<&ParamVector>> {
        let rec = self.client(client)?;
        Ok(rec.cluster.map(|c| &self.branches[&c].state.center))
    }

    pub fn training_mode(&self, client: ClientId) -> Result<TrainMode> {
        let rec = self.client(client)?;
        let partial = rec
            .cluster
            .is_some_and(|c| self.branches[&c].state.partial_ft_members.contains(&client));
        Ok(if partial { TrainMode::LastLayerOnly } else { TrainMode::Full })
    }

    /// Replace a client's training data after a distribution shift.
    pub fn set_client_data(&mut self, client: ClientId, data: LocalDataset) -> Result<()> {
        let slot = self.data.get_mut(client).ok_or(Error::UnknownClient(client))?;
        *slot = data;
        Ok(())
    }

    /// Accept an upload. `lookahead` returns the next in-flight upload for a
    /// branch's members, if any; only oracle broadcast modes use it.
    pub fn push(
        &mut self,
        req: &PushRequest,
        now: f64,
        lookahead: &dyn Fn(ClusterId, &BTreeSet<ClientId>) -> Option<ParamVector>,
    ) -> Result<PushAck> {
        let client = req.client;
        let rec = self.client(client)?.clone();
        if !req.params.is_finite() {
            return Err(Error::invalid(format!("client {client} uploaded non-finite parameters")));
        }
        if let Some(b) = self.branches.values().next() {
            b.state.center.check_shape(&req.params)?;
        }

        let (cluster, created, staleness) = match rec.cluster {
            Some(c) => {
                let head = self.branches[&c].state.version;
                let from = if req.base_cluster == Some(c) {
                    req.base_version.max(rec.joined_version)
                } else {
                    rec.joined_version
                };
                (c, false, head.saturating_sub(from))
            }
            None => {
                let mut states = self.cluster_states();
                let before = states.len();
                let id = init_or_assign(&mut states, &mut self.next_id, client, &req.params, self.config.refine.c, now)?;
                let created = states.len() > before;
                if created {
                    let predictor = self.base_predictor.clone();
                    let state = states.pop().expect("new cluster");
                    let broadcast = ClusterBroadcast::new(&state.center, predictor, self.config.base_k, 1);
                    self.branches.insert(
                        id,
                        Branch { state, broadcast, updated_at: now, since_refine: 0, last_uploader: None },
                    );
                } else {
                    self.branches.get_mut(&id).expect("branch").state.members.insert(client);
                }
                let rec = &mut self.clients[client];
                rec.cluster = Some(id);
                rec.joined_version = self.branches[&id].state.version;
                (id, created, 0)
            }
        };

        let eta = self.config.eta;
        let mode = self.config.mode;
        let online = self.config.online_predictor;
        let branch = self.branches.get_mut(&cluster).expect("branch exists");
        let prev = branch.state.center.clone();
        let next = prev.mix(&req.params, eta)?;
        let change = l1_distance(&prev, &next)?;
        branch.state.set_center(next.clone());
        branch.updated_at = now;
        branch.since_refine += 1;
        branch.last_uploader = Some(client);
        self.ledger.record(staleness);
        self.pushes += 1;

        let look = if matches!(mode, BroadcastMode::Oracle | BroadcastMode::OracleFlipped) {
            lookahead(cluster, &branch.state.members).map(|u| next.mix(&u, eta)).transpose()?
        } else {
            None
        };
        let decision = branch.broadcast.on_aggregation(
            &prev,
            &next,
            branch.state.members.len(),
            mode,
            look.as_ref(),
            online,
            now,
        )?;
        if let Some(pair) = decision.resolved {
            self.harvested.push(pair);
        }
        let version = branch.state.version;
        let refine_due = branch.since_refine >= self.config.refine_period;
        let broadcast_to: Vec<ClientId> = if decision.broadcast {
            branch.state.members.iter().copied().filter(|&m| m != client).collect()
        } else {
            Vec::new()
        };
        for &m in &broadcast_to {
            self.clients[m].base_cluster = Some(cluster);
            self.clients[m].base_version = version;
        }
        self.clients[client].last_change = change;
        Ok(PushAck { cluster, version, staleness, created_cluster: created, broadcast_to, refine_due, change })
    }

    /// Head of the client's branch if it is newer than what the client holds.
    pub fn pull(&mut self, client: ClientId) -> Result<PullResponse> {
        let rec = self.client(client)?;
        let cluster = rec.cluster.ok_or(Error::Unassigned(client))?;
        let branch = &self.branches[&cluster];
        if rec.base_cluster == Some(cluster) && branch.state.version <= rec.base_version {
            return Ok(PullResponse::NoChange);
        }
        let model = VersionedModel {
            params: branch.state.center.clone(),
            cluster,
            version: branch.state.version,
            produced_at: branch.updated_at,
        };
        let rec = &mut self.clients[client];
        rec.base_cluster = Some(cluster);
        rec.base_version = model.version;
        Ok(PullResponse::Model(model))
    }

    /// Feedback of every assigned client on its branch center.
    pub fn collect_feedback(&self, now: f64) -> Result<Vec<FeedbackReport>> {
        let mut out = Vec::new();
        for rec in &self.clients {
            let Some(cluster) = rec.cluster else { continue };
            let data = &self.data[rec.id];
            if data.is_empty() {
                continue;
            }
            let fb = compute_feedback(&self.mlp, &self.branches[&cluster].state.center, data)?;
            out.push(FeedbackReport { client: rec.id, cluster, score: fb.score, chi2: fb.chi2, computed_at: now });
        }
        Ok(out)
    }

    /// Refinement actions for the current state.
    pub fn plan_refinement(&self, feedback: &[FeedbackReport]) -> Result<RefinementActions> {
        refine(&self.cluster_states(), feedback, &self.config.refine, &self.mlp, &self.probe)
    }

    /// Collect feedback, plan and apply one refinement.
    pub fn refine_now(&mut self, now: f64) -> Result<RefinementOutcome> {
        let feedback = self.collect_feedback(now)?;
        let actions = self.plan_refinement(&feedback)?;
        self.apply_refinement(actions, &feedback, now)
    }

    /// Execute merges, then expansions. Actions naming a cluster that no
    /// longer exists are rejected as a whole with a retriable error.
    pub fn apply_refinement(
        &mut self,
        actions: RefinementActions,
        feedback: &[FeedbackReport],
        now: f64,
    ) -> Result<RefinementOutcome> {
        for id in actions.merges.iter().flat_map(|m| [m.main, m.aux]).chain(actions.expansions.iter().map(|e| e.parent)) {
            if !self.branches.contains_key(&id) {
                return Err(Error::StaleAction(format!("cluster {id} no longer exists")));
            }
        }
        for e in &actions.expansions {
            if !e.members.is_subset(&self.branches[&e.parent].state.members) {
                return Err(Error::StaleAction(format!("expansion members left cluster {}", e.parent)));
            }
        }
        self.refinements += 1;
        let round_seed = self.config.seed ^ (self.refinements as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut outcome = RefinementOutcome { actions: actions.clone(), ..Default::default() };

        if !actions.merges.is_empty() {
            for b in self.branches.values_mut() {
                b.state.partial_ft_members.clear();
            }
        }
        for (n, pair) in actions.merges.iter().enumerate() {
            let (main_id, aux_id) = (pair.main, pair.aux);
            if !(self.branches.contains_key(&main_id) && self.branches.contains_key(&aux_id)) || main_id == aux_id {
                return Err(Error::StaleAction(format!("merge {main_id} <- {aux_id} is no longer valid")));
            }
            let aux = self.branches.remove(&aux_id).expect("checked");
            let main = self.branches.get(&main_id).expect("checked");
            let source = main
                .last_uploader
                .filter(|c| main.state.members.contains(c))
                .or_else(|| main.state.members.iter().next().copied());
            let posterior = match source {
                Some(c) => self.data[c].clone(),
                None => self.probe.clone(),
            };
            let merged = merge_centers(
                &self.mlp,
                &main.state.center,
                &aux.state.center,
                &posterior,
                &self.config.merge_pass,
                round_seed.wrapping_add(n as u64),
            )?;
            let members = main.state.members.len() + aux.state.members.len();
            let broadcast = ClusterBroadcast::maintain_on_merge(&main.broadcast, &aux.broadcast, &merged, members)?;
            let main = self.branches.get_mut(&main_id).expect("checked");
            main.state.members.extend(aux.state.members.iter().copied());
            main.state.set_center(merged);
            main.broadcast = broadcast;
            main.updated_at = now;
            main.since_refine = 0;
            let version = main.state.version;
            for &m in &aux.state.members {
                self.clients[m].cluster = Some(main_id);
                self.clients[m].joined_version = version;
            }
            let recipients: Vec<ClientId> = main.state.members.iter().copied().collect();
            for &m in &recipients {
                self.clients[m].base_cluster = Some(main_id);
                self.clients[m].base_version = version;
            }
            outcome.broadcasts.push((main_id, recipients));
        }

        let scores: BTreeMap<ClientId, f64> = feedback.iter().map(|r| (r.client, r.score)).collect();
        for (n, exp) in actions.expansions.iter().enumerate() {
            let Some(parent) = self.branches.get(&exp.parent) else {
                return Err(Error::StaleAction(format!("cluster {} merged away before expansion", exp.parent)));
            };
            if !exp.members.is_subset(&parent.state.members) {
                return Err(Error::StaleAction(format!("expansion members left cluster {}", exp.parent)));
            }
            let leader = exp
                .members
                .iter()
                .copied()
                .max_by(|a, b| {
                    let (sa, sb) = (scores.get(a).copied().unwrap_or(0.0), scores.get(b).copied().unwrap_or(0.0));
                    sa.total_cmp(&sb).then(b.cmp(a))
                })
                .expect("non-empty expansion");
            let adaptation = self.data[leader].clone();
            let latest_change = exp.members.iter().map(|&c| self.clients[c].last_change).fold(0.0, f64::max);
            let new_id = self.next_id;
            let parent = self.branches.get_mut(&exp.parent).expect("checked");
            let mut child = expand_cluster(
                &mut parent.state,
                &exp.members,
                &adaptation,
                &self.mlp,
                &self.config.adapt,
                new_id,
                now,
                round_seed.wrapping_add(1000 + n as u64),
            )?;
            // the parent's membership changed and the child's center was adapted
            parent.state.version += 1;
            parent.since_refine = 0;
            child.version = 1;
            let broadcast = parent.broadcast.maintain_on_expand(latest_change, exp.members.len())?;
            self.next_id += 1;
            for &m in &exp.members {
                self.clients[m].cluster = Some(new_id);
                self.clients[m].joined_version = child.version;
            }
            self.branches.insert(
                new_id,
                Branch { state: child, broadcast, updated_at: now, since_refine: 0, last_uploader: None },
            );
            outcome.created.push((exp.parent, new_id));
        }
        // each cluster keeps its own cadence; only the ones that were due restart
        let period = self.config.refine_period;
        for b in self.branches.values_mut() {
            if b.since_refine >= period {
                b.since_refine = 0;
            }
        }
        Ok(outcome)
    }

    /// Members partition the assigned clients.
    pub fn check_partition(&self) -> bool {
        let mut seen = BTreeSet::new();
        for b in self.branches.values() {
            for &m in &b.state.members {
                if !seen.insert(m) || self.clients[m].cluster != Some(b.state.id) {
                    return false;
                }
            }
        }
        self.clients.iter().filter(|c| c.cluster.is_some()).count() == seen.len()
    }
}
