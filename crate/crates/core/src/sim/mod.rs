//! Deterministic discrete-event simulation of heterogeneous clients on
//! asymmetric links.
//!
//! Compute times come from one random stream per client, drawn once per
//! local round, so two runs with the same seed see the same compute timing
//! whatever the protocol decides.

mod apfl;
mod device;
mod events;
mod trace;

pub use apfl::{pretrained_predictor, run_apfl, run_apfl_harvest};
pub use device::{transfer_time, DeviceClass, DeviceProfile, Direction, LinkModel};
pub use events::{Event, EventKind, EventQueue};
pub use trace::{peak_concurrency, MetricsRow, RunTrace, Transfer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Protocol};
use crate::coordination::StalenessMetrics;
use crate::data::{apply_drift, generate_population, Population};
use crate::error::Result;
use crate::model::{LocalDataset, Mlp, ParamVector, SgdConfig, TrainMode};

/// Run the configured protocol.
pub fn run(config: &ExperimentConfig) -> Result<RunTrace> {
    config.validate()?;
    match config.protocol {
        Protocol::Apfl => run_apfl(config),
        Protocol::SyncFedavg => crate::baselines::run_sync_fedavg(config),
        Protocol::AsyncDecay => crate::baselines::run_async_decay(config),
        Protocol::SyncClustered => crate::baselines::run_sync_clustered(config),
        Protocol::Standalone => crate::baselines::run_standalone(config),
    }
}

pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a combined word
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// State shared by every protocol runner: data, devices, clocks and the
/// metric streams.
pub(crate) struct Env {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub mlp: Mlp,
    pub sgd: SgdConfig,
    pub link: LinkModel,
    pub profiles: Vec<DeviceProfile>,
    pub population: Population,
    pub train: Vec<LocalDataset>,
    pub test: Vec<LocalDataset>,
    pub probe: LocalDataset,
    pub init: ParamVector,
    pub payload: u64,
    timing: Vec<ChaCha8Rng>,
    pub rounds: Vec<usize>,
    rows: Vec<MetricsRow>,
    transfers: Vec<Transfer>,
    accuracy: Vec<Vec<(f64, f64)>>,
    current: Vec<f64>,
    up_cum: u64,
    down_cum: u64,
}

impl Env {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let seed = config.seed();
        let spec = config.population_spec();
        let population = generate_population(&spec)?;
        let n = population.datasets.len();
        let mut train = Vec::with_capacity(n);
        let mut test = Vec::with_capacity(n);
        for d in &population.datasets {
            let (tr, te) = d.split(config.model.test_fraction)?;
            train.push(tr);
            test.push(te);
        }
        let mlp = config.model.mlp(spec.feature_dim, spec.classes);
        let init = mlp.init(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1417)));
        let probe = population.features.probe_set(config.apfl.probe_samples, mix_seed(seed, 0x9e0b))?;
        let timing = (0..n).map(|c| ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7100 + c as u64))).collect();
        Ok(Self {
            seed,
            sgd: config.model.sgd(),
            link: config.link.model()?,
            profiles: config.fleet.profiles(n)?,
            payload: init.payload_bytes(),
            mlp,
            population,
            train,
            test,
            probe,
            init,
            timing,
            rounds: vec![0; n],
            rows: Vec::new(),
            transfers: Vec::new(),
            accuracy: vec![Vec::new(); n],
            current: vec![0.0; n],
            up_cum: 0,
            down_cum: 0,
            config: config.clone(),
        })
    }

    pub fn clients(&self) -> usize {
        self.train.len()
    }

    /// Compute time of the client's next local round of `epochs` epochs.
    pub fn compute_time(&mut self, client: usize, epochs: usize) -> f64 {
        let u: f64 = self.timing[client].random();
        self.profiles[client].compute_time(epochs, u)
    }

    pub fn up_time(&self) -> f64 {
        transfer_time(self.payload, Direction::Up, &self.link)
    }

    pub fn down_time(&self) -> f64 {
        transfer_time(self.payload, Direction::Down, &self.link)
    }

    /// Train from `start` on the client's data; the seed depends only on
    /// the client and its round counter.
    pub fn train(&mut self, client: usize, start: &ParamVector, mode: TrainMode, epochs: usize) -> Result<ParamVector> {
        let round = self.rounds[client];
        self.rounds[client] += 1;
        let cfg = SgdConfig { mode, epochs, ..self.sgd };
        self.mlp.sgd_train(start, &self.train[client], &cfg, mix_seed(self.seed ^ 0x5eed, (client as u64) << 32 | round as u64))
    }

    pub fn transfer(&mut self, at: f64, client: usize, direction: Direction) {
        let bytes = self.payload;
        match direction {
            Direction::Up => self.up_cum += bytes,
            Direction::Down => self.down_cum += bytes,
        }
        self.transfers.push(Transfer { at, client, direction, bytes });
    }

    pub fn evaluate(&mut self, client: usize, at: f64, params: &ParamVector) {
        let acc = self.mlp.accuracy(params, &self.test[client]);
        let series = &mut self.accuracy[client];
        match series.last_mut() {
            Some(last) if last.0 == at => last.1 = acc,
            _ => series.push((at, acc)),
        }
        self.current[client] = acc;
    }

    pub fn mean_accuracy(&self) -> f64 {
        trace::mean(&self.current)
    }

    pub fn row(&mut self, at: f64, event: EventKind, client: Option<usize>, cluster: Option<usize>, staleness: Option<u64>, clusters: usize) {
        let min = self.current.iter().copied().fold(f64::INFINITY, f64::min);
        self.rows.push(MetricsRow {
            sim_time: at,
            event,
            client,
            cluster,
            staleness,
            mean_accuracy: self.mean_accuracy(),
            min_accuracy: if min.is_finite() { min } else { 0.0 },
            up_bytes_cum: self.up_cum,
            down_bytes_cum: self.down_cum,
            cluster_count: clusters,
        });
    }

    /// Resample a client's data for drift entry `index`.
    pub fn drift(&mut self, index: usize) -> Result<usize> {
        let spec = self.config.drift[index].spec();
        let client = spec.client;
        let own = self.population.ground_truth[client];
        let full = LocalDataset::concat([&self.train[client], &self.test[client]])?;
        let drifted = apply_drift(&full, &spec, &self.population.features, own, mix_seed(self.seed, 0xd41f + index as u64))?;
        let (tr, te) = drifted.split(self.config.model.test_fraction)?;
        self.train[client] = tr;
        self.test[client] = te;
        Ok(client)
    }

    pub fn reached_target(&self) -> bool {
        self.config.stop.stop_at_target
            && self.config.stop.target_accuracy.is_some_and(|t| self.mean_accuracy() >= t)
    }

    pub fn finish(
        self,
        protocol: &str,
        end_time: f64,
        staleness: StalenessMetrics,
        ledger_entries: usize,
        accepted_pushes: usize,
        assignments: Vec<Option<usize>>,
        refinement_times: Vec<f64>,
    ) -> RunTrace {
        let target = self.config.stop.target_accuracy;
        let mut trace = RunTrace {
            protocol: protocol.to_string(),
            seed: self.seed,
            rows: self.rows,
            transfers: self.transfers,
            accuracy: self.accuracy,
            final_accuracy: self.current,
            staleness,
            ledger_entries,
            accepted_pushes,
            target_accuracy: target,
            time_to_target: None,
            assignments,
            refinement_times,
            local_rounds: self.rounds,
            devices: self.profiles.iter().map(|p| p.class).collect(),
            end_time,
        };
        trace.time_to_target = target.and_then(|t| trace.time_to_reach(t));
        trace
    }
}
