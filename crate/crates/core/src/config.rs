//! Experiment configuration: TOML file format, defaults, validation and the
//! built-in scenario presets.
//!
//! Only `seed` is required; every other key has a default. Unknown keys are
//! rejected.
//!
//! ```toml
//! protocol = "apfl"          # apfl | sync-fedavg | async-decay | sync-clustered | standalone
//! seed = 7
//!
//! [population]
//! groups = 4                 # ground-truth clusters
//! clients_per_group = 5      # or clients_per_cluster = [2, 2, 1]
//! skew = "disjoint"          # disjoint | uniform; or class_skew = [[...], ...]
//! classes = 10
//!
//! [fleet]
//! pattern = ["D1", "D2", "D3", "D5", "D5"]   # repeated over the clients
//! base_epoch_seconds = 1.0
//!
//! [link]
//! upstream_bytes_per_sec = 16000.0
//! asymmetry = 10.0
//!
//! [apfl]
//! c = 2
//! hm = 2
//! k = 10
//! eta = 0.5
//! refine_period = 10
//! broadcast_mode = "predictor"
//!
//! [stop]
//! time_budget = 600.0
//!
//! [[drift]]
//! client = 3
//! trigger_time = 200.0
//! new_class_skew = [0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::broadcast::{BroadcastMode, PredictorConfig};
use crate::clustering::{chi2_critical, RefineParams};
use crate::coordination::ServerConfig;
use crate::data::{DriftSpec, PopulationSpec};
use crate::error::{Error, Result};
use crate::model::{Mlp, SgdConfig, TrainMode};
use crate::sim::{DeviceClass, DeviceProfile, LinkModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    Apfl,
    SyncFedavg,
    AsyncDecay,
    SyncClustered,
    Standalone,
}

impl Protocol {
    pub const ALL: [Protocol; 5] =
        [Self::Apfl, Self::SyncFedavg, Self::AsyncDecay, Self::SyncClustered, Self::Standalone];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Apfl => "apfl",
            Self::SyncFedavg => "sync-fedavg",
            Self::AsyncDecay => "async-decay",
            Self::SyncClustered => "sync-clustered",
            Self::Standalone => "standalone",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown protocol `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkewKind {
    #[default]
    Disjoint,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub groups: usize,
    pub clients_per_group: usize,
    /// Overrides `groups`/`clients_per_group` when set.
    pub clients_per_cluster: Option<Vec<usize>>,
    pub classes: usize,
    pub feature_dim: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    /// Defaults to the class block size for disjoint skews, 0 otherwise.
    pub label_shift: Option<usize>,
    pub mean_jitter: f64,
    pub prototype_scale: f64,
    pub skew: SkewKind,
    /// Explicit per-cluster class probabilities; overrides `skew`.
    pub class_skew: Option<Vec<Vec<f64>>>,
    /// Seed of the data generator; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            clients_per_group: 5,
            clients_per_cluster: None,
            classes: 10,
            feature_dim: 8,
            samples_per_client: 200,
            noise_std: 1.0,
            label_shift: None,
            mean_jitter: 0.2,
            prototype_scale: 1.0,
            skew: SkewKind::Disjoint,
            class_skew: None,
            seed: None,
        }
    }
}

impl PopulationConfig {
    pub fn spec(&self, run_seed: u64) -> PopulationSpec {
        let seed = self.seed.unwrap_or(run_seed);
        let counts = self.clients_per_cluster.clone().unwrap_or_else(|| vec![self.clients_per_group; self.groups]);
        let groups = counts.len();
        let base = match self.skew {
            SkewKind::Disjoint => PopulationSpec::disjoint(groups, 1, self.classes, seed),
            SkewKind::Uniform => PopulationSpec {
                class_skew: vec![vec![1.0 / self.classes.max(1) as f64; self.classes]; groups],
                label_shift: 0,
                ..PopulationSpec::disjoint(groups, 1, self.classes, seed)
            },
        };
        PopulationSpec {
            clients_per_cluster: counts,
            feature_dim: self.feature_dim,
            samples_per_client: self.samples_per_client,
            class_skew: self.class_skew.clone().unwrap_or(base.class_skew),
            noise_std: self.noise_std,
            label_shift: self.label_shift.unwrap_or(base.label_shift),
            mean_jitter: self.mean_jitter,
            prototype_scale: self.prototype_scale,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    /// Device class per client; overrides `pattern`.
    pub devices: Option<Vec<DeviceClass>>,
    /// Repeated cyclically over the clients.
    pub pattern: Vec<DeviceClass>,
    pub base_epoch_seconds: f64,
    pub jitter: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        use DeviceClass::*;
        Self { devices: None, pattern: vec![D1, D2, D3, D5, D5], base_epoch_seconds: 1.0, jitter: 0.1 }
    }
}

impl FleetConfig {
    pub fn classes(&self, clients: usize) -> Vec<DeviceClass> {
        match &self.devices {
            Some(d) => d.clone(),
            None => (0..clients).map(|i| self.pattern[i % self.pattern.len()]).collect(),
        }
    }

    pub fn profiles(&self, clients: usize) -> Result<Vec<DeviceProfile>> {
        self.classes(clients).into_iter().map(|c| DeviceProfile::new(c, self.base_epoch_seconds, self.jitter)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub upstream_bytes_per_sec: f64,
    pub asymmetry: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { upstream_bytes_per_sec: 16_000.0, asymmetry: 10.0 }
    }
}

impl LinkConfig {
    pub fn model(&self) -> Result<LinkModel> {
        LinkModel::new(self.upstream_bytes_per_sec, self.asymmetry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width; 0 gives a linear softmax model.
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub test_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 16, lr: 0.05, batch_size: 10, local_epochs: 1, test_fraction: 0.2 }
    }
}

impl ModelConfig {
    pub fn mlp(&self, input_dim: usize, classes: usize) -> Mlp {
        if self.hidden == 0 {
            Mlp::linear(input_dim, classes)
        } else {
            Mlp::new(input_dim, self.hidden, classes)
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { epochs: self.local_epochs, lr: self.lr, batch_size: self.batch_size, mode: TrainMode::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApflConfig {
    pub c: usize,
    pub hm: usize,
    pub k: usize,
    pub eta: f64,
    pub refine_period: usize,
    pub broadcast_mode: BroadcastMode,
    pub predictor_hidden: usize,
    pub predictor_lr: f64,
    /// Labeled states harvested from the warm-up run to pretrain on.
    pub pretrain_pairs: usize,
    pub pretrain_epochs: usize,
    pub online_predictor: bool,
    pub expand_fraction: f64,
    /// Significance level of the chi-squared gate on expansion; 0 disables it.
    pub significance: f64,
    pub adapt_epochs: usize,
    pub probe_samples: usize,
}

impl Default for ApflConfig {
    fn default() -> Self {
        Self {
            c: 2,
            hm: 2,
            k: 10,
            eta: 0.5,
            refine_period: 10,
            broadcast_mode: BroadcastMode::Predictor,
            predictor_hidden: 128,
            predictor_lr: 0.01,
            pretrain_pairs: 1200,
            pretrain_epochs: 4,
            online_predictor: true,
            expand_fraction: 0.2,
            significance: 0.001,
            adapt_epochs: 5,
            probe_samples: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Base mixing rate of async-decay.
    pub alpha0: f64,
    pub decay_exponent: f64,
    /// Sync-clustered keeps merging while the closest pair is below this.
    pub kl_gap: f64,
    /// Local epochs before sync-clustered groups the clients.
    pub warmup_epochs: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { alpha0: 0.6, decay_exponent: 0.5, kl_gap: 0.5, warmup_epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopConfig {
    /// Simulated seconds.
    pub time_budget: f64,
    /// Reported as time-to-target; also ends the run if `stop_at_target`.
    pub target_accuracy: Option<f64>,
    pub stop_at_target: bool,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self { time_budget: 600.0, target_accuracy: None, stop_at_target: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub client: usize,
    pub trigger_time: f64,
    pub new_class_skew: Vec<f64>,
    #[serde(default)]
    pub feature_group: Option<usize>,
}

impl DriftConfig {
    pub fn spec(&self) -> DriftSpec {
        DriftSpec {
            client: self.client,
            trigger_time: self.trigger_time,
            new_class_skew: self.new_class_skew.clone(),
            feature_group: self.feature_group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    // a missing key stays None so validation can reject it; the in-code default is 0
    #[serde(default)]
    pub seed: Option<u64>,
    pub population: PopulationConfig,
    pub fleet: FleetConfig,
    pub link: LinkConfig,
    pub model: ModelConfig,
    pub apfl: ApflConfig,
    pub baselines: BaselineConfig,
    pub stop: StopConfig,
    pub drift: Vec<DriftConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Apfl,
            seed: Some(0),
            population: PopulationConfig::default(),
            fleet: FleetConfig::default(),
            link: LinkConfig::default(),
            model: ModelConfig::default(),
            apfl: ApflConfig::default(),
            baselines: BaselineConfig::default(),
            stop: StopConfig::default(),
            drift: Vec::new(),
        }
    }
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), line: 0, message: message.into() }
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = protocol;
        self
    }

    pub fn with_broadcast_mode(mut self, mode: BroadcastMode) -> Self {
        self.apfl.broadcast_mode = mode;
        self
    }

    pub fn population_spec(&self) -> PopulationSpec {
        self.population.spec(self.seed())
    }

    pub fn client_count(&self) -> usize {
        self.population_spec().total_clients()
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig { hidden: self.apfl.predictor_hidden, lr: self.apfl.predictor_lr, ..PredictorConfig::default() }
    }

    pub fn server_config(&self) -> Result<ServerConfig> {
        let a = &self.apfl;
        let min_chi2 = if a.significance > 0.0 { Some(chi2_critical(self.population.classes, a.significance)?) } else { None };
        Ok(ServerConfig {
            refine: RefineParams { hm: a.hm, c: a.c, expand_fraction: a.expand_fraction, min_chi2 },
            eta: a.eta,
            refine_period: a.refine_period,
            base_k: a.k,
            mode: a.broadcast_mode,
            online_predictor: a.online_predictor,
            merge_pass: SgdConfig { epochs: 1, ..self.model.sgd() },
            adapt: SgdConfig { epochs: a.adapt_epochs, ..self.model.sgd() },
            seed: self.seed(),
        })
    }

    /// Check every range; errors name the offending key (line 0 until the
    /// caller maps it to the source text).
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(bad("seed", "missing required key"));
        }
        let spec = self.population_spec();
        spec.validate().map_err(|e| bad("population", e.to_string()))?;
        let n = spec.total_clients();
        if let Some(d) = &self.fleet.devices {
            if d.len() != n {
                return Err(bad("devices", format!("{} devices for {n} clients", d.len())));
            }
        } else if self.fleet.pattern.is_empty() {
            return Err(bad("pattern", "device pattern is empty"));
        }
        if !(self.fleet.base_epoch_seconds > 0.0 && self.fleet.base_epoch_seconds.is_finite()) {
            return Err(bad("base_epoch_seconds", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.fleet.jitter) {
            return Err(bad("jitter", "must lie in [0, 1)"));
        }
        if !(self.link.upstream_bytes_per_sec > 0.0) {
            return Err(bad("upstream_bytes_per_sec", "must be positive"));
        }
        if !(self.link.asymmetry > 0.0 && self.link.asymmetry.is_finite()) {
            return Err(bad("asymmetry", "ratio must be positive"));
        }
        let m = &self.model;
        if !(m.lr > 0.0 && m.lr.is_finite()) {
            return Err(bad("lr", "must be positive"));
        }
        if m.batch_size == 0 {
            return Err(bad("batch_size", "must be positive"));
        }
        if m.local_epochs == 0 {
            return Err(bad("local_epochs", "must be positive"));
        }
        if !(m.test_fraction > 0.0 && m.test_fraction < 1.0) {
            return Err(bad("test_fraction", "must lie in (0, 1)"));
        }
        let a = &self.apfl;
        for (key, v) in [("c", a.c), ("hm", a.hm), ("k", a.k), ("refine_period", a.refine_period)] {
            if v == 0 {
                return Err(bad(key, "must be at least 1"));
            }
        }
        if a.predictor_hidden == 0 {
            return Err(bad("predictor_hidden", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&a.eta) {
            return Err(bad("eta", "must lie in [0, 1]"));
        }
        if !(a.predictor_lr > 0.0) {
            return Err(bad("predictor_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&a.expand_fraction) {
            return Err(bad("expand_fraction", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.significance) {
            return Err(bad("significance", "must lie in [0, 1)"));
        }
        if a.probe_samples == 0 {
            return Err(bad("probe_samples", "must be positive"));
        }
        let b = &self.baselines;
        if !(b.alpha0 > 0.0 && b.alpha0 <= 1.0) {
            return Err(bad("alpha0", "must lie in (0, 1]"));
        }
        if !(b.decay_exponent >= 0.0) {
            return Err(bad("decay_exponent", "must be non-negative"));
        }
        if !(b.kl_gap >= 0.0) {
            return Err(bad("kl_gap", "must be non-negative"));
        }
        if !(self.stop.time_budget > 0.0 && self.stop.time_budget.is_finite()) {
            return Err(bad("time_budget", "must be positive"));
        }
        if let Some(t) = self.stop.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(bad("target_accuracy", "must lie in [0, 1]"));
            }
        }
        for d in &self.drift {
            if d.client >= n {
                return Err(bad("client", format!("drift client {} out of range", d.client)));
            }
            d.spec().validate(spec.classes).map_err(|e| bad("new_class_skew", e.to_string()))?;
            if d.feature_group.is_some_and(|g| g >= spec.groups()) {
                return Err(bad("feature_group", "no such cluster"));
            }
        }
        Ok(())
    }
}

/// Parse and validate TOML text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        let message = e.message().to_string();
        // the key assigned on the offending line, else the first quoted name
        let key = e
            .span()
            .and_then(|s| key_on_line(text, s.start))
            .or_else(|| message.split('`').nth(1).map(str::to_string))
            .unwrap_or_default();
        Error::Config { key, line, message }
    })?;
    cfg.validate().map_err(|e| match e {
        Error::Config { key, message, .. } => {
            let line = find_key_line(text, &key);
            Error::Config { key, line, message }
        }
        other => other,
    })?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn key_on_line(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim();
    (!key.is_empty()).then(|| key.to_string())
}

/// 1-based line that assigns `key`, or 0 if the key is absent.
fn find_key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}

/// Five-client presets: A homogeneous, B heterogeneous data, C
/// heterogeneous devices, D both.
pub fn scenario_config(name: &str) -> Result<ExperimentConfig> {
    use DeviceClass::*;
    let classes = 10;
    let uniform = vec![1.0 / classes as f64; classes];
    let spread = |cls: &[(usize, f64)]| {
        let mut p = vec![0.0; classes];
        for &(c, w) in cls {
            p[c] = w;
        }
        p
    };
    let hetero_data = PopulationConfig {
        clients_per_cluster: Some(vec![2, 2, 1]),
        class_skew: Some(vec![
            spread(&[(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)]),
            spread(&[(0, 0.5), (1, 0.5)]),
            spread(&[(0, 0.25), (1, 0.75)]),
        ]),
        label_shift: Some(0),
        samples_per_client: 400,
        ..PopulationConfig::default()
    };
    let uniform_data = PopulationConfig {
        clients_per_cluster: Some(vec![5]),
        class_skew: Some(vec![uniform]),
        label_shift: Some(0),
        samples_per_client: 400,
        ..PopulationConfig::default()
    };
    let (population, devices) = match name.to_ascii_uppercase().as_str() {
        "A" => (uniform_data, vec![D1; 5]),
        "B" => (hetero_data, vec![D1; 5]),
        "C" => (uniform_data, vec![D1, D1, D2, D2, D4]),
        "D" => (hetero_data, vec![D1, D1, D2, D2, D4]),
        _ => return Err(Error::invalid(format!("unknown scenario `{name}` (expected A, B, C or D)"))),
    };
    let cfg = ExperimentConfig {
        population,
        fleet: FleetConfig { devices: Some(devices), ..FleetConfig::default() },
        apfl: ApflConfig { c: 2, ..ApflConfig::default() },
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str("seed = 3\n").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!((cfg.apfl.c, cfg.apfl.k, cfg.apfl.hm, cfg.apfl.eta, cfg.apfl.refine_period), (2, 10, 2, 0.5, 10));
    }

    #[test]
    fn missing_seed_rejected() {
        let err = parse_config_str("protocol = \"apfl\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "seed"), "{err}");
    }

    #[test]
    fn zero_asymmetry_rejected_with_line() {
        let err = parse_config_str("seed = 1\n[link]\nasymmetry = 0.0\n").unwrap_err();
        match err {
            Error::Config { key, line, .. } => assert_eq!((key.as_str(), line), ("asymmetry", 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config_str("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_str("seed = 1\n[apfl]\nhn = 3\n").unwrap_err();
        match err {
            Error::Config { key, line, .. } => assert_eq!((key.as_str(), line), ("hn", 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn scenarios() {
        use DeviceClass::*;
        let a = scenario_config("A").unwrap();
        let spec = a.population_spec();
        assert_eq!(spec.total_clients(), 5);
        assert!(spec.class_skew.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(a.fleet.classes(5), vec![D1; 5]);
        assert_eq!(scenario_config("c").unwrap().fleet.classes(5), vec![D1, D1, D2, D2, D4]);
        let d = scenario_config("D").unwrap();
        assert_eq!(d.fleet.classes(5), vec![D1, D1, D2, D2, D4]);
        assert_eq!(d.population_spec().total_clients(), 5);
        assert!(scenario_config("E").is_err());
    }
}
