//! Synthetic non-IID client populations with known cluster structure.
//!
//! Every ground-truth cluster owns a class-probability vector and a
//! class-conditional Gaussian mixture. Means come from a shared set of
//! class prototypes: cluster `g` places class `j` on prototype
//! `(j - g * label_shift) mod J`, plus a small cluster-specific offset.
//! With `label_shift = 0` clusters differ only by label skew; a non-zero
//! shift makes clusters disagree on which label a feature region carries.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::LocalDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    /// One entry per ground-truth cluster.
    pub clients_per_cluster: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
    pub samples_per_client: usize,
    /// Per-cluster class probabilities, each of length `classes`.
    pub class_skew: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub label_shift: usize,
    /// Scale of the per-(cluster, class) offset added to each prototype.
    pub mean_jitter: f64,
    /// Standard deviation of prototype coordinates.
    pub prototype_scale: f64,
    pub seed: u64,
}

impl PopulationSpec {
    /// `groups` clusters, each spreading its mass uniformly over its own
    /// contiguous block of `classes / groups` classes.
    pub fn disjoint(groups: usize, per_group: usize, classes: usize, seed: u64) -> Self {
        let block = (classes / groups.max(1)).max(1);
        let class_skew = (0..groups)
            .map(|g| {
                let mut p = vec![0.0; classes];
                for c in 0..block {
                    p[(g * block + c) % classes] = 1.0 / block as f64;
                }
                p
            })
            .collect();
        Self {
            clients_per_cluster: vec![per_group; groups],
            feature_dim: 8,
            classes,
            samples_per_client: 200,
            class_skew,
            noise_std: 1.0,
            label_shift: block,
            mean_jitter: 0.2,
            prototype_scale: 1.0,
            seed,
        }
    }

    /// Single cluster with uniform labels.
    pub fn homogeneous(clients: usize, classes: usize, seed: u64) -> Self {
        Self {
            clients_per_cluster: vec![clients],
            class_skew: vec![vec![1.0 / classes as f64; classes]],
            label_shift: 0,
            ..Self::disjoint(1, clients, classes, seed)
        }
    }

    pub fn groups(&self) -> usize {
        self.clients_per_cluster.len()
    }

    pub fn total_clients(&self) -> usize {
        self.clients_per_cluster.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups() == 0 || self.total_clients() == 0 {
            return Err(Error::invalid("population has zero clients"));
        }
        if self.samples_per_client == 0 {
            return Err(Error::invalid("samples_per_client must be positive"));
        }
        if self.feature_dim == 0 || self.classes == 0 {
            return Err(Error::invalid("feature_dim and classes must be positive"));
        }
        if self.class_skew.len() != self.groups() {
            return Err(Error::invalid(format!(
                "{} class-skew vectors for {} clusters",
                self.class_skew.len(),
                self.groups()
            )));
        }
        for (g, skew) in self.class_skew.iter().enumerate() {
            check_skew(skew, self.classes).map_err(|e| Error::invalid(format!("cluster {g}: {e}")))?;
        }
        if !(self.noise_std >= 0.0) || !(self.mean_jitter >= 0.0) || !(self.prototype_scale >= 0.0) {
            return Err(Error::invalid("noise and scale parameters must be non-negative"));
        }
        Ok(())
    }
}

fn check_skew(skew: &[f64], classes: usize) -> Result<()> {
    if skew.len() != classes {
        return Err(Error::invalid(format!(
            "class skew has {} entries, expected {classes}",
            skew.len()
        )));
    }
    if skew.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::invalid("class probabilities must be non-negative"));
    }
    let total: f64 = skew.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("class probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Class-conditional Gaussian means per ground-truth cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    dim: usize,
    classes: usize,
    noise_std: f64,
    /// `means[g][j]`
    means: Vec<Vec<Vec<f64>>>,
}

impl FeatureModel {
    fn draw(spec: &PopulationSpec, rng: &mut ChaCha8Rng) -> Self {
        let (d, j) = (spec.feature_dim, spec.classes);
        let prototypes: Vec<Vec<f64>> = (0..j)
            .map(|_| (0..d).map(|_| spec.prototype_scale * normal(rng)).collect())
            .collect();
        let means = (0..spec.groups())
            .map(|g| {
                (0..j)
                    .map(|c| {
                        let slot = (c + j * g - (g * spec.label_shift) % j) % j;
                        prototypes[slot]
                            .iter()
                            .map(|m| m + spec.mean_jitter * normal(rng))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            dim: d,
            classes: j,
            noise_std: spec.noise_std,
            means,
        }
    }

    pub fn groups(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, group: usize, class: usize) -> &[f64] {
        &self.means[group][class]
    }

    fn sample_into<R: Rng + ?Sized>(&self, group: usize, class: usize, rng: &mut R, out: &mut Vec<f64>) {
        for m in &self.means[group][class] {
            out.push(m + self.noise_std * normal(rng));
        }
    }

    fn sample_dataset<R: Rng + ?Sized>(
        &self,
        group: usize,
        skew: &[f64],
        n: usize,
        rng: &mut R,
    ) -> Result<LocalDataset> {
        let pick = WeightedIndex::new(skew).map_err(|e| Error::invalid(format!("class skew: {e}")))?;
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = pick.sample(rng);
            self.sample_into(group, y, rng, &mut features);
            labels.push(y);
        }
        LocalDataset::new(self.dim, self.classes, features, labels)
    }

    /// Unlabeled-style probe set covering every (cluster, class) component
    /// evenly. Labels are the generating class and are not used for merging.
    pub fn probe_set(&self, n: usize, seed: u64) -> Result<LocalDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        let components = self.groups() * self.classes;
        for i in 0..n {
            let comp = i % components;
            let (g, c) = (comp / self.classes, comp % self.classes);
            self.sample_into(g, c, &mut rng, &mut features);
            labels.push(c);
        }
        LocalDataset::new(self.dim, self.classes, features, labels)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

#[derive(Debug, Clone)]
pub struct Population {
    pub datasets: Vec<LocalDataset>,
    /// Ground-truth cluster of each client.
    pub ground_truth: Vec<usize>,
    pub features: FeatureModel,
}

/// Draw every client's dataset. Clients are numbered cluster by cluster.
pub fn generate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let features = FeatureModel::draw(spec, &mut rng);
    let mut datasets = Vec::with_capacity(spec.total_clients());
    let mut ground_truth = Vec::with_capacity(spec.total_clients());
    for (g, &count) in spec.clients_per_cluster.iter().enumerate() {
        for _ in 0..count {
            let client_seed = rng.random::<u64>();
            let mut crng = ChaCha8Rng::seed_from_u64(client_seed);
            datasets.push(features.sample_dataset(g, &spec.class_skew[g], spec.samples_per_client, &mut crng)?);
            ground_truth.push(g);
        }
    }
    Ok(Population {
        datasets,
        ground_truth,
        features,
    })
}

/// A scheduled change of one client's label preferences.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub client: usize,
    /// Simulated seconds.
    pub trigger_time: f64,
    pub new_class_skew: Vec<f64>,
    /// Cluster whose class-conditional features the resampled rows use;
    /// `None` keeps the client's own cluster.
    pub feature_group: Option<usize>,
}

impl DriftSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.trigger_time >= 0.0) {
            return Err(Error::invalid("drift trigger time must be >= 0"));
        }
        check_skew(&self.new_class_skew, classes)
    }
}

/// Resample labels from the new skew and features from the matching
/// class-conditional components. The row count is unchanged.
pub fn apply_drift(
    dataset: &LocalDataset,
    spec: &DriftSpec,
    features: &FeatureModel,
    own_group: usize,
    seed: u64,
) -> Result<LocalDataset> {
    spec.validate(dataset.classes())?;
    let group = spec.feature_group.unwrap_or(own_group);
    if group >= features.groups() {
        return Err(Error::invalid(format!("drift feature group {group} does not exist")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    features.sample_dataset(group, &spec.new_class_skew, dataset.len(), &mut rng)
}

/// Text form: a `dim,classes,n` header, then one `label,x1,..,xd` row per
/// sample. Floats use the shortest representation that parses back exactly.
pub fn write_dataset<W: Write>(mut w: W, data: &LocalDataset) -> Result<()> {
    writeln!(w, "{},{},{}", data.dim(), data.classes(), data.len())?;
    for (x, y) in data.iter() {
        write!(w, "{y}")?;
        for v in x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<LocalDataset> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("missing dataset header"))??;
    let nums: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(format!("bad header `{header}`: {e}")))?;
    let [dim, classes, n] = nums[..] else {
        return Err(Error::invalid(format!("header `{header}` must have three fields")));
    };
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let y = fields
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::invalid(format!("row {i}: bad label")))?;
        let before = features.len();
        for f in fields {
            features.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("row {i}: {e}")))?,
            );
        }
        if features.len() - before != dim {
            return Err(Error::invalid(format!("row {i}: expected {dim} features")));
        }
        labels.push(y);
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("header promised {n} rows, found {}", labels.len())));
    }
    LocalDataset::new(dim, classes, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_skews_are_valid_pairs() {
        let spec = PopulationSpec::disjoint(4, 3, 8, 1);
        spec.validate().unwrap();
        assert_eq!(spec.class_skew[1], vec![0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_clients_or_samples_rejected() {
        let mut spec = PopulationSpec::disjoint(2, 2, 4, 0);
        spec.samples_per_client = 0;
        assert!(generate_population(&spec).is_err());
        let mut spec = PopulationSpec::disjoint(2, 0, 4, 0);
        spec.clients_per_cluster = vec![0, 0];
        assert!(generate_population(&spec).is_err());
    }

    #[test]
    fn label_shift_aligns_active_classes_on_shared_prototypes() {
        let mut spec = PopulationSpec::disjoint(4, 1, 8, 3);
        spec.mean_jitter = 0.0;
        let pop = generate_population(&spec).unwrap();
        // cluster g's classes {2g, 2g+1} sit on prototypes {0, 1}
        for g in 1..4 {
            assert_eq!(pop.features.mean(g, 2 * g), pop.features.mean(0, 0));
            assert_eq!(pop.features.mean(g, 2 * g + 1), pop.features.mean(0, 1));
        }
    }

    #[test]
    fn one_hot_drift_sets_every_label() {
        let spec = PopulationSpec::disjoint(2, 1, 4, 5);
        let pop = generate_population(&spec).unwrap();
        let drift = DriftSpec {
            client: 0,
            trigger_time: 10.0,
            new_class_skew: vec![0.0, 0.0, 1.0, 0.0],
            feature_group: Some(1),
        };
        let out = apply_drift(&pop.datasets[0], &drift, &pop.features, 0, 7).unwrap();
        assert_eq!(out.len(), pop.datasets[0].len());
        assert!(out.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(read_dataset("2,2,1\n0,1.0\n".as_bytes()).is_err());
        assert!(read_dataset("2,2\n".as_bytes()).is_err());
        assert!(read_dataset("1,2,2\n0,1.0\n".as_bytes()).is_err());
    }
}
