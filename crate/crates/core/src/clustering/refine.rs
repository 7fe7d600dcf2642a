use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::merge::{predictive, symmetric_kl_cached};
use super::{ClientId, ClusterId, ClusterState, FeedbackReport};
use crate::error::{Error, Result};
use crate::model::{LocalDataset, Mlp, ParamVector, SgdConfig, TrainMode};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    /// Merge once the active cluster count exceeds `hm * c`.
    pub hm: usize,
    pub c: usize,
    /// Upper tail of each cluster's feedback scores that is split off.
    pub expand_fraction: f64,
    /// Minimum raw chi-squared statistic for a client to be split off.
    /// `None` disables the gate and leaves only the rank rule.
    pub min_chi2: Option<f64>,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self { hm: 2, c: 2, expand_fraction: 0.2, min_chi2: None }
    }
}

impl RefineParams {
    pub fn max_clusters(&self) -> usize {
        self.hm * self.c
    }
}

/// Upper-tail critical value of a chi-squared distribution with
/// `classes - 1` degrees of freedom.
pub fn chi2_critical(classes: usize, alpha: f64) -> Result<f64> {
    if classes < 2 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("chi-squared gate needs at least two classes and alpha in (0, 1)"));
    }
    let dist = ChiSquared::new((classes - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergePair {
    pub main: ClusterId,
    pub aux: ClusterId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub parent: ClusterId,
    pub members: BTreeSet<ClientId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefinementActions {
    pub merges: Vec<MergePair>,
    pub expansions: Vec<Expansion>,
}

impl RefinementActions {
    pub fn is_empty(&self) -> bool {
        self.merges.is_empty() && self.expansions.is_empty()
    }
}

/// Clients whose score lies strictly above the `(1 - fraction)` quantile of
/// the given scores, linearly interpolated between order statistics. Equal
/// scores never qualify.
pub fn expansion_candidates(scores: &[(ClientId, f64)], fraction: f64) -> Vec<ClientId> {
    let n = scores.len();
    if n == 0 || fraction <= 0.0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = scores.iter().map(|&(_, s)| s).collect();
    sorted.sort_by(f64::total_cmp);
    let pos = (1.0 - fraction).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let threshold = sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]);
    scores.iter().filter(|&&(_, s)| s > threshold + 1e-9).map(|&(c, _)| c).collect()
}

/// Compute merge and expansion actions for the current clusters. Reports
/// for clients that have since moved to another cluster are ignored.
pub fn refine(
    clusters: &[ClusterState],
    feedback: &[FeedbackReport],
    params: &RefineParams,
    mlp: &Mlp,
    probe: &LocalDataset,
) -> Result<RefinementActions> {
    let mut seen = BTreeSet::new();
    for r in feedback {
        if !seen.insert(r.client) {
            return Err(Error::invalid(format!("client {} has more than one feedback report", r.client)));
        }
        if !(r.score.is_finite() && r.score >= 0.0) {
            return Err(Error::invalid(format!("feedback score for client {} is not a finite non-negative number", r.client)));
        }
    }

    let mut actions = RefinementActions::default();

    let excess = clusters.len().saturating_sub(params.max_clusters());
    if excess > 0 {
        actions.merges = select_merges(clusters, excess, mlp, probe);
    }

    let merging: BTreeSet<ClusterId> = actions.merges.iter().flat_map(|m| [m.main, m.aux]).collect();
    for cluster in clusters {
        if merging.contains(&cluster.id) {
            continue;
        }
        let scores: Vec<(ClientId, f64)> = feedback
            .iter()
            .filter(|r| r.cluster == cluster.id && cluster.members.contains(&r.client))
            .map(|r| (r.client, r.score))
            .collect();
        let chi2: BTreeMap<ClientId, f64> = feedback.iter().map(|r| (r.client, r.chi2)).collect();
        let members: BTreeSet<ClientId> = expansion_candidates(&scores, params.expand_fraction)
            .into_iter()
            .filter(|c| params.min_chi2.is_none_or(|min| chi2[c] > min))
            .collect();
        if !members.is_empty() && members.len() < cluster.members.len() {
            actions.expansions.push(Expansion { parent: cluster.id, members });
        }
    }
    Ok(actions)
}

/// Greedily pick `count` disjoint pairs with the smallest divergence.
fn select_merges(clusters: &[ClusterState], count: usize, mlp: &Mlp, probe: &LocalDataset) -> Vec<MergePair> {
    let preds: Vec<_> = clusters.iter().map(|c| predictive(mlp, &c.center, probe)).collect();
    let mut pairs = Vec::new();
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            pairs.push((symmetric_kl_cached(&preds[i], &preds[j]), i, j));
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| clusters[a.1].id.min(clusters[a.2].id).cmp(&clusters[b.1].id.min(clusters[b.2].id)))
    });
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if out.len() == count {
            break;
        }
        if used.contains(&i) || used.contains(&j) {
            continue;
        }
        used.insert(i);
        used.insert(j);
        let (a, b) = (&clusters[i], &clusters[j]);
        let a_main = a.members.len() > b.members.len() || (a.members.len() == b.members.len() && a.id < b.id);
        let (main, aux) = if a_main { (a.id, b.id) } else { (b.id, a.id) };
        out.push(MergePair { main, aux });
    }
    out
}

/// Split `new_members` off `parent` into a fresh cluster whose center is the
/// parent's, adapted on `adaptation_data` with last-layer-only training.
#[allow(clippy::too_many_arguments)]
pub fn expand_cluster(
    parent: &mut ClusterState,
    new_members: &BTreeSet<ClientId>,
    adaptation_data: &LocalDataset,
    mlp: &Mlp,
    adapt: &SgdConfig,
    new_id: ClusterId,
    now: f64,
    seed: u64,
) -> Result<ClusterState> {
    if new_members.is_empty() {
        return Err(Error::invalid("expansion needs at least one member"));
    }
    if !new_members.is_subset(&parent.members) {
        return Err(Error::invalid(format!("expansion members are not all in cluster {}", parent.id)));
    }
    let cfg = SgdConfig { mode: TrainMode::LastLayerOnly, ..*adapt };
    let center = if adaptation_data.is_empty() || cfg.epochs == 0 {
        parent.center.clone()
    } else {
        mlp.sgd_train(&parent.center, adaptation_data, &cfg, seed)?
    };
    let mut child = ClusterState::new(new_id, center, now);
    for c in new_members {
        parent.members.remove(c);
        parent.partial_ft_members.remove(c);
    }
    child.members = new_members.clone();
    child.partial_ft_members = new_members.clone();
    Ok(child)
}

/// Agglomerative clustering of client models by symmetric KL on the probe
/// set. Merging continues while more than `max_clusters` groups remain or
/// the closest pair is within `min_gap`. Returns one label per model,
/// numbered in order of first appearance.
pub fn batch_cluster(
    mlp: &Mlp,
    models: &[ParamVector],
    probe: &LocalDataset,
    max_clusters: usize,
    min_gap: f64,
) -> Result<Vec<usize>> {
    if models.is_empty() {
        return Ok(Vec::new());
    }
    let max_clusters = max_clusters.max(1);
    let mut groups: Vec<Vec<usize>> = (0..models.len()).map(|i| vec![i]).collect();
    let mut preds: Vec<Vec<Vec<f64>>> = models.iter().map(|m| predictive(mlp, m, probe)).collect();
    while groups.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let d = symmetric_kl_cached(&preds[i], &preds[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = best.expect("at least one pair");
        if groups.len() <= max_clusters && d >= min_gap {
            break;
        }
        let moved = groups.remove(j);
        preds.remove(j);
        groups[i].extend(moved);
        let center = ParamVector::mean(groups[i].iter().map(|&k| &models[k]))?;
        preds[i] = predictive(mlp, &center, probe);
    }
    let mut labels = vec![0; models.len()];
    groups.sort_by_key(|g| *g.iter().min().expect("non-empty group"));
    for (label, g) in groups.iter().enumerate() {
        for &k in g {
            labels[k] = label;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(id: ClusterId, center: ParamVector, members: &[ClientId]) -> ClusterState {
        let mut c = ClusterState::new(id, center, 0.0);
        c.members = members.iter().copied().collect();
        c
    }

    fn report(client: ClientId, cluster: ClusterId, score: f64) -> FeedbackReport {
        FeedbackReport { client, cluster, score, chi2: score, computed_at: 0.0 }
    }

    fn probe() -> LocalDataset {
        LocalDataset::from_rows(2, vec![(vec![1.0], 0), (vec![-1.0], 1), (vec![0.3], 0)]).unwrap()
    }

    #[test]
    fn equal_scores_never_expand() {
        let scores: Vec<_> = (0..10).map(|c| (c, 4.0)).collect();
        assert!(expansion_candidates(&scores, 0.2).is_empty());
    }

    #[test]
    fn top_two_of_ten_expand() {
        let scores: Vec<_> = (0..10).map(|c| (c, (c + 1) as f64)).collect();
        assert_eq!(expansion_candidates(&scores, 0.2), vec![8, 9]);
    }

    #[test]
    fn merge_threshold() {
        let mlp = Mlp::linear(1, 2);
        let params = RefineParams { hm: 2, c: 2, ..Default::default() };
        let center = |w: f64| ParamVector::new(vec![w, -w, 0.0, 0.0], mlp.layout()).unwrap();
        let mut clusters: Vec<_> = (0..4).map(|i| cluster(i, center(i as f64), &[i])).collect();
        let actions = refine(&clusters, &[], &params, &mlp, &probe()).unwrap();
        assert!(actions.merges.is_empty());

        clusters.push(cluster(4, center(3.1), &[4, 5]));
        let actions = refine(&clusters, &[], &params, &mlp, &probe()).unwrap();
        assert_eq!(actions.merges, vec![MergePair { main: 4, aux: 3 }]);
    }

    #[test]
    fn expansion_from_feedback() {
        let mlp = Mlp::linear(1, 2);
        let clusters = vec![cluster(0, mlp.zeros(), &(0..10).collect::<Vec<_>>())];
        let fb: Vec<_> = (0..10).map(|c| report(c, 0, (c + 1) as f64)).collect();
        let actions = refine(&clusters, &fb, &RefineParams::default(), &mlp, &probe()).unwrap();
        assert_eq!(actions.expansions.len(), 1);
        assert_eq!(actions.expansions[0].members, BTreeSet::from([8, 9]));

        let gated = RefineParams { min_chi2: Some(9.5), ..Default::default() };
        let actions = refine(&clusters, &fb, &gated, &mlp, &probe()).unwrap();
        assert_eq!(actions.expansions[0].members, BTreeSet::from([9]));
    }

    #[test]
    fn duplicate_feedback_rejected() {
        let mlp = Mlp::linear(1, 2);
        let clusters = vec![cluster(0, mlp.zeros(), &[0])];
        let fb = [report(0, 0, 1.0), report(0, 0, 2.0)];
        assert!(refine(&clusters, &fb, &RefineParams::default(), &mlp, &probe()).is_err());
    }

    #[test]
    fn expansion_contract() {
        let mlp = Mlp::new(1, 3, 2);
        let center = ParamVector::new((0..mlp.param_count()).map(|k| k as f64 * 0.1).collect(), mlp.layout()).unwrap();
        let mut parent = cluster(0, center.clone(), &[0, 1, 2, 3]);
        let data = probe();
        let cfg = SgdConfig { epochs: 3, lr: 0.5, ..Default::default() };
        let moved = BTreeSet::from([2, 3]);
        let child = expand_cluster(&mut parent, &moved, &data, &mlp, &cfg, 7, 1.0, 0).unwrap();
        assert!(parent.members.is_disjoint(&child.members));
        assert_eq!(child.partial_ft_members, moved);
        let cut = center.final_span().start;
        assert_eq!(&child.center.values()[..cut], &center.values()[..cut]);
        assert_ne!(child.center, center);

        assert!(expand_cluster(&mut parent, &BTreeSet::new(), &data, &mlp, &cfg, 8, 1.0, 0).is_err());
        assert!(expand_cluster(&mut parent, &moved, &data, &mlp, &cfg, 8, 1.0, 0).is_err());
    }

    #[test]
    fn batch_cluster_groups_identical_models() {
        let mlp = Mlp::linear(1, 2);
        let a = ParamVector::new(vec![3.0, -3.0, 0.0, 0.0], mlp.layout()).unwrap();
        let b = ParamVector::new(vec![-3.0, 3.0, 0.0, 0.0], mlp.layout()).unwrap();
        let models = vec![a.clone(), b.clone(), a, b];
        let labels = batch_cluster(&mlp, &models, &probe(), 4, 0.1).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1]);
        let one = batch_cluster(&mlp, &models, &probe(), 1, 0.1).unwrap();
        assert_eq!(one, vec![0; 4]);
    }

    #[test]
    fn critical_value() {
        // chi2(1) at alpha 0.05 is 3.841
        assert!((chi2_critical(2, 0.05).unwrap() - 3.841_458_8).abs() < 1e-5);
        assert!(chi2_critical(1, 0.05).is_err());
    }
}
