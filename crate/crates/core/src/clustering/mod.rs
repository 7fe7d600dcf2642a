//! Incremental client clustering: on-arrival assignment by L1 distance,
//! client feedback, and periodic merge/expansion refinement.

mod feedback;
mod merge;
mod refine;

use std::collections::BTreeSet;

pub use feedback::{chi_squared, compute_feedback, feedback_score, Feedback, FeedbackReport, CHI2_MIN_EXPECTED};
pub use merge::{attention_merge, merge_centers, symmetric_kl};
pub use refine::{
    batch_cluster, chi2_critical, expand_cluster, expansion_candidates, refine, Expansion, MergePair, RefineParams,
    RefinementActions,
};

use crate::error::Result;
use crate::model::{l1_distance, ParamVector};

pub type ClientId = usize;
pub type ClusterId = usize;

/// One personalized branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub id: ClusterId,
    pub center: ParamVector,
    pub members: BTreeSet<ClientId>,
    pub version: u64,
    pub created_at: f64,
    /// Members restricted to last-layer-only training.
    pub partial_ft_members: BTreeSet<ClientId>,
}

impl ClusterState {
    pub fn new(id: ClusterId, center: ParamVector, created_at: f64) -> Self {
        Self {
            id,
            center,
            members: BTreeSet::new(),
            version: 0,
            created_at,
            partial_ft_members: BTreeSet::new(),
        }
    }

    /// Replace the center and bump the version.
    pub fn set_center(&mut self, center: ParamVector) {
        self.center = center;
        self.version += 1;
    }
}

/// Cluster whose center is nearest to `u` in L1; lowest id wins ties.
pub fn nearest_cluster(clusters: &[ClusterState], u: &ParamVector) -> Result<Option<ClusterId>> {
    let mut best: Option<(f64, ClusterId)> = None;
    for c in clusters {
        let d = l1_distance(u, &c.center)?;
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && c.id < bid),
        };
        if better {
            best = Some((d, c.id));
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Place a newly arrived client. While fewer than `c` clusters exist the
/// upload seeds a new cluster; afterwards the client joins the nearest
/// center. The new cluster (if any) gets id `*next_id`.
pub fn init_or_assign(
    clusters: &mut Vec<ClusterState>,
    next_id: &mut ClusterId,
    client: ClientId,
    u: &ParamVector,
    c: usize,
    now: f64,
) -> Result<ClusterId> {
    if !u.is_finite() {
        return Err(crate::Error::invalid("uploaded parameters are not finite"));
    }
    let id = if clusters.len() < c {
        let id = *next_id;
        *next_id += 1;
        clusters.push(ClusterState::new(id, u.clone(), now));
        id
    } else {
        nearest_cluster(clusters, u)?.expect("at least one cluster exists when c > 0")
    };
    let cluster = clusters.iter_mut().find(|k| k.id == id).expect("cluster exists");
    cluster.members.insert(client);
    Ok(id)
}
