//! Wire records exchanged between clients and the server.

use serde::Serialize;

use crate::clustering::{ClientId, ClusterId};
use crate::model::ParamVector;

/// A local update. `base_cluster`/`base_version` name the branch head the
/// update was trained from; `None` for a client that never received one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushRequest {
    pub client: ClientId,
    pub params: ParamVector,
    pub base_cluster: Option<ClusterId>,
    pub base_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushAck {
    pub cluster: ClusterId,
    pub version: u64,
    pub staleness: u64,
    pub created_cluster: bool,
    /// Clients that should receive the new head right away (never the
    /// uploader, which pulls on its own).
    pub broadcast_to: Vec<ClientId>,
    /// The branch has completed enough aggregations for a refinement.
    pub refine_due: bool,
    /// L1 change the aggregation made to the center.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VersionedModel {
    pub params: ParamVector,
    pub cluster: ClusterId,
    pub version: u64,
    pub produced_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PullResponse {
    Model(VersionedModel),
    NoChange,
}
