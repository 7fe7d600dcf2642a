//! Per-cluster broadcast scheduling: change history, a recurrent predictor
//! and the decision policy run after every aggregation.

mod history;
mod rnn;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

pub use history::TopKHistory;
pub use rnn::{PredictorConfig, RnnPredictor};

use crate::error::{Error, Result};
use crate::model::{l1_distance, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BroadcastMode {
    #[default]
    Predictor,
    /// Decide with the true label, peeking at the next in-flight upload.
    Oracle,
    Always,
    Never,
    /// Oracle with the inequality reversed.
    OracleFlipped,
}

impl BroadcastMode {
    pub const ALL: [BroadcastMode; 5] =
        [Self::Predictor, Self::Oracle, Self::Always, Self::Never, Self::OracleFlipped];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Predictor => "predictor",
            Self::Oracle => "oracle",
            Self::Always => "always",
            Self::Never => "never",
            Self::OracleFlipped => "oracle-flipped",
        }
    }
}

impl fmt::Display for BroadcastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BroadcastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown broadcast mode `{s}`")))
    }
}

/// True when the gap accumulated since the last broadcast is at least as
/// large as the change the next aggregation brings.
pub fn ground_truth_label(v_prev: &ParamVector, v_next: &ParamVector, v_broadcast: &ParamVector) -> Result<bool> {
    Ok(l1_distance(v_prev, v_broadcast)? - l1_distance(v_prev, v_next)? >= 0.0)
}

/// History length for a cluster of `members` clients.
pub fn history_len(base_k: usize, members: usize) -> usize {
    base_k.max(members).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastBookkeeping {
    pub v_broadcast: ParamVector,
    pub last_decision_at: f64,
}

impl BroadcastBookkeeping {
    pub fn accumulated_gap(&self, center: &ParamVector) -> Result<f64> {
        l1_distance(center, &self.v_broadcast)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PendingDecision {
    history: Vec<f64>,
    v_prev: ParamVector,
    v_broadcast: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub broadcast: bool,
    /// Predictor output, when the predictor was consulted.
    pub probability: Option<f64>,
    /// Label resolved for the previous decision of this cluster.
    pub resolved: Option<(Vec<f64>, bool)>,
}

/// Broadcast state of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBroadcast {
    pub history: TopKHistory,
    pub predictor: RnnPredictor,
    pub bookkeeping: BroadcastBookkeeping,
    base_k: usize,
    pending: Option<PendingDecision>,
    window: VecDeque<(Vec<f64>, bool)>,
    labels_since_fit: usize,
}

impl ClusterBroadcast {
    /// Fresh state for a cluster whose members currently hold `center`.
    pub fn new(center: &ParamVector, predictor: RnnPredictor, base_k: usize, members: usize) -> Self {
        Self {
            history: TopKHistory::new(history_len(base_k, members)),
            predictor,
            bookkeeping: BroadcastBookkeeping { v_broadcast: center.clone(), last_decision_at: 0.0 },
            base_k,
            pending: None,
            window: VecDeque::new(),
            labels_since_fit: 0,
        }
    }

    pub fn base_k(&self) -> usize {
        self.base_k
    }

    /// Record the aggregation `v_prev -> v_next`, resolve the previous
    /// decision's label and decide whether to broadcast `v_next`.
    ///
    /// `lookahead` is the center the next queued upload would produce; only
    /// the oracle modes read it. With `online` set and the predictor in
    /// charge, the predictor takes one batch step on the last K labeled
    /// states every K new labels.
    #[allow(clippy::too_many_arguments)]
    pub fn on_aggregation(
        &mut self,
        v_prev: &ParamVector,
        v_next: &ParamVector,
        members: usize,
        mode: BroadcastMode,
        lookahead: Option<&ParamVector>,
        online: bool,
        now: f64,
    ) -> Result<Decision> {
        let k = history_len(self.base_k, members);
        self.history.resize(k);
        self.history.record(l1_distance(v_prev, v_next)?)?;

        let resolved = match self.pending.take() {
            Some(p) => {
                let label = decision_label(&p.v_prev, v_next, &p.v_broadcast)?;
                self.window.push_back((p.history.clone(), label));
                while self.window.len() > k {
                    self.window.pop_front();
                }
                self.labels_since_fit += 1;
                if online && mode == BroadcastMode::Predictor && self.labels_since_fit >= k {
                    let batch: Vec<_> = self.window.iter().cloned().collect();
                    self.predictor.train_batch(&batch)?;
                    self.labels_since_fit = 0;
                }
                Some((p.history, label))
            }
            None => None,
        };

        let records = self.history.records();
        let v_b = &self.bookkeeping.v_broadcast;
        let mut probability = None;
        let broadcast = match mode {
            BroadcastMode::Always => true,
            BroadcastMode::Never => false,
            BroadcastMode::Oracle => decision_label(v_next, lookahead.unwrap_or(v_next), v_b)?,
            BroadcastMode::OracleFlipped => {
                l1_distance(v_next, v_b)? > 0.0 && !ground_truth_label(v_next, lookahead.unwrap_or(v_next), v_b)?
            }
            BroadcastMode::Predictor => {
                let p = self.predictor.predict(&records);
                probability = Some(p);
                p >= 0.5
            }
        };

        self.pending = Some(PendingDecision { history: records, v_prev: v_next.clone(), v_broadcast: v_b.clone() });
        self.bookkeeping.last_decision_at = now;
        if broadcast {
            self.bookkeeping.v_broadcast = v_next.clone();
        }
        Ok(Decision { broadcast, probability, resolved })
    }

    /// Mark `center` as delivered to every member without a decision, e.g.
    /// after a merge or a synchronous round.
    pub fn mark_broadcast(&mut self, center: &ParamVector) {
        self.bookkeeping.v_broadcast = center.clone();
        self.pending = None;
    }

    /// State for a cluster split off this one: same predictor weights, a
    /// fresh history holding only the expanding clients' latest change, no
    /// broadcast at creation.
    pub fn maintain_on_expand(&self, latest_change: f64, members: usize) -> Result<ClusterBroadcast> {
        let mut history = TopKHistory::new(history_len(self.base_k, members));
        history.record(latest_change)?;
        Ok(ClusterBroadcast {
            history,
            predictor: self.predictor.clone(),
            bookkeeping: self.bookkeeping.clone(),
            base_k: self.base_k,
            pending: None,
            window: VecDeque::new(),
            labels_since_fit: 0,
        })
    }

    /// State for the union of two clusters. The merged center counts as
    /// broadcast; the caller delivers it to every member.
    pub fn maintain_on_merge(
        a: &ClusterBroadcast,
        b: &ClusterBroadcast,
        merged_center: &ParamVector,
        members: usize,
    ) -> Result<ClusterBroadcast> {
        let k = history_len(a.base_k, members);
        Ok(ClusterBroadcast {
            history: TopKHistory::merge(&a.history, &b.history, k),
            predictor: RnnPredictor::average(&a.predictor, &b.predictor)?,
            bookkeeping: BroadcastBookkeeping {
                v_broadcast: merged_center.clone(),
                last_decision_at: a.bookkeeping.last_decision_at.max(b.bookkeeping.last_decision_at),
            },
            base_k: a.base_k,
            pending: None,
            window: VecDeque::new(),
            labels_since_fit: 0,
        })
    }
}

/// Training label: the ground-truth rule, except that nothing is broadcast
/// while the members already hold the current center.
fn decision_label(v_prev: &ParamVector, v_next: &ParamVector, v_broadcast: &ParamVector) -> Result<bool> {
    Ok(l1_distance(v_prev, v_broadcast)? > 0.0 && ground_truth_label(v_prev, v_next, v_broadcast)?)
}

/// Offline training on harvested `(history, label)` pairs. A few all-zero
/// histories labeled "no broadcast" are mixed in so an idle cluster stays
/// quiet.
pub fn pretrain(
    predictor: &mut RnnPredictor,
    pairs: &[(Vec<f64>, bool)],
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let k = pairs.first().map_or(10, |(s, _)| s.len());
    let mut data = pairs.to_vec();
    let anchors = (pairs.len() / 20).max(1);
    data.extend(std::iter::repeat_n((vec![0.0; k], false), anchors));
    let loss = predictor.fit(&data, epochs, batch_size, seed)?;
    predictor.pretrained = true;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_values(v.to_vec()).unwrap()
    }

    fn small_predictor() -> RnnPredictor {
        RnnPredictor::new(PredictorConfig { hidden: 8, lr: 0.01, clip: 5.0 }, 0)
    }

    #[test]
    fn ground_truth_examples() {
        let prev = pv(&[0.0, 0.0]);
        assert!(!ground_truth_label(&prev, &pv(&[1.0, 0.0]), &prev).unwrap());
        assert!(ground_truth_label(&prev, &prev, &pv(&[0.5, 0.0])).unwrap());
        assert!(ground_truth_label(&prev, &pv(&[1.0, 0.0]), &pv(&[3.0, 0.0])).unwrap());
    }

    #[test]
    fn mode_round_trip() {
        for m in BroadcastMode::ALL {
            assert_eq!(m.as_str().parse::<BroadcastMode>().unwrap(), m);
        }
        assert!("sometimes".parse::<BroadcastMode>().is_err());
    }

    #[test]
    fn override_modes() {
        let v0 = pv(&[0.0]);
        let mut always = ClusterBroadcast::new(&v0, small_predictor(), 3, 2);
        let mut never = always.clone();
        let mut prev = v0.clone();
        for step in 1..6 {
            let next = pv(&[step as f64]);
            assert!(always.on_aggregation(&prev, &next, 2, BroadcastMode::Always, None, false, 0.0).unwrap().broadcast);
            assert!(!never.on_aggregation(&prev, &next, 2, BroadcastMode::Never, None, false, 0.0).unwrap().broadcast);
            prev = next;
        }
        assert_eq!(always.bookkeeping.v_broadcast, prev);
        assert_eq!(never.bookkeeping.v_broadcast, v0);
    }

    #[test]
    fn oracle_waits_while_gap_is_small() {
        let v0 = pv(&[0.0]);
        let mut st = ClusterBroadcast::new(&v0, small_predictor(), 3, 1);
        let v1 = pv(&[1.0]);
        // gap 1, next change 2: keep waiting
        let d = st.on_aggregation(&v0, &v1, 1, BroadcastMode::Oracle, Some(&pv(&[3.0])), false, 0.0).unwrap();
        assert!(!d.broadcast);
        assert!(d.resolved.is_none());
        // gap 3, next change 0.5: broadcast
        let v2 = pv(&[3.0]);
        let d = st.on_aggregation(&v1, &v2, 1, BroadcastMode::Oracle, Some(&pv(&[3.5])), false, 1.0).unwrap();
        assert!(d.broadcast);
        // previous decision: prev v1, broadcast v0 (gap 1), next v2 (change 2) -> no
        assert!(!d.resolved.unwrap().1);
        // unchanged center right after a broadcast: nothing to send
        let d = st.on_aggregation(&v2, &v2, 1, BroadcastMode::Oracle, None, false, 2.0).unwrap();
        assert!(!d.broadcast);
    }

    #[test]
    fn expand_inherits_weights_and_resets_history() {
        let v0 = pv(&[0.0]);
        let mut parent = ClusterBroadcast::new(&v0, small_predictor(), 4, 2);
        parent.history.record(2.0).unwrap();
        parent.history.record(1.0).unwrap();
        let child = parent.maintain_on_expand(0.7, 1).unwrap();
        assert_eq!(child.predictor.weights(), parent.predictor.weights());
        assert_eq!(child.history.records(), vec![0.0, 0.0, 0.0, 0.7]);
    }

    #[test]
    fn merge_marks_center_broadcast() {
        let a = ClusterBroadcast::new(&pv(&[0.0]), small_predictor(), 3, 1);
        let b = ClusterBroadcast::new(&pv(&[1.0]), small_predictor(), 3, 1);
        let m = ClusterBroadcast::maintain_on_merge(&a, &b, &pv(&[0.4]), 2).unwrap();
        assert_eq!(m.bookkeeping.v_broadcast, pv(&[0.4]));
        assert_eq!(m.history.k(), 3);
    }
}
