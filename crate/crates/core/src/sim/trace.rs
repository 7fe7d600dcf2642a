use crate::coordination::StalenessMetrics;

use super::device::{DeviceClass, Direction};
use super::events::EventKind;

/// One line of the metrics stream, written after every processed event.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sim_time: f64,
    pub event: EventKind,
    pub client: Option<usize>,
    pub cluster: Option<usize>,
    pub staleness: Option<u64>,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub up_bytes_cum: u64,
    pub down_bytes_cum: u64,
    pub cluster_count: usize,
}

/// A completed model transfer; bytes count at `at`, the completion time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub at: f64,
    pub client: usize,
    pub direction: Direction,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub protocol: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub transfers: Vec<Transfer>,
    /// Per client, every `(time, accuracy)` change of its evaluated model.
    pub accuracy: Vec<Vec<(f64, f64)>>,
    pub final_accuracy: Vec<f64>,
    pub staleness: StalenessMetrics,
    pub ledger_entries: usize,
    pub accepted_pushes: usize,
    pub target_accuracy: Option<f64>,
    pub time_to_target: Option<f64>,
    /// Final cluster of each client, where the protocol has clusters.
    pub assignments: Vec<Option<usize>>,
    pub refinement_times: Vec<f64>,
    pub local_rounds: Vec<usize>,
    pub devices: Vec<DeviceClass>,
    pub end_time: f64,
}

impl RunTrace {
    pub fn clients(&self) -> usize {
        self.final_accuracy.len()
    }

    pub fn total_bytes(&self, direction: Direction) -> u64 {
        self.transfers.iter().filter(|t| t.direction == direction).map(|t| t.bytes).sum()
    }

    /// Bytes moved in `direction` with completion time `<= until`.
    pub fn bytes_until(&self, direction: Direction, until: f64) -> u64 {
        self.transfers.iter().filter(|t| t.direction == direction && t.at <= until).map(|t| t.bytes).sum()
    }

    pub fn peak_concurrency(&self, direction: Direction, window: f64) -> u64 {
        peak_concurrency(&self.transfers, direction, window)
    }

    pub fn final_mean_accuracy(&self) -> f64 {
        mean(&self.final_accuracy)
    }

    pub fn final_min_accuracy(&self) -> f64 {
        self.final_accuracy.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Accuracy of one client's evaluated model at time `t`.
    pub fn client_accuracy_at(&self, client: usize, t: f64) -> f64 {
        let series = &self.accuracy[client];
        let idx = series.partition_point(|&(at, _)| at <= t);
        if idx == 0 {
            series.first().map_or(0.0, |p| p.1)
        } else {
            series[idx - 1].1
        }
    }

    pub fn mean_accuracy_at(&self, t: f64) -> f64 {
        let accs: Vec<f64> = (0..self.clients()).map(|c| self.client_accuracy_at(c, t)).collect();
        mean(&accs)
    }

    /// First time the mean accuracy reaches `target`.
    pub fn time_to_reach(&self, target: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.mean_accuracy >= target).map(|r| r.sim_time)
    }

    /// First time at or after `from` that `client` reaches `target`.
    pub fn client_time_to_reach(&self, client: usize, target: f64, from: f64) -> Option<f64> {
        if self.client_accuracy_at(client, from) >= target {
            return Some(from);
        }
        self.accuracy[client].iter().find(|&&(at, acc)| at >= from && acc >= target).map(|&(at, _)| at)
    }
}

/// Largest byte total of transfers in `direction` completing inside any
/// window `[t, t + window)`.
pub fn peak_concurrency(transfers: &[Transfer], direction: Direction, window: f64) -> u64 {
    let mut pts: Vec<(f64, u64)> =
        transfers.iter().filter(|t| t.direction == direction).map(|t| (t.at, t.bytes)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = 0;
    let mut sum = 0;
    let mut lo = 0;
    for hi in 0..pts.len() {
        sum += pts[hi].1;
        while pts[hi].0 - pts[lo].0 >= window {
            sum -= pts[lo].1;
            lo += 1;
        }
        best = best.max(sum);
    }
    best
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(at: f64, bytes: u64) -> Transfer {
        Transfer { at, client: 0, direction: Direction::Down, bytes }
    }

    #[test]
    fn empty_peak_is_zero() {
        assert_eq!(peak_concurrency(&[], Direction::Up, 1.0), 0);
    }

    #[test]
    fn simultaneous_transfers_stack() {
        let ts: Vec<_> = (0..5).map(|_| t(3.0, 100)).collect();
        assert_eq!(peak_concurrency(&ts, Direction::Down, 1.0), 500);
        assert_eq!(peak_concurrency(&ts, Direction::Up, 1.0), 0);
    }

    #[test]
    fn spread_transfers_do_not_stack() {
        let ts = [t(0.0, 100), t(1.0, 100), t(2.5, 100), t(3.4, 100)];
        assert_eq!(peak_concurrency(&ts, Direction::Down, 1.0), 200);
        assert_eq!(peak_concurrency(&ts, Direction::Down, 0.5), 100);
    }
}
