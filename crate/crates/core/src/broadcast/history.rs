use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::population_variance;

/// Ring buffer of the most recent per-aggregation change magnitudes,
/// zero-padded on the old end so it always holds exactly `k` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKHistory {
    records: VecDeque<f64>,
}

impl TopKHistory {
    pub fn new(k: usize) -> Self {
        Self { records: std::iter::repeat_n(0.0, k.max(1)).collect() }
    }

    pub fn k(&self) -> usize {
        self.records.len()
    }

    pub fn record(&mut self, delta: f64) -> Result<()> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::invalid(format!("change magnitude must be finite and non-negative, got {delta}")));
        }
        self.records.pop_front();
        self.records.push_back(delta);
        Ok(())
    }

    /// Oldest first.
    pub fn records(&self) -> Vec<f64> {
        self.records.iter().copied().collect()
    }

    pub fn latest(&self) -> f64 {
        *self.records.back().expect("history is never empty")
    }

    /// Grow by padding zeros on the old end, or shrink by dropping the oldest.
    pub fn resize(&mut self, k: usize) {
        let k = k.max(1);
        while self.records.len() < k {
            self.records.push_front(0.0);
        }
        while self.records.len() > k {
            self.records.pop_front();
        }
    }

    pub fn variance(&self) -> f64 {
        population_variance(&self.records())
    }

    /// Combine two histories into one of length `k`. Each side contributes
    /// a quota proportional to its variance (the first side rounds up), its
    /// largest entries first; chosen entries keep their relative age order.
    pub fn merge(a: &TopKHistory, b: &TopKHistory, k: usize) -> TopKHistory {
        let k = k.max(1);
        let (va, vb) = (a.variance(), b.variance());
        let qa = if va + vb > 0.0 {
            (k as f64 * va / (va + vb)).ceil() as usize
        } else {
            k.div_ceil(2)
        };
        let qa = qa.min(k).min(a.k());
        let qb = (k - qa).min(b.k());
        let qa = (k - qb).min(a.k());

        let mut picked: Vec<(f64, usize, f64)> = Vec::with_capacity(k);
        for (side, h, q) in [(0usize, a, qa), (1, b, qb)] {
            let n = h.k();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| h.records[j].total_cmp(&h.records[i]).then(j.cmp(&i)));
            for &i in idx.iter().take(q) {
                // relative age in [0, 1), side breaks ties
                picked.push((i as f64 / n as f64, side, h.records[i]));
            }
        }
        picked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut out = TopKHistory::new(k);
        for (_, _, v) in picked {
            out.records.pop_front();
            out.records.push_back(v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(values: &[f64]) -> TopKHistory {
        let mut h = TopKHistory::new(values.len());
        for &v in values {
            h.record(v).unwrap();
        }
        h
    }

    #[test]
    fn padding_and_eviction() {
        let mut h = TopKHistory::new(3);
        h.record(5.0).unwrap();
        assert_eq!(h.records(), vec![0.0, 0.0, 5.0]);
        for v in [1.0, 2.0, 3.0, 4.0] {
            h.record(v).unwrap();
        }
        assert_eq!(h.records(), vec![2.0, 3.0, 4.0]);
        assert!(h.record(-1.0).is_err());
        assert!(h.record(f64::NAN).is_err());
    }

    #[test]
    fn resize_pads_old_end() {
        let mut h = hist(&[1.0, 2.0]);
        h.resize(4);
        assert_eq!(h.records(), vec![0.0, 0.0, 1.0, 2.0]);
        h.resize(1);
        assert_eq!(h.records(), vec![2.0]);
    }

    #[test]
    fn zero_variance_side_contributes_nothing() {
        let a = hist(&[2.0, 2.0, 2.0, 2.0]);
        let b = hist(&[1.0, 5.0, 3.0, 7.0]);
        assert_eq!(TopKHistory::merge(&a, &b, 4).records(), b.records());
    }

    #[test]
    fn equal_variance_splits_with_first_side_rounding_up() {
        let a = hist(&[1.0, 3.0, 1.0]);
        let b = hist(&[10.0, 12.0, 10.0]);
        let m = TopKHistory::merge(&a, &b, 3);
        // two from a (3 and one 1), one from b (12)
        let from_a = m.records().iter().filter(|&&v| v < 5.0).count();
        assert_eq!(from_a, 2);
        assert!(m.records().contains(&12.0));
        assert!(m.records().contains(&3.0));
    }
}
