/// Staleness of every accepted upload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StalenessLedger {
    values: Vec<u64>,
    max: u64,
    sum: u128,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessMetrics {
    pub q_max: u64,
    pub q_avg: f64,
    /// `sqrt(q_max * q_avg)`, comparable across runs only.
    pub rate_proxy: f64,
}

impl StalenessLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, staleness: u64) {
        self.values.push(staleness);
        self.max = self.max.max(staleness);
        self.sum += staleness as u128;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn metrics(&self) -> StalenessMetrics {
        if self.values.is_empty() {
            return StalenessMetrics { q_max: 0, q_avg: 0.0, rate_proxy: 0.0 };
        }
        let q_avg = self.sum as f64 / self.values.len() as f64;
        StalenessMetrics { q_max: self.max, q_avg, rate_proxy: (self.max as f64 * q_avg).sqrt() }
    }
}
