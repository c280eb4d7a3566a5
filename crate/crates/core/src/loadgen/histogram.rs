//! Log-bucketed latency histogram with exact min/max.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramConfig {
    pub lowest_ns: u64,
    pub highest_ns: u64,
    /// Upper/lower edge ratio of every bucket.
    pub ratio: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            lowest_ns: 1_000,
            highest_ns: 100_000_000_000,
            ratio: 1.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistogramError {
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(String),
    #[error("histograms have different bucket configurations")]
    ConfigMismatch,
}

/// Counts per logarithmic bucket between `lowest_ns` and `highest_ns`, plus an
/// underflow and an overflow bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyHistogram {
    config: HistogramConfig,
    ln_ratio: f64,
    counts: Vec<u64>,
    count: u64,
    min: u64,
    max: u64,
    sum: u128,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl LatencyHistogram {
    pub fn new() -> Self {
        Self::with_config(HistogramConfig::default())
    }

    pub fn with_config(config: HistogramConfig) -> Self {
        assert!(config.ratio > 1.0 && config.lowest_ns > 0 && config.highest_ns > config.lowest_ns);
        let ln_ratio = config.ratio.ln();
        let inner = ((config.highest_ns as f64 / config.lowest_ns as f64).ln() / ln_ratio).ceil() as usize;
        LatencyHistogram {
            config,
            ln_ratio,
            counts: vec![0; inner + 2],
            count: 0,
            min: u64::MAX,
            max: 0,
            sum: 0,
        }
    }

    pub fn config(&self) -> HistogramConfig {
        self.config
    }

    pub fn bucket_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bucket_of(&self, ns: u64) -> usize {
        if ns < self.config.lowest_ns {
            return 0;
        }
        if ns >= self.config.highest_ns {
            return self.counts.len() - 1;
        }
        let i = ((ns as f64 / self.config.lowest_ns as f64).ln() / self.ln_ratio).floor() as usize;
        1 + i.min(self.counts.len() - 3)
    }

    pub fn record(&mut self, ns: u64) {
        let b = self.bucket_of(ns);
        self.counts[b] += 1;
        self.count += 1;
        self.min = self.min.min(ns);
        self.max = self.max.max(ns);
        self.sum += ns as u128;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn min(&self) -> Option<u64> {
        (self.count > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<u64> {
        (self.count > 0).then_some(self.max)
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }

    fn representative(&self, b: usize) -> u64 {
        let v = if b == 0 {
            self.min
        } else if b == self.counts.len() - 1 {
            self.max
        } else {
            let lo = self.config.lowest_ns as f64 * self.config.ratio.powi(b as i32 - 1);
            (lo * self.config.ratio.sqrt()).round() as u64
        };
        v.clamp(self.min, self.max)
    }

    /// Nearest-rank percentile: representative of the bucket holding the
    /// `ceil(q * count)`-th smallest sample.
    pub fn percentile(&self, q: f64) -> Result<u64, HistogramError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(HistogramError::InvalidQuantile(q.to_string()));
        }
        if self.count == 0 {
            return Err(HistogramError::EmptyHistogram);
        }
        let rank = ((q * self.count as f64).ceil() as u64).clamp(1, self.count);
        let mut seen = 0;
        for (b, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Ok(self.representative(b));
            }
        }
        unreachable!("rank <= count")
    }

    pub fn merge(&mut self, other: &LatencyHistogram) -> Result<(), HistogramError> {
        if self.config != other.config {
            return Err(HistogramError::ConfigMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.sum += other.sum;
        Ok(())
    }

    /// Non-mutating merge.
    pub fn merged(a: &LatencyHistogram, b: &LatencyHistogram) -> Result<LatencyHistogram, HistogramError> {
        let mut out = a.clone();
        out.merge(b)?;
        Ok(out)
    }
}
