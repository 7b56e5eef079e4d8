//! Batch-means estimation and seed derivation.

/// Streaming batch-means accumulator for a run of known length.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_len: u64,
    batches: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
    seen: u64,
}

impl BatchMeans {
    /// `total` samples split into `batches` contiguous batches; the last
    /// batch absorbs the remainder.
    pub fn new(total: u64, batches: usize) -> Self {
        let batches = batches.max(1).min(total.max(1) as usize);
        Self {
            batch_len: (total / batches as u64).max(1),
            batches,
            sums: vec![0.0; batches],
            counts: vec![0; batches],
            seen: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        let b = ((self.seen / self.batch_len) as usize).min(self.batches - 1);
        self.sums[b] += x;
        self.counts[b] += 1;
        self.seen += 1;
    }

    pub fn count(&self) -> u64 {
        self.seen
    }

    /// Overall mean and batch-means standard error.
    pub fn finish(&self) -> (f64, f64) {
        let total: f64 = self.sums.iter().sum();
        let mean = if self.seen == 0 { 0.0 } else { total / self.seen as f64 };
        let means: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n > 0)
            .map(|(s, &n)| s / n as f64)
            .collect();
        let k = means.len();
        if k < 2 {
            return (mean, 0.0);
        }
        let m = means.iter().sum::<f64>() / k as f64;
        let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (k - 1) as f64;
        (mean, (var / k as f64).sqrt())
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th variation of an experiment.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}
