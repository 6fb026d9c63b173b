//! Distribution statistics of the coupling multiplier `q` across batches:
//! mean, population standard deviation, coefficient of variation, and an
//! equal-width histogram over [0, 1].

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::grad::npc_multiplier;

/// Default histogram resolution.
pub const DEFAULT_BINS: usize = 20;
/// Default number of batches drawn per sweep size.
pub const DEFAULT_BATCHES_PER_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Summary of a set of coupling multipliers.
#[derive(Debug, Clone)]
pub struct NpcStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Coefficient of variation `std / mean` (0 when the mean is 0).
    pub cv: f64,
    /// Equal-width bins partitioning [0, 1]; the last bin is right-closed.
    pub histogram: Vec<HistogramBin>,
    pub n_anchors: usize,
}

impl NpcStats {
    /// Index of the most populated bin (lowest index wins ties).
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (i, bin) in self.histogram.iter().enumerate() {
            if bin.count > self.histogram[best].count {
                best = i;
            }
        }
        best
    }
}

/// Mean, spread, and histogram of q values pooled from one or more batches.
pub fn npc_stats(q_values: &[f64], bins: usize) -> Result<NpcStats> {
    if q_values.is_empty() {
        return Err(Error::EmptyInput { what: "q values" });
    }
    if bins == 0 {
        return Err(Error::InvalidConfig {
            reason: "histogram needs at least 1 bin".into(),
        });
    }
    if let Some((index, &value)) = q_values
        .iter()
        .enumerate()
        .find(|(_, q)| !(0.0..=1.0).contains(*q))
    {
        return Err(Error::QOutOfRange { index, value });
    }

    let n = q_values.len() as f64;
    let mean = q_values.iter().sum::<f64>() / n;
    let var = q_values.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let cv = if mean > 0.0 { std / mean } else { 0.0 };

    let mut counts = vec![0usize; bins];
    for q in q_values {
        let idx = ((q * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count,
        })
        .collect();

    Ok(NpcStats {
        mean,
        std,
        cv,
        histogram,
        n_anchors: q_values.len(),
    })
}

/// Coupling statistics per batch size, in the order the sizes were given.
///
/// `source(size, index)` supplies the `index`-th batch of `size` samples;
/// generator failures propagate. Every anchor of every drawn batch
/// contributes one q value.
pub fn batch_size_sweep<F>(
    mut source: F,
    sizes: &[usize],
    tau: f64,
    batches_per_size: usize,
    bins: usize,
) -> Result<Vec<(usize, NpcStats)>>
where
    F: FnMut(usize, usize) -> Result<EmbeddingBatch>,
{
    if sizes.is_empty() {
        return Err(Error::EmptyInput { what: "sweep sizes" });
    }
    if let Some(&bad) = sizes.iter().find(|s| **s < 2) {
        return Err(Error::InvalidConfig {
            reason: format!("sweep sizes must be >= 2, got {bad}"),
        });
    }
    if batches_per_size == 0 {
        return Err(Error::InvalidConfig {
            reason: "batches_per_size must be >= 1".into(),
        });
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut q_values = Vec::with_capacity(2 * size * batches_per_size);
        for b in 0..batches_per_size {
            let batch = source(size, b)?;
            q_values.extend_from_slice(npc_multiplier(&batch, tau)?.values());
        }
        out.push((size, npc_stats(&q_values, bins)?));
    }
    Ok(out)
}

/// Deterministic random-unit-vector batch source for sweeps.
pub fn random_unit_source(seed: u64, dim: usize) -> impl FnMut(usize, usize) -> Result<EmbeddingBatch> {
    move |size, index| {
        EmbeddingBatch::random_unit(mix_seed(seed, size as u64, index as u64), size, dim)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive an independent stream seed from a base seed and two indices.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a ^ splitmix64(b)))
}

/// CSV rows `batch_size,mean_q,std_q,cv,bin_lo,bin_hi,count`: one summary row
/// per size with empty bin fields, then one row per bin.
pub fn sweep_to_csv(results: &[(usize, NpcStats)]) -> String {
    let mut out = String::from("batch_size,mean_q,std_q,cv,bin_lo,bin_hi,count\n");
    for (size, stats) in results {
        out.push_str(&format!("{size},{},{},{},,,\n", stats.mean, stats.std, stats.cv));
        for bin in &stats.histogram {
            out.push_str(&format!(
                "{size},{},{},{},{},{},{}\n",
                stats.mean, stats.std, stats.cv, bin.lo, bin.hi, bin.count
            ));
        }
    }
    out
}
