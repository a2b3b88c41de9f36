//! Dataset splitting and training-split rebalancing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::Sample;
use crate::error::{Error, Result};

/// Disjoint, exhaustive train/val/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Deterministic shuffled partition by seed. Ratios must be positive and sum
/// to 1; sizes are floor(n * ratio) for train and val, remainder for test.
pub fn split_dataset(
    samples: Vec<Sample>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    if !(r_train > 0.0 && r_val > 0.0 && r_test > 0.0) {
        return Err(Error::invalid("split_dataset", "ratios must all be positive"));
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split_dataset", "ratios must sum to 1"));
    }
    let n = samples.len();
    if n < 3 {
        return Err(Error::invalid(
            "split_dataset",
            format!("need at least 3 samples, got {n}"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = (n as f64 * r_train).floor() as usize;
    let n_val = (n as f64 * r_val).floor() as usize;

    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<Sample>>, idxs: &[usize]| -> Vec<Sample> {
        idxs.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let train = take(&mut slots, &order[..n_train]);
    let val = take(&mut slots, &order[n_train..n_train + n_val]);
    let test = take(&mut slots, &order[n_train + n_val..]);
    Ok(DatasetSplit { train, val, test })
}

/// Histogram of the longitudinal action over fixed-width bins anchored at 0:
/// bin index = floor(a / bin_width).
pub fn action_histogram(samples: &[Sample], bin_width: f64) -> Result<BTreeMap<i64, usize>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::invalid("action_histogram", "bin width must be positive"));
    }
    let mut hist = BTreeMap::new();
    for s in samples {
        let bin = (s.action.longitudinal / bin_width).floor() as i64;
        *hist.entry(bin).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Pre/post histograms recorded by the preparation manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OversampleReport {
    pub bin_width: f64,
    pub pre_histogram: BTreeMap<i64, usize>,
    pub post_histogram: BTreeMap<i64, usize>,
}

/// Flatten-to-max oversampling of the training split: histogram the
/// longitudinal action into fixed-width bins, then duplicate samples chosen
/// uniformly at random within each nonempty bin until every bin count equals
/// the maximum. Originals are all retained (in order); duplicates are
/// appended per bin in ascending bin order.
///
/// Applies to the training split only; callers never pass val/test here.
pub fn oversample(train: &[Sample], bin_width: f64, seed: u64) -> Result<Vec<Sample>> {
    if train.is_empty() {
        return Err(Error::EmptyInput { context: "oversample" });
    }
    let hist = action_histogram(train, bin_width)?;
    let max_count = *hist.values().max().unwrap();

    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.iter().enumerate() {
        let bin = (s.action.longitudinal / bin_width).floor() as i64;
        members.entry(bin).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Sample> = train.to_vec();
    for (_, idxs) in members {
        let missing = max_count - idxs.len();
        for _ in 0..missing {
            let pick = idxs[rng.gen_range(0..idxs.len())];
            out.push(train[pick].clone());
        }
    }
    Ok(out)
}
