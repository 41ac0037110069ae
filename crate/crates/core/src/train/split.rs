//! Stratified train/validation/test splitting.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive_rng, Stream};

/// Index lists for the three partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of `labels` into train/val/test index sets.
///
/// Per class: `train = floor(n*r0)`, `val = floor(n*r1)`, test takes the
/// remainder, after a seeded shuffle of that class's items. Partitions are
/// disjoint and exhaustive, and deterministic for a given seed.
pub fn split_dataset(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (r0, r1, r2) = ratios;
    if r0 < 0.0 || r1 < 0.0 || r2 < 0.0 || (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "ratios ({r0}, {r1}, {r2}) must be non-negative and sum to 1"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Split("empty dataset".into()));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for class in 0..classes {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(Error::Split(format!("class {class} has no samples")));
        }
        let mut rng = derive_rng(seed, Stream::Split, &[class as u64]);
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = (n as f64 * r0).floor() as usize;
        let n_val = (n as f64 * r1).floor() as usize;
        split.train.extend(&members[..n_train]);
        split.val.extend(&members[n_train..n_train + n_val]);
        split.test.extend(&members[n_train + n_val..]);
    }
    Ok(split)
}
