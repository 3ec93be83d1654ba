//! Stratified train/test splitting and k-fold assignment.
//!
//! Both operations group rows into strata, shuffle each stratum with a
//! single seeded generator (strata visited in sorted key order), and
//! allocate. Partitions are pure functions of (row identity, strata
//! choice, seed).

use super::LabeledDataset;
use crate::data::Source;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratifyBy {
    Class,
    ClassAndSource,
}

type StratumKey = (u8, Option<Source>);

fn strata(ds: &LabeledDataset, by: StratifyBy) -> BTreeMap<StratumKey, Vec<usize>> {
    let mut groups: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n_rows() {
        let key = match by {
            StratifyBy::Class => (ds.labels[i], None),
            StratifyBy::ClassAndSource => (ds.labels[i], Some(ds.sources[i])),
        };
        groups.entry(key).or_default().push(i);
    }
    groups
}

/// Split row indices into (train, test) so every stratum contributes
/// floor(len * test_fraction) test rows: off by less than one row from the
/// exact share. Single-row strata go to train with a warning.
pub fn stratified_split(
    ds: &LabeledDataset,
    test_fraction: f64,
    by: StratifyBy,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if ds.n_rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (key, mut idx) in strata(ds, by) {
        idx.shuffle(&mut rng);
        if idx.len() == 1 {
            log::warn!(
                "stratum (label {}, source {:?}) has a single row; keeping it in train",
                key.0,
                key.1.map(|s| s.as_str())
            );
            train.push(idx[0]);
            continue;
        }
        let n_test = (idx.len() as f64 * test_fraction).floor() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Assign every row to one of `k` folds; within each stratum the fold
/// counts differ by at most one. Returns sorted index sets that partition
/// 0..n.
pub fn stratified_kfold(
    ds: &LabeledDataset,
    k: usize,
    by: StratifyBy,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > ds.n_rows() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} available rows",
            ds.n_rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    // rolling offset so small strata don't all load the same fold
    let mut offset = 0usize;
    for (_, mut idx) in strata(ds, by) {
        idx.shuffle(&mut rng);
        for (j, &row) in idx.iter().enumerate() {
            folds[(offset + j) % k].push(row);
        }
        offset = (offset + idx.len()) % k;
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
