use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MultiOmicsDataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || self.train <= 0.0 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative with a positive train share: {self:?}"
            )));
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::Config(format!("split fractions sum above 1: {self:?}")));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub labelled_fraction: f64,
    pub seed: u64,
}

fn round(x: f64) -> usize {
    x.round() as usize
}

/// `(train, val, test)` sizes for a group of `n`. With `min_one`, every
/// split with a positive fraction receives at least one member.
fn group_sizes(n: usize, f: &SplitFractions, min_one: bool) -> (usize, usize, usize) {
    let floor = |frac: f64| usize::from(min_one && frac > 0.0);
    let val = round(f.val * n as f64).max(floor(f.val));
    let test = round(f.test * n as f64).max(floor(f.test));
    let train = round(f.train * n as f64)
        .max(floor(f.train))
        .min(n.saturating_sub(val + test));
    (train, val, test)
}

pub fn split(
    ds: &MultiOmicsDataset,
    fractions: SplitFractions,
    seed: u64,
    stratified: bool,
) -> Result<SplitSpec> {
    fractions.validate()?;
    let mut rng = seed::rng(seed, "split", &[]);
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class = vec![Vec::new(); ds.n_classes()];
        for (i, &l) in ds.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class.retain(|g| !g.is_empty());
        by_class
    } else {
        vec![(0..ds.n_samples()).collect()]
    };
    let needed = [fractions.train, fractions.val, fractions.test]
        .iter()
        .filter(|&&f| f > 0.0)
        .count();
    let mut out = SplitSpec {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        labelled_fraction: 1.0,
        seed,
    };
    for (gi, mut group) in groups.into_iter().enumerate() {
        if stratified && group.len() < needed {
            let class = ds.labels[group[0]];
            return Err(Error::Data(format!(
                "class {} has {} samples, fewer than the {needed} stratified splits",
                ds.class_names[class],
                group.len()
            )));
        }
        let (n_train, n_val, n_test) = group_sizes(group.len(), &fractions, stratified);
        if n_val + n_test > group.len() {
            return Err(Error::Data(format!(
                "group {gi} of {} samples cannot hold {n_val} validation and {n_test} test rows",
                group.len()
            )));
        }
        group.shuffle(&mut rng);
        out.train.extend_from_slice(&group[..n_train]);
        out.val.extend_from_slice(&group[n_train..n_train + n_val]);
        out.test
            .extend_from_slice(&group[n_train + n_val..n_train + n_val + n_test]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Stratified draw of `round(fraction·|train|)` training rows, keeping at
/// least one row of every class present in the training split.
pub fn subsample_labels(
    split: &SplitSpec,
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(split.train.clone());
    }
    let n_classes = split.train.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); n_classes];
    for &i in &split.train {
        by_class[labels[i]].push(i);
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| !by_class[c].is_empty()).collect();
    let target = round(fraction * split.train.len() as f64);

    // floors (at least one per class), then largest remainders
    let mut quota = vec![0usize; n_classes];
    let mut remainders = Vec::new();
    for &c in &present {
        let exact = fraction * by_class[c].len() as f64;
        quota[c] = (exact.floor() as usize).max(1).min(by_class[c].len());
        remainders.push((exact - exact.floor(), c));
    }
    let assigned: usize = quota.iter().sum();
    if assigned > target {
        log::warn!(
            "label fraction {fraction} keeps {assigned} rows instead of {target} so that every class has one"
        );
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = target.saturating_sub(assigned);
    while left > 0 {
        let before = left;
        for &(_, c) in &remainders {
            if left == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }

    let mut out = Vec::with_capacity(target.max(assigned));
    for &c in &present {
        let mut rng = seed::rng(seed, "labels", &[c as u64]);
        let mut members = by_class[c].clone();
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..quota[c]]);
    }
    out.sort_unstable();
    Ok(out)
}
