use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::SeedStream;

/// Unit of the cross-validation shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Segments are assigned independently.
    Segment,
    /// All segments of a trial share a fold.
    Trial,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Segment => "segment",
            SplitMode::Trial => "trial",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(SplitMode::Segment),
            "trial" => Ok(SplitMode::Trial),
            _ => Err(Error::Config(format!("split mode must be segment or trial, got {s:?}"))),
        }
    }
}

/// Disjoint, covering test folds over sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    /// Test indices of fold `i` (0-based), ascending.
    pub fn test(&self, i: usize) -> &[usize] {
        &self.folds[i]
    }

    /// Every index outside fold `i`, ascending.
    pub fn train(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles `0..n` with the seed and cuts it into `folds` parts whose sizes
/// differ by at most one; earlier parts take the remainder.
pub fn split_kfold(n: usize, seed: u64, folds: usize) -> Result<SplitPlan> {
    let groups: Vec<usize> = (0..n).collect();
    split_grouped(&groups, seed, folds)
}

/// Like [`split_kfold`], but indices sharing a group key always land in the
/// same fold. Parts are balanced by group count.
pub fn split_grouped<K: Ord + Clone>(keys: &[K], seed: u64, folds: usize) -> Result<SplitPlan> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut members: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        members.entry(k.clone()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = members.into_values().collect();
    if groups.len() < folds {
        return Err(Error::Data(format!(
            "{} units cannot be split into {folds} folds",
            groups.len()
        )));
    }
    groups.shuffle(&mut SeedStream::new(seed).rng("split"));
    let base = groups.len() / folds;
    let extra = groups.len() % folds;
    let mut out = Vec::with_capacity(folds);
    let mut it = groups.into_iter();
    for f in 0..folds {
        let take = base + usize::from(f < extra);
        let mut fold: Vec<usize> = it.by_ref().take(take).flatten().collect();
        fold.sort_unstable();
        out.push(fold);
    }
    Ok(SplitPlan { seed, folds: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_into_ten() {
        let plan = split_kfold(100, 3, 10).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 10));
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(plan, split_kfold(100, 3, 10).unwrap());
        assert_ne!(plan, split_kfold(100, 4, 10).unwrap());
        assert_eq!(plan.train(2).len(), 90);
    }

    #[test]
    fn uneven_and_too_small() {
        let plan = split_kfold(23, 0, 10).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert!(split_kfold(9, 0, 10).is_err());
        assert!(split_kfold(9, 0, 1).is_err());
    }

    #[test]
    fn groups_stay_together() {
        let keys: Vec<(u16, u16)> = (0..200).map(|i| (1, (i / 10) as u16)).collect();
        let plan = split_grouped(&keys, 5, 10).unwrap();
        for f in &plan.folds {
            assert_eq!(f.len(), 20);
            for &i in f {
                assert!(f.contains(&(i / 10 * 10)));
            }
        }
    }
}
