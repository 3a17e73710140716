use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng;

const STREAM_OUTER: u64 = 21;
const STREAM_INNER: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    ByCase,
    ByPatient,
}

impl std::str::FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-case" | "case" => Ok(Grouping::ByCase),
            "by-patient" | "patient" => Ok(Grouping::ByPatient),
            _ => Err(Error::InvalidArgument(format!("unknown grouping `{s}` (by-case or by-patient)"))),
        }
    }
}

/// Case identity as seen by the splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseKey {
    pub case_id: u64,
    pub patient_id: u64,
}

/// Nested cross-validation assignment of case ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub grouping: Grouping,
    pub seed: u64,
    /// Test case ids of each outer fold.
    pub outer: Vec<Vec<u64>>,
    /// For each outer fold, the validation ids of its inner folds.
    pub inner: Vec<Vec<Vec<u64>>>,
}

/// Split `keys` into `k` folds. Groups (patients, or single cases) are
/// shuffled, then placed largest first into the currently smallest fold.
fn split(keys: &[CaseKey], k: usize, grouping: Grouping, seed: u64, path: &[u64]) -> Result<Vec<Vec<u64>>> {
    ensure!(k >= 2, InvalidArgument, "need at least 2 folds, got {k}");
    ensure!(keys.len() >= k, InvalidArgument, "{} cases cannot fill {k} folds", keys.len());
    let mut groups: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for key in keys {
        let g = match grouping {
            Grouping::ByCase => key.case_id,
            Grouping::ByPatient => key.patient_id,
        };
        groups.entry(g).or_default().push(key.case_id);
    }
    let mut groups: Vec<Vec<u64>> = groups.into_values().collect();
    let capacity = keys.len().div_ceil(k);
    if let Some(big) = groups.iter().find(|g| g.len() > capacity) {
        return Err(Error::InvalidArgument(format!(
            "a patient with {} cases exceeds the fold capacity of {capacity}",
            big.len()
        )));
    }
    groups.shuffle(&mut rng::stream(seed, path));
    // stable sort keeps the shuffled order among equal sizes
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let mut folds: Vec<Vec<u64>> = vec![Vec::new(); k];
    for g in groups {
        let target = (0..k).min_by_key(|&i| (folds[i].len(), i)).expect("k >= 2");
        folds[target].extend(g);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

pub fn make_fold_plan(keys: &[CaseKey], k_outer: usize, k_inner: usize, grouping: Grouping, seed: u64) -> Result<FoldPlan> {
    let ids: BTreeSet<u64> = keys.iter().map(|k| k.case_id).collect();
    ensure!(ids.len() == keys.len(), InvalidArgument, "duplicate case ids");
    let outer = split(keys, k_outer, grouping, seed, &[STREAM_OUTER])?;
    let mut inner = Vec::with_capacity(k_outer);
    for (f, test) in outer.iter().enumerate() {
        let train: Vec<CaseKey> = keys.iter().filter(|k| test.binary_search(&k.case_id).is_err()).copied().collect();
        inner.push(split(&train, k_inner, grouping, seed, &[STREAM_INNER, f as u64])?);
    }
    let plan = FoldPlan { grouping, seed, outer, inner };
    plan.validate(keys)?;
    Ok(plan)
}

fn disjoint_union(parts: &[Vec<u64>]) -> Option<BTreeSet<u64>> {
    let mut all = BTreeSet::new();
    for p in parts {
        for &id in p {
            if !all.insert(id) {
                return None;
            }
        }
    }
    Some(all)
}

impl FoldPlan {
    pub fn k_outer(&self) -> usize {
        self.outer.len()
    }

    pub fn outer_test(&self, fold: usize) -> &[u64] {
        &self.outer[fold]
    }

    pub fn outer_train(&self, fold: usize) -> Vec<u64> {
        let mut ids: Vec<u64> =
            self.outer.iter().enumerate().filter(|(i, _)| *i != fold).flat_map(|(_, f)| f.iter().copied()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn inner_val(&self, fold: usize, inner: usize) -> &[u64] {
        &self.inner[fold][inner]
    }

    pub fn inner_train(&self, fold: usize, inner: usize) -> Vec<u64> {
        let mut ids: Vec<u64> =
            self.inner[fold].iter().enumerate().filter(|(i, _)| *i != inner).flat_map(|(_, f)| f.iter().copied()).collect();
        ids.sort_unstable();
        ids
    }

    /// Partition and grouping invariants at both levels.
    pub fn validate(&self, keys: &[CaseKey]) -> Result<()> {
        let all: BTreeSet<u64> = keys.iter().map(|k| k.case_id).collect();
        let outer = disjoint_union(&self.outer).ok_or_else(|| Error::InvalidArgument("outer folds overlap".into()))?;
        ensure!(outer == all, InvalidArgument, "outer folds do not cover the dataset");
        ensure!(self.inner.len() == self.outer.len(), InvalidArgument, "inner plan missing for some outer fold");
        for f in 0..self.outer.len() {
            let train: BTreeSet<u64> = self.outer_train(f).into_iter().collect();
            let inner = disjoint_union(&self.inner[f])
                .ok_or_else(|| Error::InvalidArgument(format!("inner folds of outer fold {f} overlap")))?;
            ensure!(inner == train, InvalidArgument, "inner folds of outer fold {f} do not partition its training set");
        }
        if self.grouping == Grouping::ByPatient {
            let patient: BTreeMap<u64, u64> = keys.iter().map(|k| (k.case_id, k.patient_id)).collect();
            let check = |folds: &[Vec<u64>], level: &str| -> Result<()> {
                let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
                for (i, f) in folds.iter().enumerate() {
                    for id in f {
                        let p = patient[id];
                        if let Some(&j) = owner.get(&p) {
                            ensure!(j == i, InvalidArgument, "patient {p} spans {level} folds {j} and {i}");
                        }
                        owner.insert(p, i);
                    }
                }
                Ok(())
            };
            check(&self.outer, "outer")?;
            for inner in &self.inner {
                check(inner, "inner")?;
            }
        }
        Ok(())
    }
}
