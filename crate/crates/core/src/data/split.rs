use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{labels::MedianThreshold, Manifest};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Patient attribute used to form stratification cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyKey {
    /// The manifest's binary label.
    Label,
    /// Raw score split at the median of all patients.
    RawScoreMedian,
}

impl fmt::Display for StratifyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StratifyKey::Label => "label",
            StratifyKey::RawScoreMedian => "raw_score_median",
        })
    }
}

impl FromStr for StratifyKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(StratifyKey::Label),
            "raw_score_median" => Ok(StratifyKey::RawScoreMedian),
            other => Err(Error::invalid(format!("unknown stratify key `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Patient-level held-out test set plus `k` train/validation folds over the
/// remaining patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub k: usize,
    pub test_fraction: f64,
    pub stratify_keys: Vec<StratifyKey>,
    pub test_patients: Vec<String>,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: SplitPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Patients that are not in the test set.
    pub fn development_patients(&self) -> BTreeSet<&str> {
        self.folds
            .iter()
            .flat_map(|f| f.train.iter().chain(&f.val))
            .map(String::as_str)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::invalid(format!(
                "split declares k = {} but has {} folds",
                self.k,
                self.folds.len()
            )));
        }
        let test: BTreeSet<&str> = self.test_patients.iter().map(String::as_str).collect();
        let dev = self.development_patients();
        if let Some(p) = test.intersection(&dev).next() {
            return Err(Error::invalid(format!("patient {p} is in test and in a fold")));
        }
        let mut seen_val = BTreeSet::new();
        for (i, fold) in self.folds.iter().enumerate() {
            let train: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
            let val: BTreeSet<&str> = fold.val.iter().map(String::as_str).collect();
            if let Some(p) = train.intersection(&val).next() {
                return Err(Error::invalid(format!("fold {i}: {p} in train and val")));
            }
            let union: BTreeSet<&str> = train.union(&val).copied().collect();
            if union != dev {
                return Err(Error::invalid(format!(
                    "fold {i}: train + val does not cover the development patients"
                )));
            }
            for p in val {
                if !seen_val.insert(p) {
                    return Err(Error::invalid(format!("{p} is validation in two folds")));
                }
            }
        }
        Ok(())
    }
}

fn stratum_of(manifest: &Manifest, patient: &str, keys: &[StratifyKey], median: Option<MedianThreshold>) -> Result<String> {
    let mut parts = Vec::with_capacity(keys.len());
    for key in keys {
        let v = match key {
            StratifyKey::Label => manifest.patient_label(patient)?.map(|l| l.to_string()),
            StratifyKey::RawScoreMedian => manifest
                .patient_score(patient)?
                .zip(median)
                .map(|(s, t)| t.apply(s as f64).to_string()),
        };
        parts.push(v.unwrap_or_else(|| "NA".into()));
    }
    Ok(parts.join("|"))
}

/// Patient-level stratified split.
///
/// Within each stratum (ordered by key) patients are shuffled, the first
/// `round(test_fraction · n_stratum)` go to the test set and the rest are
/// dealt round-robin over the `k` validation folds. The dealing position
/// carries over between strata so fold sizes differ by at most one.
pub fn stratified_split(
    manifest: &Manifest,
    test_fraction: f64,
    k: usize,
    stratify_keys: &[StratifyKey],
    seed: u64,
) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    if k < 2 {
        return Err(Error::invalid(format!("need k >= 2 folds, got {k}")));
    }
    let patients = manifest.patients();
    let median = if stratify_keys.contains(&StratifyKey::RawScoreMedian) {
        let mut scores = Vec::new();
        for p in patients.keys() {
            if let Some(s) = manifest.patient_score(p)? {
                scores.push(s as f64);
            }
        }
        Some(MedianThreshold::fit(&scores)?)
    } else {
        None
    };

    let mut strata: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in patients.keys() {
        strata
            .entry(stratum_of(manifest, p, stratify_keys, median)?)
            .or_default()
            .push(p.to_string());
    }

    let mut rng = rng_for(seed, 0x5E11);
    let mut test = Vec::new();
    let mut fold_members: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut deal = 0usize;
    for (key, mut members) in strata {
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        let rest = members.split_off(n_test);
        if rest.len() < k {
            return Err(Error::invalid(format!(
                "stratum `{key}` has {} development patients, fewer than k = {k}",
                rest.len()
            )));
        }
        test.extend(members);
        for p in rest {
            fold_members[deal % k].push(p);
            deal += 1;
        }
    }

    test.sort();
    fold_members.iter_mut().for_each(|f| f.sort());
    let folds = (0..k)
        .map(|i| {
            let mut train: Vec<String> = fold_members
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().cloned())
                .collect();
            train.sort();
            Fold {
                train,
                val: fold_members[i].clone(),
            }
        })
        .collect();
    let plan = SplitPlan {
        seed,
        k,
        test_fraction,
        stratify_keys: stratify_keys.to_vec(),
        test_patients: test,
        folds,
    };
    plan.validate()?;
    Ok(plan)
}
