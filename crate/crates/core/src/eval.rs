//! Patient-level scoring, ROC/AUC and k-fold summaries.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// One scored patient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPatient {
    pub patient_id: String,
    pub score: f64,
    pub label: u8,
}

/// Patient-level scores, one entry per patient, ordered by patient id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub entries: Vec<ScoredPatient>,
}

impl ScoredSet {
    pub fn from_parts(scores: &[f64], labels: &[u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("ScoredSet", scores.len(), labels.len()));
        }
        let entries = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| ScoredPatient {
                patient_id: format!("{i}"),
                score,
                label,
            })
            .collect();
        Ok(Self { entries })
    }

    /// Groups slide-level `(patient_id, score, label)` triples by patient and
    /// averages the scores. All slides of a patient must carry one label.
    pub fn from_slides<'a>(slides: impl IntoIterator<Item = (&'a str, f64, u8)>) -> Result<Self> {
        let mut grouped: BTreeMap<&str, (Vec<f64>, u8)> = BTreeMap::new();
        for (patient, score, label) in slides {
            let entry = grouped.entry(patient).or_insert_with(|| (Vec::new(), label));
            if entry.1 != label {
                return Err(Error::invalid(format!(
                    "patient {patient} has slides with conflicting labels"
                )));
            }
            entry.0.push(score);
        }
        let entries = grouped
            .into_iter()
            .map(|(patient, (scores, label))| {
                Ok(ScoredPatient {
                    patient_id: patient.to_string(),
                    score: patient_aggregate(&scores)?,
                    label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn checked(&self) -> Result<(usize, usize)> {
        if let Some(e) = self.entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite score for patient {}",
                e.patient_id
            )));
        }
        if let Some(e) = self.entries.iter().find(|e| e.label > 1) {
            return Err(Error::invalid(format!(
                "label {} for patient {} is not binary",
                e.label, e.patient_id
            )));
        }
        let pos = self.entries.iter().filter(|e| e.label == 1).count();
        let neg = self.entries.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::SingleClass);
        }
        Ok((pos, neg))
    }

    /// Entries sorted by descending score (stable, so ties keep id order).
    fn sorted_desc(&self) -> Vec<&ScoredPatient> {
        let mut v: Vec<&ScoredPatient> = self.entries.iter().collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score));
        v
    }
}

/// Mean of a patient's slide scores.
pub fn patient_aggregate(wsi_scores: &[f64]) -> Result<f64> {
    if wsi_scores.is_empty() {
        return Err(Error::invalid("patient without slide scores"));
    }
    Ok(wsi_scores.iter().sum::<f64>() / wsi_scores.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `(wins + ties / 2) / (n_pos · n_neg)`, counted exactly in integers.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.checked()?;
    let sorted = set.sorted_desc();
    // walk tie groups from the top; every negative below a positive is a win
    let mut wins: u64 = 0;
    let mut ties: u64 = 0;
    let mut pos_above: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        wins += pos_above * gn;
        ties += gp * gn;
        pos_above += gp;
        i = j;
    }
    Ok((2 * wins + ties) as f64 / (2 * pos as u64 * neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf.
    pub threshold: f64,
}

/// ROC curve swept over the distinct scores, from (0,0) to (1,1).
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<RocPoint>> {
    let (pos, neg) = set.checked()?;
    let sorted = set.sorted_desc();
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a sequence of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
}

pub fn kfold_report(fold_aucs: &[f64]) -> Result<FoldSummary> {
    if fold_aucs.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 folds to report a spread, got {}",
            fold_aucs.len()
        )));
    }
    let n = fold_aucs.len() as f64;
    let mean = fold_aucs.iter().sum::<f64>() / n;
    let ss: f64 = fold_aucs.iter().map(|a| (a - mean).powi(2)).sum();
    Ok(FoldSummary {
        mean,
        std: (ss / (n - 1.0)).sqrt(),
    })
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<roc csv>", e))?;
    Ok(())
}

pub fn write_fold_csv<W: Write>(fold_aucs: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "auc"])?;
    for (i, auc) in fold_aucs.iter().enumerate() {
        w.write_record([i.to_string(), format!("{auc:.10}")])?;
    }
    w.flush().map_err(|e| Error::io("<fold csv>", e))?;
    Ok(())
}
