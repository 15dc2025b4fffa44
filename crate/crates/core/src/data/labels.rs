//! Median and tertile binarisation of continuous genomic scores.
//!
//! Thresholds are fitted on one set of scores (the train + validation
//! patients) and applied to any other (the test patients), which keeps the
//! test side out of the threshold computation.

use crate::error::{Error, Result};

/// Linearly interpolated quantile on the inclusive grid `α (n - 1)`.
pub fn quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("quantile of an empty score set"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("quantile level {alpha} outside [0, 1]")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = alpha * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianThreshold {
    pub median: f64,
}

impl MedianThreshold {
    pub fn fit(scores: &[f64]) -> Result<Self> {
        Ok(Self {
            median: quantile(scores, 0.5)?,
        })
    }

    /// 1 iff strictly above the median.
    pub fn apply(&self, score: f64) -> u8 {
        u8::from(score > self.median)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TertileThresholds {
    pub lower: f64,
    pub upper: f64,
}

impl TertileThresholds {
    pub fn fit(scores: &[f64]) -> Result<Self> {
        Ok(Self {
            lower: quantile(scores, 1.0 / 3.0)?,
            upper: quantile(scores, 2.0 / 3.0)?,
        })
    }

    /// `Some(1)` in the top tertile, `Some(0)` in the bottom one, `None`
    /// (discard) in between. The upper test takes precedence when the
    /// thresholds coincide.
    pub fn apply(&self, score: f64) -> Option<u8> {
        if score >= self.upper {
            Some(1)
        } else if score <= self.lower {
            Some(0)
        } else {
            None
        }
    }
}

pub fn binarize_median(scores: &[f64]) -> Result<Vec<u8>> {
    let t = MedianThreshold::fit(scores)?;
    Ok(scores.iter().map(|&s| t.apply(s)).collect())
}

pub fn binarize_tertile(scores: &[f64]) -> Result<Vec<Option<u8>>> {
    let t = TertileThresholds::fit(scores)?;
    Ok(scores.iter().map(|&s| t.apply(s)).collect())
}
