use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax restricted to the entries where `mask` is true. Masked-out
/// entries come back as exactly `0.0`.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::shape("masked_softmax", logits.len(), mask.len()));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyBag);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

fn check_class_inputs(label: usize, class_weights: [f64; 2]) -> Result<()> {
    if label > 1 {
        return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
    }
    if !(class_weights[0] > 0.0 && class_weights[1] > 0.0) {
        return Err(Error::invalid(format!(
            "class weights must be positive, got {class_weights:?}"
        )));
    }
    Ok(())
}

/// `-w[label] · ln(p[label])` with the probability clamped away from 0 and 1.
pub fn weighted_cross_entropy(probs: [f64; 2], label: usize, class_weights: [f64; 2]) -> Result<f64> {
    check_class_inputs(label, class_weights)?;
    let p = probs[label].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(-class_weights[label] * p.ln())
}

/// Gradient of [`weighted_cross_entropy`] with respect to the two logits
/// when `probs = sigmoid(logits)` elementwise. Inside the clamp region the
/// loss is flat, so the gradient is zero there.
pub fn weighted_cross_entropy_grad(
    probs: [f64; 2],
    label: usize,
    class_weights: [f64; 2],
) -> Result<[f64; 2]> {
    check_class_inputs(label, class_weights)?;
    let p = probs[label];
    let mut g = [0.0; 2];
    if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
        g[label] = -class_weights[label] * (1.0 - p);
    }
    Ok(g)
}

/// Training objective on the two sigmoid outputs.
///
/// `LabelOutput` is [`weighted_cross_entropy`] itself. Because the outputs
/// are independent sigmoids it never penalises the other output, so it is
/// minimised by driving both logits to +inf and does not by itself teach the
/// positive output to rank bags. `OneHotBce` adds the matching
/// `-ln(1 - p[other])` term, i.e. binary cross-entropy of each output
/// against the one-hot target, scaled by the class weight of the label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    LabelOutput,
    #[default]
    OneHotBce,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::LabelOutput => "label_output",
            Objective::OneHotBce => "one_hot_bce",
        }
    }

    pub fn loss(self, probs: [f64; 2], label: usize, class_weights: [f64; 2]) -> Result<f64> {
        let selected = weighted_cross_entropy(probs, label, class_weights)?;
        Ok(match self {
            Objective::LabelOutput => selected,
            Objective::OneHotBce => {
                let q = (1.0 - probs[1 - label]).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                selected - class_weights[label] * q.ln()
            }
        })
    }

    /// Gradient of [`Objective::loss`] with respect to the two logits.
    pub fn logit_grad(self, probs: [f64; 2], label: usize, class_weights: [f64; 2]) -> Result<[f64; 2]> {
        let mut g = weighted_cross_entropy_grad(probs, label, class_weights)?;
        if self == Objective::OneHotBce {
            let other = 1 - label;
            let q = 1.0 - probs[other];
            if q > PROB_CLAMP && q < 1.0 - PROB_CLAMP {
                g[other] = class_weights[label] * probs[other];
            }
        }
        Ok(g)
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_output" => Ok(Objective::LabelOutput),
            "one_hot_bce" => Ok(Objective::OneHotBce),
            other => Err(Error::invalid(format!("unknown objective `{other}`"))),
        }
    }
}

/// Inverse-frequency class weights `N / (2 N_c)`.
pub fn balance_weights(label_counts: [usize; 2]) -> Result<[f64; 2]> {
    if label_counts.contains(&0) {
        return Err(Error::DegenerateClasses(label_counts));
    }
    let total = (label_counts[0] + label_counts[1]) as f64;
    Ok([
        total / (2.0 * label_counts[0] as f64),
        total / (2.0 * label_counts[1] as f64),
    ])
}
