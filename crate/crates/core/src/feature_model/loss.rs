use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class multipliers on the cross-entropy loss, indexed by [`Label::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CostWeights([f64; 4]);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostWeightError {
    #[error("cost weights need exactly 4 entries, got {0}")]
    WrongLength(usize),
    #[error("cost weight for {0} must be positive and finite")]
    NonPositive(Label),
    #[error("class {0} has zero frequency")]
    ZeroFraction(Label),
}

impl CostWeights {
    pub fn uniform() -> Self {
        CostWeights([1.0; 4])
    }

    pub fn new(w: [f64; 4]) -> Result<Self, CostWeightError> {
        for l in Label::ALL {
            let v = w[l.index()];
            if !(v > 0.0 && v.is_finite()) {
                return Err(CostWeightError::NonPositive(l));
            }
        }
        Ok(CostWeights(w))
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl TryFrom<Vec<f64>> for CostWeights {
    type Error = CostWeightError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; 4] = v.as_slice().try_into().map_err(|_| CostWeightError::WrongLength(v.len()))?;
        CostWeights::new(arr)
    }
}

impl From<CostWeights> for Vec<f64> {
    fn from(w: CostWeights) -> Self {
        w.0.to_vec()
    }
}

/// Inverse class frequencies rescaled to mean 1.
pub fn default_cost_weights(distribution: &[f64; 4]) -> Result<CostWeights, CostWeightError> {
    let mut inv = [0.0; 4];
    for l in Label::ALL {
        let f = distribution[l.index()];
        if f <= 0.0 {
            return Err(CostWeightError::ZeroFraction(l));
        }
        inv[l.index()] = 1.0 / f;
    }
    let mean = inv.iter().sum::<f64>() / 4.0;
    CostWeights::new(inv.map(|v| v / mean))
}

/// `-w[gold] * ln(max(probs[gold], 1e-12))`
pub fn weighted_cross_entropy(probs: &[f64; 4], gold: Label, weights: &CostWeights) -> f64 {
    -weights.get(gold) * probs[gold.index()].max(PROB_FLOOR).ln()
}

/// Mean of per-example weighted losses.
pub fn batch_weighted_cross_entropy<'a, I>(items: I, weights: &CostWeights) -> f64
where
    I: IntoIterator<Item = (&'a [f64; 4], Label)>,
{
    let (sum, n) = items
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (p, g)| (s + weighted_cross_entropy(p, g, weights), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Loss from logits through log-sum-exp: `w[gold] * (lse(z) - z[gold])`.
pub fn weighted_cross_entropy_logits(logits: &[f64; 4], gold: Label, weights: &CostWeights) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    weights.get(gold) * (lse - logits[gold.index()])
}

/// Gradient of [`weighted_cross_entropy_logits`] w.r.t. the logits, given the
/// softmax of those logits: `w[gold] * (p - onehot(gold))`.
pub fn logits_grad(probs: &[f64; 4], gold: Label, weights: &CostWeights) -> [f64; 4] {
    let w = weights.get(gold);
    let mut g = probs.map(|p| w * p);
    g[gold.index()] -= w;
    g
}

pub fn softmax4(z: &[f64; 4]) -> [f64; 4] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax_label(probs: &[f64; 4]) -> Label {
    let mut best = 0;
    for i in 1..4 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Label::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_probs_give_ln4() {
        for g in Label::ALL {
            let l = weighted_cross_entropy(&[0.25; 4], g, &CostWeights::uniform());
            assert!((l - 4f64.ln()).abs() < 1e-15);
            assert!((l - 1.3863).abs() < 1e-4);
        }
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let w = CostWeights::new([3.0, 0.5, 2.0, 7.0]).unwrap();
        assert_eq!(weighted_cross_entropy(&[0.0, 1.0, 0.0, 0.0], Label::Deny, &w), 0.0);
    }

    #[test]
    fn loss_is_linear_in_weight() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let w1 = CostWeights::new([1.0, 1.5, 1.0, 1.0]).unwrap();
        let w2 = CostWeights::new([1.0, 3.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            2.0 * weighted_cross_entropy(&p, Label::Deny, &w1),
            weighted_cross_entropy(&p, Label::Deny, &w2)
        );
    }

    #[test]
    fn unit_weights_reduce_to_plain_cross_entropy() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for g in Label::ALL {
            assert_eq!(weighted_cross_entropy(&p, g, &CostWeights::uniform()), -p[g.index()].ln());
        }
    }

    #[test]
    fn logit_form_matches_prob_form() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let p = softmax4(&z);
        let w = CostWeights::new([0.6, 1.4, 1.9, 0.1]).unwrap();
        for g in Label::ALL {
            let a = weighted_cross_entropy(&p, g, &w);
            let b = weighted_cross_entropy_logits(&z, g, &w);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_prevents_infinite_loss() {
        let l = weighted_cross_entropy(&[1.0, 0.0, 0.0, 0.0], Label::Deny, &CostWeights::uniform());
        assert!((l - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn inverse_frequency_weights() {
        assert_eq!(default_cost_weights(&[0.25; 4]).unwrap(), CostWeights::uniform());
        let w = default_cost_weights(&[0.139, 0.066, 0.048, 0.724]).unwrap().as_array();
        // hand arithmetic: inverses 7.194, 15.152, 20.833, 1.381; mean 11.140
        let expected = [0.646, 1.360, 1.870, 0.124];
        for i in 0..4 {
            assert!((w[i] - expected[i]).abs() < 5e-4, "{i}: {}", w[i]);
        }
        assert!((w.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert_eq!(
            default_cost_weights(&[0.5, 0.0, 0.5, 0.0]).unwrap_err(),
            CostWeightError::ZeroFraction(Label::Deny)
        );
    }

    #[test]
    fn cost_weights_serde_checks_length() {
        assert!(serde_json::from_str::<CostWeights>("[1.0, 2.0]").is_err());
        assert!(serde_json::from_str::<CostWeights>("[1.0, 2.0, 0.0, 1.0]").is_err());
        let w: CostWeights = serde_json::from_str("[1.0, 2.0, 3.0, 4.0]").unwrap();
        assert_eq!(w.get(Label::Comment), 4.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_label(&[0.25; 4]), Label::Support);
        assert_eq!(argmax_label(&[0.1, 0.7, 0.1, 0.1]), Label::Deny);
        assert_eq!(argmax_label(&[0.1, 0.4, 0.4, 0.1]), Label::Deny);
    }
}
