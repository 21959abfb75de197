//! Plain-value forms of the three loss terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions are kept inside `[PRED_CLAMP, 1 - PRED_CLAMP]` before taking logs.
pub const PRED_CLAMP: f64 = 1e-7;

/// Weighted values of the objective's terms. `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub cm: f64,
    pub theta_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bce: f64, cm: f64, theta_reg: f64) -> Self {
        Self {
            bce,
            cm,
            theta_reg,
            total: bce + cm + theta_reg,
        }
    }
}

/// Binary cross-entropy summed over the terms, plus how many predictions
/// had to be clamped away from 0 or 1.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> Result<(f64, usize)> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if !p.is_finite() {
            return Err(Error::NonFinite("prediction".into()));
        }
        let pc = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
        if pc != p {
            clamped += 1;
        }
        total -= if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
    }
    Ok((total, clamped))
}

/// Counterfactual hinge for one practice:
/// `Σ_i (1/μ) max(0, 1 - (m_i - m̄_i)(a - ā))²` with `ā = 1 - a`.
pub fn cm_loss(factual: &[f64], counterfactual: &[f64], answer: u8, mu: f64) -> Result<f64> {
    if factual.len() != counterfactual.len() {
        return Err(Error::InvalidArgument(format!(
            "{} factual vs {} counterfactual masteries",
            factual.len(),
            counterfactual.len()
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    let sign = answer_sign(answer)?;
    Ok(factual
        .iter()
        .zip(counterfactual)
        .map(|(m, mb)| {
            let gap = (1.0 - (m - mb) * sign).max(0.0);
            gap * gap / mu
        })
        .sum())
}

/// `a - ā` for a binary answer.
pub fn answer_sign(answer: u8) -> Result<f64> {
    match answer {
        0 => Ok(-1.0),
        1 => Ok(1.0),
        a => Err(Error::InvalidArgument(format!("answer {a} is not 0 or 1"))),
    }
}

/// Mean squared difference between learned and statistical difficulty.
pub fn theta_reg_loss(learned: &[f64], statistical: &[f64]) -> Result<f64> {
    if learned.len() != statistical.len() {
        return Err(Error::InvalidArgument(format!(
            "{} learned vs {} statistical difficulties",
            learned.len(),
            statistical.len()
        )));
    }
    if learned.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = learned.iter().zip(statistical).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / learned.len() as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn cm_examples() {
        assert_eq!(cm_loss(&[1.0], &[0.0], 1, 0.25).unwrap(), 0.0);
        assert_eq!(cm_loss(&[0.4], &[0.4], 1, 0.25).unwrap(), 4.0);
        // 0.3 and 0.6 are not representable, so the result can only match 1.96 to rounding
        let v = cm_loss(&[0.3], &[0.6], 0, 0.25).unwrap();
        assert!((v - 1.96).abs() <= 2.0 * f64::EPSILON * 1.96, "{v}");
        assert!(cm_loss(&[0.3], &[0.6], 2, 0.25).is_err());
        assert!(cm_loss(&[0.3], &[0.6], 1, 0.0).is_err());
    }

    #[test]
    fn bce_examples() {
        let (l, c) = bce_loss(&[0.5], &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(c, 0);
        let (l, _) = bce_loss(&[0.75, 0.75, 0.75], &[1, 1, 1]).unwrap();
        assert!((l / 3.0 + 0.75f64.ln()).abs() < 1e-15);
        let (l, c) = bce_loss(&[1.0, 0.0], &[1, 0]).unwrap();
        assert_eq!(c, 2);
        assert!(l < 1e-6);
    }

    #[test]
    fn theta_examples() {
        assert!((theta_reg_loss(&[0.9], &[0.5]).unwrap() - 0.16).abs() < 1e-15);
        assert_eq!(theta_reg_loss(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        let base = theta_reg_loss(&[0.6, 0.1], &[0.5, 0.3]).unwrap();
        let doubled = theta_reg_loss(&[0.7, -0.1], &[0.5, 0.3]).unwrap();
        assert!((doubled - 4.0 * base).abs() < 1e-15);
    }

    #[test]
    fn breakdown_total() {
        let b = LossBreakdown::new(0.5, 0.25, 0.125);
        assert_eq!(b.total, 0.875);
    }

    proptest! {
        #[test]
        fn cm_scales_with_inverse_mu(
            pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..5),
            answer in 0u8..2,
            mu in 0.01f64..4.0,
        ) {
            let (m, mb): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let at_mu = cm_loss(&m, &mb, answer, mu).unwrap();
            let at_quarter = cm_loss(&m, &mb, answer, 0.25).unwrap();
            prop_assert!((at_mu - 0.25 / mu * at_quarter).abs() <= 1e-12 * at_mu.abs().max(1.0));
        }

        #[test]
        fn cm_zero_iff_margin_met(m in 0.0f64..=1.0, mb in 0.0f64..=1.0, answer in 0u8..2) {
            let s = answer_sign(answer).unwrap();
            let l = cm_loss(&[m], &[mb], answer, 0.25).unwrap();
            prop_assert_eq!(l == 0.0, (m - mb) * s >= 1.0);
            prop_assert!(l >= 0.0);
        }
    }
}
