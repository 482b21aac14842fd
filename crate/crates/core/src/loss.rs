//! Classification losses with analytic gradients with respect to logits.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{all_finite, log_softmax_unchecked, softmax_unchecked};

/// Value used in place of `log 0` in the reverse term of symmetric cross-entropy.
pub const SCE_LOG_ZERO: f64 = -4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// Gradient with respect to the logits.
    pub grad: Vec<f64>,
}

/// Loss used for the stage-1 pre-screening classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierLoss {
    #[default]
    Banc,
    CrossEntropy,
    Sce,
}

fn check_pair(logits: &[f64], target: &[f64]) -> Result<()> {
    ensure!(!logits.is_empty(), InvalidInput, "empty logits");
    ensure!(
        logits.len() == target.len(),
        InvalidInput,
        "logits have length {}, target {}",
        logits.len(),
        target.len()
    );
    ensure!(all_finite(logits), InvalidInput, "non-finite logits");
    ensure!(
        target.iter().all(|t| t.is_finite() && *t >= 0.0),
        InvalidInput,
        "target must be non-negative and finite"
    );
    Ok(())
}

fn check_one_hot(target: &[f64]) -> Result<()> {
    let ones = target.iter().filter(|&&t| t == 1.0).count();
    let zeros = target.iter().filter(|&&t| t == 0.0).count();
    ensure!(
        ones == 1 && ones + zeros == target.len(),
        InvalidInput,
        "target is not one-hot: {target:?}"
    );
    Ok(())
}

/// `−Σ_k y_k log softmax(z)_k` for any non-negative target `y`.
/// Gradient `softmax(z) · Σy − y`.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> Result<LossGrad> {
    check_pair(logits, target)?;
    Ok(cross_entropy_unchecked(logits, target))
}

pub(crate) fn cross_entropy_unchecked(logits: &[f64], target: &[f64]) -> LossGrad {
    let logp = log_softmax_unchecked(logits);
    let p = softmax_unchecked(logits);
    let mass: f64 = target.iter().sum();
    let value = -target
        .iter()
        .zip(&logp)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, l)| t * l)
        .sum::<f64>();
    let grad = p.iter().zip(target).map(|(pi, ti)| pi * mass - ti).collect();
    LossGrad { value, grad }
}

/// `Σ_k r_k p_k` with `p = softmax(z)`; gradient `p_j (r_j − Σ_k r_k p_k)`.
fn linear_prob_penalty(logits: &[f64], weights: impl Fn(usize) -> f64) -> LossGrad {
    let p = softmax_unchecked(logits);
    let r: Vec<f64> = (0..p.len()).map(weights).collect();
    let value: f64 = r.iter().zip(&p).map(|(a, b)| a * b).sum();
    let grad = p.iter().zip(&r).map(|(pj, rj)| pj * (rj - value)).collect();
    LossGrad { value, grad }
}

fn combine(a: LossGrad, b: LossGrad) -> LossGrad {
    LossGrad {
        value: a.value + b.value,
        grad: a.grad.iter().zip(&b.grad).map(|(x, y)| x + y).collect(),
    }
}

/// Symmetric cross-entropy: `−Σ y_k log p_k − Σ log(y_k) p_k`, with `log 0`
/// replaced by [`SCE_LOG_ZERO`].
pub fn sce_loss(logits: &[f64], one_hot: &[f64]) -> Result<LossGrad> {
    check_pair(logits, one_hot)?;
    check_one_hot(one_hot)?;
    let ce = cross_entropy_unchecked(logits, one_hot);
    let reverse = linear_prob_penalty(logits, |k| {
        if one_hot[k] > 0.0 {
            -one_hot[k].ln()
        } else {
            -SCE_LOG_ZERO
        }
    });
    Ok(combine(ce, reverse))
}

/// BANC: `−Σ y_k log p_k + c Σ (1 − y_k) p_k`.
pub fn banc_loss(logits: &[f64], one_hot: &[f64], c: f64) -> Result<LossGrad> {
    check_pair(logits, one_hot)?;
    check_one_hot(one_hot)?;
    ensure!(
        c >= 0.0 && c.is_finite(),
        InvalidInput,
        "scaling coefficient must be >= 0, got {c}"
    );
    let ce = cross_entropy_unchecked(logits, one_hot);
    if c == 0.0 {
        return Ok(ce);
    }
    let penalty = linear_prob_penalty(logits, |k| c * (1.0 - one_hot[k]));
    Ok(combine(ce, penalty))
}

pub fn classifier_loss(kind: ClassifierLoss, logits: &[f64], one_hot: &[f64], c: f64) -> Result<LossGrad> {
    match kind {
        ClassifierLoss::Banc => banc_loss(logits, one_hot, c),
        ClassifierLoss::CrossEntropy => {
            check_one_hot(one_hot)?;
            cross_entropy(logits, one_hot)
        }
        ClassifierLoss::Sce => sce_loss(logits, one_hot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradient, finite_diff_grad, one_hot, softmax, SeededRng};

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn sce_perfect_prediction_is_zero() {
        let l = sce_loss(&[800.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn sce_closed_form_with_clamp() {
        let l = sce_loss(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((l.value - (LN2 + 2.0)).abs() < 1e-12);
        assert!((l.value - 2.6931).abs() < 1e-4);
    }

    #[test]
    fn banc_closed_form() {
        let l = banc_loss(&[0.0, 0.0], &[1.0, 0.0], 6.0).unwrap();
        assert!((l.value - (LN2 + 3.0)).abs() < 1e-12);
        assert!((l.value - 3.6931).abs() < 1e-4);
    }

    #[test]
    fn banc_perfect_prediction_is_zero() {
        for c in [0.0, 1.0, 6.0, 50.0] {
            assert_eq!(banc_loss(&[900.0, 0.0], &[1.0, 0.0], c).unwrap().value, 0.0);
        }
    }

    #[test]
    fn banc_zero_c_is_cross_entropy() {
        let mut rng = SeededRng::new(4);
        for _ in 0..50 {
            let z: Vec<f64> = (0..5).map(|_| 3.0 * rng.normal()).collect();
            let y = one_hot(rng.below(5), 5);
            let b = banc_loss(&z, &y, 0.0).unwrap();
            let c = cross_entropy(&z, &y).unwrap();
            assert!((b.value - c.value).abs() <= 1e-12);
        }
    }

    #[test]
    fn banc_penalty_equals_c_times_off_label_mass() {
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let k = 2 + rng.below(6);
            let z: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
            let label = rng.below(k);
            let y = one_hot(label, k);
            let c = 10.0 * rng.uniform();
            let gap = banc_loss(&z, &y, c).unwrap().value - cross_entropy(&z, &y).unwrap().value;
            let p = softmax(&z).unwrap();
            let expected = c * (1.0 - p[label]);
            assert!((gap - expected).abs() < 1e-12);
            assert!(gap >= -1e-15 && gap <= c + 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(6);
        for _ in 0..100 {
            let k = 2 + rng.below(4);
            let z: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
            let y = one_hot(rng.below(k), k);
            let c = 8.0 * rng.uniform();
            for kind in [ClassifierLoss::Banc, ClassifierLoss::Sce, ClassifierLoss::CrossEntropy] {
                let analytic = classifier_loss(kind, &z, &y, c).unwrap().grad;
                let numeric = finite_diff_grad(|v| classifier_loss(kind, v, &y, c).unwrap().value, &z, 1e-5).unwrap();
                let r = check_gradient(&analytic, &numeric, 1e-4);
                assert!(r.passed, "{kind:?}: {r:?}");
            }
        }
    }

    #[test]
    fn banc_gradient_stable_across_eps() {
        let z = [0.4, -1.3, 2.2, 0.0];
        let y = one_hot(2, 4);
        let analytic = banc_loss(&z, &y, 6.0).unwrap().grad;
        for eps in [1e-4, 1e-5] {
            let numeric = finite_diff_grad(|v| banc_loss(v, &y, 6.0).unwrap().value, &z, eps).unwrap();
            assert!(check_gradient(&analytic, &numeric, 1e-4).passed);
        }
    }

    #[test]
    fn rejects_non_one_hot() {
        assert!(banc_loss(&[0.0, 0.0], &[0.5, 0.5], 1.0).is_err());
        assert!(sce_loss(&[0.0, 0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(banc_loss(&[0.0, 0.0], &[1.0, 0.0], -1.0).is_err());
    }
}
