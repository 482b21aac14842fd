use crate::error::{ensure, Result};
use crate::numerics::{dot, log_sum_exp, softmax_unchecked};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    /// Gradient with respect to the positive key embedding.
    pub grad_key: Vec<f64>,
    /// Gradient with respect to each negative, in input order.
    pub grad_negatives: Vec<Vec<f64>>,
}

/// Queue contrastive loss for one query:
/// `−log[ exp(q·k/τ) / Σ_{z ∈ negatives} exp(q·z/τ) ]`.
///
/// By default the positive is not part of the denominator, so the loss can
/// be negative. `include_positive` switches to the usual InfoNCE form.
/// The query is a constant (stop-gradient); gradients are returned for the
/// key and the negatives only.
pub fn contrastive_loss(
    query: &[f64],
    key: &[f64],
    negatives: &[&[f64]],
    tau: f64,
    include_positive: bool,
) -> Result<ContrastiveLoss> {
    ensure!(
        !negatives.is_empty(),
        InvalidInput,
        "contrastive loss needs at least one negative"
    );
    ensure!(
        tau > 0.0 && tau.is_finite(),
        InvalidInput,
        "temperature must be positive, got {tau}"
    );
    let d = query.len();
    ensure!(
        key.len() == d,
        InvalidInput,
        "key dimension {} != query dimension {d}",
        key.len()
    );
    ensure!(
        negatives.iter().all(|z| z.len() == d),
        InvalidInput,
        "negative dimension mismatch"
    );

    let pos = dot(query, key) / tau;
    let mut sims: Vec<f64> = negatives.iter().map(|z| dot(query, z) / tau).collect();
    if include_positive {
        sims.push(pos);
    }
    let loss = log_sum_exp(&sims) - pos;
    let weights = softmax_unchecked(&sims);

    let key_coef = if include_positive {
        weights[weights.len() - 1] - 1.0
    } else {
        -1.0
    };
    let grad_key = query.iter().map(|q| key_coef * q / tau).collect();
    let grad_negatives = weights[..negatives.len()]
        .iter()
        .map(|w| query.iter().map(|q| w * q / tau).collect())
        .collect();
    Ok(ContrastiveLoss {
        loss,
        grad_key,
        grad_negatives,
    })
}
