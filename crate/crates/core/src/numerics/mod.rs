//! Dense numerics: vector helpers, softmax, a small MLP with hand-coded
//! backprop, SGD, seeded randomness and a finite-difference oracle.

mod gradcheck;
mod mlp;
mod optim;
mod rng;

pub use gradcheck::{check_gradient, finite_diff_grad, relative_error, GradCheckReport};
pub use mlp::{Activation, Layer, Mlp, MlpGrad, MlpRecord, Trace};
pub use optim::{LrSchedule, Sgd};
pub use rng::SeededRng;

use crate::error::{ensure, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Returns `(v / ‖v‖, ‖v‖)`.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    ensure!(
        n > 0.0 && n.is_finite(),
        Numeric,
        "cannot normalize vector with norm {n}"
    );
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Pulls a gradient on `z = v / ‖v‖` back to `v`: `(g − z (z·g)) / ‖v‖`.
pub fn l2_normalize_backward(z: &[f64], norm: f64, grad_z: &[f64]) -> Vec<f64> {
    let zg = dot(z, grad_z);
    z.iter().zip(grad_z).map(|(zi, gi)| (gi - zi * zg) / norm).collect()
}

fn validate_logits(logits: &[f64]) -> Result<()> {
    ensure!(!logits.is_empty(), InvalidInput, "empty logit vector");
    ensure!(all_finite(logits), InvalidInput, "non-finite logit in {logits:?}");
    Ok(())
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    validate_logits(logits)?;
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    validate_logits(logits)?;
    Ok(log_softmax_unchecked(logits))
}

pub(crate) fn log_softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn normalize_backward_matches_fd() {
        let v = [0.3, -1.2, 2.0];
        let g = [0.7, 0.1, -0.4];
        let (z, n) = l2_normalize(&v).unwrap();
        let analytic = l2_normalize_backward(&z, n, &g);
        let f = |x: &[f64]| dot(&l2_normalize(x).unwrap().0, &g);
        let numeric = finite_diff_grad(f, &v, 1e-6).unwrap();
        assert!(check_gradient(&analytic, &numeric, 1e-6).passed);
    }

    proptest! {
        #[test]
        fn softmax_is_probability_vector(xs in proptest::collection::vec(-1e4f64..1e4, 1..12)) {
            let p = softmax(&xs).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(xs in proptest::collection::vec(-50f64..50.0, 1..10), c in -100f64..100.0) {
            let p = softmax(&xs).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
