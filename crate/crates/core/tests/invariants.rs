//! Property tests over the public API.

use proptest::prelude::*;
use tailnoise::datagen::{inject_symmetric, longtail_counts, synth_dataset, LongTailSpec, MixtureSpec};
use tailnoise::ensemble::{expert_loss, fuse, soft_class_counts, Expert, Fusion, SoftClassStats};
use tailnoise::numerics::SeededRng;
use tailnoise::refurbish::{rarity, refurbish_one, ClassStats, RefurbishConfig, SoftLabel};
use tailnoise::stage1::Prediction;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize, f64)> {
    (2usize..9).prop_flat_map(|k| (simplex(k), prop::collection::vec(1.0f64..1000.0, k), 0..k, 0.01f64..2.0))
}

proptest! {
    #[test]
    fn refurbished_labels_are_distributions((probs, counts, observed, sigma) in case()) {
        let stats = ClassStats::from_counts(counts).unwrap();
        let pred = Prediction::from_probs(probs.clone());
        let r = refurbish_one(0, &pred, observed, &stats, &RefurbishConfig { sigma }).unwrap();
        let y = r.soft_label.weights();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((0.0..=1.0).contains(&r.weight));
        if r.changed {
            // The observed class never loses mass relative to the prediction.
            prop_assert!(y[observed] >= probs[observed] - 1e-12);
        } else {
            prop_assert_eq!(y[observed], 1.0);
        }
    }

    #[test]
    fn rarity_is_a_decreasing_unit_score(a in 0.0f64..1.0, b in 0.0f64..1.0, sigma in 0.01f64..2.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(rarity(lo, sigma) >= rarity(hi, sigma));
        prop_assert!(rarity(hi, sigma) >= 0.0 && rarity(lo, sigma) <= 1.0);
    }

    #[test]
    fn soft_counts_conserve_mass(k in 2usize..8, n in 1usize..200, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let labels: Vec<SoftLabel> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
                let s: f64 = raw.iter().sum();
                SoftLabel::new(raw.iter().map(|x| x / s).collect()).unwrap()
            })
            .collect();
        let total = soft_class_counts(&labels).unwrap().total();
        prop_assert!((total - n as f64).abs() < 1e-9 * n as f64);
    }

    #[test]
    fn expert_losses_are_finite_and_nonnegative(
        z in prop::collection::vec(-20.0f64..20.0, 4),
        y in simplex(4),
        counts in prop::collection::vec(0.0f64..1e4, 4),
    ) {
        let stats = SoftClassStats::new(counts).unwrap();
        let y = SoftLabel::new(y).unwrap();
        for e in Expert::ALL {
            let l = expert_loss(e, &z, &y, &stats).unwrap();
            prop_assert!(l.value.is_finite() && l.value >= 0.0);
            // Gradient of a soft cross-entropy sums to zero across classes.
            prop_assert!(l.grad.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn fused_outputs_are_distributions(
        a in prop::collection::vec(-10.0f64..10.0, 5),
        b in prop::collection::vec(-10.0f64..10.0, 5),
        c in prop::collection::vec(-10.0f64..10.0, 5),
    ) {
        for fusion in [Fusion::ProbMean, Fusion::LogitMean] {
            let p = fuse(&[a.clone(), b.clone(), c.clone()], fusion).unwrap();
            prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn longtail_counts_are_non_increasing(k in 2usize..30, n1 in 10usize..2000, ir in 1.0f64..10.0) {
        let spec = LongTailSpec { num_classes: k, head_count: n1, imbalance_ratio: ir };
        let counts = longtail_counts(&spec).unwrap();
        prop_assert_eq!(counts[0], n1);
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(counts.iter().all(|&c| c >= 1));
    }

    #[test]
    fn symmetric_noise_hits_the_exact_rate(rate in 0.0f64..0.9, seed in any::<u64>()) {
        let spec = LongTailSpec { num_classes: 5, head_count: 80, imbalance_ratio: 4.0 };
        let ds = synth_dataset(&spec, &MixtureSpec::default(), &mut SeededRng::new(seed)).unwrap();
        let (noisy, mask) = inject_symmetric(&ds, rate, &mut SeededRng::new(seed ^ 1)).unwrap();
        let flipped = ds.samples().iter().zip(noisy.samples()).filter(|(a, b)| a.observed_label != b.observed_label).count();
        prop_assert_eq!(flipped, (rate * ds.len() as f64).round() as usize);
        prop_assert_eq!(mask.noisy.iter().filter(|&&n| n).count(), flipped);
    }
}
