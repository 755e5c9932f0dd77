//! Property-based invariants.

use bayesdrop::data::{Dataset, Split};
use bayesdrop::evaluation::accuracy_with;
use bayesdrop::mask::{for_each_mask, MaskDistribution, MaskMode, MaskVector, LOGIT_CLAMP};
use bayesdrop::math::{log_sigmoid, sigmoid};
use bayesdrop::models::gaussian_sigmoid;
use bayesdrop::Exec;
use proptest::prelude::*;

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..6.0, n)
}

proptest! {
    #[test]
    fn mask_probabilities_sum_to_one(rho in (1usize..=8).prop_flat_map(logits)) {
        let m = rho.len();
        let q = MaskDistribution::new(MaskMode::PerFeature, rho, m).unwrap();
        let mut total = 0.0;
        for_each_mask(m, |_, z| total += q.log_prob(z).unwrap().exp()).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logits_stay_clamped(rho in logits(5), dir in prop::collection::vec(-1e3f64..1e3, 5), scale in 0.0f64..10.0) {
        let mut q = MaskDistribution::new(MaskMode::PerFeature, rho, 5).unwrap();
        q.step_logits(&dir, scale).unwrap();
        prop_assert!(q.logits().iter().all(|r| r.abs() <= LOGIT_CLAMP));
        prop_assert!(q.keep_probs().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn mask_record_round_trips(rho in logits(6), grouped in any::<bool>()) {
        let q = if grouped {
            MaskDistribution::new(MaskMode::Grouped(vec![0, 1, 0, 2, 2, 1]), rho[..3].to_vec(), 6).unwrap()
        } else {
            MaskDistribution::new(MaskMode::PerFeature, rho, 6).unwrap()
        };
        let back = MaskDistribution::from_record(&q.to_record()).unwrap();
        prop_assert_eq!(back, q);
    }

    #[test]
    fn index_masks_are_distinct_bit_patterns(index in 0u64..1024) {
        let z = MaskVector::from_index(index, 10);
        let back = z.bits().iter().enumerate().fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i));
        prop_assert_eq!(back, index);
    }

    #[test]
    fn log_sigmoid_is_consistent(u in -700.0f64..700.0) {
        let direct = sigmoid(u).ln();
        if direct.is_finite() && direct > -700.0 {
            prop_assert!((log_sigmoid(u) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
        prop_assert!((sigmoid(u) + sigmoid(-u) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_prediction_increases_with_mean(mu in -5.0f64..5.0, gap in 1e-3f64..1.0, var in 0.0f64..20.0) {
        prop_assert!(gaussian_sigmoid(mu + gap, var) > gaussian_sigmoid(mu, var));
    }

    #[test]
    fn accuracy_is_a_fraction(labels in prop::collection::vec(0u8..2, 1..40), seed in any::<u64>()) {
        let n = labels.len();
        let features: Vec<f64> = (0..n).map(|i| ((i as u64 ^ seed) % 7) as f64 / 7.0).collect();
        let d = Dataset::new(features, labels, 1, 1, Split::Test).unwrap();
        let acc = accuracy_with(Exec::Sequential, &d, |_, x| Ok(x[0])).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let flipped = accuracy_with(Exec::Sequential, &d, |_, x| Ok(1.0 - x[0] - 1e-9)).unwrap();
        prop_assert!((0.0..=1.0).contains(&flipped));
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 12), labels in prop::collection::vec(0u8..2, 4)) {
        let d = Dataset::new(values, labels, 3, 1, Split::Valid).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), Split::Valid).unwrap();
        prop_assert_eq!(back, d);
    }
}
