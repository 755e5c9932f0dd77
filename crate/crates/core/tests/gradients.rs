//! Analytic gradients against central finite differences.

mod common;

use bayesdrop::data::Samples;
use bayesdrop::mask::{MaskDistribution, MaskVector};
use bayesdrop::models::{LogisticRegression, MaskedModel, ThreeLayerNet};
use bayesdrop::training::{expected_log_likelihood_exact, expected_score_update_exact};
use common::*;
use rand::Rng;

const INSTANCES: u64 = 60;
const TOL: f64 = 1e-5;

fn random_mask(rng: &mut impl Rng, m: usize) -> MaskVector {
    MaskVector::new((0..m).map(|_| rng.random_bool(0.7)).collect())
}

#[test]
fn logreg_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = rng(seed);
        let d = rng.random_range(1..=12);
        let theta = uniform_vec(&mut rng, d, -2.0, 2.0);
        let model = if seed % 2 == 0 {
            LogisticRegression::from_theta(theta).unwrap()
        } else {
            LogisticRegression::from_theta_and_bias(theta, rng.random_range(-1.0..1.0)).unwrap()
        };
        let x = uniform_vec(&mut rng, d, -2.0, 2.0);
        let y = [rng.random_range(0..2) as f64];
        let z = random_mask(&mut rng, d);

        let mut grad = vec![0.0; model.param_count()];
        let ll = model.add_grad(&x, &y, &z, &mut grad).unwrap();
        assert_eq!(ll, model.log_likelihood(&x, &y, &z).unwrap());
        let fd = central_diff(model.params(), 1e-5, |p| {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(p);
            m.log_likelihood(&x, &y, &z).unwrap()
        });
        let err = rel_err(&grad, &fd);
        worst = worst.max(err);
        assert!(err <= TOL, "seed {seed}: relative error {err:e}");
        for (i, &b) in z.bits().iter().enumerate() {
            if !b {
                assert_eq!(grad[i], 0.0);
            }
        }
    }
    eprintln!("logreg worst relative error {worst:e}");
}

#[test]
fn network_gradient_matches_finite_differences_on_every_block() {
    for seed in 0..INSTANCES {
        let mut rng = rng(100 + seed);
        let n_in = rng.random_range(1..=5);
        let n_hidden = rng.random_range(1..=4);
        let n_out = rng.random_range(1..=3);
        let mut net = ThreeLayerNet::random(n_in, n_hidden, n_out, &mut rng);
        let k = net.param_count();
        net.params_mut()
            .copy_from_slice(&uniform_vec(&mut rng, k, -1.5, 1.5));
        let x = uniform_vec(&mut rng, n_in, -2.0, 2.0);
        let y = uniform_vec(&mut rng, n_out, 0.0, 1.0);
        let z = random_mask(&mut rng, net.mask_dim());

        let mut grad = vec![0.0; k];
        net.add_grad(&x, &y, &z, &mut grad).unwrap();
        let fd = central_diff(net.params(), 1e-5, |p| {
            let mut m = net.clone();
            m.params_mut().copy_from_slice(p);
            m.log_likelihood(&x, &y, &z).unwrap()
        });
        // check each block on its own so a small block cannot hide behind a large one
        let blocks = [
            n_hidden * n_in,
            n_hidden,
            n_out * n_hidden,
            n_out,
        ];
        let mut start = 0;
        for (b, len) in blocks.into_iter().enumerate() {
            let got = &grad[start..start + len];
            let want = &fd[start..start + len];
            let err = rel_err(got, want);
            let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // blocks zeroed out by the mask have no scale to be relative to
            assert!(
                err <= TOL || (scale < 1e-9 && err < 1e-9),
                "seed {seed} block {b}: relative error {err:e}"
            );
            start += len;
        }
    }
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = rng(200 + seed);
        let m = rng.random_range(1..=10);
        let q = random_q(&mut rng, m);
        let prior = random_prior(&mut rng, m);
        let grad = q.regularizer_gradient(&prior).unwrap();
        let fd = central_diff(q.logits(), 1e-5, |rho| {
            let q = MaskDistribution::new(q.mode().clone(), rho.to_vec(), m).unwrap();
            q.cross_entropy_with_prior(&prior).unwrap() + q.entropy()
        });
        let err = rel_err(&grad, &fd);
        assert!(err <= TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn first_term_logit_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = rng(300 + seed);
        let m = rng.random_range(1..=8);
        let n = rng.random_range(1..=5);
        let data = random_dataset(&mut rng, n, m);
        let model = LogisticRegression::from_theta(uniform_vec(&mut rng, m, -2.0, 2.0)).unwrap();
        let q = random_q(&mut rng, m);

        // the exact score expectation is per sample; the first term sums over samples
        let analytic: Vec<f64> = expected_score_update_exact(&model, &data, &q, 0.0)
            .unwrap()
            .iter()
            .map(|g| g * data.len() as f64)
            .collect();
        let fd = central_diff(q.logits(), 1e-5, |rho| {
            let q = MaskDistribution::new(q.mode().clone(), rho.to_vec(), m).unwrap();
            expected_log_likelihood_exact(&model, &data, &q).unwrap()
        });
        let err = rel_err(&analytic, &fd);
        assert!(err <= TOL, "seed {seed}: relative error {err:e}");
    }
}
