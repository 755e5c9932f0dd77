#![allow(dead_code)]

use bayesdrop::data::{Dataset, Split};
use bayesdrop::mask::{MaskDistribution, MaskMode, PriorMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Binary-label dataset with uniform features in `[-2, 2)`.
pub fn random_dataset(rng: &mut impl Rng, n: usize, d: usize) -> Dataset {
    let features = uniform_vec(rng, n * d, -2.0, 2.0);
    let labels = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    Dataset::new(features, labels, d, 0, Split::Train).unwrap()
}

pub fn random_mode(rng: &mut impl Rng, m: usize) -> MaskMode {
    match rng.random_range(0..3) {
        0 => MaskMode::Shared,
        1 => MaskMode::PerFeature,
        _ => {
            let k = rng.random_range(1..=m);
            let mut groups: Vec<usize> = (0..m).map(|i| i % k).collect();
            // shuffle so groups are not contiguous blocks
            for i in (1..m).rev() {
                groups.swap(i, rng.random_range(0..=i));
            }
            MaskMode::Grouped(groups)
        }
    }
}

pub fn random_q(rng: &mut impl Rng, m: usize) -> MaskDistribution {
    let mode = random_mode(rng, m);
    let k = mode.num_params(m);
    MaskDistribution::new(mode, uniform_vec(rng, k, -2.5, 2.5), m).unwrap()
}

pub fn random_prior(rng: &mut impl Rng, m: usize) -> PriorMask {
    PriorMask::new(uniform_vec(rng, m, 0.05, 0.95)).unwrap()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max-norm relative error of `got` against `want`.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
