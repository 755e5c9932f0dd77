//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1 and 2 train all four algorithms at full benchmark scale and take
//! several minutes. Set `BAYESDROP_ACCEPTANCE_QUICK=1` to skip them.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bayesdrop::data::{RegressionData, Samples};
use bayesdrop::mask::{for_each_mask, MaskDistribution, MaskMode, MaskVector, PriorMask};
use bayesdrop::models::{
    predict_enumerate, predict_expected_mask, predict_mc_estimate, LogisticRegression,
    MaskedModel, ThreeLayerNet,
};
use bayesdrop::training::{
    dataset_log_likelihood, expected_log_likelihood_exact, expected_score_update_exact,
    kl_divergence_exact, lower_bound_exact, marginal_log_likelihood_exact, posterior_exact,
};
use bayesdrop::data::{Dataset, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BOUND_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-5;
const SCORE_TOL: f64 = 1e-4;
const BASELINE_TOL: f64 = 1e-10;
const GAUSSIAN_TOL: f64 = 0.02;
const HALVED_TOL: f64 = 1e-12;
const SMOKE_BUDGET: Duration = Duration::from_secs(60);

const UOR_MLE_GAP: f64 = 0.01;
const FIXED_MLE_SLACK: f64 = 0.005;
const FOR_MLE_MARGIN: f64 = 0.01;
const FOR_BAYES_MARGIN: f64 = 0.08;
const UOR_MAX_RATE: f64 = 0.05;
const FOR_RATE_GAP: f64 = 0.15;

/// Full-scale run: documented best cells and horizon.
const FULL_SEED: &str = "0";
const FULL_ITERATIONS: &str = "200000";
const FULL_MINIBATCH: &str = "10";
const FULL_CELLS: [&str; 4] = [
    "mle=3e-4,1e3",
    "fixed-dropout=3e-4,1e4",
    "uor=3e-4,1e4,1e-2,1e5",
    "for=3e-4,1e4,3e-2,1e5",
];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dataset(rng: &mut impl Rng, n: usize, d: usize) -> Dataset {
    let x = uniform(rng, n * d, -2.0, 2.0);
    let y = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    Dataset::new(x, y, d, 0, Split::Train).unwrap()
}

fn random_q(rng: &mut impl Rng, m: usize) -> MaskDistribution {
    let mode = match rng.random_range(0..3) {
        0 => MaskMode::Shared,
        1 => MaskMode::PerFeature,
        _ => {
            let k = rng.random_range(1..=m);
            MaskMode::Grouped((0..m).map(|_| rng.random_range(0..k)).collect())
        }
    };
    // relabel so every group index below the max is used
    let mode = match mode {
        MaskMode::Grouped(g) => {
            let mut seen = Vec::new();
            let g = g
                .iter()
                .map(|v| match seen.iter().position(|s| s == v) {
                    Some(i) => i,
                    None => {
                        seen.push(*v);
                        seen.len() - 1
                    }
                })
                .collect();
            MaskMode::Grouped(g)
        }
        other => other,
    };
    let k = mode.num_params(m);
    MaskDistribution::new(mode, uniform(rng, k, -2.5, 2.5), m).unwrap()
}

fn random_prior(rng: &mut impl Rng, m: usize) -> PriorMask {
    PriorMask::new(uniform(rng, m, 0.05, 0.95)).unwrap()
}

fn random_net(rng: &mut impl Rng, n_in: usize, n_hidden: usize, n_out: usize, w: f64) -> ThreeLayerNet {
    let mut net = ThreeLayerNet::random(n_in, n_hidden, n_out, rng);
    let k = net.param_count();
    net.params_mut().copy_from_slice(&uniform(rng, k, -w, w));
    net
}

fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
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

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale < 1e-9 {
        diff
    } else {
        diff / scale
    }
}

fn with_logits(q: &MaskDistribution, rho: &[f64]) -> MaskDistribution {
    MaskDistribution::new(q.mode().clone(), rho.to_vec(), q.dim()).unwrap()
}

fn bound_gap<M: MaskedModel, S: Samples>(
    model: &M,
    data: &S,
    q: &MaskDistribution,
    prior: &PriorMask,
) -> f64 {
    let f = lower_bound_exact(model, data, q, prior).unwrap();
    let marginal = marginal_log_likelihood_exact(model, data, prior).unwrap();
    let posterior = posterior_exact(model, data, prior).unwrap();
    let kl = kl_divergence_exact(q, &posterior).unwrap();
    let tight = lower_bound_exact(model, data, &posterior, prior).unwrap();
    let above = (f - marginal).max(0.0);
    above
        .max(((marginal - f) - kl).abs())
        .max((tight - marginal).abs())
}

fn bound_suite() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for seed in 0..120 {
        let mut r = rng(seed);
        let m = r.random_range(1..=10);
        let n = r.random_range(1..=5);
        let data = dataset(&mut r, n, m);
        let model = LogisticRegression::from_theta(uniform(&mut r, m, -2.0, 2.0)).unwrap();
        let q = random_q(&mut r, m);
        let prior = random_prior(&mut r, m);
        worst = worst.max(bound_gap(&model, &data, &q, &prior));
        count += 1;
    }
    for seed in 0..30 {
        let mut r = rng(10_000 + seed);
        let (n_in, n_hidden, n_out) = (r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=2));
        let n = r.random_range(1..=5);
        let net = random_net(&mut r, n_in, n_hidden, n_out, 2.0);
        let data = RegressionData::new(
            uniform(&mut r, n * n_in, -2.0, 2.0),
            uniform(&mut r, n * n_out, 0.0, 1.0),
            n_in,
            n_out,
        )
        .unwrap();
        let q = random_q(&mut r, n_in + n_hidden);
        let prior = random_prior(&mut r, n_in + n_hidden);
        worst = worst.max(bound_gap(&net, &data, &q, &prior));
        count += 1;
    }
    check(
        worst <= BOUND_TOL,
        format!("{count} instances, worst violation {worst:.2e} (tol {BOUND_TOL:.0e})"),
    )
}

fn random_mask(r: &mut impl Rng, m: usize) -> MaskVector {
    MaskVector::new((0..m).map(|_| r.random_bool(0.7)).collect())
}

fn gradient_suite() -> Outcome {
    const N: u64 = 50;
    let (mut logreg, mut net, mut reg, mut first, mut score) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..N {
        let mut r = rng(20_000 + seed);
        let d = r.random_range(1..=12);
        let model = LogisticRegression::from_theta_and_bias(
            uniform(&mut r, d, -2.0, 2.0),
            r.random_range(-1.0..1.0),
        )
        .unwrap();
        let x = uniform(&mut r, d, -2.0, 2.0);
        let y = [r.random_range(0..2) as f64];
        let z = random_mask(&mut r, d);
        let mut g = vec![0.0; model.param_count()];
        model.add_grad(&x, &y, &z, &mut g).unwrap();
        let fd = central_diff(model.params(), |p| {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(p);
            m.log_likelihood(&x, &y, &z).unwrap()
        });
        logreg = logreg.max(rel_err(&g, &fd));

        let (n_in, n_hidden, n_out) = (r.random_range(1..=5), r.random_range(1..=4), r.random_range(1..=3));
        let nn = random_net(&mut r, n_in, n_hidden, n_out, 1.5);
        let x = uniform(&mut r, n_in, -2.0, 2.0);
        let y = uniform(&mut r, n_out, 0.0, 1.0);
        let z = random_mask(&mut r, nn.mask_dim());
        let mut g = vec![0.0; nn.param_count()];
        nn.add_grad(&x, &y, &z, &mut g).unwrap();
        let fd = central_diff(nn.params(), |p| {
            let mut m = nn.clone();
            m.params_mut().copy_from_slice(p);
            m.log_likelihood(&x, &y, &z).unwrap()
        });
        net = net.max(rel_err(&g, &fd));

        let m = r.random_range(1..=8);
        let q = random_q(&mut r, m);
        let prior = random_prior(&mut r, m);
        let g = q.regularizer_gradient(&prior).unwrap();
        let fd = central_diff(q.logits(), |rho| {
            let q = with_logits(&q, rho);
            q.cross_entropy_with_prior(&prior).unwrap() + q.entropy()
        });
        reg = reg.max(rel_err(&g, &fd));

        let n = r.random_range(1..=5);
        let data = dataset(&mut r, n, m);
        let model = LogisticRegression::from_theta(uniform(&mut r, m, -2.0, 2.0)).unwrap();
        let per_sample = expected_score_update_exact(&model, &data, &q, 0.0).unwrap();
        let total: Vec<f64> = per_sample.iter().map(|v| v * n as f64).collect();
        let fd = central_diff(q.logits(), |rho| {
            expected_log_likelihood_exact(&model, &data, &with_logits(&q, rho)).unwrap()
        });
        first = first.max(rel_err(&total, &fd));
        let fd_mean: Vec<f64> = fd.iter().map(|v| v / n as f64).collect();
        score = score.max(rel_err(&per_sample, &fd_mean));
    }
    check(
        logreg.max(net).max(reg).max(first) <= GRAD_TOL && score <= SCORE_TOL,
        format!(
            "{N} instances each; worst relative error logreg {logreg:.1e}, net {net:.1e}, \
             regularizer {reg:.1e}, first term {first:.1e} (tol {GRAD_TOL:.0e}), \
             score identity {score:.1e} (tol {SCORE_TOL:.0e})"
        ),
    )
}

/// `Σ_{i in group} λ_i(1−λ_i)(E[f | z_i = 1] − E[f | z_i = 0])` with `f` the
/// per-sample log-likelihood.
fn conditional_difference<S: Samples>(
    model: &LogisticRegression,
    data: &S,
    q: &MaskDistribution,
) -> Vec<f64> {
    let m = q.dim();
    let (mut on, mut off) = (vec![0.0; m], vec![0.0; m]);
    for_each_mask(m, |_, z| {
        let w = q.log_prob(z).unwrap().exp();
        let f = dataset_log_likelihood(model, data, z).unwrap() / data.len() as f64;
        for i in 0..m {
            if z.get(i) {
                on[i] += w * f;
            } else {
                off[i] += w * f;
            }
        }
    })
    .unwrap();
    let per_bit: Vec<f64> = (0..m)
        .map(|i| {
            let l = q.keep_prob(i);
            l * (1.0 - l) * (on[i] / l - off[i] / (1.0 - l))
        })
        .collect();
    q.fold_per_bit(&per_bit).unwrap()
}

fn estimator_suite() -> Outcome {
    let (mut vs_analytic, mut vs_fd, mut shift) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..60 {
        let mut r = rng(30_000 + seed);
        let m = r.random_range(1..=8);
        let n = r.random_range(1..=5);
        let data = dataset(&mut r, n, m);
        let model = LogisticRegression::from_theta(uniform(&mut r, m, -2.0, 2.0)).unwrap();
        let q = random_q(&mut r, m);
        let score = expected_score_update_exact(&model, &data, &q, 0.0).unwrap();
        vs_analytic = vs_analytic.max(rel_err(&score, &conditional_difference(&model, &data, &q)));
        let fd = central_diff(q.logits(), |rho| {
            expected_log_likelihood_exact(&model, &data, &with_logits(&q, rho)).unwrap() / n as f64
        });
        vs_fd = vs_fd.max(rel_err(&score, &fd));
        for _ in 0..4 {
            let b = r.random_range(-10.0..10.0);
            let shifted = expected_score_update_exact(&model, &data, &q, b).unwrap();
            for (a, s) in score.iter().zip(&shifted) {
                shift = shift.max((a - s).abs());
            }
        }
    }
    check(
        vs_analytic.max(vs_fd) <= SCORE_TOL && shift <= BASELINE_TOL,
        format!(
            "60 instances; relative error vs analytic {vs_analytic:.1e}, vs finite differences \
             {vs_fd:.1e} (tol {SCORE_TOL:.0e}); baseline shift {shift:.1e} (tol {BASELINE_TOL:.0e})"
        ),
    )
}

fn prediction_suite() -> Outcome {
    let mut gaussian = 0.0f64;
    for seed in 0..150 {
        let mut r = rng(40_000 + seed);
        let m = r.random_range(1..=12);
        let model = LogisticRegression::from_theta(uniform(&mut r, m, -2.0, 2.0)).unwrap();
        let x = uniform(&mut r, m, -1.0, 1.0);
        let q = MaskDistribution::with_keep_prob(MaskMode::PerFeature, m, 0.5).unwrap();
        let exact = predict_enumerate(&model, &x, &q).unwrap()[0];
        let approx = model.predict_gaussian(&x, &q.keep_probs()).unwrap();
        gaussian = gaussian.max((exact - approx).abs());
    }

    let mut halved = 0.0f64;
    for seed in 0..50 {
        let mut r = rng(41_000 + seed);
        let (n_in, n_hidden, n_out) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=3));
        let net = random_net(&mut r, n_in, n_hidden, n_out, 3.0);
        let x = uniform(&mut r, n_in, -2.0, 2.0);
        let q = MaskDistribution::with_keep_prob(MaskMode::Shared, n_in + n_hidden, 0.5).unwrap();
        let expected = predict_expected_mask(&net, &x, &q).unwrap();
        let scaled = net.scaled_weights(0.5).forward_plain(&x).unwrap();
        for (a, b) in expected.iter().zip(&scaled) {
            halved = halved.max((a - b).abs());
        }
    }

    let mut worst_z = 0.0f64;
    for seed in 0..6 {
        let mut r = rng(42_000 + seed);
        let net = random_net(&mut r, 4, 5, 2, 2.0);
        let x = uniform(&mut r, 4, -2.0, 2.0);
        let q = random_q(&mut r, 9);
        let exact = predict_enumerate(&net, &x, &q).unwrap();
        let est = predict_mc_estimate(&net, &x, &q, 100_000, &mut r).unwrap();
        for ((e, mc), se) in exact.iter().zip(&est.mean).zip(&est.std_error) {
            worst_z = worst_z.max((e - mc).abs() / se);
        }
    }
    check(
        gaussian <= GAUSSIAN_TOL && halved <= HALVED_TOL && worst_z <= 3.0,
        format!(
            "Gaussian vs enumeration {gaussian:.4} (tol {GAUSSIAN_TOL}), halved weights \
             {halved:.1e} (tol {HALVED_TOL:.0e}), Monte Carlo worst {worst_z:.2} standard errors (tol 3)"
        ),
    )
}

fn bayesdrop(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bayesdrop"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut slowest = Duration::ZERO;
    for run in ["first", "second"] {
        let dir = tmp.path().join(run);
        let start = Instant::now();
        bayesdrop(&["experiment", "--scale", "smoke", "--seed", "3", "--out-dir", path(&dir)])?;
        slowest = slowest.max(start.elapsed());
    }
    let mut differing = Vec::new();
    for f in ["result.json", "accuracy.csv", "rates.csv"] {
        let a = std::fs::read(tmp.path().join("first").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(tmp.path().join("second").join(f)).map_err(|e| e.to_string())?;
        if a != b {
            differing.push(f);
        }
    }
    check(
        differing.is_empty() && slowest < SMOKE_BUDGET,
        format!(
            "outputs differing: {differing:?}; slowest smoke run {:.2} s (budget {} s)",
            slowest.as_secs_f64(),
            SMOKE_BUDGET.as_secs()
        ),
    )
}

struct FullRun {
    accuracy: [f64; 4],
    bayes: f64,
    uor_rate: f64,
    for_informative: f64,
    for_noise: f64,
}

fn full_scale_run() -> Result<FullRun, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut args = vec![
        "experiment",
        "--scale",
        "paper",
        "--seed",
        FULL_SEED,
        "--iterations",
        FULL_ITERATIONS,
        "--baseline",
        "--minibatch-size",
        FULL_MINIBATCH,
        "--out-dir",
        path(tmp.path()),
    ];
    for cell in FULL_CELLS {
        args.extend(["--fixed", cell]);
    }
    bayesdrop(&args)?;
    let text = std::fs::read(tmp.path().join("result.json")).map_err(|e| e.to_string())?;
    let result: Value = serde_json::from_slice(&text).map_err(|e| e.to_string())?;
    let row = |name: &str| -> Result<&Value, String> {
        result["algorithms"]
            .as_array()
            .and_then(|rows| rows.iter().find(|r| r["algorithm"] == name))
            .ok_or_else(|| format!("no {name} row"))
    };
    let num = |v: &Value| v.as_f64().ok_or_else(|| format!("not a number: {v}"));
    let mut accuracy = [0.0; 4];
    for (slot, name) in accuracy.iter_mut().zip(["mle", "fixed-dropout", "uor", "for"]) {
        *slot = num(&row(name)?["test_accuracy"])?;
    }
    Ok(FullRun {
        accuracy,
        bayes: num(&result["bayes_optimal_accuracy"])?,
        uor_rate: num(&row("uor")?["mean_dropout_rate"])?,
        for_informative: num(&row("for")?["informative_mean_dropout_rate"])?,
        for_noise: num(&row("for")?["noise_mean_dropout_rate"])?,
    })
}

fn accuracy_ordering(run: &FullRun) -> Outcome {
    let [mle, fixed, uor, forr] = run.accuracy;
    let uor_ok = (uor - mle).abs() <= UOR_MLE_GAP;
    let fixed_ok = fixed >= mle - FIXED_MLE_SLACK;
    let for_ok = forr >= mle + FOR_MLE_MARGIN && forr >= run.bayes - FOR_BAYES_MARGIN;
    check(
        uor_ok && fixed_ok && for_ok,
        format!(
            "mle {mle:.4}, fixed {fixed:.4}, uor {uor:.4}, for {forr:.4}, bayes {:.4}; \
             uor~mle {}, fixed>=mle-{FIXED_MLE_SLACK} {}, for>=mle+{FOR_MLE_MARGIN} and \
             >=bayes-{FOR_BAYES_MARGIN} {}",
            run.bayes,
            mark(uor_ok),
            mark(fixed_ok),
            mark(for_ok)
        ),
    )
}

fn rate_pattern(run: &FullRun) -> Outcome {
    let uor_ok = run.uor_rate <= UOR_MAX_RATE;
    let for_ok = run.for_noise - run.for_informative >= FOR_RATE_GAP;
    check(
        uor_ok && for_ok,
        format!(
            "uor rate {:.3} (max {UOR_MAX_RATE}) {}; for informative {:.3} vs noise {:.3} \
             (gap >= {FOR_RATE_GAP}) {}",
            run.uor_rate,
            mark(uor_ok),
            run.for_informative,
            run.for_noise,
            mark(for_ok)
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "missed"
    }
}

fn report(n: usize, name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
        Err(detail) => println!("criterion {n} FAIL {name}: {detail}"),
    }
    outcome.is_ok()
}

fn main() {
    let quick = std::env::var_os("BAYESDROP_ACCEPTANCE_QUICK").is_some();
    let mut all = true;
    if quick {
        println!("criterion 1 SKIP full-scale accuracy ordering");
        println!("criterion 2 SKIP full-scale dropout rates");
    } else {
        let run = full_scale_run();
        let (c1, c2) = match &run {
            Ok(run) => (accuracy_ordering(run), rate_pattern(run)),
            Err(e) => (Err(e.clone()), Err(e.clone())),
        };
        all &= report(1, "full-scale accuracy ordering", &c1);
        all &= report(2, "full-scale dropout rates", &c2);
    }
    all &= report(3, "bound suite", &bound_suite());
    all &= report(4, "gradient suite", &gradient_suite());
    all &= report(5, "estimator suite", &estimator_suite());
    all &= report(6, "prediction suite", &prediction_suite());
    all &= report(7, "determinism", &determinism());
    if !all {
        std::process::exit(1);
    }
}
