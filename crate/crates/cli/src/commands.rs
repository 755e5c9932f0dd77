use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bayesdrop::data::{bayes_optimal_accuracy, generate, DataConfig, Dataset, Split};
use bayesdrop::evaluation::{
    accuracy, mix_seed, run_experiment, ExperimentConfig, GridCell, GridSpec, RunSettings,
};
use bayesdrop::models::{model_from_record, AnyModel, ModelRecord, Predictor};
use bayesdrop::training::{train as train_model, Algorithm, DeltaMode, StepSchedule, TrainConfig};
use bayesdrop::{Exec, LogisticRegression, MaskDistribution};
use serde_json::json;

use crate::config::{AlgorithmName, Config, DeltaModeName, GridName, PredictorName, Scale};
use crate::manifest::{OutDir, RunManifest};

/// Stream keys for splitting the root seed.
const STREAM_DATA: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Cell used by `--scale smoke` and as the `train` fallback.
const SMOKE_CELL: [f64; 4] = [1e-2, 1e3, 1e-2, 1e4];

/// Published experiment setting for the regularizer weight.
const EXPERIMENT_DELTA: f64 = 1e-3;

struct Common {
    seed: u64,
    scale: Scale,
    exec: Exec,
}

fn common(c: &mut Config) -> Common {
    let seed = *c.seed.get_or_insert(0);
    let scale = *c.scale.get_or_insert(Scale::Paper);
    let workers = *c.workers.get_or_insert(0);
    Common {
        seed,
        scale,
        exec: Exec::from_workers(workers),
    }
}

/// Fills unset data keys from the scale preset.
fn data_config(c: &mut Config, scale: Scale, root: u64) -> DataConfig {
    let base = match scale {
        Scale::Smoke => DataConfig::smoke(0),
        Scale::Paper => DataConfig::default(),
    };
    DataConfig {
        n_informative: *c.n_informative.get_or_insert(base.n_informative),
        n_noise: *c.n_noise.get_or_insert(base.n_noise),
        mean_shift: *c.mean_shift.get_or_insert(base.mean_shift),
        feature_std: *c.feature_std.get_or_insert(base.feature_std),
        n_train: *c.n_train.get_or_insert(base.n_train),
        n_valid: *c.n_valid.get_or_insert(base.n_valid),
        n_test: *c.n_test.get_or_insert(base.n_test),
        seed: mix_seed(root, &[STREAM_DATA]),
    }
}

fn delta_mode(c: &mut Config, default: DeltaModeName, default_value: f64) -> Result<DeltaMode> {
    Ok(match *c.delta_mode.get_or_insert(default) {
        DeltaModeName::InverseSampleCount => DeltaMode::InverseSampleCount,
        DeltaModeName::OneOverT => DeltaMode::OneOverT,
        DeltaModeName::Constant => DeltaMode::Constant(*c.delta.get_or_insert(default_value)),
    })
}

fn algorithm(c: &mut Config) -> Result<Algorithm> {
    Ok(match *c.algorithm.get_or_insert(AlgorithmName::For) {
        AlgorithmName::Mle => Algorithm::Mle,
        AlgorithmName::FixedDropout => Algorithm::FixedDropout {
            rate: *c.rate.get_or_insert(0.5),
        },
        AlgorithmName::Uor => Algorithm::Uor,
        AlgorithmName::For => Algorithm::For,
    })
}

fn csv_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn gen_data(mut c: Config, out_dir: &Path) -> Result<()> {
    let start = Instant::now();
    let common = common(&mut c);
    let data = data_config(&mut c, common.scale, common.seed);
    let splits = generate(&data)?;
    let mut out = OutDir::create(out_dir)?;
    for (name, d) in [
        ("train.csv", &splits.train),
        ("valid.csv", &splits.valid),
        ("test.csv", &splits.test),
    ] {
        out.write(name, &csv_bytes(d)?)?;
    }
    let mut manifest = RunManifest::new("gen-data", common.seed, c);
    manifest.seeds.insert("data".into(), data.seed);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    manifest.summary = json!({
        "bayes_optimal_accuracy": bayes_optimal_accuracy(&data),
        "n_features": data.n_features(),
        "n_train": data.n_train,
        "n_valid": data.n_valid,
        "n_test": data.n_test,
    });
    out.finish(manifest)
}

pub fn train(mut c: Config, out_dir: &Path) -> Result<()> {
    let start = Instant::now();
    let common = common(&mut c);
    let Some(data_dir) = c.data_dir.clone() else {
        bail!("train needs --data-dir pointing at a gen-data output");
    };
    let train_path = data_dir.join("train.csv");
    let data = Dataset::load_csv(&train_path, Split::Train)
        .with_context(|| format!("loading {}", train_path.display()))?;
    let algorithm = algorithm(&mut c)?;
    let n = data.n_samples() as u64;
    let iterations = *c.iterations.get_or_insert(10 * n);
    let a = *c.a.get_or_insert(SMOKE_CELL[0]);
    let b = *c.b.get_or_insert(SMOKE_CELL[1]);
    let schedule = if algorithm.learns_rates() {
        let cc = *c.c.get_or_insert(SMOKE_CELL[2]);
        let d = *c.d.get_or_insert(SMOKE_CELL[3]);
        let delta = delta_mode(&mut c, DeltaModeName::InverseSampleCount, EXPERIMENT_DELTA)?;
        StepSchedule::new(a, b, cc, d).with_delta(delta)
    } else {
        StepSchedule::new(a, b, 0.0, 1.0)
    };
    let seed = mix_seed(common.seed, &[STREAM_TRAIN]);
    let mut config = TrainConfig::new(algorithm.clone(), iterations, seed);
    config.baseline = *c.baseline.get_or_insert(false);
    config.minibatch_size = *c.minibatch_size.get_or_insert(1);
    config.initial_keep_prob = *c.initial_keep_prob.get_or_insert(0.5);
    config.progress_every = Some(*c.progress_every.get_or_insert(n.max(1)));

    let model = LogisticRegression::zeros(data.n_features());
    let outcome = train_model(model, &data, schedule, &config)
        .with_context(|| format!("training {algorithm}"))?;

    let mut out = OutDir::create(out_dir)?;
    out.write("model.txt", outcome.model.to_record().as_bytes())?;
    if let Some(q) = &outcome.mask {
        out.write("mask.txt", q.to_record().as_bytes())?;
    }
    let log: String = outcome.progress.iter().map(|r| format!("{r}\n")).collect();
    out.write("progress.log", log.as_bytes())?;

    let mut manifest = RunManifest::new("train", common.seed, c);
    manifest.seeds.insert("train".into(), seed);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    manifest.summary = json!({
        "algorithm": algorithm.name(),
        "iterations": outcome.iterations,
        "mean_keep_prob": outcome.mask.as_ref().map(|q| q.mean_keep_prob()),
    });
    out.finish(manifest)
}

pub fn eval(mut c: Config, out_dir: &Path) -> Result<()> {
    let start = Instant::now();
    let common = common(&mut c);
    let (Some(model_path), Some(data_path)) = (c.model.clone(), c.data.clone()) else {
        bail!("eval needs --model and --data");
    };
    let text = std::fs::read_to_string(&model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let model = match model_from_record(&text)
        .with_context(|| format!("parsing {}", model_path.display()))?
    {
        AnyModel::Logistic(m) => m,
        AnyModel::Net(_) => bail!("eval scores binary classifiers; got a three-layer network"),
    };
    let mask = match &c.mask {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(
                MaskDistribution::from_record(&text)
                    .with_context(|| format!("parsing {}", path.display()))?,
            )
        }
        None => None,
    };
    let data = Dataset::load_csv(&data_path, Split::Test)
        .with_context(|| format!("loading {}", data_path.display()))?;
    let default_predictor = if mask.is_some() {
        PredictorName::Gaussian
    } else {
        PredictorName::Plain
    };
    let name = *c.predictor.get_or_insert(default_predictor);
    let seed = mix_seed(common.seed, &[STREAM_EVAL]);
    let predictor = match name {
        PredictorName::Plain => None,
        PredictorName::ExpectedMask => Some(Predictor::ExpectedMask),
        PredictorName::Gaussian => Some(Predictor::Gaussian),
        PredictorName::Enumerate => Some(Predictor::Enumerate),
        PredictorName::MonteCarlo => Some(Predictor::MonteCarlo {
            samples: *c.mc_samples.get_or_insert(1000),
            seed,
        }),
    };
    if predictor.is_some() && mask.is_none() {
        bail!("predictor {name:?} needs --mask");
    }
    let mask = predictor.and(mask.as_ref());
    let predictor = predictor.unwrap_or(Predictor::ExpectedMask);
    let acc = accuracy(common.exec, &model, mask, predictor, &data)?;

    let mut out = OutDir::create(out_dir)?;
    out.write_json(
        "eval.json",
        &json!({
            "accuracy": acc,
            "predictor": name,
            "n_samples": data.n_samples(),
        }),
    )?;
    let mut manifest = RunManifest::new("eval", common.seed, c);
    manifest.seeds.insert("eval".into(), seed);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    out.finish(manifest)
}

fn grid_cell(name: &str, v: &[f64]) -> Result<GridCell> {
    match *v {
        [a, b] => Ok(GridCell { a, b, c: None, d: None }),
        [a, b, c, d] => Ok(GridCell {
            a,
            b,
            c: Some(c),
            d: Some(d),
        }),
        _ => bail!("fixed cell for {name} needs 2 or 4 values, got {}", v.len()),
    }
}

/// Runs the experiment and returns the number of failed algorithms.
pub fn experiment(mut c: Config, out_dir: &Path) -> Result<usize> {
    let start = Instant::now();
    let common = common(&mut c);
    let data = data_config(&mut c, common.scale, common.seed);
    let default_grid = match common.scale {
        Scale::Smoke => GridName::Singleton,
        Scale::Paper => GridName::Default,
    };
    let grid = match *c.grid.get_or_insert(default_grid) {
        GridName::Singleton => GridSpec::singleton(
            *c.a.get_or_insert(SMOKE_CELL[0]),
            *c.b.get_or_insert(SMOKE_CELL[1]),
            *c.c.get_or_insert(SMOKE_CELL[2]),
            *c.d.get_or_insert(SMOKE_CELL[3]),
        ),
        GridName::Default => {
            let base = GridSpec::default();
            GridSpec {
                a: c.grid_a.get_or_insert(base.a).clone(),
                b: c.grid_b.get_or_insert(base.b).clone(),
                c: c.grid_c.get_or_insert(base.c).clone(),
                d: c.grid_d.get_or_insert(base.d).clone(),
            }
        }
    };
    let settings = RunSettings {
        iterations: *c.iterations.get_or_insert(10 * data.n_train as u64),
        seed: mix_seed(common.seed, &[STREAM_TRAIN]),
        delta: delta_mode(&mut c, DeltaModeName::Constant, EXPERIMENT_DELTA)?,
        initial_keep_prob: *c.initial_keep_prob.get_or_insert(0.5),
        baseline: *c.baseline.get_or_insert(false),
        minibatch_size: *c.minibatch_size.get_or_insert(1),
    };
    let mut fixed_cells = BTreeMap::new();
    for (name, v) in c.fixed_cells() {
        fixed_cells.insert(name.to_string(), grid_cell(name, v)?);
    }
    let mut config = ExperimentConfig::new(data.clone(), grid, settings.clone());
    config.fixed_cells = fixed_cells;
    config.repeats = *c.repeats.get_or_insert(0);

    let run = run_experiment(common.exec, &config)?;
    let result = &run.result;

    let mut out = OutDir::create(out_dir)?;
    out.write_json("result.json", result)?;
    let mut table = Vec::new();
    result.write_accuracy_csv(&mut table)?;
    out.write("accuracy.csv", &table)?;
    let mut rates = Vec::new();
    result.write_rate_csv(&mut rates)?;
    out.write("rates.csv", &rates)?;

    let failed = result.algorithms.iter().filter(|r| !r.ok()).count();
    let mut manifest = RunManifest::new("experiment", common.seed, c);
    manifest.seeds.insert("data".into(), data.seed);
    manifest.seeds.insert("train".into(), settings.seed);
    manifest.timings = run.timings.iter().cloned().collect();
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    manifest.summary = json!({
        "bayes_optimal_accuracy": result.bayes_optimal_accuracy,
        "failed_algorithms": failed,
        "test_accuracy": result
            .algorithms
            .iter()
            .map(|r| (r.algorithm.clone(), r.test_accuracy))
            .collect::<BTreeMap<_, _>>(),
    });
    out.finish(manifest)?;
    Ok(failed)
}
