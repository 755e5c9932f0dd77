//! Accuracy, step-size grid search and the four-algorithm experiment.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{bayes_optimal_accuracy, generate, DataConfig, Dataset, Splits};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mask::MaskDistribution;
use crate::models::{predict_enumerate, predict_mc, LogisticRegression, Predictor};
use crate::training::{train, Algorithm, DeltaMode, StepSchedule, TrainConfig};

/// Label 1 iff the probability is at least 0.5.
#[inline]
pub fn classify(prob: f64) -> u8 {
    (prob >= 0.5) as u8
}

/// Fraction of samples whose thresholded probability matches the label.
pub fn accuracy_with<F>(exec: Exec, dataset: &Dataset, prob: F) -> Result<f64>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync + Send,
{
    let n = dataset.n_samples();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let hits = exec.map_range(n, |i| -> Result<bool> {
        Ok(classify(prob(i, dataset.row(i))?) == dataset.label(i))
    });
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / n as f64)
}

/// Probability of class 1 under `predictor`. With no mask distribution every
/// feature is kept.
pub fn predict_probability(
    model: &LogisticRegression,
    mask: Option<&MaskDistribution>,
    predictor: Predictor,
    x: &[f64],
    sample_index: usize,
) -> Result<f64> {
    let Some(q) = mask else {
        return model.predict_plain(x);
    };
    match predictor {
        Predictor::Enumerate => Ok(predict_enumerate(model, x, q)?[0]),
        Predictor::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[sample_index as u64]));
            Ok(predict_mc(model, x, q, samples, &mut rng)?[0])
        }
        Predictor::ExpectedMask => model.predict_expected_mask(x, &q.expected_mask()),
        Predictor::Gaussian => model.predict_gaussian(x, &q.keep_probs()),
    }
}

pub fn accuracy(
    exec: Exec,
    model: &LogisticRegression,
    mask: Option<&MaskDistribution>,
    predictor: Predictor,
    dataset: &Dataset,
) -> Result<f64> {
    accuracy_with(exec, dataset, |i, x| {
        predict_probability(model, mask, predictor, x, i)
    })
}

/// Test-time rule paired with each algorithm.
pub fn test_predictor(algorithm: &Algorithm) -> Predictor {
    match algorithm {
        Algorithm::Mle | Algorithm::FixedDropout { .. } => Predictor::ExpectedMask,
        _ => Predictor::Gaussian,
    }
}

/// Name of the test-time rule as reported in results; maskless MLE is "plain".
pub fn test_predictor_name(algorithm: &Algorithm) -> &'static str {
    match algorithm {
        Algorithm::Mle => "plain",
        other => test_predictor(other).name(),
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a root seed and a key path.
pub fn mix_seed(root: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(root), |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// One point of the step-size grid. `c` and `d` are absent for algorithms
/// that do not learn rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub a: f64,
    pub b: f64,
    pub c: Option<f64>,
    pub d: Option<f64>,
}

impl GridCell {
    pub fn schedule(&self, delta: DeltaMode) -> StepSchedule {
        StepSchedule::new(self.a, self.b, self.c.unwrap_or(0.0), self.d.unwrap_or(1.0))
            .with_delta(delta)
    }

    fn key(&self) -> [u64; 4] {
        [
            self.a.to_bits(),
            self.b.to_bits(),
            self.c.map_or(0, f64::to_bits),
            self.d.map_or(0, f64::to_bits),
        ]
    }

    /// Tie-break order: smaller a, then c, then b, then d.
    fn tie_order(&self, other: &Self) -> std::cmp::Ordering {
        let c = |v: Option<f64>| v.unwrap_or(0.0);
        self.a
            .total_cmp(&other.a)
            .then(c(self.c).total_cmp(&c(other.c)))
            .then(self.b.total_cmp(&other.b))
            .then(c(self.d).total_cmp(&c(other.d)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            a: vec![3e-4, 1e-3, 3e-2, 1e-2],
            b: vec![1e2, 1e3, 1e4],
            c: vec![3e-4, 1e-3, 3e-2, 1e-2],
            d: vec![1e3, 1e4, 1e5],
        }
    }
}

impl GridSpec {
    pub fn singleton(a: f64, b: f64, c: f64, d: f64) -> Self {
        GridSpec {
            a: vec![a],
            b: vec![b],
            c: vec![c],
            d: vec![d],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sets = [&self.a, &self.b, &self.c, &self.d];
        if sets.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidConfig("grid sets must be non-empty".into()));
        }
        if sets.iter().flat_map(|s| s.iter()).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("grid entries must be positive".into()));
        }
        Ok(())
    }

    /// Cells in `a, b, c, d` nesting order; `(a, b)` only when the algorithm
    /// does not learn rates.
    pub fn cells(&self, algorithm: &Algorithm) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &a in &self.a {
            for &b in &self.b {
                if !algorithm.learns_rates() {
                    out.push(GridCell { a, b, c: None, d: None });
                    continue;
                }
                for &c in &self.c {
                    for &d in &self.d {
                        out.push(GridCell {
                            a,
                            b,
                            c: Some(c),
                            d: Some(d),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Shared training settings for every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub iterations: u64,
    pub seed: u64,
    pub delta: DeltaMode,
    pub initial_keep_prob: f64,
    pub baseline: bool,
    pub minibatch_size: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            iterations: 20_000,
            seed: 0,
            delta: DeltaMode::Constant(1e-3),
            initial_keep_prob: 0.5,
            baseline: false,
            minibatch_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    pub validation_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome<T> {
    pub best: GridCell,
    pub validation_accuracy: f64,
    pub best_artifact: T,
    pub cells: Vec<CellResult>,
}

/// Evaluates every cell with `run` and keeps the best validation accuracy.
/// Failed cells are recorded and skipped.
pub fn grid_search_with<T, F>(exec: Exec, cells: &[GridCell], run: F) -> Result<GridOutcome<T>>
where
    T: Send,
    F: Fn(&GridCell) -> Result<(f64, T)> + Sync + Send,
{
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let results = exec.map_slice(cells, |cell| run(cell));
    let mut records = Vec::with_capacity(cells.len());
    let mut best: Option<(GridCell, f64, T)> = None;
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok((acc, artifact)) => {
                records.push(CellResult {
                    cell: *cell,
                    validation_accuracy: Some(acc),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((bc, bacc, _)) => {
                        acc > *bacc || (acc == *bacc && cell.tie_order(bc).is_lt())
                    }
                };
                if better {
                    best = Some((*cell, acc, artifact));
                }
            }
            Err(e) => records.push(CellResult {
                cell: *cell,
                validation_accuracy: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (best, validation_accuracy, best_artifact) = best.ok_or_else(|| {
        Error::InvalidConfig(format!(
            "every grid cell failed; first error: {}",
            records[0].error.as_deref().unwrap_or("unknown")
        ))
    })?;
    Ok(GridOutcome {
        best,
        validation_accuracy,
        best_artifact,
        cells: records,
    })
}

/// Trained logistic model plus its mask distribution, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub model: LogisticRegression,
    pub mask: Option<MaskDistribution>,
}

impl TrainedClassifier {
    pub fn accuracy(&self, exec: Exec, algorithm: &Algorithm, data: &Dataset) -> Result<f64> {
        accuracy(exec, &self.model, self.mask.as_ref(), test_predictor(algorithm), data)
    }
}

fn algorithm_code(algorithm: &Algorithm) -> u64 {
    match algorithm {
        Algorithm::Mle => 1,
        Algorithm::FixedDropout { .. } => 2,
        Algorithm::Uor => 3,
        Algorithm::For => 4,
        Algorithm::Grouped { .. } => 5,
    }
}

/// Trains logistic regression from zero weights on `train` with one cell.
pub fn train_cell(
    algorithm: &Algorithm,
    cell: &GridCell,
    settings: &RunSettings,
    train_set: &Dataset,
    repeat: u64,
) -> Result<TrainedClassifier> {
    let mut keys = vec![algorithm_code(algorithm), repeat];
    keys.extend(cell.key());
    let mut config = TrainConfig::new(
        algorithm.clone(),
        settings.iterations,
        mix_seed(settings.seed, &keys),
    );
    config.initial_keep_prob = settings.initial_keep_prob;
    config.baseline = settings.baseline;
    config.minibatch_size = settings.minibatch_size;
    let model = LogisticRegression::zeros(train_set.n_features());
    let out = train(model, train_set, cell.schedule(settings.delta), &config)?;
    let mask = match algorithm {
        Algorithm::Mle => None,
        _ => out.mask,
    };
    Ok(TrainedClassifier {
        model: out.model,
        mask,
    })
}

/// Grid search over the cells relevant to `algorithm`, scored on `valid`.
pub fn grid_search(
    exec: Exec,
    grid: &GridSpec,
    algorithm: &Algorithm,
    splits: &Splits,
    settings: &RunSettings,
) -> Result<GridOutcome<TrainedClassifier>> {
    grid.validate()?;
    let cells = grid.cells(algorithm);
    grid_search_with(exec, &cells, |cell| {
        let trained = train_cell(algorithm, cell, settings, &splits.train, 0)?;
        let acc = trained.accuracy(Exec::Sequential, algorithm, &splits.valid)?;
        Ok((acc, trained))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub grid: GridSpec,
    pub settings: RunSettings,
    pub algorithms: Vec<Algorithm>,
    /// Per-algorithm cells that bypass the grid search, keyed by
    /// [`Algorithm::name`].
    pub fixed_cells: BTreeMap<String, GridCell>,
    /// Extra retrainings of the chosen cell with fresh seeds.
    pub repeats: u64,
}

impl ExperimentConfig {
    pub fn new(data: DataConfig, grid: GridSpec, settings: RunSettings) -> Self {
        ExperimentConfig {
            data,
            grid,
            settings,
            algorithms: default_algorithms(),
            fixed_cells: BTreeMap::new(),
            repeats: 0,
        }
    }
}

/// MLE, fixed dropout at rate 0.5, UOR and FOR.
pub fn default_algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::Mle,
        Algorithm::FixedDropout { rate: 0.5 },
        Algorithm::Uor,
        Algorithm::For,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub algorithm: String,
    pub predictor: String,
    pub status: String,
    pub error: Option<String>,
    pub schedule: Option<GridCell>,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub repeat_test_accuracies: Vec<f64>,
    pub cells_evaluated: usize,
    pub cells_failed: usize,
    /// Trained keep probabilities, for algorithms that learn rates.
    pub keep_probs: Option<Vec<f64>>,
    pub mean_dropout_rate: Option<f64>,
    pub informative_mean_dropout_rate: Option<f64>,
    pub noise_mean_dropout_rate: Option<f64>,
}

impl AlgorithmResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub data: DataConfig,
    pub settings: RunSettings,
    pub bayes_optimal_accuracy: f64,
    pub algorithms: Vec<AlgorithmResult>,
}

impl ExperimentResult {
    pub fn get(&self, name: &str) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|r| r.algorithm == name)
    }

    pub fn any_failed(&self) -> bool {
        self.algorithms.iter().any(|r| !r.ok())
    }

    /// `algorithm,predictor,test_accuracy,validation_accuracy,a,b,c,d`, with a
    /// final `bayes-optimal` row.
    pub fn write_accuracy_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "algorithm,predictor,test_accuracy,validation_accuracy,a,b,c,d")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.algorithms {
            let cell = r.schedule;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.algorithm,
                r.predictor,
                opt(r.test_accuracy),
                opt(r.validation_accuracy),
                opt(cell.map(|c| c.a)),
                opt(cell.map(|c| c.b)),
                opt(cell.and_then(|c| c.c)),
                opt(cell.and_then(|c| c.d)),
            )?;
        }
        writeln!(out, "bayes-optimal,,{},,,,,", self.bayes_optimal_accuracy)?;
        Ok(())
    }

    /// One row per feature: `feature,role,<algorithm>_dropout_rate...` for
    /// every algorithm that learned rates.
    pub fn write_rate_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let learned: Vec<&AlgorithmResult> = self
            .algorithms
            .iter()
            .filter(|r| r.keep_probs.is_some())
            .collect();
        write!(out, "feature,role")?;
        for r in &learned {
            write!(out, ",{}_dropout_rate", r.algorithm)?;
        }
        writeln!(out)?;
        let d = self.data.n_features();
        for i in 0..d {
            let role = if i < self.data.n_informative {
                "informative"
            } else {
                "noise"
            };
            write!(out, "{},{}", i + 1, role)?;
            for r in &learned {
                let keep = r.keep_probs.as_ref().expect("filtered")[i];
                write!(out, ",{}", 1.0 - keep)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub result: ExperimentResult,
    /// Wall-clock seconds per algorithm, plus data generation.
    pub timings: Vec<(String, f64)>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_algorithm(
    exec: Exec,
    config: &ExperimentConfig,
    algorithm: &Algorithm,
    splits: &Splits,
) -> Result<AlgorithmResult> {
    let settings = &config.settings;
    let (cell, validation_accuracy, trained, cells) =
        match config.fixed_cells.get(algorithm.name()) {
            Some(fixed) => {
                let mut cell = *fixed;
                if !algorithm.learns_rates() {
                    cell.c = None;
                    cell.d = None;
                }
                let out = grid_search_with(Exec::Sequential, &[cell], |cell| {
                    let trained = train_cell(algorithm, cell, settings, &splits.train, 0)?;
                    Ok((trained.accuracy(exec, algorithm, &splits.valid)?, trained))
                })?;
                (out.best, out.validation_accuracy, out.best_artifact, out.cells)
            }
            None => {
                let out = grid_search(exec, &config.grid, algorithm, splits, settings)?;
                (out.best, out.validation_accuracy, out.best_artifact, out.cells)
            }
        };
    let test_accuracy = trained.accuracy(exec, algorithm, &splits.test)?;
    let repeats: Vec<u64> = (1..=config.repeats).collect();
    let repeat_test_accuracies = exec
        .map_slice(&repeats, |&r| {
            train_cell(algorithm, &cell, settings, &splits.train, r)?
                .accuracy(Exec::Sequential, algorithm, &splits.test)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;

    let keep_probs = if algorithm.learns_rates() {
        trained.mask.as_ref().map(|q| q.keep_probs())
    } else {
        None
    };
    let k = config.data.n_informative;
    let rates: Option<Vec<f64>> = keep_probs
        .as_ref()
        .map(|keep| keep.iter().map(|p| 1.0 - p).collect());
    Ok(AlgorithmResult {
        algorithm: algorithm.name().to_string(),
        predictor: test_predictor_name(algorithm).to_string(),
        status: "ok".into(),
        error: None,
        schedule: Some(cell),
        validation_accuracy: Some(validation_accuracy),
        test_accuracy: Some(test_accuracy),
        repeat_test_accuracies,
        cells_evaluated: cells.len(),
        cells_failed: cells.iter().filter(|c| c.error.is_some()).count(),
        mean_dropout_rate: rates.as_deref().and_then(mean),
        informative_mean_dropout_rate: rates.as_ref().and_then(|r| mean(&r[..k])),
        noise_mean_dropout_rate: rates.as_ref().and_then(|r| mean(&r[k..])),
        keep_probs,
    })
}

/// Generates the data, then grid-searches and tests every algorithm.
/// A failing algorithm is recorded in its row; the others still run.
pub fn run_experiment(exec: Exec, config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.grid.validate()?;
    let mut timings = Vec::new();
    let start = Instant::now();
    let splits = generate(&config.data)?;
    timings.push(("generate".to_string(), start.elapsed().as_secs_f64()));

    let mut rows = Vec::new();
    for algorithm in &config.algorithms {
        let start = Instant::now();
        let row = run_algorithm(exec, config, algorithm, &splits).unwrap_or_else(|e| {
            AlgorithmResult {
                algorithm: algorithm.name().to_string(),
                predictor: test_predictor_name(algorithm).to_string(),
                status: "failed".into(),
                error: Some(e.to_string()),
                schedule: None,
                validation_accuracy: None,
                test_accuracy: None,
                repeat_test_accuracies: Vec::new(),
                cells_evaluated: 0,
                cells_failed: 0,
                keep_probs: None,
                mean_dropout_rate: None,
                informative_mean_dropout_rate: None,
                noise_mean_dropout_rate: None,
            }
        });
        timings.push((algorithm.name().to_string(), start.elapsed().as_secs_f64()));
        rows.push(row);
    }
    Ok(ExperimentRun {
        result: ExperimentResult {
            data: config.data.clone(),
            settings: config.settings.clone(),
            bayes_optimal_accuracy: bayes_optimal_accuracy(&config.data),
            algorithms: rows,
        },
        timings,
    })
}
