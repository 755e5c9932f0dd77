//! `bayesdrop`: data generation, training, evaluation and the full
//! four-algorithm experiment, each writing a manifest next to its outputs.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use config::{AlgorithmName, Config, DeltaModeName, GridName, PredictorName, Scale};

#[derive(Parser, Debug)]
#[command(name = "bayesdrop", version, about = "Bayesian dropout with learned dropout rates")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving outputs and the manifest [default: out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Flat TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for grid cells and evaluation; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Problem size preset.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train/valid/test CSVs for the synthetic benchmark.
    GenData(DataArgs),
    /// Train one model and write checkpoints plus a progress log.
    Train(TrainArgs),
    /// Score a checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Grid-search and test MLE, fixed dropout, UOR and FOR.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    #[arg(long)]
    n_informative: Option<usize>,
    #[arg(long)]
    n_noise: Option<usize>,
    #[arg(long)]
    mean_shift: Option<f64>,
    #[arg(long)]
    feature_std: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_valid: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ScheduleArgs {
    #[arg(long)]
    iterations: Option<u64>,
    /// θ step size `a / (1 + t/b)`.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Logit step size `c / (1 + t/d)`.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    /// Constant regularizer weight; implies `--delta-mode constant`.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    delta_mode: Option<DeltaModeName>,
    /// Subtract a moving-average baseline in the score term.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    initial_keep_prob: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding train.csv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmName>,
    /// Dropout rate for `fixed-dropout`.
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Iterations between progress records [default: one epoch].
    #[arg(long)]
    progress_every: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Mask-distribution checkpoint; omitted for MLE.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Labeled CSV to score.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    predictor: Option<PredictorName>,
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, value_enum)]
    grid: Option<GridName>,
    /// Extra retrainings of each chosen cell with fresh seeds.
    #[arg(long)]
    repeats: Option<u64>,
    /// Skip the search for one algorithm: `for=0.01,1000,0.01,10000`.
    #[arg(long, value_parser = parse_fixed)]
    fixed: Vec<(AlgorithmName, Vec<f64>)>,
}

fn parse_fixed(s: &str) -> Result<(AlgorithmName, Vec<f64>), String> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| format!("expected ALGORITHM=a,b[,c,d], got {s:?}"))?;
    let algorithm = <AlgorithmName as clap::ValueEnum>::from_str(name, true)?;
    let cell = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((algorithm, cell))
}

impl DataArgs {
    fn apply(&self, c: &mut Config) {
        c.n_informative = self.n_informative;
        c.n_noise = self.n_noise;
        c.mean_shift = self.mean_shift;
        c.feature_std = self.feature_std;
        c.n_train = self.n_train;
        c.n_valid = self.n_valid;
        c.n_test = self.n_test;
    }
}

impl ScheduleArgs {
    fn apply(&self, c: &mut Config) {
        c.iterations = self.iterations;
        c.a = self.a;
        c.b = self.b;
        c.c = self.c;
        c.d = self.d;
        c.delta = self.delta;
        c.delta_mode = self
            .delta_mode
            .or(self.delta.map(|_| DeltaModeName::Constant));
        c.baseline = self.baseline.then_some(true);
        c.minibatch_size = self.minibatch_size;
        c.initial_keep_prob = self.initial_keep_prob;
    }
}

impl Cli {
    /// The flag layer of the configuration.
    fn flag_config(&self) -> Config {
        let mut c = Config {
            seed: self.common.seed,
            workers: self.common.workers,
            scale: self.common.scale,
            ..Default::default()
        };
        match &self.command {
            Command::GenData(args) => args.apply(&mut c),
            Command::Train(args) => {
                c.data_dir = args.data_dir.clone();
                c.algorithm = args.algorithm;
                c.rate = args.rate;
                args.schedule.apply(&mut c);
                c.progress_every = args.progress_every;
            }
            Command::Eval(args) => {
                c.model = args.model.clone();
                c.mask = args.mask.clone();
                c.data = args.data.clone();
                c.predictor = args.predictor;
                c.mc_samples = args.mc_samples;
            }
            Command::Experiment(args) => {
                args.data.apply(&mut c);
                args.schedule.apply(&mut c);
                c.grid = args.grid;
                c.repeats = args.repeats;
                for (algorithm, cell) in &args.fixed {
                    c.set_fixed(*algorithm, cell.clone());
                }
            }
        }
        c
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let config = file.overlay(&cli.flag_config())?;
    let out_dir = cli.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::GenData(_) => commands::gen_data(config, &out_dir),
        Command::Train(_) => commands::train(config, &out_dir),
        Command::Eval(_) => commands::eval(config, &out_dir),
        Command::Experiment(_) => {
            let failed = commands::experiment(config, &out_dir)?;
            if failed > 0 {
                bail!("{failed} algorithm(s) failed; see result.json");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
