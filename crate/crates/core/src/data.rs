//! Synthetic binary-classification benchmark and labeled sample containers.
//!
//! Each sample draws `y ~ Ber(0.5)`, then `n_informative` features from
//! `N(±μ, std²)` (sign given by the label) and `n_noise` features from
//! `N(0, std²)`. Gaussians come from the inverse normal CDF applied to open
//! uniforms, so a config and seed pin the data down exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{normal_cdf, normal_quantile};

/// Indexed `(input, target)` pairs.
pub trait Samples: Sync {
    fn len(&self) -> usize;
    fn input(&self, i: usize) -> &[f64];
    fn target(&self, i: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_informative: usize,
    pub n_noise: usize,
    pub mean_shift: f64,
    pub feature_std: f64,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_informative: 100,
            n_noise: 900,
            mean_shift: 0.1,
            feature_std: 1.0,
            n_train: 2000,
            n_valid: 1000,
            n_test: 20000,
            seed: 0,
        }
    }
}

impl DataConfig {
    /// Reduced configuration: 5 informative + 45 noise features, 200/100/1000.
    pub fn smoke(seed: u64) -> Self {
        DataConfig {
            n_informative: 5,
            n_noise: 45,
            n_train: 200,
            n_valid: 100,
            n_test: 1000,
            seed,
            ..Default::default()
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_informative + self.n_noise
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.feature_std > 0.0 && self.feature_std.is_finite()) {
            return Err(Error::InvalidConfig("feature_std must be positive".into()));
        }
        if !self.mean_shift.is_finite() {
            return Err(Error::InvalidConfig("mean_shift must be finite".into()));
        }
        Ok(())
    }
}

/// Row-major labeled samples; labels are stored as 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_features: usize,
    n_informative: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u8>,
        n_features: usize,
        n_informative: usize,
        split: Split,
    ) -> Result<Self> {
        check_len("feature matrix", labels.len() * n_features, features.len())?;
        if n_informative > n_features {
            return Err(Error::InvalidConfig(
                "more informative columns than columns".into(),
            ));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite feature".into()));
        }
        Ok(Dataset {
            features,
            labels: labels.into_iter().map(f64::from).collect(),
            n_features,
            n_informative,
            split,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_informative(&self) -> usize {
        self.n_informative
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i] as u8
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.labels.iter().map(|&y| y as u8)
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().sum::<f64>() / self.labels.len() as f64
    }

    /// Column names: `label`, then `informative_<k>` and `noise_<k>`, 1-based.
    pub fn header(&self) -> Vec<String> {
        std::iter::once("label".to_string())
            .chain((1..=self.n_informative).map(|k| format!("informative_{k}")))
            .chain((1..=self.n_features - self.n_informative).map(|k| format!("noise_{k}")))
            .collect()
    }

    /// Writes the CSV form: label first, then features, LF endings.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut out = BufWriter::new(file);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(self.header()).map_err(csv_io)?;
        let mut record = Vec::with_capacity(self.n_features + 1);
        for i in 0..self.n_samples() {
            record.clear();
            record.push(self.label(i).to_string());
            // Display for f64 is the shortest string that parses back exactly
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        Self::read_csv(file, split)
    }

    pub fn read_csv<R: std::io::Read>(input: R, split: Split) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers().map_err(csv_parse)?.clone();
        if header.get(0) != Some("label") {
            return Err(Error::Parse {
                line: 1,
                msg: "first column must be `label`".into(),
            });
        }
        let n_features = header.len() - 1;
        let n_informative = header
            .iter()
            .skip(1)
            .take_while(|h| h.starts_with("informative_"))
            .count();
        if header
            .iter()
            .skip(1 + n_informative)
            .any(|h| !h.starts_with("noise_"))
        {
            return Err(Error::Parse {
                line: 1,
                msg: "columns must be informative_* followed by noise_*".into(),
            });
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: String| Error::Parse { line, msg };
            match rec.get(0) {
                Some("0") => labels.push(0u8),
                Some("1") => labels.push(1u8),
                other => return Err(bad(format!("bad label {other:?}"))),
            }
            for field in rec.iter().skip(1) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(format!("bad number {field:?}")))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite value {field:?}")));
                }
                features.push(v);
            }
        }
        Dataset::new(features, labels, n_features, n_informative, split)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

impl Samples for Dataset {
    fn len(&self) -> usize {
        self.n_samples()
    }

    fn input(&self, i: usize) -> &[f64] {
        self.row(i)
    }

    fn target(&self, i: usize) -> &[f64] {
        std::slice::from_ref(&self.labels[i])
    }
}

/// Real-valued targets, e.g. for the three-layer regression network.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl RegressionData {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, n_in: usize, n_out: usize) -> Result<Self> {
        let n = inputs.len().checked_div(n_in).unwrap_or(0);
        check_len("inputs", n * n_in, inputs.len())?;
        check_len("targets", n * n_out, targets.len())?;
        Ok(RegressionData {
            inputs,
            targets,
            n_in,
            n_out,
        })
    }
}

impl Samples for RegressionData {
    fn len(&self) -> usize {
        self.targets.len().checked_div(self.n_out).unwrap_or(0)
    }

    fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_in..(i + 1) * self.n_in]
    }

    fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_out..(i + 1) * self.n_out]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Draws train, valid and test splits, in that order, from one stream.
pub fn generate(config: &DataConfig) -> Result<Splits> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train = draw_split(config, config.n_train, Split::Train, &mut rng)?;
    let valid = draw_split(config, config.n_valid, Split::Valid, &mut rng)?;
    let test = draw_split(config, config.n_test, Split::Test, &mut rng)?;
    Ok(Splits { train, valid, test })
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    normal_quantile(u)
}

fn draw_split<R: Rng + ?Sized>(
    config: &DataConfig,
    n: usize,
    split: Split,
    rng: &mut R,
) -> Result<Dataset> {
    let d = config.n_features();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random::<f64>() < 0.5;
        labels.push(y as u8);
        let shift = if y { config.mean_shift } else { -config.mean_shift };
        for _ in 0..config.n_informative {
            features.push(shift + config.feature_std * std_normal(rng));
        }
        for _ in 0..config.n_noise {
            features.push(config.feature_std * std_normal(rng));
        }
    }
    Dataset::new(features, labels, d, config.n_informative, split)
}

/// Accuracy of `sign(Σ informative x_i)`: `Φ(√k μ / std)`, 0.5 when `k = 0`.
pub fn bayes_optimal_accuracy(config: &DataConfig) -> f64 {
    if config.n_informative == 0 {
        return 0.5;
    }
    let k = config.n_informative as f64;
    normal_cdf(k.sqrt() * config.mean_shift.abs() / config.feature_std)
}
