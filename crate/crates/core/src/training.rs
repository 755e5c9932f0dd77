//! SGD training loops and exact small-instance oracles for the bound.
//!
//! Every loop shares one step routine. Per iteration it draws the minibatch
//! indices (uniform, with replacement), then one mask for the batch, then
//! applies the θ step and, for the rate-learning algorithms, the logit step
//!
//! ```text
//! ρ += ε_t · ( ∂log q(z_t)/∂ρ · (log p(y_t | x_t, z_t, θ_t) − b_t)
//!            + δ_t · ∂/∂ρ [E_q log p(z) − E_q log q(z)] )
//! ```
//!
//! where `b_t` is the optional moving-average baseline (0 when disabled).
//! Both steps use the log-likelihood evaluated at `θ_t`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::mask::{
    for_each_mask, MaskDistribution, MaskLaw, MaskMode, MaskVector, PriorMask, TabulatedMaskDist,
};
use crate::math::log_sum_exp;
use crate::models::MaskedModel;

/// Mask length limit for the exact bound and marginal-likelihood oracles.
pub const MAX_BOUND_DIM: usize = 10;

/// Decay of the moving-average baseline.
pub const BASELINE_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum DeltaMode {
    /// `δ_t = 1 / T` with `T` the training-set size.
    InverseSampleCount,
    Constant(f64),
    /// `δ_t = 1 / (t + 1)`.
    OneOverT,
}

/// `η_t = a / (1 + t/b)`, `ε_t = c / (1 + t/d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub delta: DeltaMode,
}

impl StepSchedule {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        StepSchedule {
            a,
            b,
            c,
            d,
            delta: DeltaMode::InverseSampleCount,
        }
    }

    pub fn with_delta(mut self, delta: DeltaMode) -> Self {
        self.delta = delta;
        self
    }

    /// `c = 0` is accepted and freezes the logits.
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.a) && pos(self.b) && pos(self.d) && self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad step schedule {self:?}")));
        }
        if let DeltaMode::Constant(v) = self.delta {
            if !pos(v) {
                return Err(Error::InvalidConfig(format!("delta must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn eta(&self, t: u64) -> f64 {
        self.a / (1.0 + t as f64 / self.b)
    }

    pub fn epsilon(&self, t: u64) -> f64 {
        self.c / (1.0 + t as f64 / self.d)
    }

    pub fn delta(&self, t: u64, n_samples: usize) -> f64 {
        match self.delta {
            DeltaMode::InverseSampleCount => 1.0 / n_samples.max(1) as f64,
            DeltaMode::Constant(v) => v,
            DeltaMode::OneOverT => 1.0 / (t as f64 + 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Algorithm {
    Mle,
    FixedDropout { rate: f64 },
    /// One shared optimized rate.
    Uor,
    /// One optimized rate per feature.
    For,
    /// One optimized rate per group; `groups[i]` is the group of bit `i`.
    Grouped { groups: Vec<usize> },
}

impl Algorithm {
    pub fn learns_rates(&self) -> bool {
        matches!(self, Algorithm::Uor | Algorithm::For | Algorithm::Grouped { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Mle => "mle",
            Algorithm::FixedDropout { .. } => "fixed-dropout",
            Algorithm::Uor => "uor",
            Algorithm::For => "for",
            Algorithm::Grouped { .. } => "grouped",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::FixedDropout { rate } => write!(f, "fixed-dropout({rate})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub iterations: u64,
    pub seed: u64,
    pub minibatch_size: usize,
    pub baseline: bool,
    /// `None` means keep probability 0.5 on every bit.
    pub prior: Option<PriorMask>,
    pub initial_keep_prob: f64,
    /// Iterations between progress records; `None` means one epoch.
    pub progress_every: Option<u64>,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, iterations: u64, seed: u64) -> Self {
        TrainConfig {
            algorithm,
            iterations,
            seed,
            minibatch_size: 1,
            baseline: false,
            prior: None,
            initial_keep_prob: 0.5,
            progress_every: None,
        }
    }

    fn validate(&self, mask_dim: usize) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::InvalidConfig("minibatch size must be at least 1".into()));
        }
        if !(self.initial_keep_prob > 0.0 && self.initial_keep_prob < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "initial keep probability {} outside (0, 1)",
                self.initial_keep_prob
            )));
        }
        if let Algorithm::FixedDropout { rate } = self.algorithm {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::InvalidConfig(format!("dropout rate {rate} outside (0, 1)")));
            }
        }
        if let Some(p) = &self.prior {
            crate::error::check_len("prior", mask_dim, p.dim())?;
        }
        Ok(())
    }

    fn initial_mask(&self, dim: usize) -> Result<Option<MaskDistribution>> {
        let keep = self.initial_keep_prob;
        Ok(match &self.algorithm {
            Algorithm::Mle => None,
            Algorithm::FixedDropout { rate } => Some(MaskDistribution::with_keep_prob(
                MaskMode::Shared,
                dim,
                1.0 - rate,
            )?),
            Algorithm::Uor => Some(MaskDistribution::with_keep_prob(MaskMode::Shared, dim, keep)?),
            Algorithm::For => Some(MaskDistribution::with_keep_prob(
                MaskMode::PerFeature,
                dim,
                keep,
            )?),
            Algorithm::Grouped { groups } => Some(MaskDistribution::with_keep_prob(
                MaskMode::Grouped(groups.clone()),
                dim,
                keep,
            )?),
        })
    }
}

/// One progress line, written as `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub iteration: u64,
    pub eta: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Mean log-likelihood of the sampled minibatches since the last record.
    pub train_log_likelihood: f64,
    pub mean_keep_prob: f64,
}

impl fmt::Display for ProgressRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iteration={} eta={} epsilon={} delta={} train_log_likelihood={} mean_keep_prob={}",
            self.iteration,
            self.eta,
            self.epsilon,
            self.delta,
            self.train_log_likelihood,
            self.mean_keep_prob
        )
    }
}

/// Mutable loop state. Cloning it and resuming reproduces the trajectory.
#[derive(Debug, Clone)]
pub struct TrainState<M> {
    pub t: u64,
    pub model: M,
    pub mask: Option<MaskDistribution>,
    pub rng: ChaCha8Rng,
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Trained (or fixed) mask distribution; `None` for MLE.
    pub mask: Option<MaskDistribution>,
    pub progress: Vec<ProgressRecord>,
    pub iterations: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Update {
    Both,
    ThetaOnly,
    RatesOnly,
}

struct StepReport {
    theta_grad_norm: f64,
    rate_dir_norm: f64,
}

struct Trainer<'a, M, S: ?Sized> {
    data: &'a S,
    schedule: StepSchedule,
    config: &'a TrainConfig,
    prior: PriorMask,
    state: TrainState<M>,
    grad: Vec<f64>,
    batch: Vec<usize>,
    z: MaskVector,
    progress: Vec<ProgressRecord>,
    window_ll: f64,
    window_n: u64,
}

impl<'a, M: MaskedModel, S: Samples + ?Sized> Trainer<'a, M, S> {
    fn new(model: M, data: &'a S, schedule: StepSchedule, config: &'a TrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        schedule.validate()?;
        let dim = model.mask_dim();
        config.validate(dim)?;
        let prior = match &config.prior {
            Some(p) => p.clone(),
            None => PriorMask::uniform(dim, 0.5)?,
        };
        let mask = config.initial_mask(dim)?;
        let grad = vec![0.0; model.param_count()];
        Ok(Trainer {
            data,
            schedule,
            config,
            prior,
            state: TrainState {
                t: 0,
                model,
                mask,
                rng: ChaCha8Rng::seed_from_u64(config.seed),
                baseline: None,
            },
            grad,
            batch: Vec::with_capacity(config.minibatch_size),
            z: MaskVector::ones(dim),
            progress: Vec::new(),
            window_ll: 0.0,
            window_n: 0,
        })
    }

    fn step(&mut self, update: Update) -> Result<StepReport> {
        let t = self.state.t;
        let n = self.data.len();
        let rng = &mut self.state.rng;

        self.batch.clear();
        for _ in 0..self.config.minibatch_size {
            self.batch.push(rng.random_range(0..n));
        }
        if let Some(q) = &self.state.mask {
            q.sample_into(rng, &mut self.z);
        }

        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ll = 0.0;
        for &i in &self.batch {
            ll += self.state.model.add_grad(
                self.data.input(i),
                self.data.target(i),
                &self.z,
                &mut self.grad,
            )?;
        }
        let scale = 1.0 / self.batch.len() as f64;
        ll *= scale;
        self.grad.iter_mut().for_each(|g| *g *= scale);
        if !ll.is_finite() {
            return Err(Error::NonFinite {
                term: "log-likelihood",
                iteration: t,
            });
        }
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "theta gradient",
                iteration: t,
            });
        }
        let theta_grad_norm = self.grad.iter().map(|g| g * g).sum::<f64>().sqrt();

        if update != Update::RatesOnly {
            self.state.model.step(&self.grad, self.schedule.eta(t));
            if !self.state.model.is_finite() {
                return Err(Error::NonFinite {
                    term: "theta",
                    iteration: t,
                });
            }
        }

        let mut rate_dir_norm = 0.0;
        if update != Update::ThetaOnly && self.config.algorithm.learns_rates() {
            let q = self.state.mask.as_mut().expect("rate-learning algorithms carry a mask");
            let baseline = if self.config.baseline {
                *self.state.baseline.get_or_insert(ll)
            } else {
                0.0
            };
            let score = q.score_gradient(&self.z)?;
            let reg = q.regularizer_gradient(&self.prior)?;
            let delta = self.schedule.delta(t, n);
            let centered = ll - baseline;
            if score.iter().any(|v| !(v * centered).is_finite()) {
                return Err(Error::NonFinite {
                    term: "score-function term",
                    iteration: t,
                });
            }
            if reg.iter().any(|v| !(v * delta).is_finite()) {
                return Err(Error::NonFinite {
                    term: "prior regularizer term",
                    iteration: t,
                });
            }
            let dir: Vec<f64> = score
                .iter()
                .zip(&reg)
                .map(|(s, r)| s * centered + delta * r)
                .collect();
            rate_dir_norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.step_logits(&dir, self.schedule.epsilon(t))?;
            if let Some(b) = self.state.baseline.as_mut() {
                *b = BASELINE_DECAY * *b + (1.0 - BASELINE_DECAY) * ll;
            }
        }

        self.state.t += 1;
        self.window_ll += ll;
        self.window_n += 1;
        let every = self.config.progress_every.unwrap_or(n as u64).max(1);
        if self.state.t.is_multiple_of(every) || self.state.t == self.config.iterations {
            self.record();
        }
        Ok(StepReport {
            theta_grad_norm,
            rate_dir_norm,
        })
    }

    fn record(&mut self) {
        if self.window_n == 0 {
            return;
        }
        let t = self.state.t;
        self.progress.push(ProgressRecord {
            iteration: t,
            eta: self.schedule.eta(t),
            epsilon: self.schedule.epsilon(t),
            delta: self.schedule.delta(t, self.data.len()),
            train_log_likelihood: self.window_ll / self.window_n as f64,
            mean_keep_prob: self.state.mask.as_ref().map_or(1.0, |q| q.mean_keep_prob()),
        });
        self.window_ll = 0.0;
        self.window_n = 0;
    }

    fn finish(self) -> TrainOutcome<M> {
        TrainOutcome {
            iterations: self.state.t,
            model: self.state.model,
            mask: self.state.mask,
            progress: self.progress,
        }
    }
}

fn run_plain<M: MaskedModel, S: Samples + ?Sized>(
    model: M,
    data: &S,
    schedule: StepSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    let mut trainer = Trainer::new(model, data, schedule, config)?;
    for _ in 0..config.iterations {
        trainer.step(Update::Both)?;
    }
    Ok(trainer.finish())
}

/// Maximum likelihood: SGD with every feature kept. Ignores
/// `config.algorithm`.
pub fn train_mle<M: MaskedModel, S: Samples + ?Sized>(
    model: M,
    data: &S,
    schedule: StepSchedule,
    config: &TrainConfig,
) -> Result<M> {
    let config = TrainConfig {
        algorithm: Algorithm::Mle,
        ..config.clone()
    };
    Ok(run_plain(model, data, schedule, &config)?.model)
}

/// Standard dropout with a fixed rate; `config.algorithm` must be
/// [`Algorithm::FixedDropout`].
pub fn train_standard_dropout<M: MaskedModel, S: Samples + ?Sized>(
    model: M,
    data: &S,
    schedule: StepSchedule,
    config: &TrainConfig,
) -> Result<M> {
    if !matches!(config.algorithm, Algorithm::FixedDropout { .. }) {
        return Err(Error::InvalidConfig(format!(
            "standard dropout needs a fixed rate, got {}",
            config.algorithm
        )));
    }
    Ok(run_plain(model, data, schedule, config)?.model)
}

/// Bayesian dropout: joint SGD on θ and the mask logits.
pub fn train_bayesian_dropout<M: MaskedModel, S: Samples + ?Sized>(
    model: M,
    data: &S,
    schedule: StepSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    if !config.algorithm.learns_rates() {
        return Err(Error::InvalidConfig(format!(
            "{} does not optimize dropout rates",
            config.algorithm
        )));
    }
    run_plain(model, data, schedule, config)
}

/// Dispatches on `config.algorithm`.
pub fn train<M: MaskedModel, S: Samples + ?Sized>(
    model: M,
    data: &S,
    schedule: StepSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    run_plain(model, data, schedule, config)
}

/// Phase control for [`train_em_like`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// θ phase ends once the smoothed θ-gradient norm drops below this.
    pub theta_tol: f64,
    /// Rate phase ends once the smoothed logit-update norm drops below this.
    pub rate_tol: f64,
    pub max_phase_steps: u64,
    /// Smoothing factor of the gradient-norm estimates.
    pub smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            theta_tol: 1e-2,
            rate_tol: 1e-2,
            max_phase_steps: 10_000,
            smoothing: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome<M> {
    pub outcome: TrainOutcome<M>,
    /// Length of each phase in order, starting with a θ phase.
    pub phase_lengths: Vec<u64>,
}

/// Alternates θ-only and rate-only phases, using the same per-step updates
/// as [`train_bayesian_dropout`]. The iteration budget covers both phases.
pub fn train_em_like<M: MaskedModel, S: Samples + ?Sized>(
    model: M,
    data: &S,
    schedule: StepSchedule,
    config: &TrainConfig,
    em: &EmConfig,
) -> Result<EmOutcome<M>> {
    if !config.algorithm.learns_rates() {
        return Err(Error::InvalidConfig(format!(
            "{} does not optimize dropout rates",
            config.algorithm
        )));
    }
    if em.max_phase_steps == 0 || !(0.0..1.0).contains(&em.smoothing) {
        return Err(Error::InvalidConfig(format!("bad EM phase config {em:?}")));
    }
    let mut trainer = Trainer::new(model, data, schedule, config)?;
    let mut phase_lengths = Vec::new();
    let mut update = Update::ThetaOnly;
    let mut remaining = config.iterations;
    while remaining > 0 {
        let mut steps = 0;
        let mut norm_estimate: Option<f64> = None;
        let tol = if update == Update::ThetaOnly {
            em.theta_tol
        } else {
            em.rate_tol
        };
        while remaining > 0 {
            let report = trainer.step(update)?;
            remaining -= 1;
            steps += 1;
            let norm = if update == Update::ThetaOnly {
                report.theta_grad_norm
            } else {
                report.rate_dir_norm
            };
            let est = match norm_estimate {
                None => norm,
                Some(prev) => em.smoothing * prev + (1.0 - em.smoothing) * norm,
            };
            norm_estimate = Some(est);
            if est < tol || steps >= em.max_phase_steps {
                break;
            }
        }
        phase_lengths.push(steps);
        update = if update == Update::ThetaOnly {
            Update::RatesOnly
        } else {
            Update::ThetaOnly
        };
    }
    Ok(EmOutcome {
        outcome: trainer.finish(),
        phase_lengths,
    })
}

fn check_bound_dim(m: usize) -> Result<()> {
    if m > MAX_BOUND_DIM {
        Err(Error::DimensionTooLarge {
            dim: m,
            max: MAX_BOUND_DIM,
        })
    } else {
        Ok(())
    }
}

/// `Σ_t log p(y_t | x_t, z, θ)` for one mask.
pub fn dataset_log_likelihood<M: MaskedModel, S: Samples + ?Sized>(
    model: &M,
    data: &S,
    z: &MaskVector,
) -> Result<f64> {
    (0..data.len()).try_fold(0.0, |acc, t| {
        Ok(acc + model.log_likelihood(data.input(t), data.target(t), z)?)
    })
}

fn per_mask_log_likelihood<M: MaskedModel, S: Samples + ?Sized>(
    model: &M,
    data: &S,
) -> Result<Vec<f64>> {
    let m = model.mask_dim();
    check_bound_dim(m)?;
    let mut out = Vec::with_capacity(1 << m);
    let mut err = None;
    for_each_mask(m, |_, z| match dataset_log_likelihood(model, data, z) {
        Ok(v) => out.push(v),
        Err(e) => {
            err.get_or_insert(e);
            out.push(f64::NAN);
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `Σ_z q(z) f(z)` over all masks, skipping zero-probability masks.
fn expect<Q: MaskLaw + ?Sized>(q: &Q, values: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    let mut err = None;
    for_each_mask(q.dim(), |index, z| match q.log_prob(z) {
        Ok(lp) => {
            let w = lp.exp();
            if w > 0.0 {
                total += w * values[index as usize];
            }
        }
        Err(e) => {
            err.get_or_insert(e);
        }
    })?;
    err.map_or(Ok(total), Err)
}

fn log_probs<Q: MaskLaw + ?Sized>(q: &Q) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(1 << q.dim());
    let mut err = None;
    for_each_mask(q.dim(), |_, z| match q.log_prob(z) {
        Ok(v) => out.push(v),
        Err(e) => {
            err.get_or_insert(e);
            out.push(f64::NAN);
        }
    })?;
    err.map_or(Ok(out), Err)
}

/// First term of the bound: `Σ_t Σ_z q(z) log p(y_t | x_t, z, θ)`.
pub fn expected_log_likelihood_exact<M, S, Q>(model: &M, data: &S, q: &Q) -> Result<f64>
where
    M: MaskedModel,
    S: Samples + ?Sized,
    Q: MaskLaw + ?Sized,
{
    crate::error::check_len("mask distribution", model.mask_dim(), q.dim())?;
    let ll = per_mask_log_likelihood(model, data)?;
    expect(q, &ll)
}

/// `F(q, θ) = Σ_t E_q[log p(y_t|x_t,z,θ)] + E_q[log p(z)] − E_q[log q(z)]`,
/// each term by enumeration.
pub fn lower_bound_exact<M, S, Q, P>(model: &M, data: &S, q: &Q, prior: &P) -> Result<f64>
where
    M: MaskedModel,
    S: Samples + ?Sized,
    Q: MaskLaw + ?Sized,
    P: MaskLaw + ?Sized,
{
    let m = model.mask_dim();
    crate::error::check_len("mask distribution", m, q.dim())?;
    crate::error::check_len("prior", m, prior.dim())?;
    let ll = per_mask_log_likelihood(model, data)?;
    let log_prior = log_probs(prior)?;
    let log_q = log_probs(q)?;
    let first = expect(q, &ll)?;
    let cross = expect(q, &log_prior)?;
    let neg_entropy = expect(q, &log_q)?;
    Ok(first + cross - neg_entropy)
}

/// `log Σ_z [Π_t p(y_t | x_t, z, θ)] p(z)` with log-sum-exp.
pub fn marginal_log_likelihood_exact<M, S, P>(model: &M, data: &S, prior: &P) -> Result<f64>
where
    M: MaskedModel,
    S: Samples + ?Sized,
    P: MaskLaw + ?Sized,
{
    crate::error::check_len("prior", model.mask_dim(), prior.dim())?;
    let joint = joint_log_probs(model, data, prior)?;
    Ok(log_sum_exp(&joint))
}

fn joint_log_probs<M, S, P>(model: &M, data: &S, prior: &P) -> Result<Vec<f64>>
where
    M: MaskedModel,
    S: Samples + ?Sized,
    P: MaskLaw + ?Sized,
{
    let ll = per_mask_log_likelihood(model, data)?;
    let lp = log_probs(prior)?;
    Ok(ll.iter().zip(&lp).map(|(a, b)| a + b).collect())
}

/// The mask posterior `p(z | D, θ)` as a full table.
pub fn posterior_exact<M, S, P>(model: &M, data: &S, prior: &P) -> Result<TabulatedMaskDist>
where
    M: MaskedModel,
    S: Samples + ?Sized,
    P: MaskLaw + ?Sized,
{
    crate::error::check_len("prior", model.mask_dim(), prior.dim())?;
    let joint = joint_log_probs(model, data, prior)?;
    let norm = log_sum_exp(&joint);
    TabulatedMaskDist::new(
        model.mask_dim(),
        joint.iter().map(|j| (j - norm).exp()).collect(),
    )
}

/// `KL(q ‖ p) = Σ_z q(z) [log q(z) − log p(z)]`.
pub fn kl_divergence_exact<Q, P>(q: &Q, p: &P) -> Result<f64>
where
    Q: MaskLaw + ?Sized,
    P: MaskLaw + ?Sized,
{
    crate::error::check_len("mask distribution", q.dim(), p.dim())?;
    let lq = log_probs(q)?;
    let lp = log_probs(p)?;
    let diff: Vec<f64> = lq.iter().zip(&lp).map(|(a, b)| a - b).collect();
    expect(q, &diff)
}

/// Exact expectation over masks and the empirical data distribution of the
/// score part of the logit update:
/// `Σ_z q(z) ∂log q(z)/∂ρ · ((1/T) Σ_t log p(y_t | x_t, z, θ) − baseline)`.
pub fn expected_score_update_exact<M, S>(
    model: &M,
    data: &S,
    q: &MaskDistribution,
    baseline: f64,
) -> Result<Vec<f64>>
where
    M: MaskedModel,
    S: Samples + ?Sized,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::error::check_len("mask distribution", model.mask_dim(), q.dim())?;
    let ll = per_mask_log_likelihood(model, data)?;
    let t = data.len() as f64;
    let mut out = vec![0.0; q.num_params()];
    let mut err = None;
    for_each_mask(q.dim(), |index, z| {
        let mut step = || -> Result<()> {
            let w = q.log_prob(z)?.exp();
            let centered = ll[index as usize] / t - baseline;
            for (o, s) in out.iter_mut().zip(q.score_gradient(z)?) {
                *o += w * s * centered;
            }
            Ok(())
        };
        if let Err(e) = step() {
            err.get_or_insert(e);
        }
    })?;
    err.map_or(Ok(out), Err)
}
