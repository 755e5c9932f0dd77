//! Independent Bernoulli distributions over binary masks.
//!
//! A [`MaskDistribution`] stores unconstrained logits `ρ`; the probability
//! that mask bit `i` is kept is `λ_i = σ(ρ_{g(i)})`, where `g` maps a bit to
//! its parameter slot. Three parameterizations are supported:
//!
//! - [`MaskMode::Shared`]: one logit for every bit.
//! - [`MaskMode::PerFeature`]: one logit per bit.
//! - [`MaskMode::Grouped`]: one logit per group of bits.
//!
//! The externally reported dropout rate is `1 - λ_i`.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::math::{log_sigmoid, logit, sigmoid};

/// Logits are kept inside `[-LOGIT_CLAMP, LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 12.0;

/// Largest mask length accepted by exhaustive enumeration.
pub const MAX_ENUM_DIM: usize = 20;

/// Binary inclusion vector; `true` keeps the feature or unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskVector(Vec<bool>);

impl MaskVector {
    pub fn new(bits: Vec<bool>) -> Self {
        MaskVector(bits)
    }

    pub fn ones(m: usize) -> Self {
        MaskVector(vec![true; m])
    }

    pub fn zeros(m: usize) -> Self {
        MaskVector(vec![false; m])
    }

    /// Bit `i` of `index` becomes element `i` of the mask.
    pub fn from_index(index: u64, m: usize) -> Self {
        MaskVector((0..m).map(|i| (index >> i) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// The mask as 0.0 / 1.0 values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Splits the mask at `at`, e.g. into input and hidden blocks.
    pub fn split_at(&self, at: usize) -> (&[bool], &[bool]) {
        self.0.split_at(at)
    }
}

/// Calls `f` on every mask of length `m`, in index order.
pub fn for_each_mask(m: usize, mut f: impl FnMut(u64, &MaskVector)) -> Result<()> {
    if m > MAX_ENUM_DIM {
        return Err(Error::DimensionTooLarge {
            dim: m,
            max: MAX_ENUM_DIM,
        });
    }
    for index in 0..(1u64 << m) {
        f(index, &MaskVector::from_index(index, m));
    }
    Ok(())
}

/// Anything that assigns a log-probability to a mask.
pub trait MaskLaw {
    fn dim(&self) -> usize;
    fn log_prob(&self, z: &MaskVector) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskMode {
    Shared,
    PerFeature,
    /// Group index of every bit; groups are numbered `0..k`.
    Grouped(Vec<usize>),
}

impl MaskMode {
    pub fn tag(&self) -> &'static str {
        match self {
            MaskMode::Shared => "shared",
            MaskMode::PerFeature => "per-feature",
            MaskMode::Grouped(_) => "grouped",
        }
    }

    /// Group assignment from consecutive block sizes, e.g. `[100, 900]`.
    pub fn grouped_blocks(sizes: &[usize]) -> Self {
        let groups = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect();
        MaskMode::Grouped(groups)
    }

    /// Number of logits for a mask of length `dim`.
    pub fn num_params(&self, dim: usize) -> usize {
        match self {
            MaskMode::Shared => 1,
            MaskMode::PerFeature => dim,
            MaskMode::Grouped(g) => g.iter().max().map_or(0, |&k| k + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskDistribution {
    mode: MaskMode,
    logits: Vec<f64>,
    dim: usize,
}

impl MaskDistribution {
    pub fn new(mode: MaskMode, logits: Vec<f64>, dim: usize) -> Result<Self> {
        if let MaskMode::Grouped(groups) = &mode {
            check_len("group assignment", dim, groups.len())?;
            let k = mode.num_params(dim);
            let mut seen = vec![false; k];
            for &g in groups {
                seen[g] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::InvalidConfig(
                    "group indices must be contiguous from 0".into(),
                ));
            }
        }
        check_len("mask logits", mode.num_params(dim), logits.len())?;
        if logits.iter().any(|r| r.is_nan()) {
            return Err(Error::InvalidConfig("NaN logit".into()));
        }
        let mut q = MaskDistribution { mode, logits, dim };
        q.clamp();
        Ok(q)
    }

    /// All parameter slots start at the same keep probability.
    pub fn with_keep_prob(mode: MaskMode, dim: usize, keep: f64) -> Result<Self> {
        if !(keep > 0.0 && keep < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "keep probability {keep} outside (0, 1)"
            )));
        }
        let k = mode.num_params(dim);
        Self::new(mode, vec![logit(keep); k], dim)
    }

    /// PerFeature distribution with the given keep probabilities.
    pub fn from_keep_probs(keep: &[f64]) -> Result<Self> {
        if keep.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidConfig("keep probabilities must lie in (0, 1)".into()));
        }
        Self::new(
            MaskMode::PerFeature,
            keep.iter().map(|&p| logit(p)).collect(),
            keep.len(),
        )
    }

    pub fn mode(&self) -> &MaskMode {
        &self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    #[inline]
    pub fn param_index(&self, i: usize) -> usize {
        match &self.mode {
            MaskMode::Shared => 0,
            MaskMode::PerFeature => i,
            MaskMode::Grouped(g) => g[i],
        }
    }

    #[inline]
    fn logit_of(&self, i: usize) -> f64 {
        self.logits[self.param_index(i)]
    }

    #[inline]
    pub fn keep_prob(&self, i: usize) -> f64 {
        sigmoid(self.logit_of(i))
    }

    pub fn keep_probs(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.keep_prob(i)).collect()
    }

    /// `1 - λ_i` for every bit.
    pub fn dropout_rates(&self) -> Vec<f64> {
        (0..self.dim).map(|i| sigmoid(-self.logit_of(i))).collect()
    }

    pub fn mean_keep_prob(&self) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        (0..self.dim).map(|i| self.keep_prob(i)).sum::<f64>() / self.dim as f64
    }

    /// `E_q[z] = λ`.
    pub fn expected_mask(&self) -> Vec<f64> {
        self.keep_probs()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MaskVector {
        let mut z = MaskVector::zeros(self.dim);
        self.sample_into(rng, &mut z);
        z
    }

    /// Draws one uniform per bit, in bit order.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut MaskVector) {
        z.0.resize(self.dim, false);
        match &self.mode {
            MaskMode::Shared => {
                let keep = sigmoid(self.logits[0]);
                for b in z.0.iter_mut() {
                    *b = rng.random::<f64>() < keep;
                }
            }
            _ => {
                for (i, b) in z.0.iter_mut().enumerate() {
                    *b = rng.random::<f64>() < sigmoid(self.logit_of(i));
                }
            }
        }
    }

    /// `Σ_i [z_i log λ_i + (1 - z_i) log(1 - λ_i)]`.
    pub fn log_prob(&self, z: &MaskVector) -> Result<f64> {
        check_len("mask", self.dim, z.len())?;
        Ok(z.0
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let r = self.logit_of(i);
                if b {
                    log_sigmoid(r)
                } else {
                    log_sigmoid(-r)
                }
            })
            .sum())
    }

    /// `∂ log q(z) / ∂ρ`; slot `k` collects `Σ_{g(i)=k} (z_i - λ_i)`.
    pub fn score_gradient(&self, z: &MaskVector) -> Result<Vec<f64>> {
        check_len("mask", self.dim, z.len())?;
        let mut grad = vec![0.0; self.num_params()];
        for (i, &b) in z.0.iter().enumerate() {
            let zi = if b { 1.0 } else { 0.0 };
            grad[self.param_index(i)] += zi - self.keep_prob(i);
        }
        Ok(grad)
    }

    /// `-Σ_i [λ_i log λ_i + (1 - λ_i) log(1 - λ_i)]`.
    pub fn entropy(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                let r = self.logit_of(i);
                let keep = sigmoid(r);
                -(keep * log_sigmoid(r) + (1.0 - keep) * log_sigmoid(-r))
            })
            .sum()
    }

    /// `Σ_i [λ_i log p_i + (1 - λ_i) log(1 - p_i)] = E_q[log p(z)]`.
    pub fn cross_entropy_with_prior(&self, prior: &PriorMask) -> Result<f64> {
        check_len("prior", self.dim, prior.dim())?;
        Ok((0..self.dim)
            .map(|i| {
                let keep = self.keep_prob(i);
                let p = prior.keep_probs[i];
                keep * p.ln() + (1.0 - keep) * (-p).ln_1p()
            })
            .sum())
    }

    /// Gradient over logits of `cross_entropy_with_prior + entropy`, i.e. of
    /// `-KL(q‖p)`. Slot `k` collects `Σ_{g(i)=k} λ_i(1-λ_i)(logit p_i - ρ_{g(i)})`.
    pub fn regularizer_gradient(&self, prior: &PriorMask) -> Result<Vec<f64>> {
        check_len("prior", self.dim, prior.dim())?;
        let mut grad = vec![0.0; self.num_params()];
        for i in 0..self.dim {
            let r = self.logit_of(i);
            let keep = sigmoid(r);
            grad[self.param_index(i)] += keep * (1.0 - keep) * (logit(prior.keep_probs[i]) - r);
        }
        Ok(grad)
    }

    /// Folds a per-bit vector into parameter slots by summation.
    pub fn fold_per_bit(&self, per_bit: &[f64]) -> Result<Vec<f64>> {
        check_len("per-bit vector", self.dim, per_bit.len())?;
        let mut out = vec![0.0; self.num_params()];
        for (i, v) in per_bit.iter().enumerate() {
            out[self.param_index(i)] += v;
        }
        Ok(out)
    }

    /// `ρ += scale · direction`, followed by clamping.
    pub fn step_logits(&mut self, direction: &[f64], scale: f64) -> Result<()> {
        check_len("logit step", self.num_params(), direction.len())?;
        for (r, d) in self.logits.iter_mut().zip(direction) {
            *r += scale * d;
        }
        self.clamp();
        Ok(())
    }

    pub fn set_logits(&mut self, logits: Vec<f64>) -> Result<()> {
        check_len("mask logits", self.num_params(), logits.len())?;
        self.logits = logits;
        self.clamp();
        Ok(())
    }

    fn clamp(&mut self) {
        for r in self.logits.iter_mut() {
            *r = r.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        }
    }

    /// Flat text checkpoint:
    ///
    /// ```text
    /// mask <shared|per-feature|grouped>
    /// dim <m>
    /// groups <g_1> ... <g_m>      (grouped only)
    /// logits <ρ_1> ... <ρ_k>
    /// ```
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mask {}", self.mode.tag());
        let _ = writeln!(out, "dim {}", self.dim);
        if let MaskMode::Grouped(groups) = &self.mode {
            let _ = writeln!(out, "groups {}", join(groups));
        }
        let _ = writeln!(out, "logits {}", join(&self.logits));
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let fields = crate::record::parse_fields(text)?;
        let tag = fields.single("mask")?;
        let dim: usize = fields.scalar("dim")?;
        let mode = match tag.as_str() {
            "shared" => MaskMode::Shared,
            "per-feature" => MaskMode::PerFeature,
            "grouped" => MaskMode::Grouped(fields.vector("groups")?),
            other => {
                return Err(Error::Parse {
                    line: fields.line_of("mask"),
                    msg: format!("unknown mask mode {other:?}"),
                })
            }
        };
        let logits: Vec<f64> = fields.vector("logits")?;
        Self::new(mode, logits, dim)
    }
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl MaskLaw for MaskDistribution {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prob(&self, z: &MaskVector) -> Result<f64> {
        MaskDistribution::log_prob(self, z)
    }
}

/// Fixed prior `p(z) = Π p_i^{z_i} (1 - p_i)^{1 - z_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMask {
    keep_probs: Vec<f64>,
}

impl PriorMask {
    pub fn new(keep_probs: Vec<f64>) -> Result<Self> {
        if keep_probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidConfig("prior keep probabilities must lie in (0, 1)".into()));
        }
        Ok(PriorMask { keep_probs })
    }

    pub fn uniform(dim: usize, keep: f64) -> Result<Self> {
        Self::new(vec![keep; dim])
    }

    pub fn keep_probs(&self) -> &[f64] {
        &self.keep_probs
    }

    pub fn dim(&self) -> usize {
        self.keep_probs.len()
    }
}

impl MaskLaw for PriorMask {
    fn dim(&self) -> usize {
        self.keep_probs.len()
    }

    fn log_prob(&self, z: &MaskVector) -> Result<f64> {
        check_len("mask", self.dim(), z.len())?;
        Ok(z.0
            .iter()
            .zip(&self.keep_probs)
            .map(|(&b, &p)| if b { p.ln() } else { (-p).ln_1p() })
            .sum())
    }
}

/// Arbitrary distribution over all `2^m` masks, stored as a probability table
/// indexed by [`MaskVector::from_index`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedMaskDist {
    dim: usize,
    probs: Vec<f64>,
}

impl TabulatedMaskDist {
    pub fn new(dim: usize, probs: Vec<f64>) -> Result<Self> {
        if dim > MAX_ENUM_DIM {
            return Err(Error::DimensionTooLarge {
                dim,
                max: MAX_ENUM_DIM,
            });
        }
        check_len("probability table", 1usize << dim, probs.len())?;
        Ok(TabulatedMaskDist { dim, probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn index_of(z: &MaskVector) -> u64 {
        z.0.iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))
    }
}

impl MaskLaw for TabulatedMaskDist {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prob(&self, z: &MaskVector) -> Result<f64> {
        check_len("mask", self.dim, z.len())?;
        Ok(self.probs[Self::index_of(z) as usize].ln())
    }
}
