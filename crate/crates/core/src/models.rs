//! Masked probabilistic models.
//!
//! Both models implement [`MaskedModel`], which is what the training loops
//! and the enumeration oracles are written against. Parameters live in one
//! flat vector so SGD steps are model-agnostic.

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::exec::Exec;
use crate::mask::{MaskDistribution, MaskVector, MAX_ENUM_DIM};
use crate::math::{log_sigmoid, sigmoid};

/// Sigmoid-integral constant in `σ(μ / √(1 + π s² / 8))`.
pub const PROBIT_SCALE: f64 = std::f64::consts::PI / 8.0;

pub trait MaskedModel: Clone + Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn mask_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn log_likelihood(&self, x: &[f64], y: &[f64], z: &MaskVector) -> Result<f64>;

    /// Adds `∂ log p(y | x, z, θ) / ∂θ` into `grad` and returns the
    /// log-likelihood at the current parameters.
    fn add_grad(&self, x: &[f64], y: &[f64], z: &MaskVector, grad: &mut [f64]) -> Result<f64>;

    /// Forward pass with a real-valued mask in `[0, 1]^m`. A binary mask gives
    /// the submodel output; `E_q[z]` gives the expected-mask prediction.
    fn predict_soft(&self, x: &[f64], mask: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, x: &[f64], z: &MaskVector) -> Result<Vec<f64>> {
        self.predict_soft(x, &z.to_f64())
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// `θ += scale · direction`.
    fn step(&mut self, direction: &[f64], scale: f64) {
        for (p, d) in self.params_mut().iter_mut().zip(direction) {
            *p += scale * d;
        }
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

/// `p(y = 1 | x, z, θ) = σ(θᵀ Z x)`, optionally with an unmasked bias that is
/// stored as the last parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    params: Vec<f64>,
    dim: usize,
    bias: bool,
}

impl LogisticRegression {
    pub fn zeros(dim: usize) -> Self {
        LogisticRegression {
            params: vec![0.0; dim],
            dim,
            bias: false,
        }
    }

    pub fn with_bias(dim: usize) -> Self {
        LogisticRegression {
            params: vec![0.0; dim + 1],
            dim,
            bias: true,
        }
    }

    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("non-finite weight".into()));
        }
        let dim = theta.len();
        Ok(LogisticRegression {
            params: theta,
            dim,
            bias: false,
        })
    }

    pub fn from_theta_and_bias(theta: Vec<f64>, bias: f64) -> Result<Self> {
        let mut m = Self::from_theta(theta)?;
        m.params.push(bias);
        m.bias = true;
        Ok(m)
    }

    pub fn theta(&self) -> &[f64] {
        &self.params[..self.dim]
    }

    pub fn bias(&self) -> Option<f64> {
        self.bias.then(|| self.params[self.dim])
    }

    fn bias_value(&self) -> f64 {
        self.bias().unwrap_or(0.0)
    }

    fn activation(&self, x: &[f64], mask: impl Iterator<Item = f64>) -> f64 {
        self.theta()
            .iter()
            .zip(x)
            .zip(mask)
            .map(|((t, xi), zi)| t * zi * xi)
            .sum::<f64>()
            + self.bias_value()
    }

    fn check(&self, x: &[f64], mask_len: usize) -> Result<()> {
        check_len("input", self.dim, x.len())?;
        check_len("mask", self.dim, mask_len)
    }

    /// `σ(θᵀ x)` with every feature kept.
    pub fn predict_plain(&self, x: &[f64]) -> Result<f64> {
        check_len("input", self.dim, x.len())?;
        Ok(sigmoid(self.activation(x, std::iter::repeat(1.0))))
    }

    /// `σ(Σ_i λ_i θ_i x_i)`.
    pub fn predict_expected_mask(&self, x: &[f64], keep: &[f64]) -> Result<f64> {
        self.check(x, keep.len())?;
        Ok(sigmoid(self.activation(x, keep.iter().copied())))
    }

    /// Mean and variance of `u = θᵀ Z x` under independent `z_i ~ Ber(λ_i)`.
    pub fn activation_moments(&self, x: &[f64], keep: &[f64]) -> Result<(f64, f64)> {
        self.check(x, keep.len())?;
        let mut mean = self.bias_value();
        let mut var = 0.0;
        for ((t, xi), l) in self.theta().iter().zip(x).zip(keep) {
            let w = t * xi;
            mean += l * w;
            var += l * (1.0 - l) * w * w;
        }
        Ok((mean, var))
    }

    /// Gaussian approximation of `E_q[σ(θᵀ Z x)]`: `σ(μ / √(1 + π s² / 8))`.
    pub fn predict_gaussian(&self, x: &[f64], keep: &[f64]) -> Result<f64> {
        let (mean, var) = self.activation_moments(x, keep)?;
        Ok(gaussian_sigmoid(mean, var))
    }
}

/// `∫ σ(u) N(u | μ, s²) du ≈ σ(μ / √(1 + π s² / 8))`.
pub fn gaussian_sigmoid(mean: f64, var: f64) -> f64 {
    sigmoid(mean / (1.0 + PROBIT_SCALE * var).sqrt())
}

impl MaskedModel for LogisticRegression {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn mask_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn log_likelihood(&self, x: &[f64], y: &[f64], z: &MaskVector) -> Result<f64> {
        self.check(x, z.len())?;
        check_len("target", 1, y.len())?;
        let u = self.activation(x, z.bits().iter().map(|&b| b as u8 as f64));
        Ok(y[0] * log_sigmoid(u) + (1.0 - y[0]) * log_sigmoid(-u))
    }

    fn add_grad(&self, x: &[f64], y: &[f64], z: &MaskVector, grad: &mut [f64]) -> Result<f64> {
        self.check(x, z.len())?;
        check_len("target", 1, y.len())?;
        check_len("gradient", self.params.len(), grad.len())?;
        let u = self.activation(x, z.bits().iter().map(|&b| b as u8 as f64));
        let residual = y[0] - sigmoid(u);
        for ((g, &xi), &b) in grad.iter_mut().zip(x).zip(z.bits()) {
            if b {
                *g += residual * xi;
            }
        }
        if self.bias {
            grad[self.dim] += residual;
        }
        Ok(y[0] * log_sigmoid(u) + (1.0 - y[0]) * log_sigmoid(-u))
    }

    fn predict_soft(&self, x: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.predict_expected_mask(x, mask)?])
    }
}

/// `h = σ(W1 Z1 x + b1)`, `ŷ = σ(W2 Z2 h + b2)`. Weight matrices are
/// row-major; parameters are laid out as `[W1, b1, W2, b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLayerNet {
    params: Vec<f64>,
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
}

/// Gradient blocks of a [`ThreeLayerNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ThreeLayerNet {
    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        let len = n_hidden * n_in + n_hidden + n_out * n_hidden + n_out;
        ThreeLayerNet {
            params: vec![0.0; len],
            n_in,
            n_hidden,
            n_out,
        }
    }

    /// Every parameter uniform in `[-0.1, 0.1]`.
    pub fn random<R: Rng + ?Sized>(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(n_in, n_hidden, n_out);
        for p in net.params.iter_mut() {
            *p = rng.random_range(-0.1..=0.1);
        }
        net
    }

    pub fn from_parts(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        w1: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
    ) -> Result<Self> {
        check_len("W1", n_hidden * n_in, w1.len())?;
        check_len("b1", n_hidden, b1.len())?;
        check_len("W2", n_out * n_hidden, w2.len())?;
        check_len("b2", n_out, b2.len())?;
        let params: Vec<f64> = [w1, b1, w2, b2].concat();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite weight".into()));
        }
        Ok(ThreeLayerNet {
            params,
            n_in,
            n_hidden,
            n_out,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_in, self.n_hidden, self.n_out)
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.n_hidden * self.n_in;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_out * self.n_hidden;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[0]..o[1]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[1]..o[2]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[2]..o[3]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[3]..]
    }

    /// Copy with both weight matrices scaled, biases untouched.
    pub fn scaled_weights(&self, factor: f64) -> Self {
        let mut out = self.clone();
        let o = self.offsets();
        out.params[o[0]..o[1]].iter_mut().for_each(|w| *w *= factor);
        out.params[o[2]..o[3]].iter_mut().for_each(|w| *w *= factor);
        out
    }

    fn check_io(&self, x: &[f64], mask_len: usize) -> Result<()> {
        check_len("input", self.n_in, x.len())?;
        check_len("mask", self.n_in + self.n_hidden, mask_len)
    }

    /// Returns `(h, ŷ)` for real-valued masks on the input and hidden layers.
    fn forward_soft(&self, x: &[f64], m1: &[f64], m2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let masked_x: Vec<f64> = x.iter().zip(m1).map(|(a, b)| a * b).collect();
        let hidden: Vec<f64> = (0..self.n_hidden)
            .map(|j| {
                let row = &w1[j * self.n_in..(j + 1) * self.n_in];
                sigmoid(row.iter().zip(&masked_x).map(|(w, v)| w * v).sum::<f64>() + b1[j])
            })
            .collect();
        let masked_h: Vec<f64> = hidden.iter().zip(m2).map(|(a, b)| a * b).collect();
        let out = (0..self.n_out)
            .map(|k| {
                let row = &w2[k * self.n_hidden..(k + 1) * self.n_hidden];
                sigmoid(row.iter().zip(&masked_h).map(|(w, v)| w * v).sum::<f64>() + b2[k])
            })
            .collect();
        (hidden, out)
    }

    /// Masked forward pass with separate input and hidden masks.
    pub fn forward(&self, x: &[f64], z1: &MaskVector, z2: &MaskVector) -> Result<Vec<f64>> {
        check_len("input", self.n_in, x.len())?;
        check_len("input mask", self.n_in, z1.len())?;
        check_len("hidden mask", self.n_hidden, z2.len())?;
        Ok(self.forward_soft(x, &z1.to_f64(), &z2.to_f64()).1)
    }

    /// Unmasked forward pass.
    pub fn forward_plain(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.n_in, x.len())?;
        Ok(self
            .forward_soft(x, &vec![1.0; self.n_in], &vec![1.0; self.n_hidden])
            .1)
    }

    /// `-‖y - ŷ(x; z1, z2)‖²`.
    pub fn log_likelihood_split(
        &self,
        x: &[f64],
        y: &[f64],
        z1: &MaskVector,
        z2: &MaskVector,
    ) -> Result<f64> {
        check_len("target", self.n_out, y.len())?;
        let out = self.forward(x, z1, z2)?;
        Ok(-y.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    /// Backpropagated gradient of [`Self::log_likelihood_split`].
    pub fn grads(&self, x: &[f64], y: &[f64], z1: &MaskVector, z2: &MaskVector) -> Result<NetGrads> {
        check_len("input mask", self.n_in, z1.len())?;
        check_len("hidden mask", self.n_hidden, z2.len())?;
        let z: Vec<bool> = z1.bits().iter().chain(z2.bits()).copied().collect();
        let mut flat = vec![0.0; self.params.len()];
        self.add_grad(x, y, &MaskVector::new(z), &mut flat)?;
        let o = self.offsets();
        Ok(NetGrads {
            w1: flat[o[0]..o[1]].to_vec(),
            b1: flat[o[1]..o[2]].to_vec(),
            w2: flat[o[2]..o[3]].to_vec(),
            b2: flat[o[3]..].to_vec(),
        })
    }
}

impl MaskedModel for ThreeLayerNet {
    fn input_dim(&self) -> usize {
        self.n_in
    }

    fn output_dim(&self) -> usize {
        self.n_out
    }

    /// Input bits first, then hidden bits.
    fn mask_dim(&self) -> usize {
        self.n_in + self.n_hidden
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn log_likelihood(&self, x: &[f64], y: &[f64], z: &MaskVector) -> Result<f64> {
        self.check_io(x, z.len())?;
        check_len("target", self.n_out, y.len())?;
        let m = z.to_f64();
        let (_, out) = self.forward_soft(x, &m[..self.n_in], &m[self.n_in..]);
        Ok(-y.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    fn add_grad(&self, x: &[f64], y: &[f64], z: &MaskVector, grad: &mut [f64]) -> Result<f64> {
        self.check_io(x, z.len())?;
        check_len("target", self.n_out, y.len())?;
        check_len("gradient", self.params.len(), grad.len())?;
        let m = z.to_f64();
        let (m1, m2) = m.split_at(self.n_in);
        let (hidden, out) = self.forward_soft(x, m1, m2);
        let o = self.offsets();
        let w2 = self.w2();

        // output pre-activation deltas of -Σ (y - ŷ)²
        let delta_out: Vec<f64> = y
            .iter()
            .zip(&out)
            .map(|(t, p)| 2.0 * (t - p) * p * (1.0 - p))
            .collect();
        let mut back_h = vec![0.0; self.n_hidden];
        for (k, d) in delta_out.iter().enumerate() {
            let row = k * self.n_hidden;
            for j in 0..self.n_hidden {
                grad[o[2] + row + j] += d * m2[j] * hidden[j];
                back_h[j] += w2[row + j] * d;
            }
            grad[o[3] + k] += d;
        }
        for j in 0..self.n_hidden {
            let delta = back_h[j] * m2[j] * hidden[j] * (1.0 - hidden[j]);
            let row = j * self.n_in;
            for i in 0..self.n_in {
                grad[o[0] + row + i] += delta * m1[i] * x[i];
            }
            grad[o[1] + j] += delta;
        }
        Ok(-y.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    fn predict_soft(&self, x: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
        self.check_io(x, mask.len())?;
        let (m1, m2) = mask.split_at(self.n_in);
        Ok(self.forward_soft(x, m1, m2).1)
    }
}

/// Test-time rule for turning a mask distribution into a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predictor {
    /// Exact sum over all `2^m` masks; `m ≤ 20`.
    Enumerate,
    MonteCarlo { samples: usize, seed: u64 },
    /// Plug `E_q[z]` into the model.
    ExpectedMask,
    /// Fast-dropout Gaussian approximation; logistic regression only.
    Gaussian,
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Enumerate => "enumerate",
            Predictor::MonteCarlo { .. } => "monte-carlo",
            Predictor::ExpectedMask => "expected-mask",
            Predictor::Gaussian => "gaussian",
        }
    }
}

/// `Σ_z q(z) · prediction(x, z)` over every mask.
pub fn predict_enumerate<M: MaskedModel>(
    model: &M,
    x: &[f64],
    q: &MaskDistribution,
) -> Result<Vec<f64>> {
    predict_enumerate_with(Exec::Sequential, model, x, q)
}

pub fn predict_enumerate_with<M: MaskedModel>(
    exec: Exec,
    model: &M,
    x: &[f64],
    q: &MaskDistribution,
) -> Result<Vec<f64>> {
    let m = model.mask_dim();
    check_len("mask distribution", m, q.keep_probs().len())?;
    if m > MAX_ENUM_DIM {
        return Err(Error::DimensionTooLarge {
            dim: m,
            max: MAX_ENUM_DIM,
        });
    }
    check_len("input", model.input_dim(), x.len())?;
    let width = model.output_dim();
    Ok(exec.sum_vec_range(1usize << m, width, |index, acc| {
        let z = MaskVector::from_index(index as u64, m);
        let w = q.log_prob(&z).expect("mask length checked").exp();
        if w == 0.0 {
            return;
        }
        let pred = model.predict(x, &z).expect("dimensions checked");
        for (a, p) in acc.iter_mut().zip(pred) {
            *a += w * p;
        }
    }))
}

/// Monte Carlo estimate of the expected prediction with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Mean prediction over `samples` masks drawn from `q`.
pub fn predict_mc<M: MaskedModel, R: Rng + ?Sized>(
    model: &M,
    x: &[f64],
    q: &MaskDistribution,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(predict_mc_estimate(model, x, q, samples, rng)?.mean)
}

pub fn predict_mc_estimate<M: MaskedModel, R: Rng + ?Sized>(
    model: &M,
    x: &[f64],
    q: &MaskDistribution,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::InvalidConfig("Monte Carlo needs at least one sample".into()));
    }
    check_len("mask distribution", model.mask_dim(), q.keep_probs().len())?;
    let width = model.output_dim();
    let mut sum = vec![0.0; width];
    let mut sum_sq = vec![0.0; width];
    let mut z = MaskVector::zeros(0);
    for _ in 0..samples {
        q.sample_into(rng, &mut z);
        for ((s, s2), p) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(model.predict(x, &z)?) {
            *s += p;
            *s2 += p * p;
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error = if samples > 1 {
        sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, mu)| ((s2 / n - mu * mu).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect()
    } else {
        vec![f64::INFINITY; width]
    };
    Ok(McEstimate { mean, std_error })
}

/// Prediction with `E_q[z]` substituted for the mask.
pub fn predict_expected_mask<M: MaskedModel>(
    model: &M,
    x: &[f64],
    q: &MaskDistribution,
) -> Result<Vec<f64>> {
    model.predict_soft(x, &q.expected_mask())
}

/// Checkpoint text for a model; see [`model_from_record`].
pub trait ModelRecord {
    fn to_record(&self) -> String;
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl ModelRecord for LogisticRegression {
    fn to_record(&self) -> String {
        let bias = self.bias().map_or("none".to_string(), |b| b.to_string());
        format!(
            "model logreg\ndim {}\nbias {}\ntheta {}\n",
            self.dim,
            bias,
            join(self.theta())
        )
    }
}

impl ModelRecord for ThreeLayerNet {
    fn to_record(&self) -> String {
        format!(
            "model three-layer-net\ndims {} {} {}\nw1 {}\nb1 {}\nw2 {}\nb2 {}\n",
            self.n_in,
            self.n_hidden,
            self.n_out,
            join(self.w1()),
            join(self.b1()),
            join(self.w2()),
            join(self.b2())
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Logistic(LogisticRegression),
    Net(ThreeLayerNet),
}

/// Parses a checkpoint written by [`ModelRecord::to_record`].
pub fn model_from_record(text: &str) -> Result<AnyModel> {
    let f = crate::record::parse_fields(text)?;
    match f.single("model")?.as_str() {
        "logreg" => {
            let dim: usize = f.scalar("dim")?;
            let theta: Vec<f64> = f.vector("theta")?;
            if theta.len() != dim {
                return Err(Error::Parse {
                    line: f.line_of("theta"),
                    msg: format!("expected {dim} weights, found {}", theta.len()),
                });
            }
            let bias = f.single("bias")?;
            let model = if bias == "none" {
                LogisticRegression::from_theta(theta)?
            } else {
                let b = bias.parse().map_err(|_| Error::Parse {
                    line: f.line_of("bias"),
                    msg: format!("bad bias {bias:?}"),
                })?;
                LogisticRegression::from_theta_and_bias(theta, b)?
            };
            Ok(AnyModel::Logistic(model))
        }
        "three-layer-net" => {
            let dims: Vec<usize> = f.vector("dims")?;
            let [n_in, n_hidden, n_out] = dims[..] else {
                return Err(Error::Parse {
                    line: f.line_of("dims"),
                    msg: "dims expects three values".into(),
                });
            };
            let net = ThreeLayerNet::from_parts(
                n_in,
                n_hidden,
                n_out,
                &f.vector::<f64>("w1")?,
                &f.vector::<f64>("b1")?,
                &f.vector::<f64>("w2")?,
                &f.vector::<f64>("b2")?,
            )?;
            Ok(AnyModel::Net(net))
        }
        other => Err(Error::Parse {
            line: f.line_of("model"),
            msg: format!("unknown model {other:?}"),
        }),
    }
}
