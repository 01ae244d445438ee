//! The regression model: one-hidden-layer logistic networks, the Gaussian
//! likelihood, teacher networks and synthetic data.
//!
//! Parameters use one canonical flat order everywhere in the crate:
//!
//! ```text
//! [β₀, β₁ … β_k, γ₁₀ … γ₁ₚ, …, γ_k0 … γ_kp]
//! ```
//!
//! where γ_j0 is the hidden bias of unit j.

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
pub use crate::special::logistic;

/// Input dimension `p` and hidden width `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub p: usize,
    pub k: usize,
}

impl ModelDims {
    pub fn new(p: usize, k: usize) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("need p >= 1 and k >= 1, got p = {p}, k = {k}")));
        }
        Ok(Self { p, k })
    }

    /// Total parameter count K = 1 + k + k(p + 1): the output bias, k output
    /// weights and k rows of p + 1 hidden weights.
    pub fn param_count(&self) -> usize {
        1 + self.k * (self.p + 2)
    }

    /// Flat index of γ_jh (j is 0-based, h = 0 is the bias).
    pub fn gamma_index(&self, j: usize, h: usize) -> usize {
        1 + self.k + j * (self.p + 1) + h
    }
}

/// Network parameters θ in canonical flat order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    dims: ModelDims,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            theta: vec![0.0; dims.param_count()],
        }
    }

    pub fn from_flat(dims: ModelDims, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != dims.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters for p = {}, k = {}, got {}",
                dims.param_count(),
                dims.p,
                dims.k,
                theta.len()
            )));
        }
        Ok(Self { dims, theta })
    }

    /// Builds from the structured pieces; `gamma` is row-major k × (p+1).
    pub fn from_parts(p: usize, beta0: f64, beta: &[f64], gamma: &[Vec<f64>]) -> Result<Self> {
        let dims = ModelDims::new(p, beta.len())?;
        if gamma.len() != dims.k || gamma.iter().any(|row| row.len() != p + 1) {
            return Err(Error::Dimension(format!("gamma must be {} x {}", dims.k, p + 1)));
        }
        let mut theta = Vec::with_capacity(dims.param_count());
        theta.push(beta0);
        theta.extend_from_slice(beta);
        for row in gamma {
            theta.extend_from_slice(row);
        }
        Ok(Self { dims, theta })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.theta
    }

    pub fn beta0(&self) -> f64 {
        self.theta[0]
    }

    pub fn beta(&self) -> &[f64] {
        &self.theta[1..=self.dims.k]
    }

    /// Row j of γ: (γ_j0, γ_j1, …, γ_jp).
    pub fn gamma_row(&self, j: usize) -> &[f64] {
        let start = self.dims.gamma_index(j, 0);
        &self.theta[start..start + self.dims.p + 1]
    }

    pub fn sum_squares(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum()
    }

    pub fn sum_abs(&self) -> f64 {
        self.theta.iter().map(|t| t.abs()).sum()
    }

    /// Same function embedded in a wider network: extra hidden units get zero
    /// output weight (and zero input weights).
    pub fn padded(&self, k: usize) -> Result<Self> {
        if k < self.dims.k {
            return Err(Error::Dimension(format!(
                "cannot embed a {}-unit network into {} units",
                self.dims.k, k
            )));
        }
        let dims = ModelDims::new(self.dims.p, k)?;
        let mut out = Self::zeros(dims);
        out.theta[0] = self.beta0();
        out.theta[1..=self.dims.k].copy_from_slice(self.beta());
        for j in 0..self.dims.k {
            let s = dims.gamma_index(j, 0);
            out.theta[s..s + dims.p + 1].copy_from_slice(self.gamma_row(j));
        }
        Ok(out)
    }

    /// Multiplies every coordinate by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dims: self.dims,
            theta: self.theta.iter().map(|t| t * c).collect(),
        }
    }

    /// f_θ(x); errors when `x` has the wrong length.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims.p {
            return Err(Error::Dimension(format!("x has length {}, expected {}", x.len(), self.dims.p)));
        }
        Ok(eval_flat(self.dims, &self.theta, x))
    }
}

/// f_θ(x) = β₀ + Σⱼ βⱼ ψ(γ_j0 + Σₕ γ_jh xₕ) on a flat parameter slice.
///
/// No dimension checks; callers guarantee `theta.len() == dims.param_count()`
/// and `x.len() == dims.p`.
#[inline]
pub fn eval_flat(dims: ModelDims, theta: &[f64], x: &[f64]) -> f64 {
    let (k, p) = (dims.k, dims.p);
    let mut f = theta[0];
    let gamma = &theta[1 + k..];
    for j in 0..k {
        let row = &gamma[j * (p + 1)..(j + 1) * (p + 1)];
        let mut u = row[0];
        for h in 0..p {
            u += row[h + 1] * x[h];
        }
        f += theta[1 + j] * logistic(u);
    }
    f
}

/// Checked form of [`eval_flat`].
pub fn network_eval(params: &NetworkParams, x: &[f64]) -> Result<f64> {
    params.eval(x)
}

/// Closed-form regression functions usable as f₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticFn {
    /// f₀ ≡ 0.
    Zero,
    /// sin(2π x₁).
    Sine,
    /// Σₕ xₕ² − p/3 (zero mean under the uniform design).
    CenteredQuadratic,
}

impl AnalyticFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticFn::Zero => 0.0,
            AnalyticFn::Sine => (2.0 * PI * x[0]).sin(),
            AnalyticFn::CenteredQuadratic => x.iter().map(|v| v * v).sum::<f64>() - x.len() as f64 / 3.0,
        }
    }
}

/// The true regression function f₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Teacher { params: NetworkParams },
    Analytic { function: AnalyticFn, p: usize },
}

impl Truth {
    pub fn p(&self) -> usize {
        match self {
            Truth::Teacher { params } => params.dims().p,
            Truth::Analytic { p, .. } => *p,
        }
    }

    /// f₀(x); `x` must have length p.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Truth::Teacher { params } => eval_flat(params.dims(), params.as_flat(), x),
            Truth::Analytic { function, .. } => function.eval(x),
        }
    }

    pub fn teacher(&self) -> Option<&NetworkParams> {
        match self {
            Truth::Teacher { params } => Some(params),
            Truth::Analytic { .. } => None,
        }
    }
}

/// n observations (xᵢ, yᵢ) with xᵢ ∈ \[0,1\]ᵖ, plus the truth that generated them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    p: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    sigma0: f64,
    truth: Truth,
}

impl RegressionDataset {
    /// `xs` is row-major n × p.
    pub fn new(p: usize, xs: Vec<f64>, ys: Vec<f64>, sigma0: f64, truth: Truth) -> Result<Self> {
        if p == 0 || xs.len() != ys.len() * p {
            return Err(Error::Dimension(format!(
                "{} x-coordinates do not form {} points of dimension {p}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("feature outside [0, 1]".into()));
        }
        if !(sigma0 >= 0.0) || !sigma0.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma0 must be finite and >= 0, got {sigma0}")));
        }
        if truth.p() != p {
            return Err(Error::Dimension(format!("truth has p = {}, data has p = {p}", truth.p())));
        }
        Ok(Self {
            p,
            xs,
            ys,
            sigma0,
            truth,
        })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.p..(i + 1) * self.p]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn truth(&self) -> &Truth {
        &self.truth
    }

    /// Observations of `self` followed by those of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.p != other.p {
            return Err(Error::Dimension("datasets differ in p".into()));
        }
        let mut xs = self.xs.clone();
        xs.extend_from_slice(&other.xs);
        let mut ys = self.ys.clone();
        ys.extend_from_slice(&other.ys);
        Self::new(self.p, xs, ys, self.sigma0, self.truth.clone())
    }
}

/// Σᵢ log N(yᵢ; f_θ(xᵢ), σ²).
pub fn log_likelihood(params: &NetworkParams, sigma: f64, data: &RegressionDataset) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if params.dims().p != data.p() {
        return Err(Error::Dimension(format!(
            "network has p = {}, data has p = {}",
            params.dims().p,
            data.p()
        )));
    }
    let norm = -0.5 * (2.0 * PI * sigma * sigma).ln();
    let inv = 0.5 / (sigma * sigma);
    let dims = params.dims();
    Ok((0..data.n())
        .map(|i| {
            let r = data.ys[i] - eval_flat(dims, params.as_flat(), data.x(i));
            norm - r * r * inv
        })
        .sum())
}

/// Draws n points xᵢ ~ U(0,1)ᵖ (open interval) and yᵢ = f₀(xᵢ) + σ₀zᵢ.
pub fn simulate_dataset(truth: &Truth, sigma0: f64, n: usize, seed: u64) -> Result<RegressionDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(sigma0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma0 must be >= 0, got {sigma0}")));
    }
    let p = truth.p();
    let mut rng = stream_rng(seed, Stream::Data, &[n as u64, p as u64]);
    let mut xs = Vec::with_capacity(n * p);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let start = xs.len();
        for _ in 0..p {
            xs.push(rng.sample::<f64, _>(Open01));
        }
        let z: f64 = rng.sample(StandardNormal);
        ys.push(truth.eval(&xs[start..]) + sigma0 * z);
    }
    RegressionDataset::new(p, xs, ys, sigma0, truth.clone())
}

/// Teacher network with every coordinate drawn from U(−scale, scale).
pub fn make_teacher(k_star: usize, p: usize, scale: f64, seed: u64) -> Result<NetworkParams> {
    let dims = ModelDims::new(p, k_star)?;
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite and >= 0, got {scale}")));
    }
    let mut rng = stream_rng(seed, Stream::Teacher, &[k_star as u64, p as u64]);
    let theta = (0..dims.param_count())
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    NetworkParams::from_flat(dims, theta)
}
