//! Mean-field variational families and their closed-form KL divergences.
//!
//! A [`MeanFieldPosterior`] holds one Gaussian factor per network coordinate
//! (canonical order) and a factor for the noise scale that matches the prior:
//! nothing when σ is known, an inverse-gamma factor on σ², or a Gaussian
//! factor on ρ with σ = log(1 + e^ρ). Standard deviations and inverse-gamma
//! parameters are stored as logarithms so every parameter vector is valid.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_flat, ModelDims, NetworkParams, RegressionDataset};
use crate::priors::{PriorSpec, ScaleParam};
use crate::quadrature::NormalExpectation;
use crate::rng::{stream_rng, Stream};
use crate::special::{digamma, ln_gamma, softplus, softplus_inv};

/// N(m, s²) with s = exp(log_s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub m: f64,
    pub log_s: f64,
}

impl GaussianFactor {
    pub fn new(m: f64, s: f64) -> Self {
        Self { m, log_s: s.ln() }
    }

    pub fn s(&self) -> f64 {
        self.log_s.exp()
    }
}

/// IG(ã, b̃) on σ² (shape ã, rate b̃), stored as logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGammaFactor {
    pub log_a: f64,
    pub log_b: f64,
}

impl InverseGammaFactor {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self {
            log_a: shape.ln(),
            log_b: rate.ln(),
        }
    }

    pub fn shape(&self) -> f64 {
        self.log_a.exp()
    }

    pub fn rate(&self) -> f64 {
        self.log_b.exp()
    }

    /// E(1/σ²) = ã/b̃.
    pub fn mean_precision(&self) -> f64 {
        (self.log_a - self.log_b).exp()
    }

    /// E(log σ²) = log b̃ − ψ(ã).
    pub fn mean_log_variance(&self) -> f64 {
        self.log_b - digamma(self.shape())
    }
}

/// Variational factor for the noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleFactor {
    /// σ is known and fixed.
    Known { sigma: f64 },
    InverseGamma(InverseGammaFactor),
    Rho(GaussianFactor),
}

impl ScaleFactor {
    /// Number of free variational parameters.
    pub fn param_count(&self) -> usize {
        match self {
            ScaleFactor::Known { .. } => 0,
            _ => 2,
        }
    }
}

/// Fully factorized variational posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPosterior {
    dims: ModelDims,
    weights: Vec<GaussianFactor>,
    scale: ScaleFactor,
}

impl MeanFieldPosterior {
    pub fn new(dims: ModelDims, weights: Vec<GaussianFactor>, scale: ScaleFactor) -> Result<Self> {
        if weights.len() != dims.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} weight factors, got {}",
                dims.param_count(),
                weights.len()
            )));
        }
        if let ScaleFactor::Known { sigma } = scale {
            if !(sigma > 0.0) {
                return Err(Error::InvalidArgument(format!("known sigma must be positive, got {sigma}")));
            }
        }
        Ok(Self { dims, weights, scale })
    }

    /// Factors N(θ₀ᵢ, τ²/n) around a reference network.
    pub fn centered_at(theta0: &NetworkParams, tau: f64, n: usize, scale: ScaleFactor) -> Result<Self> {
        let s = tau / (n as f64).sqrt();
        let weights = theta0.as_flat().iter().map(|&m| GaussianFactor::new(m, s)).collect();
        Self::new(theta0.dims(), weights, scale)
    }

    /// Starting point for optimization.
    ///
    /// Weight means are N(0, `init_sd`²), log standard deviations
    /// log(`init_s`). The inverse-gamma factor starts at ã = n/2 + α and
    /// b̃ = λ + ½Σrᵢ² with residuals of the mean network; the ρ factor starts
    /// at softplus⁻¹ of the residual RMS.
    pub fn initial(prior: &PriorSpec, data: &RegressionDataset, dims: ModelDims, init_sd: f64, init_s: f64, seed: u64) -> Result<Self> {
        prior.validate()?;
        if dims.p != data.p() {
            return Err(Error::Dimension(format!("dims.p = {} but data has p = {}", dims.p, data.p())));
        }
        let mut rng = stream_rng(seed, Stream::Init, &[dims.param_count() as u64]);
        let weights: Vec<GaussianFactor> = (0..dims.param_count())
            .map(|_| GaussianFactor::new(init_sd * rng.sample::<f64, _>(StandardNormal), init_s))
            .collect();
        let means: Vec<f64> = weights.iter().map(|w| w.m).collect();
        let rss: f64 = (0..data.n())
            .map(|i| (data.ys()[i] - eval_flat(dims, &means, data.x(i))).powi(2))
            .sum();
        let n = data.n() as f64;
        let scale = match *prior {
            PriorSpec::FixedGaussian { .. } | PriorSpec::ScaledGaussian { .. } => {
                if !(data.sigma0() > 0.0) {
                    return Err(Error::InvalidArgument("known-sigma prior needs data.sigma0 > 0".into()));
                }
                ScaleFactor::Known { sigma: data.sigma0() }
            }
            PriorSpec::InverseGammaSigma { alpha, lambda, .. } => {
                ScaleFactor::InverseGamma(InverseGammaFactor::new(0.5 * n + alpha, lambda + 0.5 * rss))
            }
            PriorSpec::RhoGaussian { .. } => {
                let rms = (rss / n).sqrt().max(1e-3);
                ScaleFactor::Rho(GaussianFactor::new(softplus_inv(rms), init_s))
            }
        };
        Self::new(dims, weights, scale)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn weights(&self) -> &[GaussianFactor] {
        &self.weights
    }

    pub fn scale(&self) -> &ScaleFactor {
        &self.scale
    }

    pub fn mean_network(&self) -> NetworkParams {
        NetworkParams::from_flat(self.dims, self.weights.iter().map(|w| w.m).collect()).expect("dims are consistent")
    }

    /// Whether this family pairs with `prior`.
    pub fn check_prior(&self, prior: &PriorSpec) -> Result<()> {
        let ok = matches!(
            (prior, &self.scale),
            (PriorSpec::FixedGaussian { .. } | PriorSpec::ScaledGaussian { .. }, ScaleFactor::Known { .. })
                | (PriorSpec::InverseGammaSigma { .. }, ScaleFactor::InverseGamma(_))
                | (PriorSpec::RhoGaussian { .. }, ScaleFactor::Rho(_))
        );
        if ok {
            Ok(())
        } else {
            Err(Error::VariantMismatch(format!(
                "prior {} cannot pair with scale factor {:?}",
                prior.name(),
                self.scale
            )))
        }
    }

    /// Number of free variational parameters: 2K plus the scale factor's.
    pub fn param_count(&self) -> usize {
        2 * self.weights.len() + self.scale.param_count()
    }

    /// Free parameters as one vector: `[m₁…m_K, log s₁…log s_K, scale…]`,
    /// where the scale part is `(log ã, log b̃)` or `(m_ρ, log s_ρ)`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.weights.iter().map(|w| w.m).collect();
        v.extend(self.weights.iter().map(|w| w.log_s));
        match self.scale {
            ScaleFactor::Known { .. } => {}
            ScaleFactor::InverseGamma(f) => v.extend([f.log_a, f.log_b]),
            ScaleFactor::Rho(f) => v.extend([f.m, f.log_s]),
        }
        v
    }

    /// Inverse of [`to_vector`](Self::to_vector).
    pub fn set_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} variational parameters, got {}",
                self.param_count(),
                v.len()
            )));
        }
        let k = self.weights.len();
        for (i, w) in self.weights.iter_mut().enumerate() {
            w.m = v[i];
            w.log_s = v[k + i];
        }
        match &mut self.scale {
            ScaleFactor::Known { .. } => {}
            ScaleFactor::InverseGamma(f) => {
                f.log_a = v[2 * k];
                f.log_b = v[2 * k + 1];
            }
            ScaleFactor::Rho(f) => {
                f.m = v[2 * k];
                f.log_s = v[2 * k + 1];
            }
        }
        Ok(())
    }

    pub fn with_vector(&self, v: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_vector(v)?;
        Ok(out)
    }

    /// Human-readable name of free parameter `i` of [`to_vector`](Self::to_vector).
    pub fn param_name(&self, i: usize) -> String {
        let k = self.weights.len();
        match i {
            i if i < k => format!("m[{i}]"),
            i if i < 2 * k => format!("log_s[{}]", i - k),
            i => match (self.scale, i - 2 * k) {
                (ScaleFactor::InverseGamma(_), 0) => "log_a".into(),
                (ScaleFactor::InverseGamma(_), _) => "log_b".into(),
                (ScaleFactor::Rho(_), 0) => "rho.m".into(),
                _ => "rho.log_s".into(),
            },
        }
    }

    /// Versioned JSON document for checkpoints.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PosteriorDocument {
            version: POSTERIOR_FORMAT_VERSION,
            posterior: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PosteriorDocument = serde_json::from_str(s)?;
        if doc.version != POSTERIOR_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported posterior format version {} (expected {POSTERIOR_FORMAT_VERSION})",
                doc.version
            )));
        }
        let q = doc.posterior;
        Self::new(q.dims, q.weights, q.scale)
    }
}

pub const POSTERIOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorDocument {
    version: u32,
    posterior: MeanFieldPosterior,
}

/// One joint draw from q.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub theta: NetworkParams,
    /// Noise standard deviation implied by the draw.
    pub sigma: f64,
    pub scale: Option<ScaleParam>,
}

/// Draws plus the base noise that produced them.
#[derive(Debug, Clone)]
pub struct DrawSet {
    pub draws: Vec<PosteriorDraw>,
    /// Per draw: the K standard-normal weight noises, followed by the scale
    /// factor's base draw (standard normal for ρ, Gamma(ã, 1) for σ²).
    pub base_noise: Vec<Vec<f64>>,
}

/// S draws θ = m + s·ε (and likewise ρ); σ² under an inverse-gamma factor is
/// drawn as b̃/G with G ~ Gamma(ã, 1).
pub fn sample_reparameterized(q: &MeanFieldPosterior, seed: u64, count: usize) -> Result<DrawSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let mut rng = stream_rng(seed, Stream::Draws, &[q.param_count() as u64]);
    let mut draws = Vec::with_capacity(count);
    let mut base_noise = Vec::with_capacity(count);
    let gamma = match q.scale {
        ScaleFactor::InverseGamma(f) => {
            Some(Gamma::new(f.shape(), 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        }
        _ => None,
    };
    for _ in 0..count {
        let eps: Vec<f64> = (0..q.weights.len()).map(|_| rng.sample(StandardNormal)).collect();
        let theta = q.weights.iter().zip(&eps).map(|(w, e)| w.m + w.s() * e).collect();
        let mut noise = eps;
        let (sigma, scale) = match q.scale {
            ScaleFactor::Known { sigma } => (sigma, None),
            ScaleFactor::InverseGamma(f) => {
                let g = gamma.as_ref().expect("built above").sample(&mut rng);
                noise.push(g);
                let s2 = f.rate() / g;
                (s2.sqrt(), Some(ScaleParam::Variance(s2)))
            }
            ScaleFactor::Rho(f) => {
                let e: f64 = rng.sample(StandardNormal);
                noise.push(e);
                let rho = f.m + f.s() * e;
                (softplus(rho), Some(ScaleParam::Rho(rho)))
            }
        };
        draws.push(PosteriorDraw {
            theta: NetworkParams::from_flat(q.dims, theta)?,
            sigma,
            scale,
        });
        base_noise.push(noise);
    }
    Ok(DrawSet { draws, base_noise })
}

/// KL(N(m, s²) ‖ N(0, v)).
#[inline]
pub fn kl_gaussian_factor(f: &GaussianFactor, prior_var: f64) -> f64 {
    let s2 = (2.0 * f.log_s).exp();
    0.5 * prior_var.ln() - f.log_s + (s2 + f.m * f.m) / (2.0 * prior_var) - 0.5
}

/// Σᵢ KL(qᵢ ‖ N(0, ζₙ²)) for the weight factors.
pub fn kl_weights_gaussian(factors: &[GaussianFactor], prior: &PriorSpec, n: usize) -> Result<f64> {
    prior.validate()?;
    let var = prior.weight_variance(n);
    Ok(factors.iter().map(|f| kl_gaussian_factor(f, var)).sum())
}

/// KL(IG(ã, b̃) ‖ IG(α, λ)).
pub fn kl_scale_inverse_gamma(q: &InverseGammaFactor, alpha: f64, lambda: f64) -> f64 {
    let (a, b) = (q.shape(), q.rate());
    (a - alpha) * digamma(a) - ln_gamma(a) + ln_gamma(alpha) + alpha * (q.log_b - lambda.ln()) + (lambda - b) * a / b
}

/// KL(N(m, s²) ‖ N(0, η²)) for the ρ factor.
pub fn kl_scale_rho(q: &GaussianFactor, eta: f64) -> f64 {
    kl_gaussian_factor(q, eta * eta)
}

/// KL(q ‖ p) split into the weight part and the scale part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlBreakdown {
    pub weights: f64,
    pub scale: f64,
}

impl KlBreakdown {
    pub fn total(&self) -> f64 {
        self.weights + self.scale
    }
}

/// Closed-form KL(q ‖ prior) at sample size n.
pub fn kl_to_prior(q: &MeanFieldPosterior, prior: &PriorSpec, n: usize) -> Result<KlBreakdown> {
    q.check_prior(prior)?;
    let weights = kl_weights_gaussian(&q.weights, prior, n)?;
    let scale = match (q.scale, prior) {
        (ScaleFactor::InverseGamma(f), PriorSpec::InverseGammaSigma { alpha, lambda, .. }) => {
            kl_scale_inverse_gamma(&f, *alpha, *lambda)
        }
        (ScaleFactor::Rho(f), PriorSpec::RhoGaussian { eta, .. }) => kl_scale_rho(&f, *eta),
        _ => 0.0,
    };
    Ok(KlBreakdown { weights, scale })
}

/// KL between the weight parts of two mean-field posteriors, KL(q ‖ r).
pub fn kl_weights_between(q: &MeanFieldPosterior, r: &MeanFieldPosterior) -> Result<f64> {
    if q.dims != r.dims {
        return Err(Error::Dimension("posteriors have different dimensions".into()));
    }
    Ok(q.weights
        .iter()
        .zip(&r.weights)
        .map(|(a, b)| {
            let (sa2, sb2) = ((2.0 * a.log_s).exp(), (2.0 * b.log_s).exp());
            b.log_s - a.log_s + (sa2 + (a.m - b.m).powi(2)) / (2.0 * sb2) - 0.5
        })
        .sum())
}

/// KL of the analysis family N(θ₀ᵢ, τ²/n) against N(0, ζ²), in the grouped
/// form (K/2) log n + K log(ζ/(τ√e)) + Σθ₀²/(2ζ²) + Kτ²/(2ζ²n).
pub fn analysis_q_kl(theta0: &[f64], n: usize, tau: f64, zeta: f64) -> f64 {
    let k = theta0.len() as f64;
    let nf = n as f64;
    let ss: f64 = theta0.iter().map(|t| t * t).sum();
    0.5 * k * nf.ln() + k * (zeta / (tau * 0.5f64.exp())).ln() + ss / (2.0 * zeta * zeta) + k * tau * tau / (2.0 * zeta * zeta * nf)
}

/// Posterior noise-variance summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceSummary {
    Known { sigma2: f64 },
    /// E(σ²) under q.
    Mean { sigma2: f64 },
    /// E(σ²) is infinite under IG(ã, b̃) with ã ≤ 1.
    UndefinedMean { shape: f64 },
}

impl VarianceSummary {
    pub fn sigma2(&self) -> Option<f64> {
        match *self {
            VarianceSummary::Known { sigma2 } | VarianceSummary::Mean { sigma2 } => Some(sigma2),
            VarianceSummary::UndefinedMean { .. } => None,
        }
    }
}

/// Point summaries of q: weight means and σ̂² = E_q(σ²).
#[derive(Debug, Clone, Serialize)]
pub struct PointSummaries {
    pub weight_means: Vec<f64>,
    pub variance: VarianceSummary,
}

/// Weight means and σ̂²; the ρ case integrates log(1+e^ρ)² by 64-node
/// Gauss–Hermite.
pub fn posterior_point_summaries(q: &MeanFieldPosterior) -> PointSummaries {
    let variance = match q.scale {
        ScaleFactor::Known { sigma } => VarianceSummary::Known { sigma2: sigma * sigma },
        ScaleFactor::InverseGamma(f) => {
            let a = f.shape();
            if a > 1.0 {
                VarianceSummary::Mean {
                    sigma2: f.rate() / (a - 1.0),
                }
            } else {
                VarianceSummary::UndefinedMean { shape: a }
            }
        }
        ScaleFactor::Rho(f) => VarianceSummary::Mean {
            sigma2: NormalExpectation::new(64).expect(f.m, f.s(), |r| softplus(r).powi(2)),
        },
    };
    PointSummaries {
        weight_means: q.weights.iter().map(|w| w.m).collect(),
        variance,
    }
}
