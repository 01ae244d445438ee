//! Prior configurations, sieves and the tail-mass bounds outside the sieve.
//!
//! Every prior puts an independent N(0, ζₙ²) on each network coordinate,
//! with ζₙ² = ζ² or ζ²nᵘ, and optionally a prior on the noise scale:
//! σ² ~ IG(α, λ) (shape–rate), or ρ ~ N(0, η²) with σ = log(1 + e^ρ).
//!
//! The sieve at sample size n is the box |θᵢ| ≤ Cₙ plus a scale constraint,
//! with Cₙ = exp(n^{b−a}) and Dₙ = exp(n^b). Both overflow quickly, so they
//! are only ever handled through their logarithms.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::divergence::l2_sq_distance;
use crate::error::{Error, Result};
use crate::model::{ModelDims, NetworkParams, Truth};
use crate::quadrature::QuadratureRule;
use crate::rng::{stream_rng, Stream};
use crate::special::{ln_gamma, ln_gamma_p, ln_gamma_q, log1m_exp, log_normal_sf, log_sum_exp};

/// One of the four prior configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// θᵢ ~ N(0, ζ²), σ known.
    FixedGaussian { zeta: f64 },
    /// θᵢ ~ N(0, ζ²nᵘ), σ known.
    ScaledGaussian { zeta: f64, u: f64 },
    /// θᵢ ~ N(0, ζ²), σ² ~ IG(α, λ).
    InverseGammaSigma { zeta: f64, alpha: f64, lambda: f64 },
    /// θᵢ ~ N(0, ζ²), ρ ~ N(0, η²), σ = log(1 + e^ρ).
    RhoGaussian { zeta: f64, eta: f64 },
}

/// Value of the scale parameter that accompanies θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleParam {
    Variance(f64),
    Rho(f64),
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            PriorSpec::FixedGaussian { zeta } => positive("zeta", zeta),
            PriorSpec::ScaledGaussian { zeta, u } => {
                positive("zeta", zeta)?;
                positive("u", u)
            }
            PriorSpec::InverseGammaSigma { zeta, alpha, lambda } => {
                positive("zeta", zeta)?;
                positive("alpha", alpha)?;
                positive("lambda", lambda)
            }
            PriorSpec::RhoGaussian { zeta, eta } => {
                positive("zeta", zeta)?;
                positive("eta", eta)
            }
        }
    }

    pub fn zeta(&self) -> f64 {
        match *self {
            PriorSpec::FixedGaussian { zeta }
            | PriorSpec::ScaledGaussian { zeta, .. }
            | PriorSpec::InverseGammaSigma { zeta, .. }
            | PriorSpec::RhoGaussian { zeta, .. } => zeta,
        }
    }

    /// Prior variance ζₙ² of each network coordinate at sample size n.
    pub fn weight_variance(&self, n: usize) -> f64 {
        let z2 = self.zeta() * self.zeta();
        match *self {
            PriorSpec::ScaledGaussian { u, .. } => z2 * (n as f64).powf(u),
            _ => z2,
        }
    }

    /// True when σ is treated as known.
    pub fn sigma_known(&self) -> bool {
        matches!(self, PriorSpec::FixedGaussian { .. } | PriorSpec::ScaledGaussian { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::FixedGaussian { .. } => "fixed_gaussian",
            PriorSpec::ScaledGaussian { .. } => "scaled_gaussian",
            PriorSpec::InverseGammaSigma { .. } => "inverse_gamma_sigma",
            PriorSpec::RhoGaussian { .. } => "rho_gaussian",
        }
    }
}

/// log N(x; 0, var).
fn log_normal_density(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * x * x / var
}

/// log IG(σ²; α, λ) = α log λ − log Γ(α) − (α+1) log σ² − λ/σ².
pub fn log_inverse_gamma_density(sigma2: f64, alpha: f64, lambda: f64) -> f64 {
    alpha * lambda.ln() - ln_gamma(alpha) - (alpha + 1.0) * sigma2.ln() - lambda / sigma2
}

/// Exact log density of the product prior at (θ, scale).
pub fn log_prior_density(spec: &PriorSpec, n: usize, params: &NetworkParams, scale: Option<ScaleParam>) -> Result<f64> {
    spec.validate()?;
    let var = spec.weight_variance(n);
    let weights: f64 = params.as_flat().iter().map(|&t| log_normal_density(t, var)).sum();
    let scale_term = match (spec, scale) {
        (PriorSpec::FixedGaussian { .. } | PriorSpec::ScaledGaussian { .. }, None) => 0.0,
        (PriorSpec::InverseGammaSigma { alpha, lambda, .. }, Some(ScaleParam::Variance(s2))) => {
            if !(s2 > 0.0) {
                return Err(Error::InvalidArgument(format!("sigma^2 must be positive, got {s2}")));
            }
            log_inverse_gamma_density(s2, *alpha, *lambda)
        }
        (PriorSpec::RhoGaussian { eta, .. }, Some(ScaleParam::Rho(rho))) => log_normal_density(rho, eta * eta),
        (spec, scale) => {
            return Err(Error::VariantMismatch(format!(
                "prior {} does not take scale parameter {scale:?}",
                spec.name()
            )))
        }
    };
    Ok(weights + scale_term)
}

/// One draw (θ, scale) from the prior.
pub fn sample_prior(spec: &PriorSpec, n: usize, dims: ModelDims, seed: u64) -> Result<(NetworkParams, Option<ScaleParam>)> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Prior, &[n as u64, dims.param_count() as u64]);
    let sd = spec.weight_variance(n).sqrt();
    let theta = (0..dims.param_count())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let params = NetworkParams::from_flat(dims, theta)?;
    let scale = match *spec {
        PriorSpec::InverseGammaSigma { alpha, lambda, .. } => {
            let precision = Gamma::new(alpha, 1.0 / lambda)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(&mut rng);
            Some(ScaleParam::Variance(1.0 / precision))
        }
        PriorSpec::RhoGaussian { eta, .. } => Some(ScaleParam::Rho(eta * rng.sample::<f64, _>(StandardNormal))),
        _ => None,
    };
    Ok((params, scale))
}

/// Sieve exponents: kₙ = ⌈nᵃ⌉, Cₙ = exp(n^{b−a}), Dₙ = exp(n^b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SieveSpec {
    pub a: f64,
    pub b: f64,
}

/// Sieve quantities at one n, kept in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveBounds {
    pub k_n: usize,
    pub log_c: f64,
    pub log_d: f64,
}

impl SieveSpec {
    /// Checks 0 < a < b < 1, and additionally a < 1/2 and b > a + 1/2 for the
    /// ρ prior.
    pub fn validate_for(&self, spec: &PriorSpec) -> Result<()> {
        if !(0.0 < self.a && self.a < self.b && self.b < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sieve needs 0 < a < b < 1, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if let PriorSpec::RhoGaussian { .. } = spec {
            if !(self.a < 0.5 && self.b > self.a + 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "rho prior needs a < 1/2 and b > a + 1/2, got a = {}, b = {}",
                    self.a, self.b
                )));
            }
        }
        Ok(())
    }

    /// kₙ = ⌈nᵃ⌉.
    pub fn hidden_units(&self, n: usize) -> usize {
        // Guard against n^a landing a hair above an integer through rounding.
        let v = (n as f64).powf(self.a);
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            (r as usize).max(1)
        } else {
            (v.ceil() as usize).max(1)
        }
    }

    pub fn bounds(&self, n: usize) -> SieveBounds {
        let nf = n as f64;
        SieveBounds {
            k_n: self.hidden_units(n),
            log_c: nf.powf(self.b - self.a),
            log_d: nf.powf(self.b),
        }
    }
}

/// kₙ and log Cₙ, log Dₙ at sample size n.
pub fn sieve_bounds(sieve: &SieveSpec, n: usize) -> Result<SieveBounds> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    Ok(sieve.bounds(n))
}

/// log of 2·count·(1 − Φ(t)): the union bound for `count` N(0,1) coordinates
/// exceeding t in absolute value.
pub fn log_gaussian_union_bound(count: usize, t: f64) -> f64 {
    if t.is_infinite() {
        return f64::NEG_INFINITY;
    }
    (2.0 * count as f64).ln() + log_normal_sf(t)
}

/// Per-component log tail masses of the prior outside the sieve at n:
/// one entry per coordinate block (weights, then the scale parameter's
/// lower and upper tails where present).
fn log_tail_components(spec: &PriorSpec, sieve: &SieveSpec, n: usize, p: usize) -> Vec<(usize, f64)> {
    let b = sieve.bounds(n);
    let count = ModelDims { p, k: b.k_n }.param_count();
    let t = b.log_c.exp() / spec.weight_variance(n).sqrt();
    // Mass of one weight coordinate outside [-C, C].
    let weight = log_gaussian_union_bound(1, t);
    let mut out = vec![(count, weight)];
    match *spec {
        PriorSpec::InverseGammaSigma { alpha, lambda, .. } => {
            // 1/σ² ~ Gamma(α, rate λ): σ² < 1/C² ⇔ 1/σ² > C², σ² > D ⇔ 1/σ² < 1/D.
            out.push((1, ln_gamma_q(alpha, lambda * (2.0 * b.log_c).exp())));
            out.push((1, ln_gamma_p(alpha, lambda * (-b.log_d).exp())));
        }
        PriorSpec::RhoGaussian { eta, .. } => {
            out.push((1, log_gaussian_union_bound(1, b.log_c / eta)));
        }
        _ => {}
    }
    out
}

/// log of the union bound on the prior mass outside the sieve at n.
pub fn log_prior_mass_outside_sieve(spec: &PriorSpec, sieve: &SieveSpec, n: usize, p: usize) -> Result<f64> {
    spec.validate()?;
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("n and p must be positive".into()));
    }
    let terms: Vec<f64> = log_tail_components(spec, sieve, n, p)
        .into_iter()
        .map(|(count, l)| (count as f64).ln() + l)
        .collect();
    Ok(log_sum_exp(&terms))
}

/// log of the exact prior mass outside the sieve, 1 − Π(1 − pᵢ), using
/// independence of the coordinates. Never exceeds the union bound.
pub fn log_prior_mass_outside_sieve_exact(spec: &PriorSpec, sieve: &SieveSpec, n: usize, p: usize) -> Result<f64> {
    spec.validate()?;
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("n and p must be positive".into()));
    }
    let log_inside: f64 = log_tail_components(spec, sieve, n, p)
        .into_iter()
        .map(|(count, l)| count as f64 * log1m_exp(l.min(0.0)))
        .sum();
    Ok(log1m_exp(log_inside))
}

/// Whether (θ, scale) lies in the sieve at n.
pub fn in_sieve(spec: &PriorSpec, sieve: &SieveSpec, n: usize, params: &NetworkParams, scale: Option<ScaleParam>) -> bool {
    let b = sieve.bounds(n);
    let c = b.log_c.exp();
    if params.as_flat().iter().any(|t| t.abs() > c) {
        return false;
    }
    match (spec, scale) {
        (PriorSpec::InverseGammaSigma { .. }, Some(ScaleParam::Variance(s2))) => {
            let ls = s2.ln();
            ls >= -2.0 * b.log_c && ls <= b.log_d
        }
        (PriorSpec::RhoGaussian { .. }, Some(ScaleParam::Rho(rho))) => rho.abs() <= b.log_c,
        _ => true,
    }
}

/// Checks of the approximation and growth conditions for a teacher network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Σθ₀ᵢ² of the teacher.
    pub sum_sq_theta0: f64,
    /// (n, kₙ, ‖f_θ₀ₙ − f₀‖₂²) for each n of the grid.
    pub a1_l2_error: Vec<(usize, usize, f64)>,
    /// δ range allowed jointly by the node growth (δ < 1 − a), the observed
    /// decay of the approximation error and the growth of Σθ₀ₙ².
    pub delta_feasible: (f64, f64),
    /// Fitted growth exponent v̂ of Σθ₀ₙ² over the grid (0 for a fixed teacher).
    pub v_hat: f64,
    /// Σθ₀ₙ² = o(n^{1−δ}) for some admissible δ ≥ 0, i.e. v̂ < 1.
    pub a2_satisfied: bool,
    /// Σθ₀ₙ² = O(nᵛ) with v = max(v̂, 1).
    pub a3_satisfied: bool,
    pub a3_v: f64,
    /// For an n-scaled prior: u > v̂ holds. `None` for other priors.
    pub scaled_prior_u_ok: Option<bool>,
}

/// Evaluates the approximation condition and the coefficient-growth
/// conditions for `teacher` as approximant of `f0` over `n_grid`.
///
/// The teacher is embedded in kₙ hidden units for every n (extra units get
/// zero weights); n values where kₙ is smaller than the teacher width are
/// skipped.
pub fn assumption_report(
    teacher: &NetworkParams,
    f0: &Truth,
    sieve: &SieveSpec,
    prior: Option<&PriorSpec>,
    n_grid: &[usize],
    rule: &QuadratureRule,
) -> Result<AssumptionReport> {
    if teacher.dims().p != f0.p() || rule.dim() != f0.p() {
        return Err(Error::Dimension("teacher, truth and rule must share p".into()));
    }
    let mut errors = Vec::new();
    let mut sums = Vec::new();
    for &n in n_grid {
        let k_n = sieve.hidden_units(n);
        let Ok(embedded) = teacher.padded(k_n) else {
            continue;
        };
        let e = l2_sq_distance(|x| embedded.eval(x).unwrap_or(f64::NAN), |x| f0.eval(x), rule);
        errors.push((n, k_n, e));
        sums.push((n, embedded.sum_squares()));
    }
    let v_hat = loglog_slope(&sums).unwrap_or(0.0).max(0.0);
    // ‖·‖₂ = o(n^{−δ}) needs the squared error to decay faster than n^{−2δ}.
    let a1_limit = if errors.iter().all(|e| e.2 <= 1e-24) {
        1.0
    } else {
        let pts: Vec<(usize, f64)> = errors.iter().map(|e| (e.0, e.2.max(1e-300))).collect();
        (-loglog_slope(&pts).unwrap_or(0.0) / 2.0).clamp(0.0, 1.0)
    };
    let upper = (1.0 - sieve.a).min(a1_limit).min(1.0 - v_hat);
    let scaled_prior_u_ok = match prior {
        Some(PriorSpec::ScaledGaussian { u, .. }) => Some(*u > v_hat),
        _ => None,
    };
    Ok(AssumptionReport {
        sum_sq_theta0: teacher.sum_squares(),
        a1_l2_error: errors,
        delta_feasible: (0.0, upper.max(0.0)),
        v_hat,
        a2_satisfied: v_hat < 1.0,
        a3_satisfied: v_hat.is_finite(),
        a3_v: v_hat.max(1.0),
        scaled_prior_u_ok,
    })
}

/// Least-squares slope of log y against log n.
pub(crate) fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    Some(crate::stats::linear_fit(&xs, &ys)?.slope)
}
