//! Monte Carlo ELBO and its gradient with respect to the variational
//! parameters.
//!
//! ELBO(q) = w·E_q log L(ω) − KL(q ‖ p). Weights (and ρ) enter through the
//! reparameterization θ = m + s·ε; under an inverse-gamma factor the σ²
//! expectations are exact, E(1/σ²) = ã/b̃ and E(log σ²) = log b̃ − ψ(ã), so
//! only the weight noise is random. Value, standard error and gradient come
//! from one pass over the same draws, which makes finite differences at a
//! fixed seed use common random numbers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::RegressionDataset;
use crate::priors::PriorSpec;
use crate::rng::{stream_rng, Stream};
use crate::special::{logistic, softplus, trigamma};
use crate::variational::{kl_to_prior, MeanFieldPosterior, ScaleFactor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which data enter the likelihood term and with what weight.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodTerm<'a> {
    /// Multiplies the whole expected log-likelihood; 1 gives the ELBO.
    pub weight: f64,
    /// Row indices of a minibatch, rescaled by n/|batch|. `None` is full batch.
    pub batch: Option<&'a [usize]>,
}

impl Default for LikelihoodTerm<'_> {
    fn default() -> Self {
        Self { weight: 1.0, batch: None }
    }
}

/// ELBO estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboEstimate {
    pub value: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ObjectiveEval {
    pub value: f64,
    pub standard_error: f64,
    pub gradient: Vec<f64>,
}

/// Scale-factor state shared by all draws of one evaluation.
enum ScaleState {
    /// Fixed precision and log variance (known σ or inverse-gamma expectations).
    Fixed { precision: f64, log_var: f64 },
    Rho { m: f64, s: f64 },
}

pub(crate) fn objective(
    q: &MeanFieldPosterior,
    prior: &PriorSpec,
    data: &RegressionDataset,
    samples: usize,
    seed: u64,
    term: LikelihoodTerm<'_>,
) -> Result<ObjectiveEval> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
    }
    if q.dims().p != data.p() {
        return Err(Error::Dimension(format!("posterior has p = {} but data has p = {}", q.dims().p, data.p())));
    }
    let n = data.n();
    let kl = kl_to_prior(q, prior, n)?;

    let dims = q.dims();
    let (k, p) = (dims.k, dims.p);
    let big_k = dims.param_count();
    let all: Vec<usize>;
    let rows: &[usize] = match term.batch {
        Some(b) => {
            if b.is_empty() || b.iter().any(|&i| i >= n) {
                return Err(Error::InvalidArgument("batch indices must be non-empty and in range".into()));
            }
            b
        }
        None => {
            all = (0..n).collect();
            &all
        }
    };
    let c = term.weight * n as f64 / rows.len() as f64;
    let nb = rows.len() as f64;

    let state = match *q.scale() {
        ScaleFactor::Known { sigma } => ScaleState::Fixed {
            precision: 1.0 / (sigma * sigma),
            log_var: 2.0 * sigma.ln(),
        },
        ScaleFactor::InverseGamma(f) => ScaleState::Fixed {
            precision: f.mean_precision(),
            log_var: f.mean_log_variance(),
        },
        ScaleFactor::Rho(f) => ScaleState::Rho { m: f.m, s: f.s() },
    };

    let means: Vec<f64> = q.weights().iter().map(|w| w.m).collect();
    let sds: Vec<f64> = q.weights().iter().map(|w| w.s()).collect();
    let mut rng = stream_rng(seed, Stream::Train, &[big_k as u64, q.scale().param_count() as u64]);

    let mut grad = vec![0.0; q.param_count()];
    let mut values = Vec::with_capacity(samples);
    let mut theta = vec![0.0; big_k];
    let mut eps = vec![0.0; big_k];
    let mut g_theta = vec![0.0; big_k];
    let mut psi = vec![0.0; k];
    let mut rss_total = 0.0;

    for _ in 0..samples {
        for i in 0..big_k {
            eps[i] = rng.sample(StandardNormal);
            theta[i] = means[i] + sds[i] * eps[i];
        }
        let eps_rho: f64 = match state {
            ScaleState::Rho { .. } => rng.sample(StandardNormal),
            ScaleState::Fixed { .. } => 0.0,
        };

        // Residual sum of squares and Σ rᵢ ∂f/∂θ over the batch.
        g_theta.iter_mut().for_each(|g| *g = 0.0);
        let mut rss = 0.0;
        let gamma = &theta[1 + k..];
        for &i in rows {
            let x = data.x(i);
            let mut f = theta[0];
            for j in 0..k {
                let row = &gamma[j * (p + 1)..(j + 1) * (p + 1)];
                let mut u = row[0];
                for h in 0..p {
                    u += row[h + 1] * x[h];
                }
                psi[j] = logistic(u);
                f += theta[1 + j] * psi[j];
            }
            let r = data.ys()[i] - f;
            rss += r * r;
            g_theta[0] += r;
            for j in 0..k {
                g_theta[1 + j] += r * psi[j];
                let back = r * theta[1 + j] * psi[j] * (1.0 - psi[j]);
                let base = 1 + k + j * (p + 1);
                g_theta[base] += back;
                for h in 0..p {
                    g_theta[base + 1 + h] += back * x[h];
                }
            }
        }
        rss_total += rss;

        let precision = match state {
            ScaleState::Fixed { precision, log_var } => {
                values.push(c * (-0.5 * nb * (LN_2PI + log_var) - 0.5 * precision * rss));
                precision
            }
            ScaleState::Rho { m, s } => {
                let rho = m + s * eps_rho;
                let sigma = softplus(rho);
                values.push(c * (-0.5 * nb * LN_2PI - nb * sigma.ln() - 0.5 * rss / (sigma * sigma)));
                // ∂/∂σ of the log-likelihood, then through σ = softplus(ρ).
                let d_sigma = c * (-nb / sigma + rss / (sigma * sigma * sigma));
                let d_rho = d_sigma * logistic(rho);
                grad[2 * big_k] += d_rho;
                grad[2 * big_k + 1] += d_rho * s * eps_rho;
                1.0 / (sigma * sigma)
            }
        };
        for i in 0..big_k {
            let g = c * precision * g_theta[i];
            grad[i] += g;
            grad[big_k + i] += g * sds[i] * eps[i];
        }
    }

    let s_f = samples as f64;
    grad.iter_mut().for_each(|g| *g /= s_f);

    // Inverse-gamma factor: exact expectations, so an analytic gradient.
    if let ScaleFactor::InverseGamma(f) = *q.scale() {
        let (a, b) = (f.shape(), f.rate());
        let rss = rss_total / s_f;
        grad[2 * big_k] += a * c * (0.5 * nb * trigamma(a) - 0.5 * rss / b);
        grad[2 * big_k + 1] += c * (-0.5 * nb + 0.5 * a * rss / b);
    }

    // KL gradients.
    let v = prior.weight_variance(n);
    for (i, w) in q.weights().iter().enumerate() {
        grad[i] -= w.m / v;
        grad[big_k + i] -= -1.0 + sds[i] * sds[i] / v;
    }
    match (*q.scale(), prior) {
        (ScaleFactor::InverseGamma(f), PriorSpec::InverseGammaSigma { alpha, lambda, .. }) => {
            let (a, b) = (f.shape(), f.rate());
            grad[2 * big_k] -= a * ((a - alpha) * trigamma(a) + lambda / b - 1.0);
            grad[2 * big_k + 1] -= alpha - lambda * a / b;
        }
        (ScaleFactor::Rho(f), PriorSpec::RhoGaussian { eta, .. }) => {
            let (s2, v) = (f.s() * f.s(), eta * eta);
            grad[2 * big_k] -= f.m / v;
            grad[2 * big_k + 1] -= -1.0 + s2 / v;
        }
        _ => {}
    }

    let (mean, se) = crate::stats::mean_and_se(&values);
    Ok(ObjectiveEval {
        value: mean - kl.total(),
        standard_error: se,
        gradient: grad,
    })
}

/// Monte Carlo ELBO with S reparameterized draws.
pub fn elbo_estimate(
    q: &MeanFieldPosterior,
    prior: &PriorSpec,
    data: &RegressionDataset,
    samples: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    let e = objective(q, prior, data, samples, seed, LikelihoodTerm::default())?;
    Ok(ElboEstimate {
        value: e.value,
        standard_error: e.standard_error,
    })
}

/// Gradient of [`elbo_estimate`] with respect to
/// [`MeanFieldPosterior::to_vector`], from the same draws.
pub fn elbo_gradient(
    q: &MeanFieldPosterior,
    prior: &PriorSpec,
    data: &RegressionDataset,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(objective(q, prior, data, samples, seed, LikelihoodTerm::default())?.gradient)
}

/// One coordinate of a gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheckEntry {
    pub coordinate: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    /// |analytic − numeric| / max(|analytic|, |numeric|, 1).
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheckReport {
    pub h: f64,
    pub entries: Vec<GradientCheckEntry>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

/// Compares `grad` against central differences of `f` at `x` on `coords`.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> Result<f64>,
    grad: &[f64],
    x: &[f64],
    coords: &[usize],
    h: f64,
    name: impl Fn(usize) -> String,
) -> Result<GradientCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut entries = Vec::with_capacity(coords.len());
    let mut xp = x.to_vec();
    for &i in coords {
        if i >= x.len() {
            return Err(Error::Dimension(format!("coordinate {i} out of range {}", x.len())));
        }
        xp[i] = x[i] + h;
        let up = f(&xp)?;
        xp[i] = x[i] - h;
        let down = f(&xp)?;
        xp[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let abs_error = (grad[i] - numeric).abs();
        entries.push(GradientCheckEntry {
            coordinate: i,
            name: name(i),
            analytic: grad[i],
            numeric,
            abs_error,
            rel_error: abs_error / grad[i].abs().max(numeric.abs()).max(1.0),
        });
    }
    let max_abs_error = entries.iter().map(|e| e.abs_error).fold(0.0, f64::max);
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradientCheckReport {
        h,
        entries,
        max_abs_error,
        max_rel_error,
    })
}

/// Analytic ELBO gradient against central differences of the ELBO estimate,
/// all at the same seed.
pub fn finite_difference_check(
    q: &MeanFieldPosterior,
    prior: &PriorSpec,
    data: &RegressionDataset,
    coords: &[usize],
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<GradientCheckReport> {
    let grad = elbo_gradient(q, prior, data, samples, seed)?;
    let x = q.to_vector();
    check_gradient(
        |v| Ok(elbo_estimate(&q.with_vector(v)?, prior, data, samples, seed)?.value),
        &grad,
        &x,
        coords,
        h,
        |i| q.param_name(i),
    )
}
