//! ELBO maximization with Adam.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::elbo::{objective, LikelihoodTerm};
use crate::error::{Error, Result};
use crate::model::{ModelDims, RegressionDataset};
use crate::priors::PriorSpec;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::variational::MeanFieldPosterior;

/// Optimizer and stopping settings. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    /// Monte Carlo draws per gradient step.
    pub mc_samples: usize,
    pub step_size: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    /// Stop when the means of two consecutive windows of the smoothed ELBO
    /// differ by less than `convergence_tol` relative.
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Weight of the newest value in the exponential smoothing of the trace.
    pub smoothing: f64,
    /// Minibatch size; `None` uses all rows.
    pub batch_size: Option<usize>,
    /// Multiplier of the expected log-likelihood (0 fits the prior).
    pub likelihood_weight: f64,
    /// Initial weight means are N(0, `init_sd`²).
    pub init_sd: f64,
    /// Initial factor standard deviation.
    pub init_s: f64,
    /// Write the posterior to `checkpoint_path` every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 3000,
            mc_samples: 8,
            step_size: 1e-2,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            convergence_window: 200,
            convergence_tol: 1e-6,
            smoothing: 0.05,
            batch_size: None,
            likelihood_weight: 1.0,
            init_sd: 0.1,
            init_s: 0.1,
            checkpoint_every: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iters == 0 {
            return bad("iters must be at least 1");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam_betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.convergence_window == 0 || !(self.convergence_tol >= 0.0) {
            return bad("convergence_window must be positive and convergence_tol non-negative");
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return bad("smoothing must lie in (0, 1]");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if !(self.likelihood_weight >= 0.0) || !(self.init_sd >= 0.0) || !(self.init_s > 0.0) {
            return bad("likelihood_weight and init_sd must be non-negative, init_s positive");
        }
        if self.checkpoint_every.is_some() != self.checkpoint_path.is_some() {
            return bad("checkpoint_every and checkpoint_path go together");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub posterior: MeanFieldPosterior,
    /// Exponentially smoothed ELBO per iteration.
    pub elbo_trace: Vec<f64>,
    /// Euclidean norm of the gradient per iteration.
    pub grad_norm_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time_s: f64,
}

impl FitResult {
    pub fn iterations(&self) -> usize {
        self.elbo_trace.len()
    }

    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("at least one iteration")
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self.grad_norm_trace.last().expect("at least one iteration")
    }

    /// Equality of everything except wall time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.posterior == other.posterior
            && self.elbo_trace == other.elbo_trace
            && self.grad_norm_trace == other.grad_norm_trace
            && self.converged == other.converged
    }
}

/// Adam ascent on a parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    step: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, step: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            step,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Moves `x` uphill along `grad`.
    pub fn ascend(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            x[i] += self.step * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn write_checkpoint(q: &MeanFieldPosterior, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, q.to_json()?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Fits a mean-field posterior from the default initialization.
pub fn fit(prior: &PriorSpec, data: &RegressionDataset, dims: ModelDims, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    let q0 = MeanFieldPosterior::initial(prior, data, dims, config.init_sd, config.init_s, config.seed)?;
    fit_from(q0, prior, data, config)
}

/// Fits starting from `q`.
pub fn fit_from(
    mut q: MeanFieldPosterior,
    prior: &PriorSpec,
    data: &RegressionDataset,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    prior.validate()?;
    q.check_prior(prior)?;
    let start = Instant::now();
    let n = data.n();
    let mut x = q.to_vector();
    let mut adam = Adam::new(x.len(), config.step_size, config.adam_betas, config.adam_eps);
    let mut batch_rng = stream_rng(config.seed, Stream::Batch, &[n as u64]);
    let w = config.convergence_window;

    let mut elbo_trace = Vec::with_capacity(config.iters);
    let mut grad_norm_trace = Vec::with_capacity(config.iters);
    let mut converged = false;
    let mut smoothed = f64::NAN;

    for it in 0..config.iters {
        let batch: Option<Vec<usize>> = config
            .batch_size
            .filter(|&b| b < n)
            .map(|b| {
                let mut idx = sample(&mut batch_rng, n, b).into_vec();
                idx.sort_unstable();
                idx
            });
        let seed = derive_seed(config.seed, &[Stream::Train as u64, it as u64]);
        let term = LikelihoodTerm {
            weight: config.likelihood_weight,
            batch: batch.as_deref(),
        };
        let e = objective(&q, prior, data, config.mc_samples, seed, term)?;
        if !e.value.is_finite() {
            return Err(Error::NonFinite {
                quantity: "elbo",
                iteration: it,
                parameter: "-".into(),
            });
        }
        if let Some(i) = e.gradient.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "gradient",
                iteration: it,
                parameter: q.param_name(i),
            });
        }
        smoothed = if it == 0 {
            e.value
        } else {
            config.smoothing * e.value + (1.0 - config.smoothing) * smoothed
        };
        elbo_trace.push(smoothed);
        grad_norm_trace.push(e.gradient.iter().map(|g| g * g).sum::<f64>().sqrt());

        adam.ascend(&mut x, &e.gradient);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "parameter",
                iteration: it,
                parameter: q.param_name(i),
            });
        }
        q.set_vector(&x)?;

        if let (Some(every), Some(path)) = (config.checkpoint_every, &config.checkpoint_path) {
            if (it + 1) % every == 0 {
                write_checkpoint(&q, path)?;
            }
        }

        let len = elbo_trace.len();
        if len >= 2 * w {
            let prev = elbo_trace[len - 2 * w..len - w].iter().sum::<f64>() / w as f64;
            let cur = elbo_trace[len - w..].iter().sum::<f64>() / w as f64;
            if (cur - prev).abs() <= config.convergence_tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    if let Some(path) = &config.checkpoint_path {
        write_checkpoint(&q, path)?;
    }
    Ok(FitResult {
        posterior: q,
        elbo_trace,
        grad_norm_trace,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{predictor_l2_error, PredictorMethod};
    use crate::model::{make_teacher, simulate_dataset, Truth};
    use crate::quadrature::QuadratureRule;
    use crate::variational::kl_to_prior;

    fn data(n: usize, seed: u64) -> RegressionDataset {
        let t = make_teacher(2, 1, 2.0, 1).unwrap();
        simulate_dataset(&Truth::Teacher { params: t }, 0.5, n, seed).unwrap()
    }

    #[test]
    fn adam_climbs_a_concave_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(2, 0.05, (0.9, 0.999), 1e-8);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| -2.0 * (v - 1.0)).collect();
            adam.ascend(&mut x, &g);
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            mc_samples: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            checkpoint_every: Some(5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"iters": 10}"#).unwrap();
        assert_eq!(parsed.iters, 10);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"iter": 10}"#).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_improves_fit() {
        let d = data(300, 2);
        let prior = PriorSpec::FixedGaussian { zeta: 1.0 };
        let dims = ModelDims::new(1, 2).unwrap();
        let cfg = TrainConfig {
            iters: 1500,
            seed: 4,
            ..Default::default()
        };
        let a = fit(&prior, &d, dims, &cfg).unwrap();
        let b = fit(&prior, &d, dims, &cfg).unwrap();
        assert!(a.same_trajectory(&b));
        let rule = QuadratureRule::gauss_legendre(1, 32).unwrap();
        let q0 = MeanFieldPosterior::initial(&prior, &d, dims, 0.1, 0.1, 4).unwrap();
        let f0 = |x: &[f64]| d.truth().eval(x);
        let before = predictor_l2_error(&q0, f0, &rule, PredictorMethod::default()).unwrap();
        let after = predictor_l2_error(&a.posterior, f0, &rule, PredictorMethod::default()).unwrap();
        assert!(after < 0.2 * before, "{after} vs {before}");
        let tenth = a.iterations() / 10;
        let head = crate::stats::median(&a.elbo_trace[..tenth]);
        let tail = crate::stats::median(&a.elbo_trace[a.iterations() - tenth..]);
        assert!(tail >= head);
    }

    #[test]
    fn zero_likelihood_weight_recovers_the_prior() {
        let d = data(50, 3);
        let prior = PriorSpec::RhoGaussian { zeta: 1.3, eta: 0.8 };
        let cfg = TrainConfig {
            iters: 4000,
            likelihood_weight: 0.0,
            convergence_tol: 0.0,
            ..Default::default()
        };
        let r = fit(&prior, &d, ModelDims::new(1, 2).unwrap(), &cfg).unwrap();
        let kl = kl_to_prior(&r.posterior, &prior, 50).unwrap().total();
        assert!(kl < 1e-3, "KL {kl}");
    }

    #[test]
    fn minibatch_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.json");
        let d = data(200, 3);
        let prior = PriorSpec::InverseGammaSigma {
            zeta: 1.0,
            alpha: 2.0,
            lambda: 1.0,
        };
        let cfg = TrainConfig {
            iters: 50,
            batch_size: Some(32),
            checkpoint_every: Some(20),
            checkpoint_path: Some(path.clone()),
            ..Default::default()
        };
        let r = fit(&prior, &d, ModelDims::new(1, 2).unwrap(), &cfg).unwrap();
        let back = MeanFieldPosterior::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, r.posterior);
        assert_eq!(r.iterations(), 50);
    }

    #[test]
    fn divergence_is_reported() {
        let d = data(50, 3);
        let prior = PriorSpec::FixedGaussian { zeta: 1.0 };
        let cfg = TrainConfig {
            iters: 100,
            step_size: 1e308,
            ..Default::default()
        };
        let err = fit(&prior, &d, ModelDims::new(1, 2).unwrap(), &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}
