//! Divergences between the true conditional density N(f₀(x), σ₀²) and a
//! model density N(f_θ(x), σ²) under the uniform design on \[0,1\]ᵖ,
//! variational tail mass, and the VB point predictor.
//!
//! The Hellinger distance here is ∫(√l₀ − √l)², without the conventional
//! factor ½, so it ranges over \[0, 2\]. The normalized Hellinger distance
//! H² = ½∫(√l₀ − √l)² equals half the value returned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_flat, ModelDims, Truth};
use crate::quadrature::{NormalExpectation, QuadratureRule};
use crate::special::{log_sum_exp, logistic};
use crate::variational::{posterior_point_summaries, sample_reparameterized, MeanFieldPosterior};

/// ∫(f − g)² over \[0,1\]ᵖ by `rule`.
pub fn l2_sq_distance(f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64, rule: &QuadratureRule) -> f64 {
    rule.integrate(|x| {
        let d = f(x) - g(x);
        d * d
    })
    .max(0.0)
}

fn check_scales(sigma: f64, sigma0: f64) -> Result<()> {
    if sigma > 0.0 && sigma0 > 0.0 && sigma.is_finite() && sigma0.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "scales must be positive and finite, got sigma = {sigma}, sigma0 = {sigma0}"
        )))
    }
}

#[inline]
fn kl_closed_form(l2: f64, sigma: f64, sigma0: f64) -> f64 {
    let s2 = sigma * sigma;
    (sigma / sigma0).ln() - 0.5 + sigma0 * sigma0 / (2.0 * s2) + l2 / (2.0 * s2)
}

/// Rescaling factor √(2/(σ/σ₀ + σ₀/σ)) of the Hellinger affinity.
#[inline]
fn scale_affinity(sigma: f64, sigma0: f64) -> f64 {
    (2.0 / (sigma / sigma0 + sigma0 / sigma)).sqrt()
}

/// KL(l₀ ‖ l) = log(σ/σ₀) − ½ + σ₀²/(2σ²) + ∫(f_θ − f₀)²/(2σ²).
pub fn kl_true_vs_model(
    f_theta: impl Fn(&[f64]) -> f64,
    sigma: f64,
    f0: impl Fn(&[f64]) -> f64,
    sigma0: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_scales(sigma, sigma0)?;
    Ok(kl_closed_form(l2_sq_distance(f_theta, f0, rule), sigma, sigma0))
}

/// d_H = 2 − 2·√(2/(σ/σ₀ + σ₀/σ))·∫exp(−(f_θ − f₀)²/(4(σ² + σ₀²))).
pub fn hellinger_true_vs_model(
    f_theta: impl Fn(&[f64]) -> f64,
    sigma: f64,
    f0: impl Fn(&[f64]) -> f64,
    sigma0: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_scales(sigma, sigma0)?;
    let c = 1.0 / (4.0 * (sigma * sigma + sigma0 * sigma0));
    let mean_part = rule.integrate(|x| {
        let d = f_theta(x) - f0(x);
        (-c * d * d).exp()
    });
    Ok((2.0 - 2.0 * scale_affinity(sigma, sigma0) * mean_part).clamp(0.0, 2.0))
}

/// f₀ tabulated on the nodes of a rule, for repeated distance evaluations
/// against many networks.
#[derive(Debug, Clone)]
pub struct TruthOnRule<'a> {
    rule: &'a QuadratureRule,
    f0: Vec<f64>,
    sigma0: f64,
}

impl<'a> TruthOnRule<'a> {
    pub fn new(truth: &Truth, sigma0: f64, rule: &'a QuadratureRule) -> Result<Self> {
        check_scales(1.0, sigma0)?;
        if truth.p() != rule.dim() {
            return Err(Error::Dimension(format!("truth has p = {} but rule has p = {}", truth.p(), rule.dim())));
        }
        Ok(Self {
            rule,
            f0: rule.points().map(|x| truth.eval(x)).collect(),
            sigma0,
        })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// ∫(f_θ − f₀)².
    pub fn l2_sq(&self, dims: ModelDims, theta: &[f64]) -> f64 {
        self.rule
            .points()
            .zip(self.rule.weights())
            .zip(&self.f0)
            .map(|((x, w), f0)| {
                let d = eval_flat(dims, theta, x) - f0;
                w * d * d
            })
            .sum::<f64>()
            .max(0.0)
    }

    /// Hellinger distance of N(f_θ, σ²) from the truth; σ > 0 is assumed.
    pub fn hellinger(&self, dims: ModelDims, theta: &[f64], sigma: f64) -> f64 {
        let c = 1.0 / (4.0 * (sigma * sigma + self.sigma0 * self.sigma0));
        let mean_part: f64 = self
            .rule
            .points()
            .zip(self.rule.weights())
            .zip(&self.f0)
            .map(|((x, w), f0)| {
                let d = eval_flat(dims, theta, x) - f0;
                w * (-c * d * d).exp()
            })
            .sum();
        (2.0 - 2.0 * scale_affinity(sigma, self.sigma0) * mean_part).clamp(0.0, 2.0)
    }

    pub fn kl(&self, dims: ModelDims, theta: &[f64], sigma: f64) -> f64 {
        kl_closed_form(self.l2_sq(dims, theta), sigma, self.sigma0)
    }
}

/// Estimated variational probability of {d_H > ε}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMassEstimate {
    pub epsilon: f64,
    pub estimate: f64,
    /// Binomial standard error √(p̂(1 − p̂)/S).
    pub standard_error: f64,
    pub samples: usize,
}

/// Hellinger distances of `samples` draws from q to the truth, in draw order.
pub fn hellinger_draws(
    q: &MeanFieldPosterior,
    truth: &Truth,
    sigma0: f64,
    samples: usize,
    seed: u64,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    if truth.p() != q.dims().p {
        return Err(Error::Dimension("posterior and truth have different p".into()));
    }
    let grid = TruthOnRule::new(truth, sigma0, rule)?;
    let set = sample_reparameterized(q, seed, samples)?;
    let dims = q.dims();
    Ok(set
        .draws
        .par_iter()
        .map(|d| grid.hellinger(dims, d.theta.as_flat(), d.sigma))
        .collect())
}

/// Fraction of `distances` strictly above each ε.
pub fn tail_mass_from_distances(distances: &[f64], epsilons: &[f64]) -> Vec<TailMassEstimate> {
    let s = distances.len();
    epsilons
        .iter()
        .map(|&epsilon| {
            let hits = distances.iter().filter(|&&d| d > epsilon).count();
            let p = hits as f64 / s as f64;
            TailMassEstimate {
                epsilon,
                estimate: p,
                standard_error: (p * (1.0 - p) / s as f64).sqrt(),
                samples: s,
            }
        })
        .collect()
}

/// Monte Carlo estimate of q({ω : d_H(l_ω, l₀) > ε}) for each ε. The same
/// draws serve every ε, so estimates are non-increasing in ε.
pub fn vp_tail_mass(
    q: &MeanFieldPosterior,
    truth: &Truth,
    sigma0: f64,
    epsilons: &[f64],
    samples: usize,
    seed: u64,
    rule: &QuadratureRule,
) -> Result<Vec<TailMassEstimate>> {
    if samples < 100 {
        return Err(Error::InvalidArgument(format!("tail mass needs at least 100 draws, got {samples}")));
    }
    let d = hellinger_draws(q, truth, sigma0, samples, seed, rule)?;
    Ok(tail_mass_from_distances(&d, epsilons))
}

/// How f̂(x) = E_q f_θ(x) is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorMethod {
    MonteCarlo { samples: usize, seed: u64 },
    /// Uses independence of the factors: E f = E β₀ + Σⱼ E βⱼ · E ψ(uⱼ),
    /// with uⱼ Gaussian and E ψ by Gauss–Hermite.
    GaussHermite { nodes: usize },
}

impl Default for PredictorMethod {
    fn default() -> Self {
        PredictorMethod::GaussHermite { nodes: 64 }
    }
}

/// The VB predictor f̂, prepared for evaluation at many points.
#[derive(Debug, Clone)]
pub struct VbPredictor {
    dims: ModelDims,
    inner: PredictorInner,
}

#[derive(Debug, Clone)]
enum PredictorInner {
    Draws(Vec<Vec<f64>>),
    Hermite {
        means: Vec<f64>,
        variances: Vec<f64>,
        rule: NormalExpectation,
    },
}

impl VbPredictor {
    pub fn new(q: &MeanFieldPosterior, method: PredictorMethod) -> Result<Self> {
        let inner = match method {
            PredictorMethod::MonteCarlo { samples, seed } => {
                let set = sample_reparameterized(q, seed, samples)?;
                PredictorInner::Draws(set.draws.into_iter().map(|d| d.theta.into_flat()).collect())
            }
            PredictorMethod::GaussHermite { nodes } => {
                if nodes == 0 {
                    return Err(Error::InvalidArgument("Gauss-Hermite needs at least one node".into()));
                }
                PredictorInner::Hermite {
                    means: q.weights().iter().map(|w| w.m).collect(),
                    variances: q.weights().iter().map(|w| (2.0 * w.log_s).exp()).collect(),
                    rule: NormalExpectation::new(nodes),
                }
            }
        };
        Ok(Self { dims: q.dims(), inner })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dims = self.dims;
        match &self.inner {
            PredictorInner::Draws(draws) => {
                draws.iter().map(|t| eval_flat(dims, t, x)).sum::<f64>() / draws.len() as f64
            }
            PredictorInner::Hermite { means, variances, rule } => {
                let (k, p) = (dims.k, dims.p);
                let mut f = means[0];
                for j in 0..k {
                    if means[1 + j] == 0.0 {
                        continue;
                    }
                    let base = 1 + k + j * (p + 1);
                    let mut mu = means[base];
                    let mut var = variances[base];
                    for h in 0..p {
                        mu += means[base + 1 + h] * x[h];
                        var += variances[base + 1 + h] * x[h] * x[h];
                    }
                    f += means[1 + j] * rule.expect(mu, var.sqrt(), logistic);
                }
                f
            }
        }
    }
}

/// f̂(x) at a single point.
pub fn vb_predictor(q: &MeanFieldPosterior, x: &[f64], method: PredictorMethod) -> Result<f64> {
    if x.len() != q.dims().p {
        return Err(Error::Dimension(format!("x has length {} but p = {}", x.len(), q.dims().p)));
    }
    Ok(VbPredictor::new(q, method)?.eval(x))
}

/// ∫(f̂ − f₀)².
pub fn predictor_l2_error(
    q: &MeanFieldPosterior,
    f0: impl Fn(&[f64]) -> f64,
    rule: &QuadratureRule,
    method: PredictorMethod,
) -> Result<f64> {
    if rule.dim() != q.dims().p {
        return Err(Error::Dimension("rule and posterior have different p".into()));
    }
    let pred = VbPredictor::new(q, method)?;
    Ok(l2_sq_distance(|x| pred.eval(x), f0, rule))
}

/// Hellinger distance from the truth of the plug-in density N(f̂(x), σ̂²)
/// built from the VB point estimators.
pub fn vb_plugin_hellinger(
    q: &MeanFieldPosterior,
    truth: &Truth,
    sigma0: f64,
    rule: &QuadratureRule,
    method: PredictorMethod,
) -> Result<f64> {
    let sigma2 = posterior_point_summaries(q)
        .variance
        .sigma2()
        .ok_or_else(|| Error::InvalidArgument("posterior mean of sigma^2 is undefined".into()))?;
    let pred = VbPredictor::new(q, method)?;
    hellinger_true_vs_model(|x| pred.eval(x), sigma2.sqrt(), |x| truth.eval(x), sigma0, rule)
}

/// Hellinger distance from the truth of the averaged predictive density
/// l̂(y, x) = E_q N(y; f_θ(x), σ²), with the expectation over `draws`
/// posterior draws.
///
/// The y-integral of √(l̂ l₀) is taken by Gauss–Hermite under l₀, so the
/// integrand is √(l̂/l₀), which is smooth and grows slower than e^{z²/4}.
pub fn predictive_hellinger(
    q: &MeanFieldPosterior,
    truth: &Truth,
    sigma0: f64,
    rule: &QuadratureRule,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if truth.p() != q.dims().p || rule.dim() != q.dims().p {
        return Err(Error::Dimension("posterior, truth and rule must share p".into()));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    check_scales(1.0, sigma0)?;
    let set = sample_reparameterized(q, seed, draws)?;
    let dims = q.dims();
    let gh = NormalExpectation::new(64);
    let log_m = (draws as f64).ln();
    let bc: Vec<f64> = (0..rule.len())
        .into_par_iter()
        .map(|i| {
            let x = rule.point(i);
            let f0 = truth.eval(x);
            let comps: Vec<(f64, f64)> = set.draws.iter().map(|d| (eval_flat(dims, d.theta.as_flat(), x), d.sigma)).collect();
            gh.expect(f0, sigma0, |y| {
                let r0 = (y - f0) / sigma0;
                let logs: Vec<f64> = comps
                    .iter()
                    .map(|&(f, s)| {
                        let r = (y - f) / s;
                        (sigma0 / s).ln() - 0.5 * r * r + 0.5 * r0 * r0
                    })
                    .collect();
                (0.5 * (log_sum_exp(&logs) - log_m)).exp()
            })
        })
        .collect();
    let total: f64 = bc.iter().zip(rule.weights()).map(|(b, w)| b * w).sum();
    Ok((2.0 - 2.0 * total).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_teacher, NetworkParams};
    use crate::quadrature::{integrate, integrate_real_line, AdaptiveOptions};
    use crate::special::normal_pdf;
    use crate::variational::{InverseGammaFactor, ScaleFactor};
    use approx::assert_relative_eq;

    fn gl(p: usize) -> QuadratureRule {
        QuadratureRule::gauss_legendre(p, 48).unwrap()
    }

    #[test]
    fn l2_examples() {
        let r = gl(1);
        let f = |x: &[f64]| (3.0 * x[0]).sin();
        assert!(l2_sq_distance(f, f, &r) < 1e-14);
        assert_relative_eq!(l2_sq_distance(|_| 1.5, |_| 0.0, &r), 2.25, max_relative = 1e-14);
        let two = QuadratureRule::gauss_legendre(1, 2).unwrap();
        assert_relative_eq!(l2_sq_distance(|x| x[0], |_| 0.0, &two), 1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn kl_and_hellinger_examples() {
        let r = gl(2);
        let f = |x: &[f64]| x[0] - x[1];
        assert_eq!(kl_true_vs_model(f, 1.3, f, 1.3, &r).unwrap(), 0.0);
        assert_relative_eq!(
            kl_true_vs_model(f, 2.0, f, 1.0, &r).unwrap(),
            2f64.ln() - 0.5 + 0.125,
            max_relative = 1e-14
        );
        assert!(hellinger_true_vs_model(f, 1.3, f, 1.3, &r).unwrap() < 1e-14);
        assert_relative_eq!(
            hellinger_true_vs_model(f, 2.0, f, 1.0, &r).unwrap(),
            2.0 - 2.0 * 0.8f64.sqrt(),
            max_relative = 1e-13
        );
        assert!(kl_true_vs_model(f, 0.0, f, 1.0, &r).is_err());
        assert!(hellinger_true_vs_model(f, 1.0, f, -1.0, &r).is_err());
    }

    // Dense (y, x) integration of the defining integrals, p = 1.
    fn dense_oracles(f: impl Fn(f64) -> f64, sigma: f64, f0: impl Fn(f64) -> f64, sigma0: f64) -> (f64, f64) {
        let opts = AdaptiveOptions::default();
        let inner = |x: f64, kl: bool| {
            let (m, m0) = (f(x), f0(x));
            integrate_real_line(
                |y| {
                    let l0 = normal_pdf((y - m0) / sigma0) / sigma0;
                    let l = normal_pdf((y - m) / sigma) / sigma;
                    if kl {
                        if l0 == 0.0 {
                            0.0
                        } else {
                            l0 * (l0.ln() - l.ln())
                        }
                    } else {
                        (l0.sqrt() - l.sqrt()).powi(2)
                    }
                },
                m0,
                sigma0.max(sigma),
                opts,
            )
            .value
        };
        let kl = integrate(|x| inner(x, true), 0.0, 1.0, opts).value;
        let h = integrate(|x| inner(x, false), 0.0, 1.0, opts).value;
        (kl, h)
    }

    #[test]
    fn closed_forms_match_dense_quadrature() {
        let teacher = make_teacher(2, 1, 2.0, 3).unwrap();
        let f0 = |x: f64| teacher.eval(&[x]).unwrap();
        let f = |x: f64| 0.5 + (2.0 * x).cos();
        let r = gl(1);
        for (sigma, sigma0) in [(0.7, 1.0), (1.0, 1.0), (2.3, 0.9)] {
            let (kl_o, h_o) = dense_oracles(f, sigma, f0, sigma0);
            let kl = kl_true_vs_model(|x| f(x[0]), sigma, |x| f0(x[0]), sigma0, &r).unwrap();
            let h = hellinger_true_vs_model(|x| f(x[0]), sigma, |x| f0(x[0]), sigma0, &r).unwrap();
            assert!((kl - kl_o).abs() < 1e-8, "kl {kl} vs {kl_o}");
            assert!((h - h_o).abs() < 1e-8, "h {h} vs {h_o}");
        }
    }

    #[test]
    fn hellinger_depends_on_scale_ratio_only() {
        let r = gl(1);
        let f = |x: &[f64]| x[0];
        let a = hellinger_true_vs_model(f, 1.7, f, 1.1, &r).unwrap();
        let b = hellinger_true_vs_model(f, 1.7 * 3.0, f, 1.1 * 3.0, &r).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
        let far = hellinger_true_vs_model(|_| 1e3, 1.0, |_| 0.0, 1.0, &r).unwrap();
        assert!(far <= 2.0 && far > 1.999);
    }

    #[test]
    fn tabulated_truth_matches_closures() {
        let t = make_teacher(3, 2, 1.5, 9).unwrap();
        let m = make_teacher(3, 2, 1.5, 10).unwrap();
        let truth = Truth::Teacher { params: t.clone() };
        let r = gl(2);
        let grid = TruthOnRule::new(&truth, 0.8, &r).unwrap();
        let h = hellinger_true_vs_model(|x| m.eval(x).unwrap(), 1.1, |x| t.eval(x).unwrap(), 0.8, &r).unwrap();
        let kl = kl_true_vs_model(|x| m.eval(x).unwrap(), 1.1, |x| t.eval(x).unwrap(), 0.8, &r).unwrap();
        assert_relative_eq!(grid.hellinger(m.dims(), m.as_flat(), 1.1), h, max_relative = 1e-12);
        assert_relative_eq!(grid.kl(m.dims(), m.as_flat(), 1.1), kl, max_relative = 1e-12);
    }

    fn degenerate_at(t: &NetworkParams, sigma: f64) -> MeanFieldPosterior {
        let mut q = MeanFieldPosterior::centered_at(t, 0.0, 1, ScaleFactor::Known { sigma }).unwrap();
        let v: Vec<f64> = q.to_vector();
        let k = t.as_flat().len();
        let mut v2 = v.clone();
        for x in &mut v2[k..2 * k] {
            *x = -800.0;
        }
        q.set_vector(&v2).unwrap();
        q
    }

    #[test]
    fn tail_mass_boundaries() {
        let t = make_teacher(2, 1, 1.0, 1).unwrap();
        let truth = Truth::Teacher { params: t.clone() };
        let r = gl(1);
        let q = degenerate_at(&t, 1.0);
        let est = vp_tail_mass(&q, &truth, 1.0, &[0.01, 0.5], 100, 1, &r).unwrap();
        assert!(est.iter().all(|e| e.estimate == 0.0 && e.standard_error == 0.0));

        let q = MeanFieldPosterior::centered_at(&t, 1.0, 10, ScaleFactor::Known { sigma: 1.0 }).unwrap();
        let est = vp_tail_mass(&q, &truth, 1.0, &[0.0, 2.0, 2.5], 200, 1, &r).unwrap();
        assert_eq!(est[0].estimate, 1.0);
        assert_eq!(est[1].estimate, 0.0);
        assert_eq!(est[2].estimate, 0.0);
        assert!(vp_tail_mass(&q, &truth, 1.0, &[0.1], 99, 1, &r).is_err());
    }

    #[test]
    fn tail_mass_is_monotone_and_deterministic() {
        let t = make_teacher(2, 2, 1.0, 1).unwrap();
        let truth = Truth::Teacher { params: t.clone() };
        let r = QuadratureRule::gauss_legendre(2, 16).unwrap();
        let q = MeanFieldPosterior::centered_at(&t, 2.0, 10, ScaleFactor::InverseGamma(InverseGammaFactor::new(10.0, 10.0)))
            .unwrap();
        let eps = [0.001, 0.01, 0.02, 0.05, 0.1, 0.2];
        let a = vp_tail_mass(&q, &truth, 1.0, &eps, 500, 4, &r).unwrap();
        let b = vp_tail_mass(&q, &truth, 1.0, &eps, 500, 4, &r).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[0].estimate >= w[1].estimate);
        }
        assert!(a[0].estimate > a[5].estimate);
    }

    #[test]
    fn predictor_examples() {
        let t = make_teacher(3, 2, 1.0, 5).unwrap();
        let x = [0.3, 0.8];
        let q = degenerate_at(&t, 1.0);
        for method in [PredictorMethod::default(), PredictorMethod::MonteCarlo { samples: 3, seed: 1 }] {
            assert_relative_eq!(vb_predictor(&q, &x, method).unwrap(), t.eval(&x).unwrap(), max_relative = 1e-12);
        }
        let truth = Truth::Teacher { params: t.clone() };
        assert!(predictor_l2_error(&q, |x| truth.eval(x), &gl(2), PredictorMethod::default()).unwrap() < 1e-20);

        // Zero output weights: f̂ = E β₀ whatever the hidden factors.
        let mut v = MeanFieldPosterior::centered_at(&t, 3.0, 2, ScaleFactor::Known { sigma: 1.0 }).unwrap().to_vector();
        for j in 1..=3 {
            v[j] = 0.0;
        }
        let q0 = degenerate_at(&t, 1.0).with_vector(&v).unwrap();
        assert_relative_eq!(vb_predictor(&q0, &x, PredictorMethod::default()).unwrap(), v[0], max_relative = 1e-15);
    }

    #[test]
    fn hermite_matches_monte_carlo() {
        let t = make_teacher(3, 2, 1.5, 6).unwrap();
        let q = MeanFieldPosterior::centered_at(&t, 2.0, 4, ScaleFactor::Known { sigma: 1.0 }).unwrap();
        let x = [0.2, 0.6];
        let gh = vb_predictor(&q, &x, PredictorMethod::default()).unwrap();
        let set = sample_reparameterized(&q, 3, 1_000_000).unwrap();
        let vals: Vec<f64> = set.draws.iter().map(|d| d.theta.eval(&x).unwrap()).collect();
        let (m, se) = crate::stats::mean_and_se(&vals);
        assert!((gh - m).abs() < 3.0 * se, "GH {gh} vs MC {m} ± {se}");
    }

    #[test]
    fn l2_error_decreases_toward_truth() {
        // Close enough to the truth for the error to be nearly quadratic in λ.
        let t = make_teacher(3, 1, 1.5, 7).unwrap();
        let start = NetworkParams::from_flat(
            t.dims(),
            t.as_flat().iter().zip(make_teacher(3, 1, 0.3, 8).unwrap().as_flat()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let truth = Truth::Teacher { params: t.clone() };
        let r = gl(1);
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let lam = i as f64 / 10.0;
            let mix: Vec<f64> = start.as_flat().iter().zip(t.as_flat()).map(|(a, b)| (1.0 - lam) * a + lam * b).collect();
            let mixed = NetworkParams::from_flat(t.dims(), mix).unwrap();
            let q = degenerate_at(&mixed, 1.0);
            let e = predictor_l2_error(&q, |x| truth.eval(x), &r, PredictorMethod::default()).unwrap();
            assert!(e <= last + 1e-15, "λ = {lam}: {e} > {last}");
            last = e;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn plugin_hellinger() {
        let t = make_teacher(2, 1, 1.0, 1).unwrap();
        let truth = Truth::Teacher { params: t.clone() };
        let q = degenerate_at(&t, 1.0);
        let h = vb_plugin_hellinger(&q, &truth, 1.0, &gl(1), PredictorMethod::default()).unwrap();
        assert!(h < 1e-14);
        let q = MeanFieldPosterior::new(
            q.dims(),
            q.weights().to_vec(),
            ScaleFactor::InverseGamma(InverseGammaFactor::new(0.5, 1.0)),
        )
        .unwrap();
        assert!(vb_plugin_hellinger(&q, &truth, 1.0, &gl(1), PredictorMethod::default()).is_err());
    }

    #[test]
    fn predictive_hellinger_reduces_to_plugin_for_point_mass() {
        let teacher = make_teacher(2, 1, 1.0, 4).unwrap();
        let truth = Truth::Teacher { params: teacher.clone() };
        let other = make_teacher(2, 1, 1.0, 5).unwrap();
        let rule = gl(1);
        let q = MeanFieldPosterior::centered_at(&other, 0.0, 100, ScaleFactor::Known { sigma: 0.8 }).unwrap();
        let d = predictive_hellinger(&q, &truth, 1.0, &rule, 3, 1).unwrap();
        let exact = hellinger_true_vs_model(|x| other.eval(x).unwrap(), 0.8, |x| truth.eval(x), 1.0, &rule).unwrap();
        assert_relative_eq!(d, exact, max_relative = 1e-10);
        let at_truth = MeanFieldPosterior::centered_at(&teacher, 0.0, 100, ScaleFactor::Known { sigma: 1.0 }).unwrap();
        assert!(predictive_hellinger(&at_truth, &truth, 1.0, &rule, 2, 1).unwrap() < 1e-12);
    }

    #[test]
    fn predictive_hellinger_matches_adaptive_oracle() {
        // A spread-out posterior: the predictive density is a genuine mixture.
        let teacher = make_teacher(1, 1, 1.0, 4).unwrap();
        let truth = Truth::Teacher { params: teacher.clone() };
        let q = MeanFieldPosterior::centered_at(&teacher, 3.0, 10, ScaleFactor::InverseGamma(InverseGammaFactor::new(6.0, 8.0))).unwrap();
        let rule = QuadratureRule::gauss_legendre(1, 16).unwrap();
        let d = predictive_hellinger(&q, &truth, 1.0, &rule, 40, 9).unwrap();
        let set = sample_reparameterized(&q, 9, 40).unwrap();
        let opts = AdaptiveOptions { abs_tol: 1e-13, rel_tol: 1e-12, ..Default::default() };
        let bc: f64 = rule
            .points()
            .zip(rule.weights())
            .map(|(x, w)| {
                let f0 = truth.eval(x);
                let lhat = |y: f64| {
                    set.draws
                        .iter()
                        .map(|dr| normal_pdf((y - dr.theta.eval(x).unwrap()) / dr.sigma) / dr.sigma)
                        .sum::<f64>()
                        / 40.0
                };
                w * integrate_real_line(|y| (lhat(y) * normal_pdf(y - f0)).sqrt(), f0, 2.0, opts).value
            })
            .sum();
        assert!(d > 0.01);
        assert!((d - (2.0 - 2.0 * bc)).abs() < 1e-6, "{d} vs {}", 2.0 - 2.0 * bc);
    }
}
