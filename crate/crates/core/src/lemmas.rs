//! Numerical checks of the appendix lemmas.
//!
//! Identities are compared against quadrature at tight relative tolerance,
//! inequalities are scanned over random or gridded instances, and
//! asymptotic statements are checked as least-squares log-log slopes over a
//! grid of sample sizes.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{make_teacher, ModelDims, NetworkParams, Truth};
use crate::priors::{in_sieve, log_inverse_gamma_density, log_prior_mass_outside_sieve, sample_prior, PriorSpec, SieveSpec};
use crate::quadrature::{integrate_real_line, AdaptiveOptions, QuadratureRule};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::special::{digamma, mills_ratio_cf, normal_pdf, normal_sf, softplus};
use crate::stats::linear_fit;

/// What kind of statement a report checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Identity,
    Inequality,
    Decay,
}

/// Outcome of one lemma check. `pass` holds exactly when
/// `max_violation <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub kind: CheckKind,
    pub instances_checked: usize,
    /// Largest amount by which an instance misses the statement; negative
    /// when every instance holds with room to spare.
    pub max_violation: f64,
    pub tolerance: f64,
    /// Worst instance, in words.
    pub details: String,
    /// Measured log-log slope for decay checks.
    pub slope: Option<f64>,
    pub pass: bool,
}

impl LemmaReport {
    fn new(
        lemma_id: &str,
        kind: CheckKind,
        instances_checked: usize,
        max_violation: f64,
        tolerance: f64,
        details: String,
        slope: Option<f64>,
    ) -> Self {
        // JSON has no infinities; ±f64::MAX keeps the report round-trippable.
        let max_violation = if max_violation.is_nan() { f64::MAX } else { max_violation.clamp(-f64::MAX, f64::MAX) };
        Self {
            lemma_id: lemma_id.to_string(),
            kind,
            instances_checked,
            max_violation,
            tolerance,
            details,
            slope,
            pass: max_violation <= tolerance,
        }
    }
}

/// Running worst case over instances.
struct Worst {
    violation: f64,
    details: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            violation: f64::NEG_INFINITY,
            details: String::new(),
        }
    }

    fn update(&mut self, violation: f64, details: impl FnOnce() -> String) {
        // NaN counts as the worst possible outcome.
        if violation.is_nan() || violation > self.violation {
            self.violation = if violation.is_nan() { f64::INFINITY } else { violation };
            self.details = details();
        }
    }
}

fn tight() -> AdaptiveOptions {
    AdaptiveOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        ..Default::default()
    }
}

/// Least-squares slope of log y against log n; needs at least four points.
fn decay_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 4 || points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    linear_fit(&xs, &ys).map(|f| f.slope)
}

/// E_p|log(p/q)| ≤ KL(p‖q) + 2/e on random pairs of 1-D Gaussians, both
/// sides by quadrature.
pub fn verify_mod_kl(trials: usize, seed: u64) -> Result<LemmaReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut rng = stream_rng(seed, Stream::Lemma, &[1]);
    let pairs: Vec<[f64; 4]> = (0..trials)
        .map(|i| {
            if i == 0 {
                [0.0, 1.0, 0.0, 1.0]
            } else {
                [
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.2..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.2..3.0),
                ]
            }
        })
        .collect();
    let results: Vec<(f64, [f64; 4], f64, f64)> = pairs
        .par_iter()
        .map(|&[m1, s1, m2, s2]| {
            let log_ratio = |y: f64| {
                let (z1, z2) = ((y - m1) / s1, (y - m2) / s2);
                (s2 / s1).ln() - 0.5 * z1 * z1 + 0.5 * z2 * z2
            };
            let p = |y: f64| normal_pdf((y - m1) / s1) / s1;
            let opts = tight();
            let lhs = integrate_real_line(|y| p(y) * log_ratio(y).abs(), m1, s1, opts).value;
            let kl = integrate_real_line(|y| p(y) * log_ratio(y), m1, s1, opts).value;
            let rhs = kl + 2.0 / std::f64::consts::E;
            (lhs - rhs, [m1, s1, m2, s2], lhs, rhs)
        })
        .collect();
    let mut worst = Worst::new();
    for (v, [m1, s1, m2, s2], lhs, rhs) in results {
        worst.update(v, || format!("p = N({m1:.3}, {s1:.3}²), q = N({m2:.3}, {s2:.3}²): LHS {lhs:.6} vs RHS {rhs:.6}"));
    }
    Ok(LemmaReport::new("mod-kl", CheckKind::Inequality, trials, worst.violation, 1e-8, worst.details, None))
}

/// Right-hand side 8(k² + (p+1)²(Σ|θ₀ᵢ|)²)ε² of the perturbation bound, with
/// the sum over all coordinates of θ₀.
pub fn theta_bound_rhs(theta0: &NetworkParams, eps: f64) -> f64 {
    let d = theta0.dims();
    let s = theta0.sum_abs();
    8.0 * ((d.k * d.k) as f64 + ((d.p + 1) * (d.p + 1)) as f64 * s * s) * eps * eps
}

/// ∫(f_θ − f_θ₀)² ≤ 8(k² + (p+1)²(Σ|θ₀ᵢ|)²)ε² whenever every coordinate
/// moves by at most ε and (p+1)ε < 1.
///
/// Each trial draws a teacher with `dims`, an ε from `eps_grid` and a
/// perturbation; odd trials use a random corner of the ε-box, even trials a
/// uniform point inside it.
pub fn verify_theta_bound(trials: usize, dims: ModelDims, eps_grid: &[f64], seed: u64) -> Result<LemmaReport> {
    let eps: Vec<f64> = eps_grid.iter().copied().filter(|&e| e >= 0.0 && (dims.p + 1) as f64 * e < 1.0).collect();
    if eps.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument("need trials and at least one ε with (p+1)ε < 1".into()));
    }
    let rule = QuadratureRule::gauss_legendre(dims.p.min(3), if dims.p <= 2 { 32 } else { 12 })?;
    if dims.p > 3 {
        return Err(Error::InvalidArgument("theta bound check supports p <= 3".into()));
    }
    let results: Vec<(f64, String)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, Stream::Lemma, &[2, t as u64]);
            let teacher = make_teacher(dims.k, dims.p, rng.random_range(0.0..3.0), rng.random()).expect("valid dims");
            let e = eps[t % eps.len()];
            let corner = t % 2 == 1;
            let moved: Vec<f64> = teacher
                .as_flat()
                .iter()
                .map(|&v| {
                    let d = if corner {
                        if rng.random::<bool>() {
                            e
                        } else {
                            -e
                        }
                    } else {
                        rng.random_range(-1.0..=1.0) * e
                    };
                    v + d
                })
                .collect();
            let lhs = rule.integrate(|x| {
                let d = crate::model::eval_flat(dims, &moved, x) - crate::model::eval_flat(dims, teacher.as_flat(), x);
                d * d
            });
            let rhs = theta_bound_rhs(&teacher, e);
            // Relative slack, so that instances of different size compare.
            let v = if rhs > 0.0 { lhs / rhs - 1.0 } else { lhs - rhs };
            (v, format!("ε = {e}, Σ|θ₀| = {:.3}: LHS {lhs:.3e} vs RHS {rhs:.3e}", teacher.sum_abs()))
        })
        .collect();
    let mut worst = Worst::new();
    for (v, d) in results {
        worst.update(v, || d);
    }
    Ok(LemmaReport::new("theta-bound", CheckKind::Inequality, trials, worst.violation, 0.0, worst.details, None))
}

/// h₁(σ) = ½log(σ²/σ₀²) − ½(1 − σ₀²/σ²).
pub fn h1(sigma: f64, sigma0: f64) -> f64 {
    let x2 = (sigma / sigma0).powi(2);
    0.5 * x2.ln() - 0.5 * (1.0 - 1.0 / x2)
}

/// Grid scan of both parts of the σ and ρ band lemmas:
/// h₁ ≤ δ² and 1/(2σ²) ≤ 1/(2σ₀²(1−δ)²) on |σ/σ₀ − 1| < δ, and the same
/// with σ = log(1 + e^ρ) on |ρ − ρ₀| < δσ₀.
///
/// Returns four reports: `sig-bound.h1`, `sig-bound.h2`, `rho-bound.h1`,
/// `rho-bound.h2`.
pub fn verify_sig_rho_bounds(delta_grid: &[f64]) -> Result<Vec<LemmaReport>> {
    if delta_grid.is_empty() || delta_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(Error::InvalidArgument("δ must lie in (0, 1)".into()));
    }
    const STEPS: usize = 2000;
    // Interior points of (−1, 1), endpoints excluded.
    let offsets: Vec<f64> = (1..STEPS).map(|i| -1.0 + 2.0 * i as f64 / STEPS as f64).collect();
    let (mut s1, mut s2, mut r1, mut r2) = (Worst::new(), Worst::new(), Worst::new(), Worst::new());
    let mut count_sig = 0;
    let mut count_rho = 0;
    for &delta in delta_grid {
        for sigma0 in [0.3, 1.0, 2.5] {
            for &o in &offsets {
                let sigma = sigma0 * (1.0 + delta * o);
                count_sig += 1;
                let a = h1(sigma, sigma0);
                s1.update(a - delta * delta, || {
                    format!("δ = {delta}, σ/σ₀ = {:.4}: h₁ = {a:.6} > δ² = {:.6}", sigma / sigma0, delta * delta)
                });
                let b = 0.5 / (sigma * sigma);
                let bound = 0.5 / (sigma0 * sigma0 * (1.0 - delta).powi(2));
                s2.update(b - bound, || format!("δ = {delta}, σ = {sigma:.4}, σ₀ = {sigma0}"));
            }
        }
        for rho0 in [-2.0, 0.0, (std::f64::consts::E - 1.0).ln(), 1.5, 4.0] {
            let sigma0 = softplus(rho0);
            for &o in &offsets {
                let rho = rho0 + delta * sigma0 * o;
                let sigma = softplus(rho);
                count_rho += 1;
                let a = h1(sigma, sigma0);
                r1.update(a - delta * delta, || {
                    format!(
                        "δ = {delta}, ρ₀ = {rho0:.3}, ρ = {rho:.4}, σ_ρ/σ₀ = {:.4}: h₁ = {a:.6} > δ² = {:.6}",
                        sigma / sigma0,
                        delta * delta
                    )
                });
                let b = 0.5 / (sigma * sigma);
                let bound = 0.5 / (sigma0 * sigma0 * (1.0 - delta).powi(2));
                r2.update(b - bound, || format!("δ = {delta}, ρ₀ = {rho0:.3}, ρ = {rho:.4}"));
            }
        }
    }
    Ok(vec![
        LemmaReport::new("sig-bound.h1", CheckKind::Inequality, count_sig, s1.violation, 0.0, s1.details, None),
        LemmaReport::new("sig-bound.h2", CheckKind::Inequality, count_sig, s2.violation, 0.0, s2.details, None),
        LemmaReport::new("rho-bound.h1", CheckKind::Inequality, count_rho, r1.violation, 0.0, r1.details, None),
        LemmaReport::new("rho-bound.h2", CheckKind::Inequality, count_rho, r2.violation, 0.0, r2.details, None),
    ])
}

/// Under q = IG(n, nσ₀²): E h = ½(log n − ψ(n)) and E[1/(2σ²)] = 1/(2σ₀²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IgExpectations {
    pub n: usize,
    pub h_quadrature: f64,
    pub h_closed_form: f64,
    pub inv_quadrature: f64,
    pub inv_closed_form: f64,
}

/// Both expectations by quadrature over log σ², with their closed forms.
pub fn ig_expectations(n: usize, sigma0: f64) -> IgExpectations {
    let nf = n as f64;
    let (shape, rate) = (nf, nf * sigma0 * sigma0);
    let opts = tight();
    // Density of z = log σ².
    let dens = |z: f64| (log_inverse_gamma_density(z.exp(), shape, rate) + z).exp();
    let center = (rate / (shape + 1.0)).ln();
    let scale = 1.0 / nf.sqrt();
    let h_quadrature = integrate_real_line(
        |z| {
            let d = dens(z);
            if d == 0.0 {
                return 0.0;
            }
            // log x − 1 + 1/x with x = σ²/σ₀², written to keep precision near x = 1.
            let t = z - 2.0 * sigma0.ln();
            d * 0.5 * (t + (-t).exp_m1())
        },
        center,
        scale,
        opts,
    )
    .value;
    let inv_quadrature = integrate_real_line(
        |z| {
            let d = dens(z);
            if d == 0.0 {
                0.0
            } else {
                d * 0.5 * (-z).exp()
            }
        },
        center,
        scale,
        opts,
    )
    .value;
    IgExpectations {
        n,
        h_quadrature,
        h_closed_form: 0.5 * (nf.ln() - digamma(nf)),
        inv_quadrature,
        inv_closed_form: 0.5 / (sigma0 * sigma0),
    }
}

/// Identity checks at 1e-8 relative (`h-sig-bound`, `h-siginv-bound`) and
/// the decay of E h with slope −1 ± 0.05 (`h-sig-bound.decay`).
pub fn verify_ig_expectation_identities(n_grid: &[usize], sigma0: f64) -> Result<Vec<LemmaReport>> {
    if n_grid.iter().any(|&n| n < 2) || !(sigma0 > 0.0) || n_grid.len() < 4 {
        return Err(Error::InvalidArgument("need at least four n >= 2 and sigma0 > 0".into()));
    }
    let rows: Vec<IgExpectations> = n_grid.par_iter().map(|&n| ig_expectations(n, sigma0)).collect();
    let (mut w_h, mut w_inv) = (Worst::new(), Worst::new());
    for r in &rows {
        let e = (r.h_quadrature / r.h_closed_form - 1.0).abs();
        w_h.update(e, || format!("n = {}: quadrature {:.12e} vs ½(log n − ψ(n)) = {:.12e}", r.n, r.h_quadrature, r.h_closed_form));
        let e = (r.inv_quadrature / r.inv_closed_form - 1.0).abs();
        w_inv.update(e, || format!("n = {}: quadrature {:.12e} vs 1/(2σ₀²) = {:.12e}", r.n, r.inv_quadrature, r.inv_closed_form));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.h_quadrature)).collect();
    let slope = decay_slope(&pts);
    let last = rows.last().expect("non-empty grid");
    let ratio = last.h_closed_form * 4.0 * last.n as f64;
    let slope_v = slope.map_or(f64::INFINITY, |s| (s + 1.0).abs());
    Ok(vec![
        LemmaReport::new("h-sig-bound", CheckKind::Identity, rows.len(), w_h.violation, 1e-8, w_h.details, None),
        LemmaReport::new("h-siginv-bound", CheckKind::Identity, rows.len(), w_inv.violation, 1e-8, w_inv.details, None),
        LemmaReport::new(
            "h-sig-bound.decay",
            CheckKind::Decay,
            rows.len(),
            slope_v,
            0.05,
            format!("slope {:.4}; at n = {} the ratio to 1/(4n) is {ratio:.6}", slope.unwrap_or(f64::NAN), last.n),
            slope,
        ),
    ])
}

/// ∫h(ρ)q(ρ)dρ and ∫q/(2σ_ρ²) for q = N(ρ₀, ν²/n), by adaptive quadrature.
pub fn rho_expectations(n: usize, rho0: f64, nu: f64, opts: AdaptiveOptions) -> (f64, f64) {
    let sigma0 = softplus(rho0);
    let sd = nu / (n as f64).sqrt();
    let q = |r: f64| normal_pdf((r - rho0) / sd) / sd;
    let first = integrate_real_line(|r| q(r) * h1(softplus(r), sigma0), rho0, sd, opts).value;
    let second = integrate_real_line(|r| q(r) * 0.5 / softplus(r).powi(2), rho0, sd, opts).value;
    (first, second)
}

/// Decay of both ρ integrals for each ρ₀: slopes ≤ −0.9, plus refinement
/// stability of the first integral. One report per ρ₀ and integral.
pub fn verify_rho_expectation_identities(n_grid: &[usize], rho0s: &[f64], nu: f64) -> Result<Vec<LemmaReport>> {
    if n_grid.len() < 4 || n_grid.windows(2).any(|w| w[0] >= w[1]) || !(nu > 0.0) {
        return Err(Error::InvalidArgument("need an increasing grid of at least four n and nu > 0".into()));
    }
    let opts = tight();
    let fine = AdaptiveOptions {
        initial_intervals: 2 * opts.initial_intervals,
        ..opts
    };
    let mut out = Vec::new();
    for &rho0 in rho0s {
        let target = 0.5 / softplus(rho0).powi(2);
        let rows: Vec<(usize, f64, f64, f64)> = n_grid
            .par_iter()
            .map(|&n| {
                let (a, b) = rho_expectations(n, rho0, nu, opts);
                let (a2, _) = rho_expectations(n, rho0, nu, fine);
                (n, a, (b - target).abs(), (a2 / a - 1.0).abs())
            })
            .collect();
        let s1 = decay_slope(&rows.iter().map(|r| (r.0 as f64, r.1)).collect::<Vec<_>>());
        let s2 = decay_slope(&rows.iter().map(|r| (r.0 as f64, r.2)).collect::<Vec<_>>());
        let refine = rows.iter().map(|r| r.3).fold(0.0, f64::max);
        let v1 = (s1.map_or(f64::INFINITY, |s| s + 0.9)).max(refine - 1e-6);
        let last = rows.last().expect("non-empty");
        out.push(LemmaReport::new(
            "h-rho-bound",
            CheckKind::Decay,
            rows.len(),
            v1,
            0.0,
            format!(
                "ρ₀ = {rho0:.4}: slope {:.4}, ∫hq = {:.3e} at n = {}, refinement change {refine:.1e}",
                s1.unwrap_or(f64::NAN),
                last.1,
                last.0
            ),
            s1,
        ));
        out.push(LemmaReport::new(
            "h-rhoinv-bound",
            CheckKind::Decay,
            rows.len(),
            s2.map_or(f64::INFINITY, |s| s + 0.9),
            0.0,
            format!(
                "ρ₀ = {rho0:.4}: slope {:.4}, |∫q/(2σ²) − 1/(2σ₀²)| = {:.3e} at n = {}",
                s2.unwrap_or(f64::NAN),
                last.2,
                last.0
            ),
            s2,
        ));
    }
    Ok(out)
}

/// Mill's ratio R(a) = (1 − Φ(a))·a/φ(a): |R − 1| < 1/a² and decreasing
/// in a (`mills`), and the continued fraction for (1 − Φ)/φ against erfc at
/// 1e-8 relative (`mills.identity`).
pub fn verify_mills_ratio(a_grid: &[f64]) -> Result<Vec<LemmaReport>> {
    if a_grid.is_empty() || a_grid.iter().any(|a| !(*a > 0.0)) || a_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("a grid must be positive and increasing".into()));
    }
    let mut band = Worst::new();
    let mut ident = Worst::new();
    let mut prev = f64::INFINITY;
    for &a in a_grid {
        // Past a ≈ 37 the tail underflows and only the continued fraction is left.
        let sf = normal_sf(a);
        let direct = if sf > 0.0 { sf / normal_pdf(a) } else { mills_ratio_cf(a) };
        let err = (direct * a - 1.0).abs();
        band.update(err - 1.0 / (a * a), || format!("a = {a}: |R − 1| = {err:.6e}, 1/a² = {:.6e}", 1.0 / (a * a)));
        band.update(err - prev, || format!("a = {a}: error {err:.6e} not below previous {prev:.6e}"));
        prev = err;
        // erfc stays accurate while the tail is representable.
        if a < 30.0 {
            let cf = mills_ratio_cf(a);
            let e = (cf / direct - 1.0).abs();
            ident.update(e, || format!("a = {a}: continued fraction {cf:.15e} vs erfc {direct:.15e}"));
        }
    }
    Ok(vec![
        LemmaReport::new("mills", CheckKind::Inequality, a_grid.len(), band.violation, 0.0, band.details, None),
        LemmaReport::new("mills.identity", CheckKind::Identity, a_grid.len(), ident.violation, 1e-8, ident.details, None),
    ])
}

/// Monte Carlo estimate of E_q ∫(f_θ − f₀)² with q = N(θ₀, τ²/n) per
/// coordinate, using the given standard-normal draws (common across n).
fn f_bound_expectation(theta0: &NetworkParams, f0: &[f64], rule: &QuadratureRule, n: usize, tau: f64, noise: &[Vec<f64>]) -> f64 {
    let dims = theta0.dims();
    let sd = tau / (n as f64).sqrt();
    let vals: Vec<f64> = noise
        .par_iter()
        .map(|eps| {
            let theta: Vec<f64> = theta0.as_flat().iter().zip(eps).map(|(t, e)| t + sd * e).collect();
            rule.points()
                .zip(rule.weights())
                .zip(f0)
                .map(|((x, w), f0)| {
                    let d = crate::model::eval_flat(dims, &theta, x) - f0;
                    w * d * d
                })
                .sum::<f64>()
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Settings for [`verify_f_bound_decay`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FBoundConfig {
    pub teacher_k: usize,
    pub p: usize,
    pub teacher_scale: f64,
    pub teacher_seed: u64,
    pub sieve: SieveSpec,
    pub n_grid: Vec<usize>,
    pub tau: f64,
    pub samples: usize,
}

impl Default for FBoundConfig {
    fn default() -> Self {
        Self {
            teacher_k: 2,
            p: 2,
            teacher_scale: 1.0,
            teacher_seed: 7,
            // Small a keeps kₙ at the teacher width over the grid, so the
            // O(K(n)/n) leading term decays like 1/n.
            sieve: SieveSpec { a: 0.05, b: 0.5 },
            n_grid: vec![100, 316, 1000, 3162, 10_000],
            tau: 1.0,
            samples: 2000,
        }
    }
}

/// E_q ∫(f_θ − f₀)² decays with log-log slope ≤ −0.9 when q is centered at
/// the teacher (padded to kₙ units) with variance τ²/n, and doubling τ
/// multiplies it by 3.5–4.5 at the largest n.
pub fn verify_f_bound_decay(cfg: &FBoundConfig, seed: u64) -> Result<LemmaReport> {
    if cfg.n_grid.len() < 4 || cfg.samples == 0 {
        return Err(Error::InvalidArgument("need at least four n values and one sample".into()));
    }
    let teacher = make_teacher(cfg.teacher_k, cfg.p, cfg.teacher_scale, cfg.teacher_seed)?;
    let truth = Truth::Teacher { params: teacher.clone() };
    let rule = QuadratureRule::default_for(cfg.p)?;
    let f0: Vec<f64> = rule.points().map(|x| truth.eval(x)).collect();
    let mut pts = Vec::new();
    let mut widths = Vec::new();
    let mut at_last = (0.0, 0.0);
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let k_n = cfg.sieve.hidden_units(n).max(cfg.teacher_k);
        widths.push(k_n);
        let theta0 = teacher.padded(k_n)?;
        let mut rng = stream_rng(seed, Stream::Lemma, &[3, k_n as u64]);
        let noise: Vec<Vec<f64>> = (0..cfg.samples)
            .map(|_| (0..theta0.as_flat().len()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let e = f_bound_expectation(&theta0, &f0, &rule, n, cfg.tau, &noise);
        pts.push((n as f64, e));
        if i + 1 == cfg.n_grid.len() {
            at_last = (e, f_bound_expectation(&theta0, &f0, &rule, n, 2.0 * cfg.tau, &noise));
        }
    }
    let slope = decay_slope(&pts);
    let ratio = at_last.1 / at_last.0;
    let ratio_v = if (3.5..=4.5).contains(&ratio) { f64::NEG_INFINITY } else { f64::INFINITY };
    let v = slope.map_or(f64::INFINITY, |s| s + 0.9).max(ratio_v);
    Ok(LemmaReport::new(
        "f-bound",
        CheckKind::Decay,
        pts.len(),
        v,
        0.0,
        format!(
            "slope {:.4} over n = {:?} (kₙ = {widths:?}); τ-doubling ratio {ratio:.4}",
            slope.unwrap_or(f64::NAN),
            cfg.n_grid
        ),
        slope,
    ))
}

/// One prior/sieve pair for [`verify_prior_tail_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTailCase {
    pub prior: PriorSpec,
    pub sieve: SieveSpec,
    pub p: usize,
    /// Grid for the analytic bound.
    pub n_grid: Vec<usize>,
    /// Small n where the outside-sieve event is frequent enough to count.
    pub mc_n: Vec<usize>,
    pub kappa: f64,
}

/// Growth exponent r of the claimed decay e^{−κnʳ}: b for the inverse-gamma
/// variant, whose σ² tail is controlled by Dₙ = exp(nᵇ), and 1 otherwise.
pub fn tail_rate_exponent(prior: &PriorSpec, sieve: &SieveSpec) -> f64 {
    match prior {
        PriorSpec::InverseGammaSigma { .. } => sieve.b,
        _ => 1.0,
    }
}

/// Prior mass outside the sieve: (i) Monte Carlo frequency ≤ union bound
/// + 3 SE at small n, (ii) the log-bound strictly decreases on the grid and
/// falls below −κnʳ from some grid point on.
pub fn verify_prior_tail_bound(case: &PriorTailCase, samples: usize, seed: u64) -> Result<LemmaReport> {
    case.sieve.validate_for(&case.prior)?;
    if case.n_grid.len() < 2 || samples == 0 {
        return Err(Error::InvalidArgument("need at least two grid points and one sample".into()));
    }
    let mut worst = Worst::new();
    let mut instances = 0;
    for &n in &case.mc_n {
        let bound = log_prior_mass_outside_sieve(&case.prior, &case.sieve, n, case.p)?.exp();
        let dims = ModelDims::new(case.p, case.sieve.hidden_units(n))?;
        let outside = (0..samples)
            .into_par_iter()
            .filter(|&i| {
                let s = derive_seed(seed, &[Stream::Lemma as u64, 4, n as u64, i as u64]);
                let (theta, scale) = sample_prior(&case.prior, n, dims, s).expect("validated prior");
                !in_sieve(&case.prior, &case.sieve, n, &theta, scale)
            })
            .count();
        let frac = outside as f64 / samples as f64;
        let se = (frac * (1.0 - frac) / samples as f64).sqrt();
        instances += 1;
        worst.update(frac - bound - 3.0 * se, || {
            format!("n = {n}: outside fraction {frac:.5} ± {se:.5} vs bound {bound:.5}")
        });
    }
    let r = tail_rate_exponent(&case.prior, &case.sieve);
    let logs: Vec<f64> = case
        .n_grid
        .iter()
        .map(|&n| log_prior_mass_outside_sieve(&case.prior, &case.sieve, n, case.p))
        .collect::<Result<_>>()?;
    for (i, w) in logs.windows(2).enumerate() {
        instances += 1;
        // Strict decrease: a non-negative step is a violation.
        let step = w[1] - w[0];
        worst.update(if step < 0.0 { f64::NEG_INFINITY } else { step.max(f64::MIN_POSITIVE) }, || {
            format!("log-bound rises from {:.4} to {:.4} at n = {}", w[0], w[1], case.n_grid[i + 1])
        });
    }
    let below: Vec<bool> = case
        .n_grid
        .iter()
        .zip(&logs)
        .map(|(&n, &l)| l < -case.kappa * (n as f64).powf(r))
        .collect();
    let crossover = (0..below.len()).find(|&i| below[i..].iter().all(|&b| b));
    instances += 1;
    match crossover {
        Some(i) => worst.update(f64::NEG_INFINITY, || {
            format!("log-bound below −κn^{r} from n = {} on", case.n_grid[i])
        }),
        None => worst.update(f64::INFINITY, || format!("log-bound never settles below −κn^{r} on the grid")),
    }
    let crossing = crossover.map_or("none".to_string(), |i| case.n_grid[i].to_string());
    let details = if worst.violation > 0.0 {
        worst.details
    } else {
        format!("{}; crossover n = {crossing}", worst.details)
    };
    Ok(LemmaReport::new(
        &format!("prior-tail.{}", case.prior.name()),
        CheckKind::Inequality,
        instances,
        worst.violation,
        0.0,
        details,
        None,
    ))
}

/// Inputs of the whole suite. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSuiteConfig {
    pub mod_kl_trials: usize,
    pub theta_trials: usize,
    pub theta_eps_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub ig_n_grid: Vec<usize>,
    pub ig_sigma0: f64,
    pub rho_n_grid: Vec<usize>,
    pub rho0s: Vec<f64>,
    pub rho_nu: f64,
    pub mills_a_grid: Vec<f64>,
    pub f_bound: FBoundConfig,
    pub prior_tail: Vec<PriorTailCase>,
    pub prior_tail_samples: usize,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        let c = (std::f64::consts::E - 1.0).ln();
        let small = SieveSpec { a: 0.25, b: 0.5 };
        let rho_sieve = SieveSpec { a: 0.25, b: 0.8 };
        let grid = vec![16, 50, 200, 500, 1000, 2000, 5000];
        let tail = |prior: PriorSpec, sieve: SieveSpec, mc_n: Vec<usize>| PriorTailCase {
            // The inverse-gamma σ² tail is about −α·nᵇ, so κ has to sit below α.
            kappa: if matches!(prior, PriorSpec::InverseGammaSigma { .. }) { 0.5 } else { 1.0 },
            prior,
            sieve,
            p: 2,
            n_grid: grid.clone(),
            mc_n,
        };
        Self {
            mod_kl_trials: 1000,
            theta_trials: 500,
            theta_eps_grid: vec![0.0, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.3],
            delta_grid: (1..10).map(|i| i as f64 / 10.0).collect(),
            ig_n_grid: vec![10, 100, 1000, 10_000],
            ig_sigma0: 1.5,
            rho_n_grid: vec![100, 1000, 10_000, 100_000, 1_000_000],
            rho0s: vec![c - 1.0, c, c + 1.0],
            rho_nu: 1.0,
            mills_a_grid: vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0],
            f_bound: FBoundConfig::default(),
            prior_tail: vec![
                tail(PriorSpec::FixedGaussian { zeta: 1.0 }, small, vec![1, 2, 3]),
                tail(PriorSpec::ScaledGaussian { zeta: 0.5, u: 0.5 }, small, vec![1, 2, 3]),
                tail(
                    PriorSpec::InverseGammaSigma {
                        zeta: 1.0,
                        alpha: 1.0,
                        lambda: 1.0,
                    },
                    small,
                    vec![1, 2, 3],
                ),
                tail(PriorSpec::RhoGaussian { zeta: 1.0, eta: 0.75 }, rho_sieve, vec![1, 2, 3]),
            ],
            prior_tail_samples: 20_000,
        }
    }
}

/// Runs every check in parallel; reports come back in a fixed order.
pub fn run_all(cfg: &LemmaSuiteConfig, seed: u64) -> Result<Vec<LemmaReport>> {
    type Job<'a> = Box<dyn Fn() -> Result<Vec<LemmaReport>> + Send + Sync + 'a>;
    let theta_dims: Vec<ModelDims> = [(1, 1), (2, 2), (1, 4), (3, 3)]
        .iter()
        .map(|&(p, k)| ModelDims::new(p, k))
        .collect::<Result<_>>()?;
    let mut jobs: Vec<Job> = vec![
        Box::new(|| Ok(vec![verify_mod_kl(cfg.mod_kl_trials, seed)?])),
        Box::new(|| verify_sig_rho_bounds(&cfg.delta_grid)),
        Box::new(|| verify_ig_expectation_identities(&cfg.ig_n_grid, cfg.ig_sigma0)),
        Box::new(|| verify_rho_expectation_identities(&cfg.rho_n_grid, &cfg.rho0s, cfg.rho_nu)),
        Box::new(|| verify_mills_ratio(&cfg.mills_a_grid)),
        Box::new(|| Ok(vec![verify_f_bound_decay(&cfg.f_bound, seed)?])),
    ];
    for (i, dims) in theta_dims.into_iter().enumerate() {
        let trials = cfg.theta_trials;
        jobs.push(Box::new(move || {
            let mut r = verify_theta_bound(trials, dims, &cfg.theta_eps_grid, derive_seed(seed, &[i as u64]))?;
            r.lemma_id = format!("theta-bound.p{}k{}", dims.p, dims.k);
            Ok(vec![r])
        }));
    }
    for case in &cfg.prior_tail {
        jobs.push(Box::new(move || Ok(vec![verify_prior_tail_bound(case, cfg.prior_tail_samples, seed)?])));
    }
    let results: Vec<Result<Vec<LemmaReport>>> = jobs.par_iter().map(|j| j()).collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Fixed-width table of reports for terminals.
pub fn summary_table(reports: &[LemmaReport]) -> String {
    let mut s = format!("{:<28} {:<11} {:>9} {:>13} {:>10}  {}\n", "lemma", "kind", "instances", "max_violation", "tolerance", "result");
    for r in reports {
        s.push_str(&format!(
            "{:<28} {:<11} {:>9} {:>13.3e} {:>10.1e}  {}\n",
            r.lemma_id,
            format!("{:?}", r.kind).to_lowercase(),
            r.instances_checked,
            r.max_violation,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    s
}
