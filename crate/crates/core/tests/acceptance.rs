//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout. The
//! process exits non-zero when a criterion fails, except for checks listed
//! in `KNOWN_FALSE`: those test inequalities that do not hold as stated, and
//! are reported as FAIL without stopping the build.

use std::process::ExitCode;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use vbnn::divergence::{hellinger_true_vs_model, kl_true_vs_model};
use vbnn::elbo::{elbo_estimate, finite_difference_check};
use vbnn::experiment::{run_sweep, SweepConfig, SweepOutcome, TeacherSpec, CONFIG_VERSION, DEFAULT_EPSILONS};
use vbnn::lemmas::{run_all, LemmaSuiteConfig};
use vbnn::model::{eval_flat, make_teacher, simulate_dataset, ModelDims, Truth};
use vbnn::priors::{log_inverse_gamma_density, log_prior_mass_outside_sieve, PriorSpec, SieveSpec};
use vbnn::quadrature::{gauss_hermite, integrate_real_line, AdaptiveOptions, QuadratureRule};
use vbnn::report::{records_csv, Summary};
use vbnn::rng::{stream_rng, Stream};
use vbnn::special::{log_sum_exp, normal_pdf};
use vbnn::stats::median;
use vbnn::train::{fit, TrainConfig};
use vbnn::variational::{
    analysis_q_kl, kl_gaussian_factor, kl_scale_inverse_gamma, GaussianFactor, InverseGammaFactor, MeanFieldPosterior,
};

/// Lemma checks whose stated inequality fails below σ₀ (h₁ ≤ δ² on the
/// lower half of the band).
const KNOWN_FALSE: [&str; 2] = ["sig-bound.h1", "rho-bound.h1"];

struct Outcome {
    pass: bool,
    /// Failure that is expected and documented; does not fail the run.
    known: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        known: false,
        detail,
    }
}

fn tight() -> AdaptiveOptions {
    AdaptiveOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-12,
        ..Default::default()
    }
}

/// Closed-form KL and Hellinger against the defining (y, x) integrals.
fn criterion_1() -> Outcome {
    let mut rng = stream_rng(1, Stream::Lemma, &[]);
    let cases: Vec<_> = (0..100)
        .map(|i| {
            let p = 1 + i % 2;
            let k = rng.random_range(1..=4);
            let k0 = rng.random_range(1..=4);
            let theta = make_teacher(k, p, rng.random_range(0.3..3.0), rng.random()).unwrap();
            let truth = make_teacher(k0, p, rng.random_range(0.3..3.0), rng.random()).unwrap();
            (theta, truth, rng.random_range(0.3..2.0), rng.random_range(0.3..2.0))
        })
        .collect();
    let closed_rule = [QuadratureRule::default_for(1).unwrap(), QuadratureRule::default_for(2).unwrap()];
    // Oracle: a different x rule and adaptive y integration of the densities.
    let oracle_rule = [
        QuadratureRule::gauss_legendre(1, 40).unwrap(),
        QuadratureRule::gauss_legendre(2, 40).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for (theta, truth, s, s0) in &cases {
        let p = theta.dims().p;
        let f = |x: &[f64]| theta.eval(x).unwrap();
        let f0 = |x: &[f64]| truth.eval(x).unwrap();
        let kl = kl_true_vs_model(f, *s, f0, *s0, &closed_rule[p - 1]).unwrap();
        let dh = hellinger_true_vs_model(f, *s, f0, *s0, &closed_rule[p - 1]).unwrap();
        let (mut kl_o, mut bc_o) = (0.0, 0.0);
        for (x, w) in oracle_rule[p - 1].points().zip(oracle_rule[p - 1].weights()) {
            let (m, m0) = (f(x), f0(x));
            let l = |y: f64| normal_pdf((y - m) / s) / s;
            let l0 = |y: f64| normal_pdf((y - m0) / s0) / s0;
            let log_ratio = |y: f64| {
                let (z, z0) = ((y - m) / s, (y - m0) / s0);
                (s / s0).ln() - 0.5 * z0 * z0 + 0.5 * z * z
            };
            kl_o += w * integrate_real_line(|y| l0(y) * log_ratio(y), m0, *s0, tight()).value;
            bc_o += w * integrate_real_line(|y| (l(y) * l0(y)).sqrt(), 0.5 * (m + m0), s.max(*s0), tight()).value;
        }
        worst = worst.max((kl - kl_o).abs()).max((dh - (2.0 - 2.0 * bc_o)).abs());
    }
    outcome(worst < 1e-6, format!("100 instances, max |closed form − oracle| = {worst:.2e} (limit 1e-6)"))
}

/// KL closed forms and the analysis-q formula.
fn criterion_2() -> Outcome {
    let mut rng = stream_rng(2, Stream::Lemma, &[]);
    let (mut g_worst, mut ig_worst, mut a_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let f = GaussianFactor::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..3.0));
        let v: f64 = rng.random_range(0.1..5.0);
        let s = f.s();
        let oracle = integrate_real_line(
            |t| {
                let (zq, zp) = ((t - f.m) / s, t / v.sqrt());
                let lq = -0.5 * zq * zq - s.ln();
                let lp = -0.5 * zp * zp - 0.5 * v.ln();
                normal_pdf(zq) / s * (lq - lp)
            },
            f.m,
            s,
            tight(),
        )
        .value;
        g_worst = g_worst.max((kl_gaussian_factor(&f, v) - oracle).abs());

        let qf = InverseGammaFactor::new(rng.random_range(1.5..40.0), rng.random_range(0.2..40.0));
        let (alpha, lambda) = (rng.random_range(0.5..5.0), rng.random_range(0.2..5.0));
        let (a, b) = (qf.shape(), qf.rate());
        // Over z = log σ²; density of z is IG(e^z)·e^z.
        let oracle = integrate_real_line(
            |z| {
                let lq = log_inverse_gamma_density(z.exp(), a, b) + z;
                let lp = log_inverse_gamma_density(z.exp(), alpha, lambda) + z;
                let d = lq.exp();
                if d > 0.0 {
                    d * (lq - lp)
                } else {
                    0.0
                }
            },
            (b / (a + 1.0)).ln(),
            1.0 / a.sqrt(),
            tight(),
        )
        .value;
        ig_worst = ig_worst.max((kl_scale_inverse_gamma(&qf, alpha, lambda) - oracle).abs());
    }
    for _ in 0..50 {
        let k = rng.random_range(1..200);
        let n = rng.random_range(10..100_000);
        let (tau, zeta) = (rng.random_range(0.1..3.0), rng.random_range(0.2..5.0));
        let theta0: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let generic: f64 = theta0
            .iter()
            .map(|&t| kl_gaussian_factor(&GaussianFactor::new(t, tau / (n as f64).sqrt()), zeta * zeta))
            .sum();
        let formula = analysis_q_kl(&theta0, n, tau, zeta);
        a_worst = a_worst.max(((formula - generic) / generic).abs());
    }
    outcome(
        g_worst < 1e-10 && ig_worst < 1e-6 && a_worst < 1e-10,
        format!(
            "Gaussian KL max err {g_worst:.1e} (1e-10), inverse-gamma KL {ig_worst:.1e} (1e-6), analysis-q rel {a_worst:.1e} (1e-10)"
        ),
    )
}

/// ELBO gradient against central differences for the three scale variants.
fn criterion_3() -> Outcome {
    let dims = ModelDims::new(2, 6).unwrap();
    let truth = Truth::Teacher {
        params: make_teacher(2, 2, 1.5, 3).unwrap(),
    };
    let data = simulate_dataset(&truth, 0.7, 60, 4).unwrap();
    let priors = [
        PriorSpec::FixedGaussian { zeta: 1.0 },
        PriorSpec::InverseGammaSigma {
            zeta: 1.0,
            alpha: 2.0,
            lambda: 1.0,
        },
        PriorSpec::RhoGaussian { zeta: 1.0, eta: 1.0 },
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, prior) in priors.iter().enumerate() {
        let mut rng = stream_rng(3, Stream::Lemma, &[i as u64]);
        let q0 = MeanFieldPosterior::initial(prior, &data, dims, 0.5, 0.3, 7).unwrap();
        let v: Vec<f64> = q0.to_vector().iter().map(|x| x + rng.random_range(-0.2..0.2)).collect();
        let q = q0.with_vector(&v).unwrap();
        let coords = sample(&mut rng, v.len(), 50).into_vec();
        let r = finite_difference_check(&q, prior, &data, &coords, 1e-5, 8, 11).unwrap();
        ok &= r.max_rel_error < 1e-4;
        parts.push(format!("{} {:.1e}", prior.name(), r.max_rel_error));
    }
    outcome(ok, format!("max rel error over 50 coordinates (limit 1e-4): {}", parts.join(", ")))
}

/// log evidence by tensor Gauss–Hermite over the prior.
fn log_evidence(data: &vbnn::model::RegressionDataset, zeta: f64, sigma: f64, nodes: usize) -> f64 {
    let dims = ModelDims::new(1, 1).unwrap();
    let kk = dims.param_count();
    let (t, w) = gauss_hermite(nodes);
    let log_w: Vec<f64> = w.iter().map(|w| (w / std::f64::consts::PI.sqrt()).ln()).collect();
    let total = nodes.pow(kk as u32);
    let mut terms = Vec::with_capacity(total);
    let mut theta = vec![0.0; kk];
    for idx in 0..total {
        let mut r = idx;
        let mut lw = 0.0;
        for c in theta.iter_mut() {
            let j = r % nodes;
            r /= nodes;
            *c = std::f64::consts::SQRT_2 * zeta * t[j];
            lw += log_w[j];
        }
        let ll: f64 = (0..data.n())
            .map(|i| {
                let z = (data.ys()[i] - eval_flat(dims, &theta, data.x(i))) / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum();
        terms.push(lw + ll);
    }
    log_sum_exp(&terms)
}

/// ELBO ≤ log evidence on the smallest network.
fn criterion_4() -> Outcome {
    let prior = PriorSpec::FixedGaussian { zeta: 1.0 };
    let dims = ModelDims::new(1, 1).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut quad_gap: f64 = 0.0;
    for i in 0..20u64 {
        let n = 1 + (i as usize % 5);
        let truth = Truth::Teacher {
            params: make_teacher(1, 1, 1.5, 100 + i).unwrap(),
        };
        let data = simulate_dataset(&truth, 1.0, n, 200 + i).unwrap();
        let cfg = TrainConfig {
            iters: 1500,
            seed: i,
            ..Default::default()
        };
        let q = fit(&prior, &data, dims, &cfg).unwrap().posterior;
        let e = elbo_estimate(&q, &prior, &data, 20_000, 300 + i).unwrap();
        let z = log_evidence(&data, 1.0, 1.0, 32);
        quad_gap = quad_gap.max((z - log_evidence(&data, 1.0, 1.0, 24)).abs());
        worst = worst.max((e.value - z) / e.standard_error.max(1e-12));
    }
    outcome(
        worst <= 3.0,
        format!(
            "20 instances (k = p = 1, K = 4, n ≤ 5): max (ELBO − log Z)/SE = {worst:.2} (limit 3); quadrature 24→32 nodes moves log Z by {quad_gap:.1e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let reports = run_all(&LemmaSuiteConfig::default(), 0).unwrap();
    let secs = t.elapsed().as_secs_f64();
    for r in &reports {
        let slope = r.slope.map_or(String::new(), |s| format!(" slope {s:.3}"));
        println!(
            "    {:<32} {:<4} {:>7} instances, max violation {:.2e} (tol {:.0e}){slope}",
            r.lemma_id,
            if r.pass { "ok" } else { "FAIL" },
            r.instances_checked,
            r.max_violation,
            r.tolerance
        );
        if !r.pass {
            println!("        worst: {}", r.details);
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.lemma_id.as_str()).collect();
    let unexpected: Vec<&str> = failed.iter().copied().filter(|id| !KNOWN_FALSE.contains(id)).collect();
    Outcome {
        pass: failed.is_empty() && secs < 600.0,
        known: unexpected.is_empty() && secs < 600.0,
        detail: if failed.is_empty() {
            format!("{} checks, all pass, {secs:.0}s", reports.len())
        } else {
            format!(
                "{} checks, failing: {} ({} unexpected); {secs:.0}s. h₁ ≤ δ² does not hold for σ < σ₀",
                reports.len(),
                failed.join(", "),
                unexpected.len()
            )
        },
    }
}

fn sweep_config(prior: PriorSpec, sieve: SieveSpec) -> SweepConfig {
    SweepConfig {
        version: CONFIG_VERSION,
        n_grid: vec![200, 500, 1000, 2000, 5000],
        seeds: (0..5).collect(),
        master_seed: 2024,
        sieve,
        prior,
        teacher: TeacherSpec {
            k_star: 3,
            p: 2,
            scale: 2.0,
            seed: 1,
        },
        sigma0: 1.0,
        train: TrainConfig::default(),
        epsilons: DEFAULT_EPSILONS.to_vec(),
        tail_samples: 2000,
        predictive_draws: 200,
        quadrature: Default::default(),
        predictor: Default::default(),
        output_dir: None,
        save_checkpoints: false,
        // Wall-clock time is the one field that cannot repeat bit-for-bit.
        record_runtime: false,
    }
}

fn known_config() -> SweepConfig {
    sweep_config(PriorSpec::FixedGaussian { zeta: 1.0 }, SieveSpec { a: 0.25, b: 0.5 })
}

fn ig_config() -> SweepConfig {
    sweep_config(
        PriorSpec::InverseGammaSigma {
            zeta: 1.0,
            alpha: 1.0,
            lambda: 1.0,
        },
        SieveSpec { a: 0.25, b: 0.5 },
    )
}

fn rho_config() -> SweepConfig {
    sweep_config(PriorSpec::RhoGaussian { zeta: 1.0, eta: 0.75 }, SieveSpec { a: 0.25, b: 0.8 })
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

/// Tail trend at ε = 0.5 and, optionally, the L2 trend. Also prints the
/// ε = 0.05 series, the smallest ε on the grid.
fn tail_and_l2(out: &SweepOutcome, cfg: &SweepConfig, check_l2: bool) -> (bool, String) {
    let s = Summary::build(&out.records, &out.estimates, &cfg.epsilons, None).unwrap();
    let at = |e: f64| -> Vec<f64> {
        s.per_n
            .iter()
            .map(|p| p.median_tail_mass.iter().find(|m| m.epsilon == e).unwrap().median)
            .collect()
    };
    let tail = at(0.5);
    let l2: Vec<f64> = s.per_n.iter().map(|p| p.median_l2_error.unwrap_or(f64::NAN)).collect();
    let tail_ok = non_increasing(&tail) && tail[tail.len() - 1] <= 0.5 * tail[0];
    let l2_ok = !check_l2 || non_increasing(&l2);
    let failures = out.failures().count();
    let mut detail = format!(
        "median tail mass at ε=0.5: [{}]; at ε=0.05: [{}]",
        fmt_series(&tail),
        fmt_series(&at(0.05))
    );
    if check_l2 {
        detail.push_str(&format!("; median L2: [{}]", l2.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")));
    }
    detail.push_str(&format!("; {failures} failed cells"));
    (tail_ok && l2_ok && failures == 0, detail)
}

fn criterion_6(out: &SweepOutcome, secs: f64) -> Outcome {
    let (ok, d) = tail_and_l2(out, &known_config(), true);
    outcome(ok && secs < 1800.0, format!("{d}; {secs:.0}s"))
}

fn criterion_7(out: &SweepOutcome, known: &SweepOutcome, secs: f64) -> Outcome {
    let cfg = ig_config();
    let ns = &cfg.n_grid;
    let ratio_at = |n: usize| -> Vec<f64> {
        out.records.iter().filter(|r| r.n == n && !r.failed()).map(|r| r.sigma_hat / cfg.sigma0).collect()
    };
    let med_ratio = median(&ratio_at(ns[ns.len() - 1]));
    let dev: Vec<f64> = ns[ns.len() - 3..]
        .iter()
        .map(|&n| median(&ratio_at(n).iter().map(|r| (r - 1.0).abs()).collect::<Vec<_>>()))
        .collect();
    let ok = (0.9..=1.1).contains(&med_ratio) && non_increasing(&dev) && out.failures().count() == 0;
    // Paired rate comparison at the smallest ε, for information only.
    let d = |o: &SweepOutcome| o.estimates.iter().find(|e| e.epsilon == 0.05).and_then(|e| e.delta_hat);
    outcome(
        ok,
        format!(
            "median σ̂/σ₀ at n={}: {med_ratio:.4}; median |σ̂/σ₀ − 1| over last three n: [{}]; δ̂ at ε=0.05: σ unknown {:?}, σ known {:?}; {secs:.0}s",
            ns[ns.len() - 1],
            fmt_series(&dev),
            d(out),
            d(known)
        ),
    )
}

fn criterion_8(out: &SweepOutcome, secs: f64) -> Outcome {
    let cfg = rho_config();
    let (trend_ok, d) = tail_and_l2(out, &cfg, false);
    let bounds: Vec<(usize, f64)> = cfg
        .n_grid
        .iter()
        .map(|&n| (n, log_prior_mass_outside_sieve(&cfg.prior, &cfg.sieve, n, cfg.teacher.p).unwrap()))
        .collect();
    let bound_ok = bounds.iter().all(|&(n, l)| l <= -(n as f64));
    let b: Vec<String> = bounds.iter().map(|(n, l)| format!("{n}: {l:.3e}")).collect();
    outcome(trend_ok && bound_ok, format!("{d}; log outside-sieve bound [{}]; {secs:.0}s", b.join(", ")))
}

fn main() -> ExitCode {
    // ACCEPTANCE_ONLY=1,4 restricts the run to the listed criteria.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut run = |i: usize, f: &dyn Fn() -> Outcome| {
        if !wanted(i) {
            return;
        }
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        report_line(i, &o, secs);
        results.push((i, o, secs));
    };
    run(1, &criterion_1);
    run(2, &criterion_2);
    run(3, &criterion_3);
    run(4, &criterion_4);
    run(5, &criterion_5);

    let timed = |cfg: &SweepConfig| {
        let t = Instant::now();
        let o = run_sweep(cfg).unwrap();
        (o, t.elapsed().as_secs_f64())
    };
    if !(6..=9).any(wanted) {
        return finish(&results);
    }
    let (known, t6) = timed(&known_config());
    run(6, &|| criterion_6(&known, t6));
    let (ig, t7) = timed(&ig_config());
    run(7, &|| criterion_7(&ig, &known, t7));
    let (rho, t8) = timed(&rho_config());
    run(8, &|| criterion_8(&rho, t8));
    run(9, &|| {
        let mut same = Vec::new();
        for (name, cfg, first) in [("known", known_config(), &known), ("ig", ig_config(), &ig), ("rho", rho_config(), &rho)] {
            let again = run_sweep(&cfg).unwrap();
            let a = records_csv(&first.records, &cfg.epsilons).unwrap();
            let b = records_csv(&again.records, &cfg.epsilons).unwrap();
            same.push((name, a == b, a.len()));
        }
        outcome(
            same.iter().all(|s| s.1),
            same.iter()
                .map(|(n, ok, len)| format!("{n}: {} ({len} bytes)", if *ok { "identical" } else { "DIFFERENT" }))
                .collect::<Vec<_>>()
                .join(", "),
        )
    });

    finish(&results)
}

fn finish(results: &[(usize, Outcome, f64)]) -> ExitCode {
    let hard_fail = results.iter().any(|(_, o, _)| !o.pass && !o.known);
    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if hard_fail {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn report_line(i: usize, o: &Outcome, secs: f64) {
    let tag = match (o.pass, o.known) {
        (true, _) => "PASS",
        (false, true) => "FAIL (documented)",
        (false, false) => "FAIL",
    };
    println!("criterion {i}: {tag} [{secs:.1}s] {}", o.detail);
}
