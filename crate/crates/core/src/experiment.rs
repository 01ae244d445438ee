//! Consistency sweeps: simulate, fit, measure, repeat over n and seeds.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{predictive_hellinger, predictor_l2_error, vp_tail_mass, PredictorMethod, TailMassEstimate};
use crate::error::{Error, Result};
use crate::model::{make_teacher, simulate_dataset, ModelDims, Truth};
use crate::priors::{PriorSpec, SieveSpec};
use crate::quadrature::QuadratureSpec;
use crate::rng::{derive_seed, Stream};
use crate::stats::{linear_fit, median};
use crate::train::{fit, TrainConfig};
use crate::variational::posterior_point_summaries;

/// Config format version understood by this build.
pub const CONFIG_VERSION: u32 = 1;

/// Default ε grid for tail masses.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

/// Teacher network used as the true regression function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub k_star: usize,
    pub p: usize,
    /// Coordinates are drawn from U(−scale, scale).
    pub scale: f64,
    pub seed: u64,
}

impl TeacherSpec {
    pub fn truth(&self) -> Result<Truth> {
        Ok(Truth::Teacher {
            params: make_teacher(self.k_star, self.p, self.scale, self.seed)?,
        })
    }
}

fn default_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}
fn default_tail_samples() -> usize {
    2000
}
fn default_predictive_draws() -> usize {
    200
}
fn default_true() -> bool {
    true
}

/// A whole sweep, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub version: u32,
    pub n_grid: Vec<usize>,
    /// Replicate labels; each (n, seed) pair is one cell.
    pub seeds: Vec<u64>,
    /// Mixed into every cell stream. The CLI `--seed` flag overrides it.
    #[serde(default)]
    pub master_seed: u64,
    pub sieve: SieveSpec,
    pub prior: PriorSpec,
    pub teacher: TeacherSpec,
    pub sigma0: f64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Posterior draws per tail-mass estimate.
    #[serde(default = "default_tail_samples")]
    pub tail_samples: usize,
    /// Posterior draws in the averaged predictive density.
    #[serde(default = "default_predictive_draws")]
    pub predictive_draws: usize,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub predictor: PredictorMethod,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Save each fitted posterior under `output_dir/checkpoints`.
    #[serde(default)]
    pub save_checkpoints: bool,
    /// Wall-clock seconds per cell. Off gives byte-identical CSVs across runs.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
}

impl SweepConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.n_grid.len() < 3 {
            return bad("n_grid needs at least 3 values for rate fitting".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return bad("n_grid must be positive and strictly increasing".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        self.prior.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sieve.validate_for(&self.prior).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0 must be positive".into());
        }
        if self.teacher.k_star == 0 || self.teacher.p == 0 || !(self.teacher.scale >= 0.0) {
            return bad("teacher needs k_star >= 1, p >= 1 and scale >= 0".into());
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return bad("epsilons must be finite and non-negative".into());
        }
        if self.tail_samples < 100 || self.predictive_draws == 0 {
            return bad("tail_samples must be >= 100 and predictive_draws >= 1".into());
        }
        self.train.validate()
    }
}

/// Fit diagnostics kept in memory and in the summary, but not in the CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub checkpoint: Option<PathBuf>,
    /// Set when the cell failed; the numeric fields are then NaN.
    pub failure: Option<String>,
}

/// Measurements for one (n, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    pub seed: u64,
    pub k_n: usize,
    pub elbo_final: f64,
    /// One entry per ε of the config, in config order.
    pub tail: Vec<TailMassEstimate>,
    /// d_H between the averaged predictive density and the truth.
    pub hellinger_avg: f64,
    /// ∫(f̂ − f₀)².
    pub l2_error: f64,
    /// √(E_q σ²); the known σ₀ for the σ-known priors.
    pub sigma_hat: f64,
    pub runtime_s: f64,
    pub diagnostics: FitDiagnostics,
}

impl ExperimentRecord {
    pub fn failed(&self) -> bool {
        self.diagnostics.failure.is_some()
    }

    fn failure(n: usize, seed: u64, k_n: usize, message: String) -> Self {
        Self {
            n,
            seed,
            k_n,
            elbo_final: f64::NAN,
            tail: Vec::new(),
            hellinger_avg: f64::NAN,
            l2_error: f64::NAN,
            sigma_hat: f64::NAN,
            runtime_s: 0.0,
            diagnostics: FitDiagnostics {
                failure: Some(message),
                ..Default::default()
            },
        }
    }
}

/// Seed of the cell (n, seed) under `master`.
pub fn cell_seed(master: u64, n: usize, seed: u64) -> u64 {
    derive_seed(master, &[n as u64, seed])
}

/// Simulate, fit and evaluate one cell. Deterministic in (config, n, seed)
/// apart from `runtime_s`.
///
/// A numerical failure during training yields a record with
/// `diagnostics.failure` set; any other error is returned.
pub fn run_single(n: usize, seed: u64, config: &SweepConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let cell = cell_seed(config.master_seed, n, seed);
    let k_n = config.sieve.hidden_units(n);
    let truth = config.teacher.truth()?;
    let p = config.teacher.p;
    let dims = ModelDims::new(p, k_n)?;
    let data = simulate_dataset(&truth, config.sigma0, n, derive_seed(cell, &[Stream::Data as u64]))?;
    let train = TrainConfig {
        seed: derive_seed(cell, &[Stream::Train as u64]),
        ..config.train.clone()
    };
    let fitted = match fit(&config.prior, &data, dims, &train) {
        Ok(f) => f,
        Err(e) if e.is_numerical() => return Ok(ExperimentRecord::failure(n, seed, k_n, e.to_string())),
        Err(e) => return Err(e),
    };
    let q = &fitted.posterior;
    let mut checkpoint = None;
    if let (true, Some(dir)) = (config.save_checkpoints, &config.output_dir) {
        let d = dir.join("checkpoints");
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let path = d.join(format!("n{n}_seed{seed}.json"));
        std::fs::write(&path, q.to_json()?).map_err(|e| Error::io(&path, e))?;
        checkpoint = Some(path);
    }
    let rule = config.quadrature.build(p)?;
    let tail = vp_tail_mass(
        q,
        &truth,
        config.sigma0,
        &config.epsilons,
        config.tail_samples,
        derive_seed(cell, &[Stream::Tail as u64]),
        &rule,
    )?;
    let hellinger_avg = predictive_hellinger(
        q,
        &truth,
        config.sigma0,
        &rule,
        config.predictive_draws,
        derive_seed(cell, &[Stream::Predict as u64]),
    )?;
    let l2_error = predictor_l2_error(q, |x| truth.eval(x), &rule, config.predictor)?;
    let sigma_hat = posterior_point_summaries(q).variance.sigma2().map_or(f64::NAN, f64::sqrt);
    let record = ExperimentRecord {
        n,
        seed,
        k_n,
        elbo_final: fitted.final_elbo(),
        tail,
        hellinger_avg,
        l2_error,
        sigma_hat,
        runtime_s: if config.record_runtime { start.elapsed().as_secs_f64() } else { 0.0 },
        diagnostics: FitDiagnostics {
            iterations: fitted.iterations(),
            converged: fitted.converged,
            checkpoint,
            failure: None,
        },
    };
    let finite = record.hellinger_avg.is_finite()
        && record.l2_error.is_finite()
        && record.elbo_final.is_finite()
        && record.tail.iter().all(|t| (0.0..=1.0).contains(&t.estimate));
    if !finite {
        return Ok(ExperimentRecord::failure(n, seed, k_n, "non-finite evaluation metric".into()));
    }
    Ok(record)
}

/// Fitted decay exponent of the median tail mass at one ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEstimate {
    pub epsilon: f64,
    /// −slope of log median tail mass against log n; `None` when every
    /// median is zero.
    pub delta_hat: Option<f64>,
    pub r_squared: Option<f64>,
    pub n_min: usize,
    pub n_max: usize,
    pub points: usize,
    /// Medians of exactly zero, entered into the fit as 1/(2S).
    pub censored_points: usize,
    /// Every median was zero: the tail mass is below Monte Carlo resolution
    /// at every n.
    pub consistent_beyond_resolution: bool,
}

/// Median tail mass at one ε for one n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedianTail {
    pub n: usize,
    pub epsilon: f64,
    pub median: f64,
    /// True when the median is zero and only "< 1/(2S)" is known.
    pub censored: bool,
    /// Value used in regressions: the median, or 1/(2S) when censored.
    pub regression_value: f64,
}

fn ok_records(records: &[ExperimentRecord]) -> impl Iterator<Item = &ExperimentRecord> {
    records.iter().filter(|r| !r.failed())
}

/// Distinct n values of the successful records, ascending.
pub fn distinct_n(records: &[ExperimentRecord]) -> Vec<usize> {
    let mut ns: Vec<usize> = ok_records(records).map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns
}

/// Per-n median of a record field over successful records.
pub fn median_by_n(records: &[ExperimentRecord], field: impl Fn(&ExperimentRecord) -> f64) -> Vec<(usize, f64)> {
    distinct_n(records)
        .into_iter()
        .map(|n| {
            let v: Vec<f64> = ok_records(records).filter(|r| r.n == n).map(&field).collect();
            (n, median(&v))
        })
        .collect()
}

/// Per-n median tail mass at `epsilon` with censoring of zeros.
pub fn median_tail_by_n(records: &[ExperimentRecord], epsilon: f64) -> Result<Vec<MedianTail>> {
    distinct_n(records)
        .into_iter()
        .map(|n| {
            let mut samples = usize::MAX;
            let mut v = Vec::new();
            for r in ok_records(records).filter(|r| r.n == n) {
                let t = r
                    .tail
                    .iter()
                    .find(|t| t.epsilon == epsilon)
                    .ok_or_else(|| Error::InvalidArgument(format!("no tail mass at ε = {epsilon} for n = {n}")))?;
                samples = samples.min(t.samples);
                v.push(t.estimate);
            }
            let m = median(&v);
            let censored = m == 0.0;
            Ok(MedianTail {
                n,
                epsilon,
                median: m,
                censored,
                regression_value: if censored { 0.5 / samples as f64 } else { m },
            })
        })
        .collect()
}

/// δ̂ at `epsilon` from the per-n medians over seeds.
pub fn estimate_delta(records: &[ExperimentRecord], epsilon: f64) -> Result<RateEstimate> {
    let med = median_tail_by_n(records, epsilon)?;
    if med.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 distinct n, got {}",
            med.len()
        )));
    }
    let censored_points = med.iter().filter(|m| m.censored).count();
    let (n_min, n_max) = (med[0].n, med[med.len() - 1].n);
    if censored_points == med.len() {
        return Ok(RateEstimate {
            epsilon,
            delta_hat: None,
            r_squared: None,
            n_min,
            n_max,
            points: med.len(),
            censored_points,
            consistent_beyond_resolution: true,
        });
    }
    let xs: Vec<f64> = med.iter().map(|m| (m.n as f64).ln()).collect();
    let ys: Vec<f64> = med.iter().map(|m| m.regression_value.ln()).collect();
    let f = linear_fit(&xs, &ys).ok_or_else(|| Error::InvalidArgument("degenerate n grid".into()))?;
    Ok(RateEstimate {
        epsilon,
        // Adding 0.0 turns −0.0 into 0.0 for a flat series.
        delta_hat: Some(-f.slope + 0.0),
        r_squared: Some(f.r_squared),
        n_min,
        n_max,
        points: med.len(),
        censored_points,
        consistent_beyond_resolution: false,
    })
}

/// All records plus one rate estimate per ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    /// Sorted by (n, seed); failed cells included.
    pub records: Vec<ExperimentRecord>,
    pub estimates: Vec<RateEstimate>,
}

impl SweepOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.records.iter().filter(|r| r.failed())
    }
}

/// Runs every (n, seed) cell in parallel and fits δ̂ for each ε.
///
/// Failed cells stay in the records; rate estimates that cannot be formed
/// (fewer than 3 n values with successful cells) are left out.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let cells: Vec<(usize, u64)> = config
        .n_grid
        .iter()
        .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut records = cells
        .par_iter()
        .map(|&(n, s)| run_single(n, s, config))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.n, r.seed));
    let estimates = config
        .epsilons
        .iter()
        .filter_map(|&e| estimate_delta(&records, e).ok())
        .collect();
    Ok(SweepOutcome { records, estimates })
}
