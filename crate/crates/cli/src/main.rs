//! `vbnn` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure (diverged fit, or a lemma check that did not pass).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vbnn::divergence::{predictive_hellinger, predictor_l2_error, vp_tail_mass};
use vbnn::experiment::{cell_seed, estimate_delta, run_sweep, SweepConfig};
use vbnn::lemmas::{run_all, summary_table, LemmaReport, LemmaSuiteConfig};
use vbnn::model::{simulate_dataset, ModelDims, RegressionDataset};
use vbnn::report::{emit_report, prepare_output_dir, read_records_csv};
use vbnn::rng::{derive_seed, Stream};
use vbnn::train::{fit, TrainConfig};
use vbnn::variational::{posterior_point_summaries, MeanFieldPosterior};
use vbnn::Error;

#[derive(Parser)]
#[command(name = "vbnn", version, about = "Mean-field variational Bayes for neural-network regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Cell {
    /// Sample size.
    #[arg(long)]
    n: usize,
    /// Replicate label; (n, replicate) picks the same streams as a sweep cell.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the configured teacher and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate and fit one cell, writing the posterior as JSON.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tail masses, predictor error and σ̂ of a saved posterior.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        posterior: PathBuf,
    },
    /// Run a full sweep and write records, summary and plot data.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the lemma checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Where to write the JSON reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summary and plot data from a records CSV.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
        /// Lemma reports from `verify --out`, to include their pass state.
        #[arg(long)]
        lemmas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn sweep_config(common: &Common) -> Result<SweepConfig, Failure> {
    let path = common.config.as_ref().ok_or_else(|| usage("--config is required"))?;
    let mut cfg = SweepConfig::from_json(&read_to_string(path)?)?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_output_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn simulate_cell(cfg: &SweepConfig, cell: &Cell) -> Result<RegressionDataset, Failure> {
    let seed = cell_seed(cfg.master_seed, cell.n, cell.replicate);
    Ok(simulate_dataset(&cfg.teacher.truth()?, cfg.sigma0, cell.n, derive_seed(seed, &[Stream::Data as u64]))?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, cell, out } => {
            let cfg = sweep_config(&common)?;
            let data = simulate_cell(&cfg, &cell)?;
            let p = data.p();
            let mut text: String = (1..=p).map(|h| format!("x{h},")).collect();
            text.push_str("y\n");
            for i in 0..data.n() {
                for x in data.x(i) {
                    text.push_str(&format!("{x},"));
                }
                text.push_str(&format!("{}\n", data.ys()[i]));
            }
            write(&out, &text)?;
            println!("wrote {} rows to {}", data.n(), out.display());
        }
        Command::Fit { common, cell, out } => {
            let cfg = sweep_config(&common)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                prepare_output_dir(dir)?;
            }
            let data = simulate_cell(&cfg, &cell)?;
            let dims = ModelDims::new(cfg.teacher.p, cfg.sieve.hidden_units(cell.n))?;
            let train = TrainConfig {
                seed: derive_seed(cell_seed(cfg.master_seed, cell.n, cell.replicate), &[Stream::Train as u64]),
                ..cfg.train.clone()
            };
            let result = fit(&cfg.prior, &data, dims, &train)?;
            write(&out, &result.posterior.to_json()?)?;
            println!(
                "{}",
                serde_json::json!({
                    "n": cell.n,
                    "k_n": dims.k,
                    "iterations": result.iterations(),
                    "converged": result.converged,
                    "elbo_final": result.final_elbo(),
                    "grad_norm_final": result.final_grad_norm(),
                    "posterior": out,
                })
            );
        }
        Command::Metrics { common, posterior } => {
            let cfg = sweep_config(&common)?;
            let q = MeanFieldPosterior::from_json(&read_to_string(&posterior)?)?;
            q.check_prior(&cfg.prior)?;
            let truth = cfg.teacher.truth()?;
            let rule = cfg.quadrature.build(cfg.teacher.p)?;
            let seed = derive_seed(cfg.master_seed, &[Stream::Tail as u64]);
            let tail = vp_tail_mass(&q, &truth, cfg.sigma0, &cfg.epsilons, cfg.tail_samples, seed, &rule)?;
            let hel = predictive_hellinger(&q, &truth, cfg.sigma0, &rule, cfg.predictive_draws, seed)?;
            let l2 = predictor_l2_error(&q, |x| truth.eval(x), &rule, cfg.predictor)?;
            let sigma_hat = posterior_point_summaries(&q).variance.sigma2().map(f64::sqrt);
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "tail_mass": tail,
                    "hellinger_avg": hel,
                    "l2_error": l2,
                    "sigma_hat": sigma_hat,
                }))
                .expect("plain values serialize")
            );
        }
        Command::Sweep { common, out } => {
            let mut cfg = sweep_config(&common)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let dir = cfg.output_dir.clone().ok_or_else(|| usage("no output directory: set output_dir or --out"))?;
            prepare_output_dir(&dir)?;
            let outcome = run_sweep(&cfg)?;
            let files = emit_report(&outcome.records, &outcome.estimates, &cfg.epsilons, None, &dir)?;
            for e in &outcome.estimates {
                match e.delta_hat {
                    Some(d) => println!("eps {}: delta_hat {d:.3} (r² {:.3})", e.epsilon, e.r_squared.unwrap_or(f64::NAN)),
                    None => println!("eps {}: below Monte Carlo resolution at every n", e.epsilon),
                }
            }
            let failed = outcome.failures().count();
            println!("{} cells, {failed} failed; records in {}", outcome.records.len(), files.records_csv.display());
            if failed == outcome.records.len() {
                return Err(Failure {
                    code: 2,
                    message: "every cell failed".into(),
                });
            }
        }
        Command::Verify { common, out } => {
            let cfg: LemmaSuiteConfig = match &common.config {
                Some(p) => serde_json::from_str(&read_to_string(p)?).map_err(|e| usage(format!("config error: {e}")))?,
                None => LemmaSuiteConfig::default(),
            };
            if let Some(dir) = out.as_ref().and_then(|o| o.parent()).filter(|d| !d.as_os_str().is_empty()) {
                prepare_output_dir(dir)?;
            }
            let reports = run_all(&cfg, common.seed.unwrap_or(0))?;
            print!("{}", summary_table(&reports));
            if let Some(o) = out {
                write(&o, &serde_json::to_string_pretty(&reports).expect("reports serialize"))?;
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.lemma_id.as_str()).collect();
            if !failed.is_empty() {
                return Err(Failure {
                    code: 2,
                    message: format!("checks not passing: {}", failed.join(", ")),
                });
            }
        }
        Command::Report {
            common,
            records,
            lemmas,
            out,
        } => {
            let cfg = sweep_config(&common)?;
            prepare_output_dir(&out)?;
            let recs = read_records_csv(&records, cfg.tail_samples)?;
            let estimates: Vec<_> = cfg.epsilons.iter().filter_map(|&e| estimate_delta(&recs, e).ok()).collect();
            let lemma_reports: Option<Vec<LemmaReport>> = match lemmas {
                Some(p) => Some(serde_json::from_str(&read_to_string(&p)?).map_err(|e| usage(format!("bad lemma reports: {e}")))?),
                None => None,
            };
            let files = emit_report(&recs, &estimates, &cfg.epsilons, lemma_reports.as_deref(), &out)?;
            println!("summary in {}", files.summary_json.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
