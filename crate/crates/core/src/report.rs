//! Sweep output on disk: records CSV, summary JSON and plot-data TSV files.
//!
//! The CSV is long format, one row per (cell, ε), with header
//! `n,seed,k_n,elbo_final,eps,tail_mass,tail_se,hellinger_avg,l2_error,sigma_hat,runtime_s`.
//! With an empty ε grid the three ε columns are dropped and there is one
//! row per cell. Floats are written in shortest round-trip form, so a
//! re-read reproduces them exactly. Failed cells are not in the CSV; they
//! are listed in the summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::divergence::TailMassEstimate;
use crate::error::{Error, Result};
use crate::experiment::{median_by_n, median_tail_by_n, ExperimentRecord, FitDiagnostics, MedianTail, RateEstimate};
use crate::lemmas::LemmaReport;

/// Summary format version.
pub const SUMMARY_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 11] = [
    "n",
    "seed",
    "k_n",
    "elbo_final",
    "eps",
    "tail_mass",
    "tail_se",
    "hellinger_avg",
    "l2_error",
    "sigma_hat",
    "runtime_s",
];

const EPS_COLUMNS: [&str; 3] = ["eps", "tail_mass", "tail_se"];

/// JSON Schema of `summary.json`, written next to it.
pub const SUMMARY_SCHEMA: &str = include_str!("summary.schema.json");

/// Medians over seeds at one n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerNSummary {
    pub n: usize,
    pub k_n: usize,
    pub cells: usize,
    pub failed_cells: usize,
    pub median_tail_mass: Vec<MedianTail>,
    pub median_l2_error: Option<f64>,
    pub median_hellinger_avg: Option<f64>,
    pub median_sigma_hat: Option<f64>,
    pub median_elbo_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailedCell {
    pub n: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSuiteSummary {
    pub all_pass: bool,
    pub reports: Vec<LemmaReport>,
}

/// Content of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub version: u32,
    pub epsilons: Vec<f64>,
    pub per_n: Vec<PerNSummary>,
    pub rate_estimates: Vec<RateEstimate>,
    pub failures: Vec<FailedCell>,
    pub lemma_suite: Option<LemmaSuiteSummary>,
}

impl Summary {
    /// Per-n medians, failures and rates from the records.
    pub fn build(
        records: &[ExperimentRecord],
        estimates: &[RateEstimate],
        epsilons: &[f64],
        lemma_reports: Option<&[LemmaReport]>,
    ) -> Result<Self> {
        let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let tails: Vec<Vec<MedianTail>> = epsilons.iter().map(|&e| median_tail_by_n(records, e)).collect::<Result<_>>()?;
        let l2 = median_by_n(records, |r| r.l2_error);
        let hel = median_by_n(records, |r| r.hellinger_avg);
        let sig = median_by_n(records, |r| r.sigma_hat);
        let elbo = median_by_n(records, |r| r.elbo_final);
        // None when no cell at n succeeded (JSON has no NaN).
        let lookup = |v: &[(usize, f64)], n: usize| v.iter().find(|x| x.0 == n).map(|x| x.1).filter(|x| !x.is_nan());
        let per_n = ns
            .iter()
            .map(|&n| {
                let cells: Vec<&ExperimentRecord> = records.iter().filter(|r| r.n == n).collect();
                PerNSummary {
                    n,
                    k_n: cells[0].k_n,
                    cells: cells.len(),
                    failed_cells: cells.iter().filter(|r| r.failed()).count(),
                    median_tail_mass: tails.iter().filter_map(|t| t.iter().find(|m| m.n == n).copied()).collect(),
                    median_l2_error: lookup(&l2, n),
                    median_hellinger_avg: lookup(&hel, n),
                    median_sigma_hat: lookup(&sig, n),
                    median_elbo_final: lookup(&elbo, n),
                }
            })
            .collect();
        let failures = records
            .iter()
            .filter_map(|r| {
                r.diagnostics.failure.as_ref().map(|m| FailedCell {
                    n: r.n,
                    seed: r.seed,
                    message: m.clone(),
                })
            })
            .collect();
        Ok(Self {
            version: SUMMARY_VERSION,
            epsilons: epsilons.to_vec(),
            per_n,
            rate_estimates: estimates.to_vec(),
            failures,
            lemma_suite: lemma_reports.map(|r| LemmaSuiteSummary {
                all_pass: r.iter().all(|x| x.pass),
                reports: r.to_vec(),
            }),
        })
    }
}

/// Parses a summary and checks the constraints the schema states beyond
/// structure: version, tail masses in [0, 1], censored medians exactly 0
/// with a positive regression value.
pub fn validate_summary(json: &str) -> Result<Summary> {
    let s: Summary = serde_json::from_str(json)?;
    if s.version != SUMMARY_VERSION {
        return Err(Error::Config(format!("summary version {} unsupported", s.version)));
    }
    for p in &s.per_n {
        for m in &p.median_tail_mass {
            if !(0.0..=1.0).contains(&m.median) || !(m.regression_value > 0.0) || m.censored != (m.median == 0.0) {
                return Err(Error::Config(format!("inconsistent tail median at n = {}", p.n)));
            }
        }
    }
    Ok(s)
}

/// Creates `dir` if needed and proves it is writable with a probe file.
/// Call this before any computation whose output goes there.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub records_csv: PathBuf,
    pub summary_json: PathBuf,
    pub schema_json: PathBuf,
    pub plot_files: Vec<PathBuf>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Records CSV as bytes; see the module docs for the layout.
pub fn records_csv(records: &[ExperimentRecord], epsilons: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let with_eps = !epsilons.is_empty();
    let header: Vec<&str> = CSV_HEADER.iter().copied().filter(|c| with_eps || !EPS_COLUMNS.contains(c)).collect();
    w.write_record(&header)?;
    for r in records.iter().filter(|r| !r.failed()) {
        let head = [r.n.to_string(), r.seed.to_string(), r.k_n.to_string(), r.elbo_final.to_string()];
        let tail = [
            r.hellinger_avg.to_string(),
            r.l2_error.to_string(),
            r.sigma_hat.to_string(),
            r.runtime_s.to_string(),
        ];
        if with_eps {
            for &e in epsilons {
                let t = r
                    .tail
                    .iter()
                    .find(|t| t.epsilon == e)
                    .ok_or_else(|| Error::InvalidArgument(format!("record (n = {}, seed = {}) lacks ε = {e}", r.n, r.seed)))?;
                let mid = [e.to_string(), t.estimate.to_string(), t.standard_error.to_string()];
                w.write_record(head.iter().chain(&mid).chain(&tail))?;
            }
        } else {
            w.write_record(head.iter().chain(&tail))?;
        }
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Reads a records CSV back. Tail sample counts and fit diagnostics are not
/// stored there: `samples` comes from the caller and diagnostics are empty.
pub fn read_records_csv(path: &Path, tail_samples: usize) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Config(format!("CSV lacks column {name}")));
    let (c_n, c_seed, c_k, c_elbo) = (need("n")?, need("seed")?, need("k_n")?, need("elbo_final")?);
    let (c_h, c_l2, c_sig, c_rt) = (need("hellinger_avg")?, need("l2_error")?, need("sigma_hat")?, need("runtime_s")?);
    let eps_cols = match (col("eps"), col("tail_mass"), col("tail_se")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => return Err(Error::Config("CSV has a partial set of ε columns".into())),
    };
    let parse_f = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}")));
    let parse_u = |s: &str| s.parse::<u64>().map_err(|e| Error::Config(format!("bad integer {s:?}: {e}")));
    let mut out: Vec<ExperimentRecord> = Vec::new();
    for row in rd.records() {
        let row = row?;
        let n = parse_u(&row[c_n])? as usize;
        let seed = parse_u(&row[c_seed])?;
        let same = out.last().is_some_and(|r| r.n == n && r.seed == seed);
        if !same {
            out.push(ExperimentRecord {
                n,
                seed,
                k_n: parse_u(&row[c_k])? as usize,
                elbo_final: parse_f(&row[c_elbo])?,
                tail: Vec::new(),
                hellinger_avg: parse_f(&row[c_h])?,
                l2_error: parse_f(&row[c_l2])?,
                sigma_hat: parse_f(&row[c_sig])?,
                runtime_s: parse_f(&row[c_rt])?,
                diagnostics: FitDiagnostics::default(),
            });
        }
        if let Some((ce, ct, cs)) = eps_cols {
            out.last_mut().expect("pushed above").tail.push(TailMassEstimate {
                epsilon: parse_f(&row[ce])?,
                estimate: parse_f(&row[ct])?,
                standard_error: parse_f(&row[cs])?,
                samples: tail_samples,
            });
        }
    }
    Ok(out)
}

fn eps_label(e: f64) -> String {
    e.to_string().replace('.', "p")
}

/// Writes records CSV, summary JSON with its schema, and plot-data TSVs to
/// `outdir` (created if missing).
///
/// Plot files, two columns each with a header line: `tail_mass_eps<ε>.tsv`
/// (n, median tail mass, censored medians at 1/(2S)), `l2_error.tsv`,
/// `sigma_hat.tsv` and `hellinger_avg.tsv`.
pub fn emit_report(
    records: &[ExperimentRecord],
    estimates: &[RateEstimate],
    epsilons: &[f64],
    lemma_reports: Option<&[LemmaReport]>,
    outdir: &Path,
) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    prepare_output_dir(outdir)?;
    let summary = Summary::build(records, estimates, epsilons, lemma_reports)?;
    let records_csv_path = outdir.join("records.csv");
    write_atomic(&records_csv_path, &records_csv(records, epsilons)?)?;
    let summary_json = outdir.join("summary.json");
    write_atomic(&summary_json, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let schema_json = outdir.join("summary.schema.json");
    write_atomic(&schema_json, SUMMARY_SCHEMA.as_bytes())?;

    let plot_dir = outdir.join("plot_data");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut plot_files = Vec::new();
    let mut series = |name: String, ycol: &str, pts: Vec<(usize, Option<f64>)>| -> Result<()> {
        let mut s = format!("n\t{ycol}\n");
        for (n, y) in pts {
            if let Some(y) = y {
                s.push_str(&format!("{n}\t{y}\n"));
            }
        }
        let path = plot_dir.join(name);
        write_atomic(&path, s.as_bytes())?;
        plot_files.push(path);
        Ok(())
    };
    for (i, &e) in epsilons.iter().enumerate() {
        let pts = summary
            .per_n
            .iter()
            .filter_map(|p| p.median_tail_mass.get(i).map(|m| (p.n, Some(m.regression_value))))
            .collect();
        series(format!("tail_mass_eps{}.tsv", eps_label(e)), "median_tail_mass", pts)?;
    }
    series("l2_error.tsv".into(), "median_l2_error", summary.per_n.iter().map(|p| (p.n, p.median_l2_error)).collect())?;
    series("sigma_hat.tsv".into(), "median_sigma_hat", summary.per_n.iter().map(|p| (p.n, p.median_sigma_hat)).collect())?;
    series(
        "hellinger_avg.tsv".into(),
        "median_hellinger_avg",
        summary.per_n.iter().map(|p| (p.n, p.median_hellinger_avg)).collect(),
    )?;
    Ok(ReportFiles {
        records_csv: records_csv_path,
        summary_json,
        schema_json,
        plot_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::estimate_delta;

    fn records() -> Vec<ExperimentRecord> {
        [100usize, 200, 400]
            .iter()
            .flat_map(|&n| {
                (0..2u64).map(move |s| ExperimentRecord {
                    n,
                    seed: s,
                    k_n: 3,
                    elbo_final: -123.456_789_012_345_6 - n as f64,
                    tail: [0.1, 0.5]
                        .iter()
                        .map(|&e| TailMassEstimate {
                            epsilon: e,
                            estimate: if e == 0.5 && n == 400 { 0.0 } else { 1.0 / (n as f64 + s as f64) },
                            standard_error: 0.001 / 3.0,
                            samples: 500,
                        })
                        .collect(),
                    hellinger_avg: 0.1 / 7.0,
                    l2_error: 1e-3 / n as f64,
                    sigma_hat: 1.0 + 1e-17,
                    runtime_s: 0.0,
                    diagnostics: FitDiagnostics::default(),
                })
            })
            .collect()
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records();
        let est: Vec<_> = [0.1, 0.5].iter().map(|&e| estimate_delta(&recs, e).unwrap()).collect();
        let files = emit_report(&recs, &est, &[0.1, 0.5], None, dir.path()).unwrap();
        let text = fs::read_to_string(&files.records_csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(text.lines().count(), 1 + 6 * 2);
        assert_eq!(read_records_csv(&files.records_csv, 500).unwrap(), recs);
    }

    #[test]
    fn empty_epsilon_grid_drops_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = records();
        for r in &mut recs {
            r.tail.clear();
        }
        let files = emit_report(&recs, &[], &[], None, dir.path()).unwrap();
        let text = fs::read_to_string(&files.records_csv).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "n,seed,k_n,elbo_final,hellinger_avg,l2_error,sigma_hat,runtime_s"
        );
        assert_eq!(read_records_csv(&files.records_csv, 500).unwrap(), recs);
    }

    #[test]
    fn summary_validates_and_censors() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records();
        let est: Vec<_> = [0.1, 0.5].iter().map(|&e| estimate_delta(&recs, e).unwrap()).collect();
        let lemma = crate::lemmas::verify_mills_ratio(&[1.0, 2.0]).unwrap();
        let files = emit_report(&recs, &est, &[0.1, 0.5], Some(&lemma), dir.path()).unwrap();
        let s = validate_summary(&fs::read_to_string(&files.summary_json).unwrap()).unwrap();
        let last = &s.per_n[2].median_tail_mass[1];
        assert!(last.censored && last.median == 0.0 && last.regression_value == 0.001);
        assert!(s.lemma_suite.unwrap().all_pass);
        // Every property the schema requires is present in the output.
        let schema: serde_json::Value = serde_json::from_str(SUMMARY_SCHEMA).unwrap();
        let out: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files.summary_json).unwrap()).unwrap();
        for key in schema["required"].as_array().unwrap() {
            assert!(out.get(key.as_str().unwrap()).is_some(), "{key}");
        }
        let props = schema["properties"].as_object().unwrap();
        for key in out.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "{key} missing from schema");
        }
        let plot = fs::read_to_string(dir.path().join("plot_data/tail_mass_eps0p5.tsv")).unwrap();
        assert_eq!(plot.lines().last().unwrap(), "400\t0.001");
        assert!(validate_summary(&out.to_string().replace("\"version\":1", "\"version\":9")).is_err());
    }

    #[test]
    fn unwritable_directory_fails_early() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain_file");
        fs::write(&file, "x").unwrap();
        assert!(matches!(prepare_output_dir(&file.join("sub")), Err(Error::Io { .. })));
        assert!(emit_report(&[], &[], &[], None, dir.path()).is_err());
    }
}
