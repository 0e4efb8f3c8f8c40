//! Runs the selected estimators and writes CSV tables, JSON summaries and
//! the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dynwalk::estimators::clt::{annealed_cf_error, path_diagnostics};
use dynwalk::estimators::drift::estimate_drift;
use dynwalk::estimators::ldp::large_deviation_rate;
use dynwalk::estimators::quenched::quenched_concentration;
use dynwalk::estimators::two_walk::{
    crossing_statistics, cross_correlation_vs_distance, encounter_count, excursion_survival,
};
use dynwalk::estimators::variance::{variance_empirical, variance_green_kubo};
use dynwalk::estimators::{Report, Table};
use dynwalk::experiment::Experiment;
use dynwalk::gambler::{check_domination, ruin_probability, simulate_ruin};
use dynwalk::lattice::LatticePoint;
use dynwalk::rng::{derive, tag};
use dynwalk::spectral::{build_ulam, center_observable, correlation_decay, density_csv, invariant_density};
use dynwalk::stats::ScalingFit;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig};

/// One estimator's output before it is written.
struct Output {
    /// File stem, usually the estimator name.
    stem: String,
    csv: String,
    values: Value,
    fit: Option<ScalingFit>,
    summary: String,
}

#[derive(Debug, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub estimator: String,
    pub bytes: u64,
    pub sha256: String,
    pub written_unix: u64,
}

#[derive(Debug, Serialize)]
pub struct EstimatorEntry {
    pub name: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub estimators: Vec<EstimatorEntry>,
    pub artifacts: Vec<ArtifactEntry>,
    pub failed: Vec<String>,
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub quiet: bool,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn report_output<R: Report>(stem: &str, report: &R, summary: String) -> Output {
    Output {
        stem: stem.to_string(),
        csv: report.table().to_csv(),
        values: serde_json::to_value(report).expect("report serializes"),
        fit: report.fit().cloned(),
        summary,
    }
}

fn fmt_fit(fit: Option<&ScalingFit>) -> String {
    match fit {
        Some(f) => format!("slope {:.4} (r² {:.4})", f.slope, f.r_squared),
        None => "no fit".into(),
    }
}

/// Runs every selected estimator; returns true when all succeeded.
pub fn run(cfg: &ExperimentConfig, names: &[&str], opts: &RunOptions) -> Result<bool, ConfigError> {
    let started = unix_now();
    let hash = cfg.config_hash();
    let needs_walk = names.iter().any(|n| !matches!(*n, "spectrum" | "gambler"));
    let exp = if needs_walk { Some(cfg.build_experiment(opts.seed)?) } else { None };
    fs::create_dir_all(&opts.out_dir)
        .map_err(|source| ConfigError::Io { path: opts.out_dir.display().to_string(), source })?;

    let mut artifacts = Vec::new();
    let mut estimators = Vec::new();
    let mut failed = Vec::new();
    for &name in names {
        let clock = std::time::Instant::now();
        let result = run_one(cfg, exp.as_ref(), name, opts.seed);
        let seconds = clock.elapsed().as_secs_f64();
        match result {
            Ok(outputs) => {
                for o in outputs {
                    if !opts.quiet {
                        println!("{}: {}", o.stem, o.summary);
                    }
                    let summary = json!({
                        "estimator": o.stem,
                        "config_hash": hash,
                        "seed": opts.seed,
                        "values": o.values,
                        "fit": o.fit,
                    });
                    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
                    text.push('\n');
                    artifacts.push(write_artifact(&opts.out_dir, &format!("{}.csv", o.stem), name, o.csv.as_bytes())?);
                    artifacts.push(write_artifact(&opts.out_dir, &format!("{}.json", o.stem), name, text.as_bytes())?);
                }
                estimators.push(EstimatorEntry { name: name.into(), status: "ok", error: None, seconds });
            }
            Err(e) => {
                eprintln!("{name}: failed: {e}");
                failed.push(name.to_string());
                estimators.push(EstimatorEntry { name: name.into(), status: "failed", error: Some(e.to_string()), seconds });
            }
        }
    }
    let manifest = Manifest {
        config_hash: hash,
        seed: opts.seed,
        threads: opts.threads,
        started_unix: started,
        finished_unix: unix_now(),
        estimators,
        artifacts,
        failed,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = opts.out_dir.join("manifest.json");
    fs::write(&path, text).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    Ok(manifest.failed.is_empty())
}

fn write_artifact(dir: &Path, file: &str, estimator: &str, bytes: &[u8]) -> Result<ArtifactEntry, ConfigError> {
    let path = dir.join(file);
    fs::write(&path, bytes).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    Ok(ArtifactEntry {
        path: file.to_string(),
        estimator: estimator.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(bytes)),
        written_unix: unix_now(),
    })
}

fn walk<'a>(exp: Option<&'a Experiment>) -> &'a Experiment {
    exp.expect("walk estimators run with an experiment")
}

fn run_one(cfg: &ExperimentConfig, exp: Option<&Experiment>, name: &str, seed: u64) -> dynwalk::Result<Vec<Output>> {
    let est = &cfg.estimators;
    let out = match name {
        "spectrum" => {
            let s = est.spectrum.as_ref().expect("selected");
            let map = cfg.map.build()?;
            let ulam = build_ulam(&map, s.n_bins)?;
            let report = invariant_density(&ulam)?;
            let decay = match s.decay_lags {
                Some(lags) => {
                    let phi: Vec<f64> = (0..s.n_bins).map(|i| if 2 * i < s.n_bins { 1.0 } else { 0.0 }).collect();
                    let phi = center_observable(&phi, &report.invariant_density);
                    Some(correlation_decay(&ulam, &phi, lags)?)
                }
                None => None,
            };
            let summary = format!("second modulus {:.6}, {} bins", report.second_modulus, report.n_bins);
            let values = json!({ "report": report, "correlation_decay": decay });
            vec![Output { stem: name.into(), csv: density_csv(&report), values, fit: None, summary }]
        }
        "drift" => {
            let r = estimate_drift(walk(exp), est.drift.as_ref().expect("selected"))?;
            let summary = format!("{:?} ± {:?}", r.drift.value, r.drift.std_error);
            vec![report_output(name, &r, summary)]
        }
        "variance" => {
            let v = est.variance.as_ref().expect("selected");
            let mut outs = Vec::new();
            if let Some(p) = &v.green_kubo {
                let r = variance_green_kubo(walk(exp), p)?;
                let summary = format!("{:?} ± {:?}", r.sigma2.value, r.sigma2.std_error);
                outs.push(report_output("variance-green-kubo", &r, summary));
            }
            if let Some(p) = &v.empirical {
                let r = variance_empirical(walk(exp), p)?;
                let summary = format!("{:?} ± {:?}", r.sigma2.value, r.sigma2.std_error);
                outs.push(report_output("variance-empirical", &r, summary));
            }
            if outs.is_empty() {
                return Err(dynwalk::Error::Argument("variance section selects neither green_kubo nor empirical".into()));
            }
            outs
        }
        "clt-annealed" => {
            let r = annealed_cf_error(walk(exp), est.clt_annealed.as_ref().expect("selected"))?;
            vec![report_output(name, &r, fmt_fit(r.fit()))]
        }
        "clt-quenched" => {
            let r = quenched_concentration(walk(exp), est.clt_quenched.as_ref().expect("selected"))?;
            let summary = match &r.failure {
                Some(f) => format!("no fit: {f}"),
                None => fmt_fit(r.fit()),
            };
            vec![report_output(name, &r, summary)]
        }
        "ldp" => {
            let r = large_deviation_rate(walk(exp), est.ldp.as_ref().expect("selected"))?;
            let rates: Vec<String> = r
                .curves
                .iter()
                .map(|c| format!("a={} rate {}", c.a, c.rate.map_or("n/a".into(), |x| format!("{x:.5}"))))
                .collect();
            vec![report_output(name, &r, rates.join(", "))]
        }
        "encounters" => {
            let r = encounter_count(walk(exp), est.encounters.as_ref().expect("selected"))?;
            vec![report_output(name, &r, fmt_fit(r.fit()))]
        }
        "excursions" => {
            let r = excursion_survival(walk(exp), est.excursions.as_ref().expect("selected"))?;
            let summary = match r.rho {
                Some(rho) => format!("rho {rho:.4}, {}", fmt_fit(r.fit())),
                None => "no fit".into(),
            };
            vec![report_output(name, &r, summary)]
        }
        "crossings" => {
            let r = crossing_statistics(walk(exp), est.crossings.as_ref().expect("selected"))?;
            let summary = format!("mean J {:.4} ± {:.4}, {} interleaving violations", r.mean_j, r.j_se, r.interleaving_violations);
            vec![report_output(name, &r, summary)]
        }
        "gambler" => vec![gambler(cfg, seed)?],
        "ellipticity-check" => {
            let e = est.ellipticity_check.as_ref().expect("selected");
            let kernel = &walk(exp).kernel;
            let l_set: Option<Vec<LatticePoint>> =
                e.l_set.as_ref().map(|ls| ls.iter().map(|l| LatticePoint::from_slice(l)).collect());
            let r = kernel.check_ellipticity(l_set.as_deref(), e.samples, e.torus_grid, derive(seed, &[tag::ELLIPTIC]));
            let mut t = Table::new(&["l", "min_gap", "pass"]);
            for entry in &r.entries {
                let l: Vec<String> = entry.l.iter().map(|c| c.to_string()).collect();
                t.push(vec![l.join(";"), entry.min_gap.to_string(), entry.pass.to_string()]);
            }
            let summary = format!("{} over {} windows", if r.pass { "pass" } else { "FAIL" }, r.sample_count);
            vec![Output {
                stem: name.into(),
                csv: t.to_csv(),
                values: serde_json::to_value(&r).expect("report serializes"),
                fit: None,
                summary,
            }]
        }
        "path" => {
            let r = path_diagnostics(walk(exp), est.path.as_ref().expect("selected"))?;
            let summary = format!("Hölder median {:.4}, max {:.4}", r.holder.median, r.holder.max);
            vec![report_output(name, &r, summary)]
        }
        "decorrelation" => {
            let r = cross_correlation_vs_distance(walk(exp), est.decorrelation.as_ref().expect("selected"))?;
            let mags: Vec<String> = r.points.iter().map(|q| format!("{}: {:.3e}", q.separation, q.magnitude)).collect();
            vec![report_output(name, &r, mags.join(", "))]
        }
        other => return Err(dynwalk::Error::Argument(format!("unknown estimator '{other}'"))),
    };
    Ok(out)
}

fn gambler(cfg: &ExperimentConfig, seed: u64) -> dynwalk::Result<Output> {
    let g = cfg.estimators.gambler.as_ref().expect("selected");
    let problem = dynwalk::gambler::RuinProblem::new(g.p, g.alpha1, g.alpha, g.alpha2)?;
    let closed = ruin_probability(&problem)?;
    let mut t = Table::new(&["quantity", "value", "std_error"]);
    t.push(vec!["closed_form".into(), closed.to_string(), String::new()]);
    let simulation = match g.paths {
        Some(m) => {
            let est = simulate_ruin(&problem, m, seed)?;
            t.push(vec!["monte_carlo".into(), est.get().to_string(), est.se().to_string()]);
            Some(est)
        }
        None => None,
    };
    let domination = match &g.domination {
        Some(d) => {
            let (floor, lift) = (d.floor, d.lift);
            let r = check_domination(
                move |h: &[i64]| if h.last().copied().unwrap_or(0).rem_euclid(2) == 1 { floor + lift } else { floor },
                floor,
                d.paths,
                d.steps,
                seed,
            )?;
            t.push(vec!["domination_violations".into(), r.violations.to_string(), String::new()]);
            Some(r)
        }
        None => None,
    };
    let mut summary = format!("closed form {closed:.6}");
    if let Some(s) = &simulation {
        summary.push_str(&format!(", monte carlo {:.6} ± {:.6}", s.get(), s.se()));
    }
    if let Some(d) = &domination {
        summary.push_str(&format!(", {} domination violations", d.violations));
    }
    let values = json!({
        "problem": problem,
        "closed_form": closed,
        "simulation": simulation,
        "domination": domination,
    });
    Ok(Output { stem: "gambler".into(), csv: t.to_csv(), values, fit: None, summary })
}
