//! Command implementations behind the `ulif` binary. Each command writes its outputs
//! atomically plus a `<out>.manifest.json` describing how they were produced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ulif_core::analysis::{aggregate_fit, analyze};
use ulif_core::bound::{BoundParams, BoundReport};
use ulif_core::fit::{GaussianFit, MgfFitConfig, PowerLognormalFit};
use ulif_core::montecarlo::{dkw_slack, ks_distance, simulate_aggregate, simulate_cell, Execution, SampleSet};
use ulif_core::scenario::{load_scenario, prepare, write_atomic};

/// Confidence level behind the DKW slack in compare verdicts.
pub const DKW_ALPHA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("sample file was drawn from scenario {samples} but the fit belongs to {fit}")]
    HashMismatch { samples: String, fit: String },
    #[error("invalid grid `{0}`: expected lo:hi:step with lo <= hi and step > 0")]
    Grid(String),
    #[error("invalid fit report {path}: {message}")]
    FitReport { path: String, message: String },
}

/// Process exit code for a failed command: 1 I/O, 2 input/schema, 3 numeric, 4 hash mismatch.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use ulif_core::Error as E;
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return match c {
                CliError::HashMismatch { .. } => 4,
                CliError::Grid(_) | CliError::FitReport { .. } => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e.root() {
                E::Io(_) => 1,
                E::Parse { .. } | E::Schema { .. } | E::InvalidRegion(_) | E::EmptyRegion | E::InvalidParameter(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    1
}

/// Evenly spaced dBm grid, `lo:hi:step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl FromStr for Grid {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Grid(s.to_string());
        let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let [lo, hi, step] = parts[..] else { return Err(bad()) };
        let ok = lo.is_finite() && hi.is_finite() && step.is_finite() && lo <= hi && step > 0.0 && (hi - lo) / step <= 1e7;
        if ok {
            Ok(Grid { lo, hi, step })
        } else {
            Err(bad())
        }
    }
}

/// Inputs and outputs of one command run. Contains no timestamps so that reruns are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub scenario_hash: String,
    pub bound: Option<BoundParams>,
    pub seed: Option<u64>,
    pub n: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, scenario_hash: String) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_hash,
            bound: None,
            seed: None,
            n: None,
            inputs: vec![],
            outputs: vec![],
        }
    }

    fn write_for(&self, out: &Path) -> Result<PathBuf> {
        let path = suffixed(out, ".manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// Bound report CSV: one row per interfering cell, then a `max` row with the column maxima
/// of the error components.
pub fn cmd_bound(scenario_path: &Path, out: &Path) -> Result<()> {
    let scenario = load_scenario(scenario_path)?;
    let cells = prepare(&scenario)?;
    let analyses = analyze(&scenario, &cells)?;
    let reports: Vec<BoundReport> = analyses.iter().map(|a| a.bound).collect();
    let mut csv = String::new();
    writeln!(csv, "{}", BoundReport::CSV_HEADER).unwrap();
    for r in &reports {
        writeln!(csv, "{}", r.csv_row()).unwrap();
    }
    let max = |f: fn(&BoundReport) -> f64| reports.iter().map(f).fold(0.0f64, f64::max);
    writeln!(
        csv,
        "max,{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},,",
        max(|r| r.eps1),
        max(|r| r.eps2),
        max(|r| r.eps1_prime),
        max(|r| r.eps2_prime),
        max(|r| r.eps3),
        max(|r| r.eps_total)
    )
    .unwrap();
    write_atomic(out, csv.as_bytes()).with_context(|| format!("writing {}", out.display()))?;

    let mut m = RunManifest::new("bound", scenario.hash());
    m.bound = Some(scenario.bound);
    m.inputs.push(display(scenario_path));
    m.outputs.push(display(out));
    m.write_for(out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub id: u32,
    /// Gaussian fit of the coupling gain plus shadowing, before fading.
    pub g: GaussianFit,
    /// Gaussian fit of the interference in dBm.
    pub q: GaussianFit,
    pub eps_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub scenario_hash: String,
    pub lambda: f64,
    pub mu_q_dbm: f64,
    pub sigma_q2_db2: f64,
    pub mu_x_dbm: f64,
    pub sigma_x_db: f64,
    /// Differences between the fitted and the target tail slopes, upper then lower.
    pub tail_slope_residuals: [f64; 2],
    pub eps_max: f64,
    pub per_cell: Vec<CellFit>,
    pub cdf_csv: String,
}

impl FitReport {
    pub fn power_lognormal(&self) -> PowerLognormalFit {
        PowerLognormalFit { lambda: self.lambda, mu_q: self.mu_q_dbm, sigma_q2: self.sigma_q2_db2 }
    }
}

/// CSV of the aggregate CDF is written next to the JSON report as `<out>.cdf.csv`.
pub fn cmd_fit(scenario_path: &Path, out: &Path, grid: Grid) -> Result<()> {
    let scenario = load_scenario(scenario_path)?;
    let cells = prepare(&scenario)?;
    let analyses = analyze(&scenario, &cells)?;
    let agg = aggregate_fit(&analyses, &MgfFitConfig::default())?;
    let fits: Vec<GaussianFit> = analyses.iter().map(|a| a.q).collect();
    let (upper, lower) = agg.fit.tail_slope_residuals(agg.sigma_x, &fits);

    let cdf_path = suffixed(out, ".cdf.csv");
    let mut csv = String::from("dbm,cdf\n");
    for q in grid.points() {
        writeln!(csv, "{:.16e},{:.16e}", q, agg.fit.cdf_db(q)).unwrap();
    }
    write_atomic(&cdf_path, csv.as_bytes()).with_context(|| format!("writing {}", cdf_path.display()))?;

    let report = FitReport {
        scenario_hash: scenario.hash(),
        lambda: agg.fit.lambda,
        mu_q_dbm: agg.fit.mu_q,
        sigma_q2_db2: agg.fit.sigma_q2,
        mu_x_dbm: agg.mu_x,
        sigma_x_db: agg.sigma_x,
        tail_slope_residuals: [upper, lower],
        eps_max: analyses.iter().map(|a| a.bound.eps_total).fold(0.0, f64::max),
        per_cell: analyses.iter().map(|a| CellFit { id: a.id, g: a.g, q: a.q, eps_total: a.bound.eps_total }).collect(),
        cdf_csv: display(&cdf_path),
    };
    write_json(out, &report)?;

    let mut m = RunManifest::new("fit", report.scenario_hash.clone());
    m.bound = Some(scenario.bound);
    m.inputs.push(display(scenario_path));
    m.outputs.extend([display(out), display(&cdf_path)]);
    m.write_for(out)?;
    Ok(())
}

/// Single-cell scenarios record `I_b` directly; otherwise the dBm value of the mW sum.
pub fn cmd_simulate(scenario_path: &Path, n: usize, seed: u64, out: &Path, exec: Execution, ecdf: Option<&Path>) -> Result<()> {
    let scenario = load_scenario(scenario_path)?;
    let cells = prepare(&scenario)?;
    let samples = match cells.as_slice() {
        [one] => simulate_cell(one, scenario.victim_bs, &scenario.channel, &scenario.fading, n, seed, exec)?,
        many => simulate_aggregate(many, scenario.victim_bs, &scenario.channel, &scenario.fading, n, seed, exec)?,
    };
    let hash = scenario.hash();
    samples.save(out, &hash).with_context(|| format!("writing {}", out.display()))?;

    let mut m = RunManifest::new("simulate", hash);
    m.seed = Some(seed);
    m.n = Some(n as u64);
    m.inputs.push(display(scenario_path));
    m.outputs.extend([display(out), display(&ulif_core::montecarlo::sidecar_path(out))]);
    if let Some(path) = ecdf {
        let mut buf = Vec::new();
        samples.write_ecdf_csv(&mut buf)?;
        write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))?;
        m.outputs.push(display(path));
    }
    m.write_for(out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// `gaussian` for a single interferer, `power_lognormal` for an aggregate.
    pub reference: String,
    pub n: u64,
    pub ks_empirical_vs_fit: f64,
    pub eps_total: f64,
    pub dkw_slack: f64,
    /// `ks <= eps_total + dkw_slack`. Absent for aggregates, whose last approximation step
    /// carries no analytic error bound.
    pub pass: Option<bool>,
}

/// Verdict for an empirical-vs-analytic KS distance. `bounded` says whether `eps_total`
/// really bounds the distance being checked.
pub fn verdict(ks: f64, eps_total: f64, n: usize, bounded: bool) -> (f64, Option<bool>) {
    let slack = dkw_slack(n, DKW_ALPHA);
    (slack, bounded.then_some(ks <= eps_total + slack))
}

pub fn compare(samples: &SampleSet, fit: &FitReport) -> CompareReport {
    let (reference, ks, eps, bounded) = match fit.per_cell.as_slice() {
        [one] => ("gaussian", ks_distance(samples, |q| one.q.cdf(q)), one.eps_total, true),
        _ => {
            let pln = fit.power_lognormal();
            ("power_lognormal", ks_distance(samples, |q| pln.cdf_db(q)), fit.eps_max, false)
        }
    };
    let (dkw, pass) = verdict(ks, eps, samples.n(), bounded);
    CompareReport { reference: reference.into(), n: samples.n() as u64, ks_empirical_vs_fit: ks, eps_total: eps, dkw_slack: dkw, pass }
}

pub fn cmd_compare(samples_path: &Path, fit_path: &Path, out: &Path) -> Result<()> {
    let (samples, meta) = SampleSet::load(samples_path).with_context(|| format!("reading {}", samples_path.display()))?;
    let text = std::fs::read_to_string(fit_path).with_context(|| format!("reading {}", fit_path.display()))?;
    let fit: FitReport = serde_json::from_str(&text)
        .map_err(|e| CliError::FitReport { path: display(fit_path), message: e.to_string() })?;
    if fit.scenario_hash != meta.scenario_hash {
        return Err(CliError::HashMismatch { samples: meta.scenario_hash, fit: fit.scenario_hash }.into());
    }
    let report = compare(&samples, &fit);
    write_json(out, &report)?;

    let mut m = RunManifest::new("compare", meta.scenario_hash);
    m.seed = Some(meta.seed);
    m.n = Some(meta.n);
    m.inputs.extend([display(samples_path), display(fit_path)]);
    m.outputs.push(display(out));
    m.write_for(out)?;
    Ok(())
}
