use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use survcusum::arl::{arl_bk, arl_cgi, ArlQuery, ArlValue, FrailtyDist, DEFAULT_T_MAX};
use survcusum::charts::{
    compute_bernoulli, compute_bk, compute_cgi, compute_cgr, detection_time, funnel_points, round_up_to_month, ChartSeries,
    ChartSpec, FunnelLimits,
};
use survcusum::coxfit::fit_cox;
use survcusum::exec::{map_indexed, Execution};
use survcusum::io::{read_patients, read_risk_model, write_risk_model, write_series_csv, PatientTable};
use survcusum::model::{BaselineHazard, HospitalStream, PatientRecord, RiskModel};
use survcusum::simulate::{
    calibrate_control_limits, detection_times, power_curves, summarize_run_lengths, CalibrationTarget, SimConfig,
};

use crate::config::{self, Experiment};
use crate::error::{config as config_error, io, CliError, CliResult};
use crate::output::{hash_file, render, safe_name, sha256_hex, Format, OutDir};
use crate::spec::ChartChoice;
use crate::svg::line_plot;

pub const DEFAULT_SEED: u64 = 1;

/// Flags shared by every subcommand.
pub struct Globals {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Format,
}

impl Globals {
    fn out(&self, fallback: Option<PathBuf>) -> CliResult<OutDir> {
        let dir = self.out_dir.clone().or(fallback).unwrap_or_else(|| PathBuf::from("."));
        OutDir::create(dir, self.format)
    }
}

fn read_table(path: &Path) -> CliResult<(PatientTable, String)> {
    let bytes = std::fs::read(path).map_err(io(format!("reading {}", path.display())))?;
    Ok((read_patients(bytes.as_slice())?, sha256_hex(&bytes)))
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

// ---------------------------------------------------------------- fit

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Patient CSV.
    pub csv: PathBuf,
    /// Ignore covariate columns and estimate the baseline only.
    #[arg(long)]
    pub no_covariates: bool,
}

#[derive(Serialize)]
struct FitRow {
    term: String,
    beta: f64,
    se: f64,
}

pub fn fit(g: &Globals, a: &FitArgs) -> CliResult<()> {
    let (table, digest) = read_table(&a.csv)?;
    let mut records: Vec<PatientRecord> = table.all_records().cloned().collect();
    if a.no_covariates {
        records.iter_mut().for_each(|r| r.covariates.clear());
    }
    let fit = fit_cox(&records)?;
    let names = if a.no_covariates { Vec::new() } else { table.covariate_names.clone() };
    let rows: Vec<FitRow> = names
        .iter()
        .zip(fit.beta_hat.iter().zip(&fit.standard_errors))
        .map(|(term, (&beta, &se))| FitRow {
            term: term.clone(),
            beta,
            se,
        })
        .collect();

    let mut out = g.out(None)?;
    out.raw("model.toml", write_risk_model(&fit.risk_model())?.as_bytes())?;
    out.table("fit_summary", &rows)?;
    let events = records.iter().filter(|r| r.event).count();
    println!(
        "fitted {} patients, {events} events, {} iteration(s), log partial likelihood {:.4}",
        records.len(),
        fit.iterations,
        fit.log_partial_likelihood
    );
    for r in &rows {
        println!("  {:<16} beta {:>9.4}  se {:.4}", r.term, r.beta, r.se);
    }
    out.finish("fit", g.seed.unwrap_or(DEFAULT_SEED), BTreeMap::from([(file_label(&a.csv), digest)]))
}

// ---------------------------------------------------------------- chart

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FunnelLimitsArg {
    Normal,
    Exact,
}

#[derive(Args, Debug)]
pub struct ChartArgs {
    /// Patient CSV.
    pub csv: PathBuf,
    /// Risk-model document, as written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub choice: ChartChoice,
    /// Control limit; enables the detection column.
    #[arg(long)]
    pub h: Option<f64>,
    /// Round detection times up to 30-day months.
    #[arg(long)]
    pub monthly: bool,
    /// Restrict to these hospital ids (repeatable).
    #[arg(long = "hospital")]
    pub hospitals: Vec<String>,
    /// Evaluation horizon in days; defaults to the last exit in the file.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Also draw each series as SVG.
    #[arg(long)]
    pub svg: bool,
    /// Funnel limit construction.
    #[arg(long, value_enum, default_value = "normal")]
    pub funnel_limits: FunnelLimitsArg,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    hospital: &'a str,
    patients: usize,
    failures: usize,
    max_value: f64,
    detection_time: Option<f64>,
}

fn compute(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec) -> survcusum::Result<ChartSeries> {
    match spec {
        ChartSpec::Cgi { .. } => compute_cgi(stream, model, spec),
        ChartSpec::Cgr { .. } => compute_cgr(stream, model, spec),
        ChartSpec::Bk { .. } => compute_bk(stream, model, spec),
        _ => compute_bernoulli(stream, model, spec),
    }
}

pub fn chart(g: &Globals, a: &ChartArgs) -> CliResult<()> {
    let spec = a.choice.to_spec()?;
    if let Some(h) = a.h {
        if !(h > 0.0 && h.is_finite()) {
            return Err(config_error(format!("h must be a finite number > 0, got {h}")));
        }
    }
    let is_funnel = matches!(spec, ChartSpec::Funnel { .. });
    if is_funnel && (a.h.is_some() || a.monthly) {
        return Err(config_error("funnel plots take no control limit"));
    }
    let (table, csv_digest) = read_table(&a.csv)?;
    let model_text = std::fs::read_to_string(&a.model).map_err(io(format!("reading {}", a.model.display())))?;
    let model = read_risk_model(&model_text)?;
    model.check_dimension(table.covariate_names.len())?;

    if let Some(unknown) = a.hospitals.iter().find(|id| !table.hospitals.iter().any(|h| &h.hospital == *id)) {
        return Err(config_error(format!("unknown hospital id `{unknown}`")));
    }
    let horizon = a.horizon.unwrap_or_else(|| table.last_exit());
    let streams = table
        .hospitals
        .iter()
        .filter(|h| a.hospitals.is_empty() || a.hospitals.contains(&h.hospital))
        .map(|h| Ok((h.hospital.clone(), HospitalStream::new(h.records.clone(), horizon)?)))
        .collect::<CliResult<Vec<_>>>()?;

    let mut out = g.out(None)?;
    if is_funnel {
        let limits = match a.funnel_limits {
            FunnelLimitsArg::Normal => FunnelLimits::Normal,
            FunnelLimitsArg::Exact => FunnelLimits::ExactBinomial,
        };
        let report = funnel_points(&streams, &model, &spec, limits)?;
        out.table("funnel", &report.points)?;
        for s in &report.skipped {
            eprintln!("note: skipped hospital {} at day {}: {}", s.hospital, s.period_end, s.reason);
        }
        if !report.skipped.is_empty() {
            out.table("funnel_skipped", &report.skipped)?;
        }
        let flagged = report.points.iter().filter(|p| p.out_of_control).count();
        println!("{} funnel points, {flagged} above the upper limit", report.points.len());
    } else {
        let series = map_indexed(Execution::default(), streams.len(), |i| compute(&streams[i].1, &model, &spec))
            .into_iter()
            .collect::<survcusum::Result<Vec<_>>>()?;
        let mut summary = Vec::with_capacity(series.len());
        for ((id, stream), s) in streams.iter().zip(&series) {
            let detection = match a.h {
                Some(h) => detection_time(s, h)?.map(|t| if a.monthly { round_up_to_month(t) } else { t }),
                None => None,
            };
            summary.push(SummaryRow {
                hospital: id,
                patients: stream.len(),
                failures: stream.records().iter().filter(|r| r.event).count(),
                max_value: s.max_value(),
                detection_time: detection,
            });
            let stem = format!("series_{}", safe_name(id));
            match g.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_series_csv(&mut buf, s)?;
                    out.raw(&format!("{stem}.csv"), &buf)?;
                }
                Format::Json => {
                    out.table(&stem, &s.points)?;
                }
            }
            if a.svg {
                let pts: Vec<(f64, f64)> = s.points.iter().map(|p| (p.time, p.value)).collect();
                let title = format!("{} - hospital {id}", spec.label());
                out.raw(&format!("chart_{}.svg", safe_name(id)), line_plot(&title, &pts, a.h).as_bytes())?;
            }
        }
        out.table("summary", &summary)?;
        for r in &summary {
            match r.detection_time {
                Some(t) => println!("{}: signal at day {t}", r.hospital),
                None if a.h.is_some() => println!("{}: no signal (max {:.4})", r.hospital, r.max_value),
                None => println!("{}: max {:.4}", r.hospital, r.max_value),
            }
        }
    }
    let inputs = BTreeMap::from([
        (file_label(&a.csv), csv_digest),
        (file_label(&a.model), sha256_hex(model_text.as_bytes())),
    ]);
    out.finish("chart", g.seed.unwrap_or(DEFAULT_SEED), inputs)
}

// ---------------------------------------------------------------- arl

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArlChart {
    Cgi,
    Cgr,
    Bk,
}

#[derive(Args, Debug)]
pub struct ArlArgs {
    #[arg(long, value_enum)]
    pub chart: ArlChart,
    /// True hazard ratio(s), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub theta_ratio: Vec<f64>,
    /// Hazard ratio the BK chart is tuned to.
    #[arg(long)]
    pub theta1_ratio: Option<f64>,
    #[arg(long)]
    pub h: f64,
    /// Arrival rate per day.
    #[arg(long)]
    pub psi: f64,
    /// Exponential baseline hazard rate per day.
    #[arg(long, conflicts_with = "model")]
    pub lambda: Option<f64>,
    /// Take the baseline from a risk-model document instead.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gamma frailty variance for the relative risks.
    #[arg(long)]
    pub gamma_delta: Option<f64>,
    /// Give up beyond this many days.
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    pub t_max: f64,
}

#[derive(Serialize)]
struct ArlRow {
    chart: String,
    theta_ratio: f64,
    theta1_ratio: Option<f64>,
    h: f64,
    psi: f64,
    arl: String,
}

pub fn arl(g: &Globals, a: &ArlArgs) -> CliResult<()> {
    let (baseline, mut inputs) = match (&a.lambda, &a.model) {
        (Some(rate), None) => (BaselineHazard::exponential(*rate)?, BTreeMap::new()),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(io(format!("reading {}", p.display())))?;
            (read_risk_model(&text)?.baseline, BTreeMap::from([(file_label(p), sha256_hex(text.as_bytes()))]))
        }
        _ => return Err(config_error("give exactly one of --lambda or --model")),
    };
    let frailty = match a.gamma_delta {
        Some(d) => FrailtyDist::gamma(d)?,
        None => FrailtyDist::Degenerate,
    };
    let theta1 = match (a.chart, a.theta1_ratio) {
        (ArlChart::Bk, Some(r)) if r > 1.0 => Some(r.ln()),
        (ArlChart::Bk, Some(r)) => return Err(config_error(format!("theta1-ratio must exceed 1, got {r}"))),
        (ArlChart::Bk, None) => return Err(config_error("the BK chart needs --theta1-ratio")),
        (_, Some(_)) => return Err(config_error("--theta1-ratio only applies to the BK chart")),
        (_, None) => None,
    };
    let mut rows = Vec::with_capacity(a.theta_ratio.len());
    for &r in &a.theta_ratio {
        if !(r >= 1.0 && r.is_finite()) {
            return Err(config_error(format!("theta-ratio must be >= 1, got {r}")));
        }
        let q = ArlQuery::new(r.ln(), a.h, a.psi, baseline.clone())
            .with_frailty(frailty.clone())
            .with_t_max(a.t_max);
        let value = match theta1 {
            Some(t1) => arl_bk(&q.with_theta1(t1))?,
            None => ArlValue::Finite(arl_cgi(&q)?),
        };
        rows.push(ArlRow {
            chart: format!("{:?}", a.chart).to_lowercase(),
            theta_ratio: r,
            theta1_ratio: a.theta1_ratio,
            h: a.h,
            psi: a.psi,
            arl: value.to_string(),
        });
    }
    print!("{}", String::from_utf8_lossy(&render(&rows, g.format)?));
    // files only when an output directory was asked for
    if g.out_dir.is_some() {
        let mut out = g.out(None)?;
        out.table("arl", &rows)?;
        inputs.insert("arguments".into(), sha256_hex(format!("{a:?}").as_bytes()));
        out.finish("arl", g.seed.unwrap_or(DEFAULT_SEED), inputs)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- calibrate / simulate

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Serialize)]
struct LimitRow {
    psi: f64,
    chart: String,
    h: f64,
    achieved: f64,
}

#[derive(Serialize)]
struct RunRow {
    psi: f64,
    theta_ratio: f64,
    chart: String,
    h: f64,
    n: usize,
    detected: usize,
    censored: usize,
    arl: f64,
    sd: f64,
    mrl: f64,
    theory: String,
}

#[derive(Serialize)]
struct PowerRow {
    psi: f64,
    theta_ratio: f64,
    chart: String,
    time: f64,
    power: f64,
}

struct Loaded {
    exp: Experiment,
    seed: u64,
    out: OutDir,
    inputs: BTreeMap<String, String>,
}

fn load_experiment(g: &Globals, a: &ExperimentArgs) -> CliResult<Loaded> {
    let (exp, text) = config::load(&a.config)?;
    let seed = g.seed.or(exp.seed).unwrap_or(DEFAULT_SEED);
    let mut inputs = BTreeMap::from([("config".to_string(), sha256_hex(text.as_bytes()))]);
    for f in &exp.files {
        inputs.insert(file_label(f), hash_file(f)?);
    }
    let mut out = g.out(exp.output_dir.clone())?;
    out.raw("config.toml", text.as_bytes())?;
    Ok(Loaded { exp, seed, out, inputs })
}

fn sim_config(exp: &Experiment, psi: f64, seed: u64) -> SimConfig {
    SimConfig::new(psi, exp.horizon, exp.n_hospitals, exp.model.clone(), seed).with_covariates(exp.covariates.clone())
}

fn calibrate_rows(exp: &Experiment, psi: f64, seed: u64, target: &CalibrationTarget) -> CliResult<Vec<LimitRow>> {
    Ok(calibrate_control_limits(&exp.specs, &sim_config(exp, psi, seed), target)?
        .into_iter()
        .map(|c| LimitRow {
            psi,
            chart: c.spec.label(),
            h: c.h,
            achieved: c.achieved,
        })
        .collect())
}

pub fn calibrate(g: &Globals, a: &ExperimentArgs) -> CliResult<()> {
    let Loaded {
        exp,
        seed,
        mut out,
        inputs,
    } = load_experiment(g, a)?;
    let target = exp.target.ok_or_else(|| config_error("calibrate needs a [target] section"))?;
    if exp.limits.is_some() {
        return Err(config_error("`limits` is not used by calibrate"));
    }
    let mut rows = Vec::new();
    for &psi in &exp.psi {
        rows.extend(calibrate_rows(&exp, psi, seed, &target)?);
    }
    out.table("control_limits", &rows)?;
    print!("{}", String::from_utf8_lossy(&render(&rows, g.format)?));
    out.finish("calibrate", seed, inputs)
}

fn theory(exp: &Experiment, spec: &ChartSpec, theta: f64, h: f64, psi: f64, frailty: &FrailtyDist) -> CliResult<String> {
    let q = ArlQuery::new(theta, h, psi, exp.model.baseline.clone()).with_frailty(frailty.clone());
    let value = match spec {
        ChartSpec::Cgi { .. } | ChartSpec::Cgr { .. } => arl_cgi(&q).map(ArlValue::Finite),
        ChartSpec::Bk { theta1 } => arl_bk(&q.with_theta1(*theta1)),
        _ => return Ok("NA".into()),
    };
    match value {
        Ok(v) => Ok(v.to_string()),
        Err(survcusum::Error::NoApproximation | survcusum::Error::HorizonExceeded { .. }) => Ok("NA".into()),
        Err(e) => Err(CliError::Core(e)),
    }
}

pub fn simulate(g: &Globals, a: &ExperimentArgs) -> CliResult<()> {
    let Loaded {
        exp,
        seed,
        mut out,
        inputs,
    } = load_experiment(g, a)?;
    let frailty = exp.frailty()?;
    let steps = (exp.horizon / exp.power_step).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * exp.power_step).collect();
    let (mut limit_rows, mut run_rows, mut power_rows) = (Vec::new(), Vec::new(), Vec::new());

    for &psi in &exp.psi {
        let limits: Vec<f64> = match (&exp.limits, &exp.target) {
            (Some(l), _) => l.clone(),
            (None, Some(target)) => {
                let rows = calibrate_rows(&exp, psi, seed, target)?;
                let h = rows.iter().map(|r| r.h).collect();
                limit_rows.extend(rows);
                h
            }
            (None, None) => return Err(config_error("simulate needs either `limits` or a [target] section")),
        };
        for (j, &ratio) in exp.theta_ratios.iter().enumerate() {
            let theta = ratio.ln();
            // fresh streams, independent of the calibration sample
            let cfg = sim_config(&exp, psi, seed.wrapping_add(1 + j as u64)).with_theta(theta);
            let det = detection_times(&exp.specs, &cfg, &limits)?;
            let table = summarize_run_lengths(&exp.specs, &limits, &det, theta, exp.horizon);
            for row in table.rows {
                run_rows.push(RunRow {
                    psi,
                    theta_ratio: ratio,
                    chart: row.spec.label(),
                    h: row.h,
                    n: row.n,
                    detected: row.detected,
                    censored: row.censored,
                    arl: row.arl,
                    sd: row.sd,
                    mrl: row.mrl,
                    theory: theory(&exp, &row.spec, theta, row.h, psi, &frailty)?,
                });
            }
            for curve in power_curves(&exp.specs, &limits, &det, &grid) {
                let chart = curve.spec.label();
                power_rows.extend(curve.grid.iter().zip(&curve.power).map(|(&time, &power)| PowerRow {
                    psi,
                    theta_ratio: ratio,
                    chart: chart.clone(),
                    time,
                    power,
                }));
            }
        }
    }
    if !limit_rows.is_empty() {
        out.table("control_limits", &limit_rows)?;
    }
    out.table("run_lengths", &run_rows)?;
    out.table("power", &power_rows)?;
    print!("{}", String::from_utf8_lossy(&render(&run_rows, g.format)?));
    out.finish("simulate", seed, inputs)
}
