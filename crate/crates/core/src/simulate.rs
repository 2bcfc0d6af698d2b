//! Monte-Carlo experiments: synthetic hospitals, control-limit calibration,
//! run lengths and power over time.
//!
//! A hospital is a Poisson(`psi`) stream of arrivals on `[0, horizon]` whose
//! survival times follow the risk model with every hazard multiplied by
//! `exp(theta)`, right-censored at the horizon. Replicate `r` draws from its
//! own ChaCha8 stream, so results do not depend on how replicates are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use crate::charts::{bernoulli_points, first_crossing, ChartPoint, ChartSpec, Cohort, EvalGrid, Tracker};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{BaselineHazard, HospitalStream, PatientRecord, RiskModel};
use crate::stats;

/// Where simulated subjects get their covariates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSampler {
    /// All covariates zero, so every relative risk is 1.
    #[default]
    Degenerate,
    /// Vectors drawn i.i.d. with replacement from `pool`.
    Resample { pool: Vec<Vec<f64>> },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    /// Arrivals per day.
    pub psi: f64,
    /// Days.
    pub horizon: f64,
    /// True log hazard ratio.
    pub theta: f64,
    pub n_hospitals: usize,
    pub model: RiskModel,
    pub covariates: CovariateSampler,
    pub seed: u64,
    pub execution: Execution,
}

impl SimConfig {
    /// In-control configuration with degenerate covariates.
    pub fn new(psi: f64, horizon: f64, n_hospitals: usize, model: RiskModel, seed: u64) -> Self {
        SimConfig {
            psi,
            horizon,
            theta: 0.0,
            n_hospitals,
            model,
            covariates: CovariateSampler::Degenerate,
            seed,
            execution: Execution::default(),
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_covariates(mut self, covariates: CovariateSampler) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi > 0.0 && self.psi.is_finite()) {
            return Err(Error::invalid("psi", format!("must be finite and > 0, got {}", self.psi)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be finite and > 0, got {}", self.horizon)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid("theta", format!("must be finite and >= 0, got {}", self.theta)));
        }
        if self.n_hospitals == 0 {
            return Err(Error::invalid("n_hospitals", "must be > 0"));
        }
        self.model.baseline.validate()?;
        if let CovariateSampler::Resample { pool } = &self.covariates {
            if pool.is_empty() {
                return Err(Error::invalid("covariates", "resampling pool is empty"));
            }
            for z in pool {
                self.model.check_dimension(z.len())?;
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("covariates", "non-finite value in pool"));
                }
            }
        }
        Ok(())
    }
}

/// Inverse-transform survival time `H^-1(-ln(u) / (exp(theta) r))` for a
/// uniform draw `u` in `(0, 1]` and relative risk `r`.
pub fn survival_time(u: f64, relative_risk: f64, theta: f64, baseline: &BaselineHazard) -> f64 {
    baseline.inverse(-u.ln() / (theta.exp() * relative_risk))
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Synthetic hospital number `replicate`; a pure function of the config
/// and the index.
pub fn generate_hospital(config: &SimConfig, replicate: u64) -> Result<HospitalStream> {
    config.validate()?;
    Ok(generate_unchecked(config, replicate))
}

fn generate_unchecked(config: &SimConfig, replicate: u64) -> HospitalStream {
    let mut rng = replicate_rng(config.seed, replicate);
    let gaps = Exp::new(config.psi).expect("psi validated");
    let p = config.model.beta.len();
    let ratio = config.theta.exp();
    let mut records = Vec::with_capacity((config.psi * config.horizon * 1.1) as usize + 8);
    let mut entry = 0.0;
    loop {
        entry += gaps.sample(&mut rng);
        if entry > config.horizon {
            break;
        }
        let covariates = match &config.covariates {
            CovariateSampler::Degenerate => vec![0.0; p],
            CovariateSampler::Resample { pool } => pool[rng.random_range(0..pool.len())].clone(),
        };
        let e: f64 = Exp1.sample(&mut rng);
        let risk = config.model.relative_risk(&covariates);
        let x = config.model.baseline.inverse(e / (ratio * risk));
        let remaining = config.horizon - entry;
        let (followup, event) = if x <= remaining { (x, true) } else { (remaining, false) };
        if !(followup > 0.0) {
            continue;
        }
        records.push(PatientRecord {
            id: records.len().to_string(),
            entry_time: entry,
            followup,
            event,
            covariates,
        });
    }
    HospitalStream::from_sorted(records, config.horizon)
}

fn check_specs(specs: &[ChartSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("specs", "no charts given"));
    }
    for s in specs {
        s.validate()?;
        if !s.is_cusum() {
            return Err(Error::invalid("specs", "funnel plots have no run length; use a CUSUM chart"));
        }
    }
    Ok(())
}

fn check_limits(specs: &[ChartSpec], h: &[f64]) -> Result<()> {
    if specs.len() != h.len() {
        return Err(Error::invalid("h", format!("{} limits for {} charts", h.len(), specs.len())));
    }
    h.iter().try_for_each(|&h| crate::charts::check_limit(h))
}

/// Chart points of one hospital at its failure (or outcome) times. With
/// `limits`, each chart stops once it reaches its limit.
fn chart_points(
    stream: &HospitalStream,
    model: &RiskModel,
    specs: &[ChartSpec],
    limits: Option<&[f64]>,
) -> Result<Vec<Vec<ChartPoint>>> {
    let mut out = vec![Vec::new(); specs.len()];
    let continuous: Vec<usize> = (0..specs.len()).filter(|&k| Tracker::new(&specs[k]).is_some()).collect();
    if !continuous.is_empty() {
        let cohort = Cohort::new(stream, model)?;
        let mut trackers: Vec<Tracker> = continuous.iter().filter_map(|&k| Tracker::new(&specs[k])).collect();
        let sub_limits: Option<Vec<f64>> = limits.map(|h| continuous.iter().map(|&k| h[k]).collect());
        let times = cohort.times(EvalGrid::Failures);
        let swept = crate::charts::continuous_sweep(&cohort, &mut trackers, &times, sub_limits.as_deref())?;
        for (k, points) in continuous.iter().zip(swept) {
            out[*k] = points;
        }
    }
    for (k, spec) in specs.iter().enumerate() {
        if let ChartSpec::Bernoulli { theta1, window } = *spec {
            out[k] = bernoulli_points(stream, model, theta1, window)?;
        }
    }
    Ok(out)
}

/// Running-maximum records `(time, value)` with strictly increasing values.
fn running_max_records(points: &[ChartPoint]) -> Vec<(f64, f64)> {
    let mut best = 0.0;
    let mut out = Vec::new();
    for p in points {
        if p.value > best {
            best = p.value;
            out.push((p.time, p.value));
        }
    }
    out
}

fn collect_ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Criterion a control limit is tuned to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationTarget {
    /// At most a fraction `alpha` of in-control hospitals signal by `horizon` days.
    TypeIError { alpha: f64, horizon: f64 },
    /// Mean in-control run length of `target` days, with runs that never
    /// signal counted at the simulation horizon.
    InControlArl { target: f64 },
}

impl CalibrationTarget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CalibrationTarget::TypeIError { alpha, horizon } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
                }
                if !(horizon > 0.0 && horizon.is_finite()) {
                    return Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")));
                }
                Ok(())
            }
            CalibrationTarget::InControlArl { target } => {
                if target > 0.0 && target.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("target", format!("must be > 0, got {target}")))
                }
            }
        }
    }
}

/// A calibrated limit and the value of the target criterion it achieves on
/// the calibration sample: the signalling fraction for a type I target, the
/// mean run length for an ARL target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spec: ChartSpec,
    pub h: f64,
    pub achieved: f64,
}

/// Calibrates one limit per chart on one shared in-control sample.
pub fn calibrate_control_limits(
    specs: &[ChartSpec],
    config: &SimConfig,
    target: &CalibrationTarget,
) -> Result<Vec<Calibration>> {
    config.validate()?;
    check_specs(specs)?;
    target.validate()?;
    if config.theta != 0.0 {
        return Err(Error::invalid("theta", "calibration needs an in-control configuration (theta = 0)"));
    }
    let n = config.n_hospitals;
    let eval_horizon = match *target {
        CalibrationTarget::TypeIError { alpha, horizon } => {
            if alpha * (n as f64) < 5.0 {
                return Err(Error::InsufficientReplicates { value: alpha * n as f64 });
            }
            if horizon > config.horizon {
                return Err(Error::invalid(
                    "horizon",
                    format!("type I horizon {horizon} exceeds the simulation horizon {}", config.horizon),
                ));
            }
            horizon
        }
        CalibrationTarget::InControlArl { .. } => config.horizon,
    };

    let records = collect_ordered(map_indexed(config.execution, n, |r| {
        let stream = generate_unchecked(config, r as u64).with_horizon(eval_horizon);
        let points = chart_points(&stream, &config.model, specs, None)?;
        Ok(points.iter().map(|p| running_max_records(p)).collect::<Vec<_>>())
    }))?;

    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let per_rep: Vec<&[(f64, f64)]> = records.iter().map(|r| r[k].as_slice()).collect();
            let (h, achieved) = match *target {
                CalibrationTarget::TypeIError { alpha, .. } => type_one_limit(&per_rep, alpha)?,
                CalibrationTarget::InControlArl { target } => arl_limit(&per_rep, target, config.horizon)?,
            };
            Ok(Calibration {
                spec: spec.clone(),
                h,
                achieved,
            })
        })
        .collect()
}

pub fn calibrate_control_limit(spec: &ChartSpec, config: &SimConfig, target: &CalibrationTarget) -> Result<Calibration> {
    calibrate_control_limits(std::slice::from_ref(spec), config, target).map(|mut v| v.remove(0))
}

fn record_max(records: &[(f64, f64)]) -> f64 {
    records.last().map_or(0.0, |r| r.1)
}

/// Smallest observed maximum that at most `floor(alpha * n)` replicates
/// reach. Ties in discrete charts push the limit to the next distinct value.
fn type_one_limit(per_rep: &[&[(f64, f64)]], alpha: f64) -> Result<(f64, f64)> {
    let mut maxima: Vec<f64> = per_rep.iter().map(|r| record_max(r)).collect();
    maxima.sort_by(f64::total_cmp);
    let n = maxima.len();
    let allowed = (alpha * n as f64 + 1e-9).floor() as usize;
    let start = n - allowed.min(n);
    let h = (start..n)
        .find(|&j| j == 0 || maxima[j] > maxima[j - 1])
        .map_or_else(|| maxima[n - 1].next_up(), |j| maxima[j]);
    if h <= 0.0 {
        return Err(Error::Calibration(format!(
            "the {} quantile of chart maxima is zero; too few in-control signals to set a limit",
            1.0 - alpha
        )));
    }
    let signalled = maxima.iter().filter(|&&m| m >= h).count();
    Ok((h, signalled as f64 / n as f64))
}

fn mean_run_length(per_rep: &[&[(f64, f64)]], h: f64, horizon: f64) -> f64 {
    let total: f64 = per_rep
        .iter()
        .map(|r| r.iter().find(|(_, v)| *v >= h).map_or(horizon, |(t, _)| *t))
        .sum();
    total / per_rep.len() as f64
}

fn arl_limit(per_rep: &[&[(f64, f64)]], target: f64, horizon: f64) -> Result<(f64, f64)> {
    let close = |m: f64| (m - target).abs() <= 0.01 * target;
    let top = per_rep.iter().map(|r| record_max(r)).fold(0.0, f64::max);
    let floor = per_rep
        .iter()
        .filter_map(|r| r.first().map(|x| x.1))
        .fold(f64::INFINITY, f64::min);
    if top == 0.0 {
        return Err(Error::Calibration("no replicate ever left zero".into()));
    }
    let (mut lo, mut hi) = (floor, top * (1.0 + 1e-12) + f64::MIN_POSITIVE);
    let m_lo = mean_run_length(per_rep, lo, horizon);
    if close(m_lo) {
        return Ok((lo, m_lo));
    }
    if m_lo > target {
        return Err(Error::Calibration(format!(
            "target ARL {target} is below the shortest attainable mean run length {m_lo:.1}"
        )));
    }
    if target > 0.99 * horizon {
        return Err(Error::Calibration(format!(
            "target ARL {target} is not attainable within the simulation horizon {horizon}; simulate longer"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mean_run_length(per_rep, mid, horizon);
        if close(m) {
            return Ok((mid, m));
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "mean run length jumps over {target} within 1%; use more replicates"
    )))
}

/// First detection time of every chart on every replicate, indexed
/// `[chart][replicate]`; `None` when the chart stays below its limit up to
/// the horizon.
pub fn detection_times(specs: &[ChartSpec], config: &SimConfig, h: &[f64]) -> Result<Vec<Vec<Option<f64>>>> {
    config.validate()?;
    check_specs(specs)?;
    check_limits(specs, h)?;
    let per_rep = collect_ordered(map_indexed(config.execution, config.n_hospitals, |r| {
        let stream = generate_unchecked(config, r as u64);
        let points = chart_points(&stream, &config.model, specs, Some(h))?;
        Ok(points
            .iter()
            .zip(h)
            .map(|(p, &h)| first_crossing(p, h))
            .collect::<Vec<_>>())
    }))?;
    Ok((0..specs.len())
        .map(|k| per_rep.iter().map(|r| r[k]).collect())
        .collect())
}

/// Run-length summary of one chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLengthRow {
    pub spec: ChartSpec,
    pub h: f64,
    pub n: usize,
    pub detected: usize,
    /// Runs without a signal by the horizon; they enter the summaries at the horizon.
    pub censored: usize,
    pub arl: f64,
    pub sd: f64,
    pub mrl: f64,
}

impl RunLengthRow {
    /// Whether any run length was imputed at the horizon.
    pub fn has_censoring(&self) -> bool {
        self.censored > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLengthTable {
    pub theta: f64,
    pub horizon: f64,
    pub rows: Vec<RunLengthRow>,
}

pub fn summarize_run_lengths(
    specs: &[ChartSpec],
    h: &[f64],
    detections: &[Vec<Option<f64>>],
    theta: f64,
    horizon: f64,
) -> RunLengthTable {
    let rows = specs
        .iter()
        .zip(h)
        .zip(detections)
        .map(|((spec, &h), det)| {
            let lengths: Vec<f64> = det.iter().map(|d| d.unwrap_or(horizon)).collect();
            let detected = det.iter().filter(|d| d.is_some()).count();
            RunLengthRow {
                spec: spec.clone(),
                h,
                n: det.len(),
                detected,
                censored: det.len() - detected,
                arl: stats::mean(&lengths),
                sd: stats::sample_sd(&lengths),
                mrl: stats::median(&lengths),
            }
        })
        .collect();
    RunLengthTable { theta, horizon, rows }
}

/// Mean, SD and median run length of each chart over `config.n_hospitals`
/// simulated hospitals.
pub fn run_length_experiment(specs: &[ChartSpec], config: &SimConfig, h: &[f64]) -> Result<RunLengthTable> {
    let det = detection_times(specs, config, h)?;
    Ok(summarize_run_lengths(specs, h, &det, config.theta, config.horizon))
}

/// Fraction of hospitals detected by each grid time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub spec: ChartSpec,
    pub h: f64,
    pub grid: Vec<f64>,
    pub power: Vec<f64>,
}

impl PowerCurve {
    /// Power at `t`: the value at the last grid point not after `t`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= t);
        if k == 0 {
            0.0
        } else {
            self.power[k - 1]
        }
    }
}

pub fn power_curves(specs: &[ChartSpec], h: &[f64], detections: &[Vec<Option<f64>>], grid: &[f64]) -> Vec<PowerCurve> {
    specs
        .iter()
        .zip(h)
        .zip(detections)
        .map(|((spec, &h), det)| {
            let mut times: Vec<f64> = det.iter().flatten().copied().collect();
            times.sort_by(f64::total_cmp);
            let n = det.len().max(1) as f64;
            PowerCurve {
                spec: spec.clone(),
                h,
                grid: grid.to_vec(),
                power: grid
                    .iter()
                    .map(|&g| times.partition_point(|&t| t <= g) as f64 / n)
                    .collect(),
            }
        })
        .collect()
}

pub fn power_over_time(specs: &[ChartSpec], config: &SimConfig, h: &[f64], grid: &[f64]) -> Result<Vec<PowerCurve>> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("grid", "must be nondecreasing"));
    }
    let det = detection_times(specs, config, h)?;
    Ok(power_curves(specs, h, &det, grid))
}
