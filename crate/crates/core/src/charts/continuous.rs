//! CGI, CGR and BK charts on a shared counting-process sweep.
//!
//! All three charts only need, at each evaluation time `t`, the cumulative
//! intensities `Lambda_i(t)` of the subjects that have entered and the set of
//! failures observed so far. [`Cohort`] precomputes the per-subject pieces so
//! several charts can be driven from one sweep, which is what the simulator
//! does for every replicate.

use crate::charts::{ChartPoint, ChartSeries, ChartSpec};
use crate::error::{Error, Result};
use crate::model::{log_likelihood_ratio, mle_unchecked, BaselineHazard, HospitalStream, RiskModel};

/// Which time points a sweep visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EvalGrid {
    /// Entries, failures and the horizon; used for reported series.
    Full,
    /// Failure times only. The charts can only increase at failures, so this
    /// suffices for detection times and maxima.
    Failures,
}

/// A stream flattened into parallel arrays, ordered by arrival.
pub(crate) struct Cohort<'a> {
    baseline: &'a BaselineHazard,
    entry: Vec<f64>,
    exit: Vec<f64>,
    risk: Vec<f64>,
    frozen: Vec<f64>,
    failed: Vec<bool>,
    failure_times: Vec<f64>,
    horizon: f64,
}

impl<'a> Cohort<'a> {
    pub(crate) fn new(stream: &HospitalStream, model: &'a RiskModel) -> Result<Self> {
        if !stream.is_empty() {
            model.check_dimension(stream.dimension())?;
        }
        let n = stream.len();
        let mut cohort = Cohort {
            baseline: &model.baseline,
            entry: Vec::with_capacity(n),
            exit: Vec::with_capacity(n),
            risk: Vec::with_capacity(n),
            frozen: Vec::with_capacity(n),
            failed: Vec::with_capacity(n),
            failure_times: Vec::new(),
            horizon: stream.horizon(),
        };
        for r in stream.records() {
            let risk = model.relative_risk(&r.covariates);
            cohort.entry.push(r.entry_time);
            cohort.exit.push(r.exit_time());
            cohort.risk.push(risk);
            cohort.frozen.push(risk * model.baseline.eval(r.followup));
            cohort.failed.push(r.event);
            if r.event {
                cohort.failure_times.push(r.exit_time());
            }
        }
        cohort.failure_times.sort_by(f64::total_cmp);
        Ok(cohort)
    }

    pub(crate) fn times(&self, grid: EvalGrid) -> Vec<f64> {
        let h = self.horizon;
        let mut times: Vec<f64> = self.failure_times.iter().copied().filter(|&t| t <= h).collect();
        if grid == EvalGrid::Full {
            times.extend(self.entry.iter().copied().filter(|&t| t <= h));
            times.push(h);
            times.sort_by(f64::total_cmp);
        }
        times.dedup();
        times
    }

    /// Fills `buf[..n_t]` with `Lambda_i(t)` for the `n_t` subjects entered by `t`.
    fn snapshot(&self, t: f64, buf: &mut Vec<f64>) -> Snapshot {
        let n_t = self.entry.partition_point(|&s| s <= t);
        buf.clear();
        let mut total = 0.0;
        for i in 0..n_t {
            let l = if self.exit[i] <= t {
                self.frozen[i]
            } else {
                self.risk[i] * self.baseline.eval(t - self.entry[i])
            };
            total += l;
            buf.push(l);
        }
        let failures = self.failure_times.partition_point(|&f| f <= t);
        let before = self.failure_times.partition_point(|&f| f < t);
        Snapshot {
            t,
            lambda: total,
            failures: failures as f64,
            jumps: (failures - before) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Snapshot {
    t: f64,
    lambda: f64,
    failures: f64,
    /// failures occurring exactly at `t`
    jumps: f64,
}

/// Per-chart state carried along a sweep.
#[derive(Clone, Debug)]
pub(crate) enum Tracker {
    Cgi { cap: Option<f64> },
    Cgr { cap: Option<f64> },
    Bk { theta1: f64, drift: f64, running_min: f64 },
}

impl Tracker {
    /// `None` for the discrete-time charts.
    pub(crate) fn new(spec: &ChartSpec) -> Option<Self> {
        match *spec {
            ChartSpec::Cgi { cap } => Some(Tracker::Cgi { cap }),
            ChartSpec::Cgr { cap } => Some(Tracker::Cgr { cap }),
            ChartSpec::Bk { theta1 } => Some(Tracker::Bk {
                theta1,
                drift: theta1.exp_m1(),
                running_min: 0.0,
            }),
            _ => None,
        }
    }

    fn update(&mut self, cohort: &Cohort<'_>, snap: &Snapshot, lambdas: &[f64]) -> Result<ChartPoint> {
        match self {
            Tracker::Cgi { cap } => {
                let theta = mle_unchecked(snap.failures, snap.lambda, *cap).ok_or(
                    Error::UndefinedMle {
                        failures: snap.failures as u64,
                    },
                )?;
                Ok(ChartPoint {
                    time: snap.t,
                    value: log_likelihood_ratio(theta, snap.failures, snap.lambda).max(0.0),
                    theta_hat: Some(theta),
                    onset: None,
                })
            }
            Tracker::Cgr { cap } => {
                let (mut lam, mut n) = (0.0, 0.0);
                let (mut best, mut onset, mut best_theta) = (0.0, None, 0.0);
                // Moving the onset past a subject without a failure only drops
                // exposure, so the maximum sits at a failed subject.
                for i in (0..lambdas.len()).rev() {
                    lam += lambdas[i];
                    if cohort.failed[i] && cohort.exit[i] <= snap.t {
                        n += 1.0;
                        let theta = mle_unchecked(n, lam, *cap)
                            .ok_or(Error::UndefinedMle { failures: n as u64 })?;
                        let v = log_likelihood_ratio(theta, n, lam);
                        if v > best {
                            best = v;
                            onset = Some(i);
                            best_theta = theta;
                        }
                    }
                }
                Ok(ChartPoint {
                    time: snap.t,
                    value: best,
                    theta_hat: Some(best_theta),
                    onset,
                })
            }
            Tracker::Bk {
                theta1,
                drift,
                running_min,
            } => {
                let u = *theta1 * snap.failures - *drift * snap.lambda;
                let left_limit = u - *theta1 * snap.jumps;
                *running_min = running_min.min(left_limit).min(u);
                Ok(ChartPoint::plain(snap.t, u - *running_min))
            }
        }
    }
}

/// Drives `trackers` over `times`. With `limits`, a chart stops being
/// updated once it reaches its limit, and the sweep ends when all have.
pub(crate) fn sweep(
    cohort: &Cohort<'_>,
    trackers: &mut [Tracker],
    times: &[f64],
    limits: Option<&[f64]>,
) -> Result<Vec<Vec<ChartPoint>>> {
    let mut out = vec![Vec::new(); trackers.len()];
    let mut done = vec![false; trackers.len()];
    let mut buf = Vec::new();
    for &t in times {
        let snap = cohort.snapshot(t, &mut buf);
        for (k, tracker) in trackers.iter_mut().enumerate() {
            if done[k] {
                continue;
            }
            let point = tracker.update(cohort, &snap, &buf)?;
            if let Some(h) = limits {
                if point.value >= h[k] {
                    done[k] = true;
                }
            }
            out[k].push(point);
        }
        if limits.is_some() && done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

fn compute(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec) -> Result<ChartSeries> {
    spec.validate()?;
    let cohort = Cohort::new(stream, model)?;
    let mut tracker = [Tracker::new(spec).expect("continuous chart")];
    let times = cohort.times(EvalGrid::Full);
    let points = sweep(&cohort, &mut tracker, &times, None)?
        .pop()
        .unwrap_or_default();
    Ok(ChartSeries {
        spec: spec.clone(),
        points,
    })
}

fn wrong_variant(expected: &str, spec: &ChartSpec) -> Error {
    Error::invalid("spec", format!("expected a {expected} spec, got {}", spec.label()))
}

/// CGI chart `theta_hat(t) N(t) - (exp(theta_hat(t)) - 1) Lambda(t)`.
///
/// Evaluated at every entry and failure time up to the horizon, and at the
/// horizon itself.
pub fn compute_cgi(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec) -> Result<ChartSeries> {
    match spec {
        ChartSpec::Cgi { .. } => compute(stream, model, spec),
        other => Err(wrong_variant("CGI", other)),
    }
}

/// CGR chart: the CGI statistic maximised over the onset subject `nu`,
/// counting only subjects that arrived at or after `nu`.
pub fn compute_cgr(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec) -> Result<ChartSeries> {
    match spec {
        ChartSpec::Cgr { .. } => compute(stream, model, spec),
        other => Err(wrong_variant("CGR", other)),
    }
}

/// BK chart `max_s {theta1 N(s,t) - (exp(theta1) - 1) Lambda(s,t)}`.
///
/// Computed as `U(t) - min_{s<=t} U(s)` with
/// `U(t) = theta1 N(t) - (exp(theta1) - 1) Lambda(t)`, where the minimum
/// includes the left limits just before each failure.
pub fn compute_bk(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec) -> Result<ChartSeries> {
    match spec {
        ChartSpec::Bk { .. } => compute(stream, model, spec),
        other => Err(wrong_variant("BK", other)),
    }
}
