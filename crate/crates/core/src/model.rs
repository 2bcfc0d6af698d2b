//! Subjects, baseline hazards and the counting-process primitives.
//!
//! All times are in days. A subject enters at `entry_time` (days since the
//! start of the study) and is followed for `followup` days, after which it
//! either fails (`event = true`) or is right-censored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One monitored subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// Entry time `S_i`, days since study start.
    pub entry_time: f64,
    /// Days from entry until failure or censoring.
    pub followup: f64,
    /// Whether follow-up ended in an observed failure.
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        entry_time: f64,
        followup: f64,
        event: bool,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let rec = PatientRecord {
            id: id.into(),
            entry_time,
            followup,
            event,
            covariates,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.entry_time >= 0.0 && self.entry_time.is_finite()) {
            return Err(Error::Domain(format!(
                "patient `{}`: entry time must be finite and >= 0, got {}",
                self.id, self.entry_time
            )));
        }
        if !(self.followup > 0.0 && self.followup.is_finite()) {
            return Err(Error::Domain(format!(
                "patient `{}`: follow-up must be finite and > 0, got {}",
                self.id, self.followup
            )));
        }
        if self.covariates.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain(format!(
                "patient `{}`: non-finite covariate",
                self.id
            )));
        }
        Ok(())
    }

    /// Chronological time at which follow-up ends, `min(T_i, R_i)`.
    #[inline]
    pub fn exit_time(&self) -> f64 {
        self.entry_time + self.followup
    }

    /// Chronological failure time `T_i`, if a failure was observed.
    pub fn failure_time(&self) -> Option<f64> {
        self.event.then(|| self.exit_time())
    }

    /// Chronological censoring time `R_i`, if follow-up was censored.
    pub fn censor_time(&self) -> Option<f64> {
        (!self.event).then(|| self.exit_time())
    }
}

/// Cumulative baseline hazard `H(x)` as a function of days since entry.
///
/// `StepCumulative` stores the breakpoints of a piecewise-linear cumulative
/// hazard. The origin `(0, 0)` is implicit when the first breakpoint is
/// positive. Past the last breakpoint the last segment's slope is continued.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum BaselineHazard {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    StepCumulative { times: Vec<f64>, values: Vec<f64> },
}

impl BaselineHazard {
    pub fn exponential(rate: f64) -> Result<Self> {
        let b = BaselineHazard::Exponential { rate };
        b.validate()?;
        Ok(b)
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        let b = BaselineHazard::Weibull { shape, scale };
        b.validate()?;
        Ok(b)
    }

    /// Builds a step cumulative hazard, prepending the origin if needed.
    pub fn step_cumulative(mut times: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        if times.first().is_some_and(|&t| t > 0.0) {
            times.insert(0, 0.0);
            values.insert(0, 0.0);
        }
        let b = BaselineHazard::StepCumulative { times, values };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        match self {
            BaselineHazard::Exponential { rate } => positive("baseline.rate", *rate),
            BaselineHazard::Weibull { shape, scale } => {
                positive("baseline.shape", *shape)?;
                positive("baseline.scale", *scale)
            }
            BaselineHazard::StepCumulative { times, values } => {
                if times.len() != values.len() {
                    return Err(Error::invalid(
                        "baseline.values",
                        "times and values differ in length",
                    ));
                }
                if times.len() < 2 {
                    return Err(Error::invalid(
                        "baseline.times",
                        "need at least one breakpoint after the origin",
                    ));
                }
                if times[0] != 0.0 || values[0] != 0.0 {
                    return Err(Error::invalid(
                        "baseline.times",
                        "step cumulative hazard must start at H(0) = 0",
                    ));
                }
                if times.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("baseline.times", "non-finite entry"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid(
                        "baseline.times",
                        "breakpoints must be strictly increasing",
                    ));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::invalid(
                        "baseline.values",
                        "cumulative hazard must be nondecreasing",
                    ));
                }
                Ok(())
            }
        }
    }

    /// `H(x)` without argument checking; nonpositive `x` yields 0.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            BaselineHazard::Exponential { rate } => rate * x,
            BaselineHazard::Weibull { shape, scale } => (x / scale).powf(*shape),
            BaselineHazard::StepCumulative { times, values } => {
                let last = times.len() - 1;
                // first breakpoint strictly greater than x
                let j = times.partition_point(|&t| t <= x);
                let k = if j > last { last } else { j };
                let (t0, t1) = (times[k - 1], times[k]);
                let (v0, v1) = (values[k - 1], values[k]);
                v0 + (v1 - v0) * (x - t0) / (t1 - t0)
            }
        }
    }

    /// Generalised inverse `inf{x : H(x) >= y}`; infinite when `H` stays below `y`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match self {
            BaselineHazard::Exponential { rate } => y / rate,
            BaselineHazard::Weibull { shape, scale } => scale * y.powf(1.0 / shape),
            BaselineHazard::StepCumulative { times, values } => {
                let last = times.len() - 1;
                let j = values.partition_point(|&v| v < y);
                if j <= last {
                    let (t0, t1) = (times[j - 1], times[j]);
                    let (v0, v1) = (values[j - 1], values[j]);
                    t0 + (y - v0) / (v1 - v0) * (t1 - t0)
                } else {
                    let slope =
                        (values[last] - values[last - 1]) / (times[last] - times[last - 1]);
                    if slope > 0.0 {
                        times[last] + (y - values[last]) / slope
                    } else {
                        f64::INFINITY
                    }
                }
            }
        }
    }
}

/// `H(x)` for `x >= 0`.
pub fn cumulative_hazard(baseline: &BaselineHazard, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "cumulative hazard evaluated at negative time {x}"
        )));
    }
    Ok(baseline.eval(x))
}

/// Cox proportional hazards risk model `h_i(x) = h_0(x) exp(Z_i' beta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub beta: Vec<f64>,
    pub baseline: BaselineHazard,
}

impl RiskModel {
    pub fn new(beta: Vec<f64>, baseline: BaselineHazard) -> Result<Self> {
        baseline.validate()?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("beta", "non-finite coefficient"));
        }
        Ok(RiskModel { beta, baseline })
    }

    /// Model without covariates.
    pub fn baseline_only(baseline: BaselineHazard) -> Result<Self> {
        Self::new(Vec::new(), baseline)
    }

    #[inline]
    pub fn relative_risk(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.beta.len());
        z.iter().zip(&self.beta).map(|(z, b)| z * b).sum::<f64>().exp()
    }

    pub fn check_dimension(&self, p: usize) -> Result<()> {
        if self.beta.len() != p {
            return Err(Error::Schema(format!(
                "risk model has {} coefficients but data has {} covariates",
                self.beta.len(),
                p
            )));
        }
        Ok(())
    }
}

/// One institution's subjects in chronological arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct HospitalStream {
    records: Vec<PatientRecord>,
    horizon: f64,
}

impl HospitalStream {
    /// Sorts by entry time (ties by id) and validates every record.
    pub fn new(mut records: Vec<PatientRecord>, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be >= 0, got {horizon}")));
        }
        for r in &records {
            r.validate()?;
        }
        if let Some(first) = records.first() {
            let p = first.covariates.len();
            if let Some(bad) = records.iter().find(|r| r.covariates.len() != p) {
                return Err(Error::Schema(format!(
                    "patient `{}` has {} covariates, expected {}",
                    bad.id,
                    bad.covariates.len(),
                    p
                )));
            }
        }
        records.sort_by(|a, b| {
            a.entry_time
                .total_cmp(&b.entry_time)
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(HospitalStream { records, horizon })
    }

    /// Records already in arrival order; used by the simulator.
    pub(crate) fn from_sorted(records: Vec<PatientRecord>, horizon: f64) -> Self {
        debug_assert!(records
            .windows(2)
            .all(|w| w[0].entry_time <= w[1].entry_time));
        HospitalStream { records, horizon }
    }

    pub fn empty(horizon: f64) -> Self {
        HospitalStream {
            records: Vec::new(),
            horizon,
        }
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of covariates per record (0 for an empty stream).
    pub fn dimension(&self) -> usize {
        self.records.first().map_or(0, |r| r.covariates.len())
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
}

/// `N(t)` and `Lambda(t)` for a stream, with the per-subject intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct CountingState {
    pub t: f64,
    pub failures: u64,
    pub lambda: f64,
    /// `Lambda_i(t)` in stream order.
    pub per_subject: Vec<f64>,
}

/// `Lambda_i(t) = exp(Z_i' beta) H(min(t, exit_i) - S_i)`, zero before entry.
pub fn subject_cum_intensity(rec: &PatientRecord, model: &RiskModel, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative time {t}")));
    }
    model.check_dimension(rec.covariates.len())?;
    Ok(intensity_at(rec, model.relative_risk(&rec.covariates), &model.baseline, t))
}

#[inline]
pub(crate) fn intensity_at(
    rec: &PatientRecord,
    risk: f64,
    baseline: &BaselineHazard,
    t: f64,
) -> f64 {
    if t < rec.entry_time {
        0.0
    } else {
        risk * baseline.eval(t.min(rec.exit_time()) - rec.entry_time)
    }
}

pub fn counting_state(stream: &HospitalStream, model: &RiskModel, t: f64) -> Result<CountingState> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative time {t}")));
    }
    if !stream.is_empty() {
        model.check_dimension(stream.dimension())?;
    }
    let per_subject: Vec<f64> = stream
        .records()
        .iter()
        .map(|r| intensity_at(r, model.relative_risk(&r.covariates), &model.baseline, t))
        .collect();
    let failures = stream
        .records()
        .iter()
        .filter(|r| r.event && r.exit_time() <= t)
        .count() as u64;
    Ok(CountingState {
        t,
        failures,
        lambda: per_subject.iter().sum(),
        per_subject,
    })
}

/// Log-likelihood ratio `theta N - (e^theta - 1) Lambda`.
#[inline]
pub fn log_likelihood_ratio(theta: f64, failures: f64, lambda: f64) -> f64 {
    theta * failures - theta.exp_m1() * lambda
}

/// Restricted MLE `max(0, log(N / Lambda))`, optionally clamped to `cap`.
pub fn mle_theta(failures: u64, lambda: f64, cap: Option<f64>) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("negative cumulative intensity {lambda}")));
    }
    if let Some(c) = cap {
        if !(c >= 0.0) {
            return Err(Error::invalid("cap", format!("must be >= 0, got {c}")));
        }
    }
    mle_unchecked(failures as f64, lambda, cap)
        .ok_or(Error::UndefinedMle { failures })
}

#[inline]
pub(crate) fn mle_unchecked(failures: f64, lambda: f64, cap: Option<f64>) -> Option<f64> {
    if failures <= lambda || failures == 0.0 {
        return Some(0.0);
    }
    if lambda == 0.0 {
        return cap;
    }
    let theta = (failures / lambda).ln();
    Some(match cap {
        Some(c) => theta.min(c),
        None => theta,
    })
}
