//! Discrete-time baselines on the binary outcome "failure within `window`
//! days of entry": the risk-adjusted Bernoulli CUSUM and the funnel plot.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::charts::{ChartPoint, ChartSeries, ChartSpec};
use crate::error::{Error, Result};
use crate::model::{HospitalStream, PatientRecord, RiskModel};

/// Outcome of one subject once its window has elapsed.
#[derive(Clone, Copy, Debug)]
struct Outcome {
    time: f64,
    failed: bool,
    p: f64,
}

/// `None` while the outcome is unknown (censored inside the window).
fn outcome(rec: &PatientRecord, window: f64) -> Option<(f64, bool)> {
    if rec.event && rec.followup <= window {
        Some((rec.exit_time(), true))
    } else if rec.followup >= window {
        Some((rec.entry_time + window, false))
    } else {
        None
    }
}

/// `P(failure within window)` under the risk model.
fn window_probability(rec: &PatientRecord, model: &RiskModel, window_hazard: f64) -> f64 {
    -(-model.relative_risk(&rec.covariates) * window_hazard).exp_m1()
}

/// Risk-adjusted Bernoulli CUSUM with odds multiplier `exp(theta1)`.
///
/// Each subject contributes once, when its outcome becomes known: at failure
/// if it fails within the window, otherwise at `entry + window`. Subjects
/// censored inside the window never contribute.
pub fn compute_bernoulli(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec) -> Result<ChartSeries> {
    spec.validate()?;
    let ChartSpec::Bernoulli { theta1, window } = *spec else {
        return Err(Error::invalid(
            "spec",
            format!("expected a Bernoulli spec, got {}", spec.label()),
        ));
    };
    if !stream.is_empty() {
        model.check_dimension(stream.dimension())?;
    }
    Ok(ChartSeries {
        spec: spec.clone(),
        points: bernoulli_points(stream, model, theta1, window)?,
    })
}

pub(crate) fn bernoulli_points(
    stream: &HospitalStream,
    model: &RiskModel,
    theta1: f64,
    window: f64,
) -> Result<Vec<ChartPoint>> {
    let window_hazard = model.baseline.eval(window);
    let mut outcomes = Vec::new();
    for rec in stream.records() {
        let Some((time, failed)) = outcome(rec, window) else {
            continue;
        };
        if time > stream.horizon() {
            continue;
        }
        let p = window_probability(rec, model, window_hazard);
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::DegenerateProbability {
                patient: rec.id.clone(),
                p,
            });
        }
        outcomes.push(Outcome { time, failed, p });
    }
    outcomes.sort_by(|a, b| a.time.total_cmp(&b.time));

    let odds = theta1.exp_m1();
    let mut value: f64 = 0.0;
    let mut points: Vec<ChartPoint> = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let log_norm = (o.p * odds).ln_1p();
        let w = if o.failed { theta1 - log_norm } else { -log_norm };
        value = (value + w).max(0.0);
        match points.last_mut() {
            Some(last) if last.time == o.time => last.value = value,
            _ => points.push(ChartPoint::plain(o.time, value)),
        }
    }
    Ok(points)
}

/// How funnel control limits are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunnelLimits {
    /// Normal approximation on the proportion scale, clamped to `[0, 1]`.
    #[default]
    Normal,
    /// Binomial quantiles at the expected proportion.
    ExactBinomial,
}

/// One hospital at one period end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnelPoint {
    pub hospital: String,
    pub period_end: f64,
    /// Subjects with complete window follow-up.
    pub n: usize,
    pub observed: usize,
    pub observed_proportion: f64,
    /// Mean model probability of failing within the window.
    pub expected: f64,
    pub lower: f64,
    pub upper: f64,
    pub out_of_control: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedHospital {
    pub hospital: String,
    pub period_end: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub points: Vec<FunnelPoint>,
    pub skipped: Vec<SkippedHospital>,
}

/// Cumulative funnel plot evaluated at every multiple of `period` up to each
/// hospital's horizon.
///
/// At a period end `tau` a subject counts when `entry + window <= tau` and its
/// outcome is known. A hospital is flagged when its observed proportion
/// exceeds the upper limit.
pub fn funnel_points<S: AsRef<str>>(
    hospitals: &[(S, HospitalStream)],
    model: &RiskModel,
    spec: &ChartSpec,
    limits: FunnelLimits,
) -> Result<FunnelReport> {
    spec.validate()?;
    let ChartSpec::Funnel {
        confidence,
        period,
        window,
    } = *spec
    else {
        return Err(Error::invalid(
            "spec",
            format!("expected a funnel spec, got {}", spec.label()),
        ));
    };
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + confidence));
    let window_hazard = model.baseline.eval(window);

    let mut report = FunnelReport::default();
    for (name, stream) in hospitals {
        let name = name.as_ref();
        if !stream.is_empty() {
            model.check_dimension(stream.dimension())?;
        }
        let known: Vec<(f64, bool, f64)> = stream
            .records()
            .iter()
            .filter_map(|r| {
                outcome(r, window).map(|(_, failed)| {
                    (r.entry_time + window, failed, window_probability(r, model, window_hazard))
                })
            })
            .collect();
        let mut k = 1;
        while k as f64 * period <= stream.horizon() {
            let tau = k as f64 * period;
            k += 1;
            let eligible = known.iter().filter(|(complete, ..)| *complete <= tau);
            let (mut n, mut observed, mut p_sum) = (0usize, 0usize, 0.0);
            for &(_, failed, p) in eligible {
                n += 1;
                observed += usize::from(failed);
                p_sum += p;
            }
            if n == 0 {
                report.skipped.push(SkippedHospital {
                    hospital: name.to_string(),
                    period_end: tau,
                    reason: "no subjects with complete follow-up".into(),
                });
                continue;
            }
            let expected = p_sum / n as f64;
            let (lower, upper) = match limits {
                FunnelLimits::Normal => normal_limits(expected, n, z),
                FunnelLimits::ExactBinomial => binomial_limits(expected, n, confidence)?,
            };
            let observed_proportion = observed as f64 / n as f64;
            report.points.push(FunnelPoint {
                hospital: name.to_string(),
                period_end: tau,
                n,
                observed,
                observed_proportion,
                expected,
                lower,
                upper,
                out_of_control: observed_proportion > upper,
            });
        }
    }
    Ok(report)
}

pub(crate) fn normal_limits(expected: f64, n: usize, z: f64) -> (f64, f64) {
    let se = (expected * (1.0 - expected) / n as f64).sqrt();
    ((expected - z * se).max(0.0), (expected + z * se).min(1.0))
}

fn binomial_limits(expected: f64, n: usize, confidence: f64) -> Result<(f64, f64)> {
    let dist = Binomial::new(expected, n as u64)
        .map_err(|e| Error::invalid("expected", e.to_string()))?;
    let quantile = |q: f64| (0..=n as u64).find(|&k| dist.cdf(k) >= q).unwrap_or(n as u64);
    let lo = quantile(0.5 * (1.0 - confidence));
    let hi = quantile(0.5 * (1.0 + confidence));
    Ok((lo as f64 / n as f64, hi as f64 / n as f64))
}
