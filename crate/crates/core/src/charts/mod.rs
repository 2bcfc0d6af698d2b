//! Control charts for survival outcomes.
//!
//! Continuous-time charts ([`compute_cgi`], [`compute_cgr`], [`compute_bk`])
//! accumulate the log-likelihood ratio of an increased failure rate as
//! failures and exposure arrive. [`compute_bernoulli`] and [`funnel_points`]
//! are the discrete-time baselines built on a binary outcome within a fixed
//! window after entry.

mod continuous;
mod discrete;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use continuous::{compute_bk, compute_cgi, compute_cgr};
pub(crate) use continuous::{sweep as continuous_sweep, Cohort, EvalGrid, Tracker};
pub use discrete::{
    compute_bernoulli, funnel_points, FunnelLimits, FunnelPoint, FunnelReport, SkippedHospital,
};
pub(crate) use discrete::bernoulli_points;

/// Days per reporting month when detections are rounded up.
pub const DAYS_PER_MONTH: f64 = 30.0;

/// Which chart to build, with its parameters.
///
/// `cap` is an upper bound on the hazard-ratio estimate on the log scale,
/// so a cap of `6.0_f64.ln()` restricts `exp(theta_hat) <= 6`. `theta1` is
/// the log of the hazard ratio the chart is tuned to detect. Windows and
/// periods are in days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChartSpec {
    Cgi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
    Cgr {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
    Bk {
        theta1: f64,
    },
    Bernoulli {
        theta1: f64,
        window: f64,
    },
    Funnel {
        confidence: f64,
        period: f64,
        window: f64,
    },
}

impl ChartSpec {
    pub fn cgi() -> Self {
        ChartSpec::Cgi { cap: None }
    }

    pub fn cgr() -> Self {
        ChartSpec::Cgr { cap: None }
    }

    /// CGR chart with `exp(theta_hat)` capped at `max_ratio`.
    pub fn cgr_capped(max_ratio: f64) -> Self {
        ChartSpec::Cgr {
            cap: Some(max_ratio.ln()),
        }
    }

    /// BK chart tuned to hazard ratio `ratio`.
    pub fn bk(ratio: f64) -> Self {
        ChartSpec::Bk {
            theta1: ratio.ln(),
        }
    }

    pub fn bernoulli(ratio: f64, window: f64) -> Self {
        ChartSpec::Bernoulli {
            theta1: ratio.ln(),
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_cap = |cap: &Option<f64>| match cap {
            Some(c) if !(*c >= 0.0 && c.is_finite()) => {
                Err(Error::invalid("cap", format!("must be finite and >= 0, got {c}")))
            }
            _ => Ok(()),
        };
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        match self {
            ChartSpec::Cgi { cap } | ChartSpec::Cgr { cap } => check_cap(cap),
            ChartSpec::Bk { theta1 } => positive("theta1", *theta1),
            ChartSpec::Bernoulli { theta1, window } => {
                positive("theta1", *theta1)?;
                positive("window", *window)
            }
            ChartSpec::Funnel {
                confidence,
                period,
                window,
            } => {
                if !(*confidence > 0.0 && *confidence < 1.0) {
                    return Err(Error::invalid(
                        "confidence",
                        format!("must lie in (0, 1), got {confidence}"),
                    ));
                }
                positive("period", *period)?;
                positive("window", *window)
            }
        }
    }

    /// Whether the chart produces a CUSUM trajectory (everything but funnel).
    pub fn is_cusum(&self) -> bool {
        !matches!(self, ChartSpec::Funnel { .. })
    }

    /// Short label used in tables, e.g. `cgr[hr<=6]` or `bk[hr=1.4]`.
    pub fn label(&self) -> String {
        let hr = |x: f64| trim_float(x.exp());
        match self {
            ChartSpec::Cgi { cap: None } => "cgi".into(),
            ChartSpec::Cgi { cap: Some(c) } => format!("cgi[hr<={}]", hr(*c)),
            ChartSpec::Cgr { cap: None } => "cgr".into(),
            ChartSpec::Cgr { cap: Some(c) } => format!("cgr[hr<={}]", hr(*c)),
            ChartSpec::Bk { theta1 } => format!("bk[hr={}]", hr(*theta1)),
            ChartSpec::Bernoulli { theta1, window } => {
                format!("bernoulli[hr={},C={}]", hr(*theta1), trim_float(*window))
            }
            ChartSpec::Funnel {
                confidence, period, ..
            } => format!("funnel[p={},period={}]", trim_float(*confidence), trim_float(*period)),
        }
    }
}

fn trim_float(x: f64) -> String {
    let s = format!("{:.4}", x);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One evaluation of a chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub time: f64,
    pub value: f64,
    /// Hazard-ratio estimate (log scale) attaining the value, CGI/CGR only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<f64>,
    /// Stream index of the maximising onset subject, CGR only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<usize>,
}

impl ChartPoint {
    pub(crate) fn plain(time: f64, value: f64) -> Self {
        ChartPoint {
            time,
            value,
            theta_hat: None,
            onset: None,
        }
    }
}

/// A chart trajectory; times strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSeries {
    pub spec: ChartSpec,
    pub points: Vec<ChartPoint>,
}

impl ChartSeries {
    pub fn max_value(&self) -> f64 {
        self.points.iter().map(|p| p.value).fold(0.0, f64::max)
    }

    /// Chart value at time `t`, i.e. the last evaluation at or before `t`.
    ///
    /// Between evaluations the true chart can only drift down, so this is an
    /// upper bound there and exact at evaluation times.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.points.partition_point(|p| p.time <= t);
        if k == 0 {
            0.0
        } else {
            self.points[k - 1].value
        }
    }

    pub fn detection_time(&self, h: f64) -> Result<Option<f64>> {
        detection_time(self, h)
    }
}

/// First evaluation time with value `>= h`.
pub fn detection_time(series: &ChartSeries, h: f64) -> Result<Option<f64>> {
    check_limit(h)?;
    Ok(first_crossing(&series.points, h))
}

pub(crate) fn check_limit(h: f64) -> Result<()> {
    if h > 0.0 && !h.is_nan() {
        Ok(())
    } else {
        Err(Error::invalid("h", format!("control limit must be > 0, got {h}")))
    }
}

#[inline]
pub(crate) fn first_crossing(points: &[ChartPoint], h: f64) -> Option<f64> {
    points.iter().find(|p| p.value >= h).map(|p| p.time)
}

/// Rounds a detection time up to the end of its 30-day reporting month.
pub fn round_up_to_month(t: f64) -> f64 {
    (t / DAYS_PER_MONTH).ceil().max(1.0) * DAYS_PER_MONTH
}
