//! Chart selection shared by command-line flags and experiment configs.

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use survcusum::charts::ChartSpec;

use crate::error::{config, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Cgi,
    Cgr,
    Bk,
    Bernoulli,
    Funnel,
}

/// A chart as a user writes it: hazard ratios rather than log ratios.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartChoice {
    /// Chart variant.
    #[arg(long = "chart", value_enum, required = true)]
    pub chart: Option<ChartKind>,
    /// Hazard ratio the BK or Bernoulli chart is tuned to.
    #[arg(long)]
    #[serde(default)]
    pub theta1_ratio: Option<f64>,
    /// Upper bound on the estimated hazard ratio for CGI/CGR.
    #[arg(long)]
    #[serde(default)]
    pub cap_hr: Option<f64>,
    /// Outcome window in days for Bernoulli and funnel charts.
    #[arg(long)]
    #[serde(default)]
    pub window: Option<f64>,
    /// Funnel period length in days.
    #[arg(long)]
    #[serde(default)]
    pub period: Option<f64>,
    /// Funnel confidence level.
    #[arg(long)]
    #[serde(default)]
    pub confidence: Option<f64>,
}

const DEFAULT_WINDOW: f64 = 365.0;

impl ChartChoice {
    pub fn to_spec(&self) -> CliResult<ChartSpec> {
        let kind = self.chart.ok_or_else(|| config("no chart selected"))?;
        let reject = |present: bool, flag: &str| {
            if present {
                Err(config(format!("`{flag}` does not apply to the {kind:?} chart")))
            } else {
                Ok(())
            }
        };
        let spec = match kind {
            ChartKind::Cgi | ChartKind::Cgr => {
                reject(self.theta1_ratio.is_some(), "theta1-ratio")?;
                reject(self.window.is_some(), "window")?;
                reject(self.period.is_some() || self.confidence.is_some(), "period/confidence")?;
                let cap = match self.cap_hr {
                    Some(r) if r > 1.0 => Some(r.ln()),
                    Some(r) => return Err(config(format!("cap-hr must exceed 1, got {r}"))),
                    None => None,
                };
                if kind == ChartKind::Cgi {
                    ChartSpec::Cgi { cap }
                } else {
                    ChartSpec::Cgr { cap }
                }
            }
            ChartKind::Bk => {
                reject(self.cap_hr.is_some(), "cap-hr")?;
                reject(self.window.is_some(), "window")?;
                reject(self.period.is_some() || self.confidence.is_some(), "period/confidence")?;
                let r = self.theta1_ratio.ok_or_else(|| config("the BK chart needs theta1-ratio"))?;
                ChartSpec::Bk { theta1: ratio_ln(r)? }
            }
            ChartKind::Bernoulli => {
                reject(self.cap_hr.is_some(), "cap-hr")?;
                reject(self.period.is_some() || self.confidence.is_some(), "period/confidence")?;
                ChartSpec::Bernoulli {
                    theta1: ratio_ln(self.theta1_ratio.unwrap_or(2.0))?,
                    window: self.window.unwrap_or(DEFAULT_WINDOW),
                }
            }
            ChartKind::Funnel => {
                reject(self.cap_hr.is_some(), "cap-hr")?;
                reject(self.theta1_ratio.is_some(), "theta1-ratio")?;
                ChartSpec::Funnel {
                    confidence: self.confidence.unwrap_or(0.95),
                    period: self.period.ok_or_else(|| config("the funnel chart needs period"))?,
                    window: self.window.unwrap_or(DEFAULT_WINDOW),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn ratio_ln(r: f64) -> CliResult<f64> {
    if r > 1.0 && r.is_finite() {
        Ok(r.ln())
    } else {
        Err(config(format!("hazard ratios must exceed 1, got {r}")))
    }
}
