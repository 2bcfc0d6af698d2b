//! Experiment configuration for `calibrate` and `simulate`.
//!
//! ```toml
//! seed = 7
//!
//! [simulation]
//! psi = [0.2, 1.0]
//! horizon = 2190
//! n_hospitals = 500
//! theta_ratios = [1.0, 2.0]
//!
//! [model]
//! baseline = { kind = "exponential", params = { rate = 0.002 } }
//!
//! [[charts]]
//! chart = "bk"
//! theta1_ratio = 2.0
//!
//! [target]
//! kind = "type_i_error"
//! alpha = 0.1
//! horizon = 2190
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use survcusum::arl::FrailtyDist;
use survcusum::charts::ChartSpec;
use survcusum::io::{read_patients, read_risk_model};
use survcusum::model::{BaselineHazard, RiskModel};
use survcusum::simulate::{CalibrationTarget, CovariateSampler};

use crate::error::{config, io, CliResult};
use crate::spec::ChartChoice;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub simulation: Simulation,
    pub model: ModelRef,
    pub charts: Vec<ChartChoice>,
    #[serde(default)]
    pub target: Option<CalibrationTarget>,
    /// Fixed control limits, one per chart, used instead of calibrating.
    #[serde(default)]
    pub limits: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub psi: OneOrMany,
    pub horizon: f64,
    pub n_hospitals: usize,
    /// Hazard ratios for out-of-control runs; 1 means in control.
    #[serde(default)]
    pub theta_ratios: Option<Vec<f64>>,
    /// Spacing of the power-curve grid in days.
    #[serde(default)]
    pub power_step: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Either a path to a risk-model document or an inline baseline and
/// coefficients; optionally a patient CSV whose covariate rows are resampled.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub baseline: Option<BaselineHazard>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub covariates: Option<PathBuf>,
}

/// Everything an experiment needs, resolved and validated.
pub struct Experiment {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub psi: Vec<f64>,
    pub horizon: f64,
    pub n_hospitals: usize,
    pub theta_ratios: Vec<f64>,
    pub power_step: f64,
    pub model: RiskModel,
    pub covariates: CovariateSampler,
    pub specs: Vec<ChartSpec>,
    pub target: Option<CalibrationTarget>,
    pub limits: Option<Vec<f64>>,
    /// Files the config refers to, for the manifest.
    pub files: Vec<PathBuf>,
}

impl Experiment {
    /// Relative risks implied by the covariate sampler, for ARL theory.
    pub fn frailty(&self) -> CliResult<FrailtyDist> {
        Ok(match &self.covariates {
            CovariateSampler::Degenerate => FrailtyDist::Degenerate,
            CovariateSampler::Resample { pool } => {
                FrailtyDist::empirical(pool.iter().map(|z| self.model.relative_risk(z)).collect())?
            }
        })
    }
}

pub fn load(path: &Path) -> CliResult<(Experiment, String)> {
    let text = std::fs::read_to_string(path).map_err(io(format!("reading {}", path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok((resolve(cfg, base)?, text))
}

fn resolve(cfg: ExperimentConfig, base: &Path) -> CliResult<Experiment> {
    let mut files = Vec::new();
    let model = match (&cfg.model.path, &cfg.model.baseline) {
        (Some(p), None) => {
            if cfg.model.beta.is_some() {
                return Err(config("model: `beta` cannot be combined with `path`"));
            }
            let p = base.join(p);
            files.push(p.clone());
            let text = std::fs::read_to_string(&p).map_err(io(format!("reading {}", p.display())))?;
            read_risk_model(&text)?
        }
        (None, Some(b)) => RiskModel::new(cfg.model.beta.clone().unwrap_or_default(), b.clone())?,
        _ => return Err(config("model: give exactly one of `path` or `baseline`")),
    };
    let covariates = match &cfg.model.covariates {
        None => CovariateSampler::Degenerate,
        Some(p) => {
            let p = base.join(p);
            files.push(p.clone());
            let file = std::fs::File::open(&p).map_err(io(format!("opening {}", p.display())))?;
            let table = read_patients(file)?;
            let pool: Vec<Vec<f64>> = table.all_records().map(|r| r.covariates.clone()).collect();
            if pool.is_empty() {
                return Err(config(format!("{} has no patients to resample", p.display())));
            }
            CovariateSampler::Resample { pool }
        }
    };
    if let CovariateSampler::Resample { pool } = &covariates {
        model.check_dimension(pool[0].len())?;
    } else if !model.beta.is_empty() {
        return Err(config("model has coefficients but no covariate pool to resample from"));
    }
    if cfg.charts.is_empty() {
        return Err(config("at least one chart is required"));
    }
    let specs = cfg.charts.iter().map(ChartChoice::to_spec).collect::<CliResult<Vec<_>>>()?;
    if let Some(bad) = specs.iter().find(|s| !s.is_cusum() && !matches!(s, ChartSpec::Bernoulli { .. })) {
        return Err(config(format!("{} cannot be simulated", bad.label())));
    }
    if let Some(l) = &cfg.limits {
        if l.len() != specs.len() {
            return Err(config(format!("{} limits given for {} charts", l.len(), specs.len())));
        }
    }
    if let Some(t) = &cfg.target {
        t.validate()?;
    }
    let psi = cfg.simulation.psi.values();
    if psi.is_empty() {
        return Err(config("simulation.psi is empty"));
    }
    let theta_ratios = cfg.simulation.theta_ratios.clone().unwrap_or_else(|| vec![1.0]);
    if let Some(r) = theta_ratios.iter().find(|r| !(**r >= 1.0 && r.is_finite())) {
        return Err(config(format!("theta ratios must be >= 1, got {r}")));
    }
    let power_step = cfg.simulation.power_step.unwrap_or(30.0);
    if !(power_step > 0.0) {
        return Err(config("simulation.power_step must be > 0"));
    }
    Ok(Experiment {
        seed: cfg.seed,
        output_dir: cfg.output_dir.map(|d| base.join(d)),
        psi,
        horizon: cfg.simulation.horizon,
        n_hospitals: cfg.simulation.n_hospitals,
        theta_ratios,
        power_step,
        model,
        covariates,
        specs,
        target: cfg.target,
        limits: cfg.limits,
        files,
    })
}
