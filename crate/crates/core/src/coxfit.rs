//! Cox proportional hazards fit with a Breslow baseline.
//!
//! The time scale is follow-up (days since entry). Ties are handled with the
//! Breslow approximation, so all failures at the same time share one risk set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaselineHazard, PatientRecord, RiskModel};

const MAX_ITERATIONS: usize = 50;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Breslow cumulative baseline hazard at the distinct failure times.
    pub baseline: BaselineHazard,
    pub standard_errors: Vec<f64>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn risk_model(&self) -> RiskModel {
        RiskModel {
            beta: self.beta_hat.clone(),
            baseline: self.baseline.clone(),
        }
    }
}

/// Log partial likelihood with its gradient and Hessian at one `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `p x p`.
    pub hessian: Vec<Vec<f64>>,
}

/// Records sorted by follow-up, longest first, in flat arrays.
struct Design {
    time: Vec<f64>,
    event: Vec<bool>,
    z: DMatrix<f64>,
}

impl Design {
    fn new(records: &[PatientRecord]) -> Result<Self> {
        let p = records.first().map_or(0, |r| r.covariates.len());
        for r in records {
            r.validate()?;
            if r.covariates.len() != p {
                return Err(Error::Schema(format!(
                    "patient `{}` has {} covariates, expected {p}",
                    r.id,
                    r.covariates.len()
                )));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[b].followup.total_cmp(&records[a].followup));
        let z = DMatrix::from_fn(records.len(), p, |i, j| records[order[i]].covariates[j]);
        Ok(Design {
            time: order.iter().map(|&i| records[i].followup).collect(),
            event: order.iter().map(|&i| records[i].event).collect(),
            z,
        })
    }

    fn p(&self) -> usize {
        self.z.ncols()
    }

    /// Walks risk sets from the longest follow-up down; calls `visit` once
    /// per distinct failure time with `(time, d, S0, S1, S2, sum of Z over failures)`.
    /// Weights are scaled by `exp(-max eta)`; `shift` returns that offset.
    fn sweep(
        &self,
        beta: &DVector<f64>,
        mut visit: impl FnMut(f64, f64, f64, &DVector<f64>, &DMatrix<f64>, &DVector<f64>),
    ) -> f64 {
        let n = self.time.len();
        let p = self.p();
        let eta = &self.z * beta;
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let mut i = 0;
        while i < n {
            let t = self.time[i];
            let mut d = 0.0;
            let mut zsum = DVector::zeros(p);
            while i < n && self.time[i] == t {
                let w = (eta[i] - shift).exp();
                let zi = self.z.row(i).transpose();
                s0 += w;
                s1.axpy(w, &zi, 1.0);
                s2.ger(w, &zi, &zi, 1.0);
                if self.event[i] {
                    d += 1.0;
                    zsum += &zi;
                }
                i += 1;
            }
            if d > 0.0 {
                visit(t, d, s0, &s1, &s2, &zsum);
            }
        }
        shift
    }

    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.p();
        let mut value = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut deaths = 0.0;
        let shift = self.sweep(beta, |_, d, s0, s1, s2, zsum| {
            let mean = s1 / s0;
            value += zsum.dot(beta) - d * s0.ln();
            grad += zsum - &mean * d;
            info += (s2 / s0 - &mean * mean.transpose()) * d;
            deaths += d;
        });
        (value - deaths * shift, grad, info)
    }

    fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let mut value = 0.0;
        let mut deaths = 0.0;
        let shift = self.sweep(beta, |_, d, s0, _, _, zsum| {
            value += zsum.dot(beta) - d * s0.ln();
            deaths += d;
        });
        value - deaths * shift
    }
}

/// Log partial likelihood, gradient and Hessian at `beta`.
pub fn partial_likelihood(records: &[PatientRecord], beta: &[f64]) -> Result<PartialLikelihood> {
    let design = Design::new(records)?;
    if beta.len() != design.p() {
        return Err(Error::Schema(format!(
            "{} coefficients for {} covariates",
            beta.len(),
            design.p()
        )));
    }
    let (value, grad, info) = design.evaluate(&DVector::from_column_slice(beta));
    Ok(PartialLikelihood {
        value,
        gradient: grad.iter().copied().collect(),
        hessian: (0..info.nrows())
            .map(|i| (0..info.ncols()).map(|j| -info[(i, j)]).collect())
            .collect(),
    })
}

/// Newton-Raphson fit with step halving, followed by the Breslow baseline.
pub fn fit_cox(records: &[PatientRecord]) -> Result<FitResult> {
    if !records.iter().any(|r| r.event) {
        return Err(Error::Unfittable("no failures observed".into()));
    }
    let design = Design::new(records)?;
    let p = design.p();
    let mut beta = DVector::zeros(p);
    let (mut value, mut grad, mut info) = design.evaluate(&beta);
    let mut iterations = 0;
    while grad.amax() >= GRADIENT_TOLERANCE {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: grad.amax(),
            });
        }
        iterations += 1;
        let chol = info.clone().cholesky().ok_or(Error::SingularInformation)?;
        let step = chol.solve(&grad);
        let slack = 1e-12 * (1.0 + value.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * scale;
            let v = design.log_likelihood(&candidate);
            if v.is_finite() && v >= value - slack {
                accepted = Some(candidate);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: grad.amax(),
            });
        };
        beta = next;
        (value, grad, info) = design.evaluate(&beta);
    }

    let standard_errors = if p == 0 {
        Vec::new()
    } else {
        let chol = info.cholesky().ok_or(Error::SingularInformation)?;
        let cov = chol.inverse();
        cov.diagonal().iter().map(|v| v.sqrt()).collect()
    };

    Ok(FitResult {
        baseline: breslow(&design, &beta)?,
        beta_hat: beta.iter().copied().collect(),
        standard_errors,
        log_partial_likelihood: value,
        iterations,
    })
}

/// `H(t_k) = sum_{t_j <= t_k} d_j / sum_{at risk} exp(Z' beta)`.
fn breslow(design: &Design, beta: &DVector<f64>) -> Result<BaselineHazard> {
    let mut steps = Vec::new();
    let shift = design.sweep(beta, |t, d, s0, _, _, _| steps.push((t, d / s0)));
    let scale = (-shift).exp();
    steps.reverse();
    let mut cum = 0.0;
    let (times, values): (Vec<f64>, Vec<f64>) = steps
        .into_iter()
        .map(|(t, dh)| {
            cum += dh * scale;
            (t, cum)
        })
        .unzip();
    BaselineHazard::step_cumulative(times, values)
}
