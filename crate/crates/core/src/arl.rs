//! Fisher information and approximate average run lengths.
//!
//! Under an out-of-control hazard ratio `exp(theta)` the CGI chart grows like
//! `(theta + exp(-theta) - 1) I(theta, t)` and the BK chart like
//! `(theta1 + exp(-theta) - exp(theta1 - theta)) I(theta, t)`, where
//! `I(theta, t) = psi * integral_0^t E[F^theta(s)] ds` is the Fisher
//! information accumulated by time `t`. The approximate ARL is the time at
//! which that growth reaches the control limit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BaselineHazard;

/// Default search horizon for ARL roots: 100 years.
pub const DEFAULT_T_MAX: f64 = 36_500.0;

/// Bisection stops once the bracket is this narrow, in days.
const ROOT_TOLERANCE: f64 = 0.01;

/// Absolute tolerance for the inner quadrature.
const QUAD_TOLERANCE: f64 = 1e-8;

/// Distribution of the relative risk `U = exp(Z' beta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrailtyDist {
    /// `U = 1`.
    Degenerate,
    /// Mean 1, variance `delta`.
    Gamma { delta: f64 },
    /// Power variance function family with Laplace transform
    /// `exp(-rho (1 - (nu / (nu + c))^m))`.
    Pvf { rho: f64, nu: f64, m: f64 },
    /// Observed relative risks, e.g. from a fitted model.
    Empirical { samples: Vec<f64> },
}

impl FrailtyDist {
    pub fn gamma(delta: f64) -> Result<Self> {
        let d = FrailtyDist::Gamma { delta };
        d.validate()?;
        Ok(d)
    }

    pub fn pvf(rho: f64, nu: f64, m: f64) -> Result<Self> {
        let d = FrailtyDist::Pvf { rho, nu, m };
        d.validate()?;
        Ok(d)
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        let d = FrailtyDist::Empirical { samples };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FrailtyDist::Degenerate => Ok(()),
            FrailtyDist::Gamma { delta } => {
                if *delta > 0.0 && delta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("delta", format!("must be finite and > 0, got {delta}")))
                }
            }
            FrailtyDist::Pvf { rho, nu, m } => {
                if !(*nu > 0.0 && nu.is_finite()) {
                    return Err(Error::invalid("nu", format!("must be > 0, got {nu}")));
                }
                if !(*m > -1.0 && m.is_finite()) {
                    return Err(Error::invalid("m", format!("must be > -1, got {m}")));
                }
                if !(m * rho > 0.0 && rho.is_finite()) {
                    return Err(Error::invalid("rho", format!("m * rho must be > 0, got {}", m * rho)));
                }
                Ok(())
            }
            FrailtyDist::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(Error::invalid("samples", "empirical frailty needs at least one sample"));
                }
                if samples.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
                    return Err(Error::invalid("samples", "relative risks must be finite and > 0"));
                }
                Ok(())
            }
        }
    }

    /// Laplace transform `E[exp(-c U)]` for `c >= 0`.
    pub fn laplace(&self, c: f64) -> f64 {
        match self {
            FrailtyDist::Degenerate => (-c).exp(),
            FrailtyDist::Gamma { delta } => (-(delta * c).ln_1p() / delta).exp(),
            FrailtyDist::Pvf { rho, nu, m } => (-rho * (1.0 - (nu / (nu + c)).powf(*m))).exp(),
            FrailtyDist::Empirical { samples } => {
                samples.iter().map(|u| (-c * u).exp()).sum::<f64>() / samples.len() as f64
            }
        }
    }
}

/// Inputs to the ARL approximations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArlQuery {
    /// True log hazard ratio.
    pub theta: f64,
    /// Log hazard ratio the BK chart is tuned to; unused by CGI.
    pub theta1: Option<f64>,
    pub h: f64,
    /// Arrivals per day.
    pub psi: f64,
    pub baseline: BaselineHazard,
    pub frailty: FrailtyDist,
    pub t_max: f64,
}

impl ArlQuery {
    pub fn new(theta: f64, h: f64, psi: f64, baseline: BaselineHazard) -> Self {
        ArlQuery {
            theta,
            theta1: None,
            h,
            psi,
            baseline,
            frailty: FrailtyDist::Degenerate,
            t_max: DEFAULT_T_MAX,
        }
    }

    pub fn with_theta1(mut self, theta1: f64) -> Self {
        self.theta1 = Some(theta1);
        self
    }

    pub fn with_frailty(mut self, frailty: FrailtyDist) -> Self {
        self.frailty = frailty;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid("theta", format!("must be finite and >= 0, got {}", self.theta)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid("h", format!("must be > 0, got {}", self.h)));
        }
        check_psi(self.psi)?;
        if !(self.t_max > 0.0) {
            return Err(Error::invalid("t_max", format!("must be > 0, got {}", self.t_max)));
        }
        self.baseline.validate()?;
        self.frailty.validate()
    }
}

fn check_psi(psi: f64) -> Result<()> {
    if psi > 0.0 && psi.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("psi", format!("must be finite and > 0, got {psi}")))
    }
}

/// An approximate ARL, or the signal that the chart's expected drift is not
/// positive and no approximation exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArlValue {
    Finite(f64),
    Infinite,
}

impl ArlValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            ArlValue::Finite(t) => Some(t),
            ArlValue::Infinite => None,
        }
    }
}

impl fmt::Display for ArlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArlValue::Finite(t) => write!(f, "{t:.2}"),
            ArlValue::Infinite => f.write_str("inf"),
        }
    }
}

/// `I(theta, t)`, in closed form for an exponential baseline with degenerate
/// or Gamma frailty and by adaptive quadrature otherwise.
pub fn fisher_information(
    theta: f64,
    t: f64,
    psi: f64,
    baseline: &BaselineHazard,
    frailty: &FrailtyDist,
) -> Result<f64> {
    check_information_args(theta, t, psi)?;
    let closed = match (baseline, frailty) {
        (BaselineHazard::Exponential { rate }, FrailtyDist::Degenerate) => {
            let a = rate * theta.exp();
            Some(-(-a * t).exp_m1() / a)
        }
        (BaselineHazard::Exponential { rate }, FrailtyDist::Gamma { delta }) => {
            Some(gamma_survival_integral(rate * theta.exp(), *delta, t))
        }
        _ => None,
    };
    let survival_integral = match closed {
        Some(v) => v,
        None => survival_integral_quadrature(theta, t, baseline, frailty),
    };
    Ok(psi * (t - survival_integral))
}

/// `I(theta, t)` by quadrature regardless of the baseline/frailty pair.
pub fn fisher_information_quadrature(
    theta: f64,
    t: f64,
    psi: f64,
    baseline: &BaselineHazard,
    frailty: &FrailtyDist,
) -> Result<f64> {
    check_information_args(theta, t, psi)?;
    Ok(psi * (t - survival_integral_quadrature(theta, t, baseline, frailty)))
}

fn check_information_args(theta: f64, t: f64, psi: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("information time must be finite and >= 0, got {t}")));
    }
    if !theta.is_finite() {
        return Err(Error::invalid("theta", "must be finite"));
    }
    check_psi(psi)
}

/// `integral_0^t (1 + delta a s)^(-1/delta) ds`.
fn gamma_survival_integral(a: f64, delta: f64, t: f64) -> f64 {
    let log_base = (delta * a * t).ln_1p();
    if delta == 1.0 {
        log_base / a
    } else {
        let k = (delta - 1.0) / delta;
        (k * log_base).exp_m1() / (k * delta * a)
    }
}

/// `integral_0^t L(exp(theta) H(s)) ds`, split at the kinks of a step baseline.
fn survival_integral_quadrature(theta: f64, t: f64, baseline: &BaselineHazard, frailty: &FrailtyDist) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let ratio = theta.exp();
    let f = |s: f64| frailty.laplace(ratio * baseline.eval(s));
    let mut cuts = vec![0.0];
    if let BaselineHazard::StepCumulative { times, .. } = baseline {
        cuts.extend(times.iter().copied().filter(|&x| x > 0.0 && x < t));
    }
    cuts.push(t);
    let tol = QUAD_TOLERANCE / (cuts.len() - 1) as f64;
    cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], tol)).sum()
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Drift coefficient of the CGI chart, `theta + exp(-theta) - 1`.
pub fn cgi_coefficient(theta: f64) -> f64 {
    theta + (-theta).exp_m1()
}

/// Drift coefficient of the BK chart, `theta1 + exp(-theta) - exp(theta1 - theta)`.
pub fn bk_coefficient(theta: f64, theta1: f64) -> f64 {
    theta1 + (-theta).exp() - (theta1 - theta).exp()
}

/// Approximate ARL of the CGI chart, in days; an upper bound for CGR.
pub fn arl_cgi(query: &ArlQuery) -> Result<f64> {
    query.validate()?;
    if query.theta == 0.0 {
        return Err(Error::NoApproximation);
    }
    solve(query, cgi_coefficient(query.theta))
}

/// Approximate ARL of the BK chart; [`ArlValue::Infinite`] when the drift
/// coefficient is not positive.
pub fn arl_bk(query: &ArlQuery) -> Result<ArlValue> {
    query.validate()?;
    let theta1 = query
        .theta1
        .ok_or_else(|| Error::invalid("theta1", "required for the BK chart"))?;
    if !(theta1 > 0.0 && theta1.is_finite()) {
        return Err(Error::invalid("theta1", format!("must be finite and > 0, got {theta1}")));
    }
    let coef = bk_coefficient(query.theta, theta1);
    if coef <= 0.0 {
        return Ok(ArlValue::Infinite);
    }
    solve(query, coef).map(ArlValue::Finite)
}

/// Smallest `t` with `coef * I(theta, t) = h`, by doubling then bisection.
fn solve(query: &ArlQuery, coef: f64) -> Result<f64> {
    let g = |t: f64| -> Result<f64> {
        Ok(coef * fisher_information(query.theta, t, query.psi, &query.baseline, &query.frailty)? - query.h)
    };
    let mut lo = 0.0;
    let mut hi = 1.0f64.min(query.t_max);
    while g(hi)? < 0.0 {
        if hi >= query.t_max {
            return Err(Error::HorizonExceeded { t_max: query.t_max });
        }
        lo = hi;
        hi = (2.0 * hi).min(query.t_max);
    }
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
