//! Continuous-time risk-adjusted CUSUM monitoring of survival outcomes.
//!
//! The crate builds CGI, CGR and BK CUSUM charts from streams of patients
//! under a Cox proportional hazards risk model, along with a risk-adjusted
//! Bernoulli CUSUM and a funnel plot for comparison. It also approximates
//! average run lengths from the Fisher information and runs Monte-Carlo
//! experiments to calibrate control limits and estimate power.
//!
//! Times are in days throughout.
//!
//! ```
//! use survcusum::charts::{compute_cgr, ChartSpec};
//! use survcusum::model::{BaselineHazard, HospitalStream, PatientRecord, RiskModel};
//!
//! let model = RiskModel::baseline_only(BaselineHazard::exponential(1.0)?)?;
//! let stream = HospitalStream::new(
//!     vec![
//!         PatientRecord::new("1", 0.0, 1.0, false, vec![])?,
//!         PatientRecord::new("2", 0.0, 0.5, true, vec![])?,
//!     ],
//!     1.0,
//! )?;
//! let cgr = compute_cgr(&stream, &model, &ChartSpec::cgr())?;
//! assert!((cgr.value_at(1.0) - (2f64.ln() - 0.5)).abs() < 1e-12);
//! # Ok::<(), survcusum::Error>(())
//! ```

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arl;
pub mod charts;
pub mod coxfit;
pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
