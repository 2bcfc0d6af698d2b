mod common;

use common::exponential_model;
use statrs::distribution::{ContinuousCDF, Exp};
use survcusum::charts::ChartSpec;
use survcusum::exec::Execution;
use survcusum::simulate::{detection_times, generate_hospital, SimConfig};
use survcusum::stats::{ks_p_value, ks_statistic, mean, median};

#[test]
fn in_control_survival_times_are_exponential() {
    // entries before day 1000 are followed for at least 9000 days, so
    // censoring is negligible for a 0.002 hazard
    let cfg = SimConfig::new(5.0, 10_000.0, 2, exponential_model(0.002), 4);
    let times: Vec<f64> = (0..2)
        .flat_map(|r| generate_hospital(&cfg, r).unwrap().records().to_vec())
        .filter(|r| r.entry_time < 1000.0)
        .map(|r| r.followup)
        .collect();
    assert!(times.len() > 9000, "{}", times.len());
    let exp = Exp::new(0.002).unwrap();
    let p = ks_p_value(ks_statistic(&times, |x| exp.cdf(x)), times.len());
    assert!(p > 0.01, "p = {p}");
    assert!((median(&times) - 346.6).abs() / 346.6 < 0.05, "{}", median(&times));
}

#[test]
fn arrivals_are_poisson_rate_psi() {
    let cfg = SimConfig::new(2.28, 365.0, 200, exponential_model(0.002), 8);
    let counts: Vec<f64> = (0..200).map(|r| generate_hospital(&cfg, r).unwrap().len() as f64).collect();
    let m = mean(&counts);
    assert!((m - 832.2).abs() / 832.2 < 0.03, "{m}");
    let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 199.0;
    assert!((var / m - 1.0).abs() < 0.3, "dispersion {}", var / m);
}

#[test]
fn results_do_not_depend_on_execution_mode() {
    let specs = [ChartSpec::cgr(), ChartSpec::bk(2.0), ChartSpec::bernoulli(2.0, 100.0)];
    let cfg = SimConfig::new(1.0, 700.0, 24, exponential_model(0.002), 12).with_theta(0.7);
    let seq = detection_times(&specs, &cfg.clone().with_execution(Execution::Sequential), &[4.0, 4.0, 3.0]).unwrap();
    let par = detection_times(&specs, &cfg.with_execution(Execution::Parallel), &[4.0, 4.0, 3.0]).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn cgr_signals_no_later_than_cgi() {
    let cfg = SimConfig::new(2.28, 1500.0, 60, exponential_model(0.002), 3).with_theta(0.4);
    let det = detection_times(&[ChartSpec::cgi(), ChartSpec::cgr()], &cfg, &[7.73, 7.73]).unwrap();
    for (cgi, cgr) in det[0].iter().zip(&det[1]) {
        match (cgi, cgr) {
            (Some(a), Some(b)) => assert!(b <= a),
            (Some(_), None) => panic!("CGI signalled but CGR did not"),
            _ => {}
        }
    }
}

#[test]
fn capped_cgr_limit_on_registry_scenario() {
    use common::registry_scenario;
    use survcusum::simulate::{calibrate_control_limit, CalibrationTarget};

    let sc = registry_scenario();
    let cfg = SimConfig::new(0.6, 2190.0, 500, sc.model, 21).with_covariates(sc.covariates);
    let target = CalibrationTarget::TypeIError { alpha: 0.1, horizon: 2190.0 };
    let c = calibrate_control_limit(&ChartSpec::cgr_capped(6.0), &cfg, &target).unwrap();
    assert!((c.h - 5.79).abs() / 5.79 <= 0.15, "h = {}", c.h);
    assert!(c.achieved <= 0.1);
}
