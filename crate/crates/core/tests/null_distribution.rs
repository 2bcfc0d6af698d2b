//! In-control law of `t * CGI(t)`. With the estimate restricted to
//! `theta >= 0` the statistic is zero whenever `N(t) <= Lambda(t)`, so its
//! law is an even mixture of a point mass at zero and Gamma(1/2, scale t).

mod common;

use common::exponential_model;
use statrs::distribution::{ContinuousCDF, Gamma};
use survcusum::model::{counting_state, log_likelihood_ratio, mle_theta};
use survcusum::simulate::{generate_hospital, SimConfig};
use survcusum::stats::{ks_p_value, ks_statistic};

const T: f64 = 5.0 * 365.0;

struct Draws {
    restricted: Vec<f64>,
    unrestricted: Vec<f64>,
}

fn draws(n: usize, seed: u64) -> Draws {
    let model = exponential_model(0.002);
    let cfg = SimConfig::new(2.28, T, n, model.clone(), seed);
    let mut d = Draws {
        restricted: Vec::with_capacity(n),
        unrestricted: Vec::with_capacity(n),
    };
    for r in 0..n {
        let stream = generate_hospital(&cfg, r as u64).unwrap();
        let s = counting_state(&stream, &model, T).unwrap();
        let nf = s.failures as f64;
        let theta = mle_theta(s.failures, s.lambda, None).unwrap();
        d.restricted.push(T * log_likelihood_ratio(theta, nf, s.lambda).max(0.0));
        d.unrestricted.push(T * (nf * (nf / s.lambda).ln() - nf + s.lambda));
    }
    d
}

#[test]
fn restricted_statistic_is_half_point_mass() {
    let d = draws(2000, 91);
    let gamma = Gamma::new(0.5, 1.0 / T).unwrap();

    let zeros = d.restricted.iter().filter(|&&x| x == 0.0).count() as f64 / 2000.0;
    assert!((zeros - 0.5).abs() < 0.04, "zero fraction {zeros}");

    let positive: Vec<f64> = d.restricted.iter().copied().filter(|&x| x > 0.0).collect();
    let p = ks_p_value(ks_statistic(&positive, |x| gamma.cdf(x)), positive.len());
    assert!(p > 0.01, "positive part rejected, p = {p}");

    // the plain Gamma law is clearly wrong for the restricted statistic
    let p_plain = ks_p_value(ks_statistic(&d.restricted, |x| gamma.cdf(x)), 2000);
    assert!(p_plain < 1e-6);
}

#[test]
fn unrestricted_statistic_follows_gamma() {
    let d = draws(2000, 92);
    let gamma = Gamma::new(0.5, 1.0 / T).unwrap();
    let p = ks_p_value(ks_statistic(&d.unrestricted, |x| gamma.cdf(x)), 2000);
    assert!(p > 0.01, "p = {p}");
}
