//! Brute-force reference implementations and shared scenarios.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use survcusum::model::{counting_state, subject_cum_intensity, BaselineHazard, HospitalStream, PatientRecord, RiskModel};
use survcusum::simulate::CovariateSampler;

/// `N(t)` and `Lambda(t)` restricted to subjects with stream index `>= nu`.
fn suffix_state(stream: &HospitalStream, model: &RiskModel, nu: usize, t: f64) -> (f64, f64) {
    let mut n = 0.0;
    let mut lam = 0.0;
    for r in &stream.records()[nu..] {
        lam += subject_cum_intensity(r, model, t).unwrap();
        if r.event && r.exit_time() <= t {
            n += 1.0;
        }
    }
    (n, lam)
}

fn restricted_mle(n: f64, lam: f64, cap: Option<f64>) -> f64 {
    if n == 0.0 || n <= lam {
        return 0.0;
    }
    let theta = if lam == 0.0 { f64::INFINITY } else { (n / lam).ln() };
    match cap {
        Some(c) => theta.min(c),
        None => theta,
    }
}

fn llr(theta: f64, n: f64, lam: f64) -> f64 {
    if theta == 0.0 {
        0.0
    } else {
        theta * n - (theta.exp() - 1.0) * lam
    }
}

/// CGI at `t` straight from the definition.
pub fn brute_cgi(stream: &HospitalStream, model: &RiskModel, cap: Option<f64>, t: f64) -> f64 {
    let s = counting_state(stream, model, t).unwrap();
    let n = s.failures as f64;
    llr(restricted_mle(n, s.lambda, cap), n, s.lambda).max(0.0)
}

/// CGR at `t`: every onset subject that has entered by `t` is tried.
pub fn brute_cgr(stream: &HospitalStream, model: &RiskModel, cap: Option<f64>, t: f64) -> f64 {
    let entered = stream.records().iter().filter(|r| r.entry_time <= t).count();
    (0..entered)
        .map(|nu| {
            let (n, lam) = suffix_state(stream, model, nu, t);
            llr(restricted_mle(n, lam, cap), n, lam)
        })
        .fold(0.0, f64::max)
}

/// `sup_{s <= t, theta in grid} theta N(s, t) - (e^theta - 1) Lambda(s, t)`.
///
/// Candidate change times are 0, `t` and every failure time up to `t`, where
/// a change at a failure time counts that failure. Between failures the
/// objective decreases in `s`, so these candidates attain the supremum.
pub fn brute_g(stream: &HospitalStream, model: &RiskModel, thetas: &[f64], t: f64) -> f64 {
    let lam_t = counting_state(stream, model, t).unwrap().lambda;
    let failures: Vec<f64> = stream
        .records()
        .iter()
        .filter_map(|r| r.failure_time())
        .filter(|&f| f <= t)
        .collect();
    let mut candidates = vec![0.0, t];
    candidates.extend(failures.iter().copied());
    let mut best: f64 = 0.0;
    for &s in &candidates {
        let n = failures.iter().filter(|&&f| f >= s).count() as f64;
        let lam = lam_t - counting_state(stream, model, s).unwrap().lambda;
        for &theta in thetas {
            best = best.max(theta * n - theta.exp_m1() * lam);
        }
    }
    best
}

pub fn brute_bk(stream: &HospitalStream, model: &RiskModel, theta1: f64, t: f64) -> f64 {
    brute_g(stream, model, &[theta1], t)
}

/// Nelson-Aalen estimate `sum d_k / n_k` on the follow-up scale.
pub fn nelson_aalen(records: &[PatientRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.followup).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut cum = 0.0;
    let values = times
        .iter()
        .map(|&t| {
            let d = records.iter().filter(|r| r.event && r.followup == t).count() as f64;
            let at_risk = records.iter().filter(|r| r.followup >= t).count() as f64;
            cum += d / at_risk;
            cum
        })
        .collect();
    (times, values)
}

/// Random stream with integer-free real times; `p` covariates.
pub fn random_stream(rng: &mut ChaCha8Rng, n: usize, p: usize, horizon: f64, fail_prob: f64) -> HospitalStream {
    let recs = (0..n)
        .map(|i| {
            let entry = rng.random::<f64>() * horizon * 0.8;
            let followup = (rng.random::<f64>() * (horizon - entry)).max(1e-3);
            let event = rng.random::<f64>() < fail_prob;
            let z = (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            PatientRecord::new(format!("{i:03}"), entry, followup, event, z).unwrap()
        })
        .collect();
    HospitalStream::new(recs, horizon).unwrap()
}

pub fn exponential_model(rate: f64) -> RiskModel {
    RiskModel::baseline_only(BaselineHazard::exponential(rate).unwrap()).unwrap()
}

/// A synthetic stand-in for a hip-replacement registry: revision within a
/// year is rare (about 1.7% for a reference patient) and the hazard is
/// front-loaded (Weibull shape 0.35).
pub struct RegistryScenario {
    pub model: RiskModel,
    pub covariates: CovariateSampler,
}

pub const REGISTRY_SHAPE: f64 = 0.35;
pub const REGISTRY_ONE_YEAR_HAZARD: f64 = 0.017;

pub fn registry_scenario() -> RegistryScenario {
    let scale = 365.0 / REGISTRY_ONE_YEAR_HAZARD.powf(1.0 / REGISTRY_SHAPE);
    let baseline = BaselineHazard::weibull(REGISTRY_SHAPE, scale).unwrap();
    // standardised age, male, ASA III-IV, smoker
    let beta = vec![0.15, 0.2, 0.3, 0.25];
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e01);
    let pool = (0..5000)
        .map(|_| {
            let age: f64 = StandardNormal.sample(&mut rng);
            let bern = |rng: &mut ChaCha8Rng, p: f64| f64::from(u8::from(rng.random::<f64>() < p));
            vec![age, bern(&mut rng, 0.35), bern(&mut rng, 0.19), bern(&mut rng, 0.12)]
        })
        .collect();
    RegistryScenario {
        model: RiskModel::new(beta, baseline).unwrap(),
        covariates: CovariateSampler::Resample { pool },
    }
}
