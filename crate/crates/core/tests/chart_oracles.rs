mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survcusum::charts::{compute_bernoulli, compute_bk, compute_cgi, compute_cgr, ChartSeries, ChartSpec};
use survcusum::model::{BaselineHazard, HospitalStream, RiskModel};

fn covariate_model(p: usize, baseline: BaselineHazard) -> RiskModel {
    let beta = (0..p).map(|j| 0.4 - 0.3 * j as f64).collect();
    RiskModel::new(beta, baseline).unwrap()
}

fn models() -> Vec<RiskModel> {
    vec![
        covariate_model(2, BaselineHazard::exponential(0.05).unwrap()),
        covariate_model(2, BaselineHazard::weibull(0.6, 30.0).unwrap()),
        covariate_model(
            2,
            BaselineHazard::step_cumulative(vec![5.0, 20.0, 60.0], vec![0.1, 0.5, 1.2]).unwrap(),
        ),
    ]
}

fn assert_matches(series: &ChartSeries, oracle: impl Fn(f64) -> f64, tol: f64) {
    for p in &series.points {
        let expected = oracle(p.time);
        assert!(
            (p.value - expected).abs() <= tol,
            "{} at t={}: {} vs oracle {}",
            series.spec.label(),
            p.time,
            p.value,
            expected
        );
    }
}

#[test]
fn cgr_matches_brute_force_over_onsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for model in &models() {
        for i in 0..12 {
            let n = 5 + (i * 4) % 46;
            let stream = random_stream(&mut rng, n, 2, 100.0, 0.4);
            for cap in [None, Some(6f64.ln())] {
                let s = compute_cgr(&stream, model, &ChartSpec::Cgr { cap }).unwrap();
                assert_matches(&s, |t| brute_cgr(&stream, model, cap, t), 1e-10);
            }
        }
    }
}

#[test]
fn cgi_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for model in models() {
        for _ in 0..10 {
            let stream = random_stream(&mut rng, 30, 2, 100.0, 0.5);
            let s = compute_cgi(&stream, &model, &ChartSpec::cgi()).unwrap();
            assert_matches(&s, |t| brute_cgi(&stream, &model, None, t), 1e-10);
        }
    }
}

#[test]
fn bk_matches_brute_force_over_change_times() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for model in models() {
        for _ in 0..15 {
            let stream = random_stream(&mut rng, 40, 2, 100.0, 0.4);
            if stream.records().iter().filter(|r| r.event).count() > 20 {
                continue;
            }
            for ratio in [1.4, 2.0, 4.0] {
                let s = compute_bk(&stream, &model, &ChartSpec::bk(ratio)).unwrap();
                assert_matches(&s, |t| brute_bk(&stream, &model, ratio.ln(), t), 1e-10);
            }
        }
    }
}

#[test]
fn g_oracle_bounds_bk() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = &models()[0];
    let mut thetas: Vec<f64> = (1..=60).map(|k| k as f64 * 0.05).collect();
    thetas.push(2f64.ln());
    for _ in 0..10 {
        let stream = random_stream(&mut rng, 25, 2, 100.0, 0.5);
        let s = compute_bk(&stream, model, &ChartSpec::bk(2.0)).unwrap();
        for p in &s.points {
            assert!((brute_g(&stream, model, &[2f64.ln()], p.time) - p.value).abs() <= 1e-12);
            assert!(brute_g(&stream, model, &thetas, p.time) >= p.value - 1e-12);
        }
    }
    let empty = HospitalStream::empty(10.0);
    assert_eq!(brute_g(&empty, model, &thetas, 10.0), 0.0);
}

/// Chart value at an arbitrary time, by truncating the stream there.
fn value_at(stream: &HospitalStream, model: &RiskModel, spec: &ChartSpec, t: f64) -> f64 {
    let truncated = stream.clone().with_horizon(t);
    let s = match spec {
        ChartSpec::Cgi { .. } => compute_cgi(&truncated, model, spec),
        ChartSpec::Cgr { .. } => compute_cgr(&truncated, model, spec),
        _ => compute_bk(&truncated, model, spec),
    }
    .unwrap();
    let last = s.points.last().unwrap();
    assert_eq!(last.time, t);
    last.value
}

#[test]
fn charts_drift_down_between_failures() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = &models()[1];
    for _ in 0..8 {
        let stream = random_stream(&mut rng, 30, 2, 100.0, 0.3);
        let mut cuts: Vec<f64> = stream.records().iter().filter_map(|r| r.failure_time()).collect();
        cuts.push(0.0);
        cuts.push(100.0);
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            if w[1] - w[0] < 1e-6 {
                continue;
            }
            let grid: Vec<f64> = (0..6).map(|k| w[0] + (w[1] - w[0]) * (k as f64 + 0.5) / 6.5).collect();
            for spec in [ChartSpec::cgi(), ChartSpec::cgr(), ChartSpec::bk(2.0)] {
                let values: Vec<f64> = grid.iter().map(|&t| value_at(&stream, model, &spec, t)).collect();
                assert!(
                    values.windows(2).all(|v| v[1] <= v[0] + 1e-12),
                    "{} increased between failures: {values:?}",
                    spec.label()
                );
            }
        }
    }
}

#[test]
fn bernoulli_matches_direct_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = &models()[0];
    let window = 20.0;
    let theta1 = 2f64.ln();
    for _ in 0..10 {
        let stream = random_stream(&mut rng, 40, 2, 100.0, 0.5);
        let s = compute_bernoulli(&stream, model, &ChartSpec::bernoulli(2.0, window)).unwrap();
        let hw = model.baseline.eval(window);
        let mut outcomes: Vec<(f64, f64)> = stream
            .records()
            .iter()
            .filter_map(|r| {
                let p = 1.0 - (-model.relative_risk(&r.covariates) * hw).exp();
                let norm = 1.0 - p + theta1.exp() * p;
                if r.event && r.followup <= window {
                    Some((r.exit_time(), (theta1.exp() / norm).ln()))
                } else if r.followup >= window {
                    Some((r.entry_time + window, (1.0 / norm).ln()))
                } else {
                    None
                }
            })
            .filter(|(t, _)| *t <= 100.0)
            .collect();
        outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut v: f64 = 0.0;
        for (t, w) in outcomes {
            v = (v + w).max(0.0);
            assert!((s.value_at(t) - v).abs() < 1e-12);
        }
        assert!((s.points.last().map_or(0.0, |p| p.value) - v).abs() < 1e-12);
    }
}
