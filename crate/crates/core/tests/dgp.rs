use hinf_core::dgp::{coverage_experiment, generate, preset, sample, CoverageConfig, Formula, MIN_REPLICATIONS};
use hinf_core::inference::{InferenceConfig, ProjectorConfig, ThetaSpec};
use hinf_core::net::TrainConfig;
use hinf_core::oracle::oracle_grid_fixed_point;
use hinf_core::projector::Regularization;
use hinf_core::targets::{optimal_rate, DefaultSpec, RateProblem};
use hinf_core::Error;

/// Average ranks, with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn lending_applications_fall_with_the_rate() {
    let spec = preset("lending", 20_000, 12).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let y: Vec<f64> = (0..data.n()).map(|i| data.y.row(i)[0]).collect();
    let r: Vec<f64> = (0..data.n()).map(|i| data.t.row(i)[2]).collect();
    let rho = pearson(&ranks(&y), &ranks(&r));
    assert!(rho < 0.0, "rank correlation {rho}");
}

#[test]
fn lending_truth_has_interior_optimal_rates() {
    let spec = preset("lending", 200, 13).unwrap();
    let (_, truth) = sample(&spec).unwrap();
    let p = RateProblem::new(DefaultSpec::new(-3.0, 0.05), 3);
    for i in 0..truth.theta.rows() {
        let th = truth.theta.row(i);
        let tstar = [1.0, 1.0, 0.0];
        let r = optimal_rate(th, &tstar, &p).unwrap();
        let g = oracle_grid_fixed_point(th, &tstar, 3, -3.0, 0.05, 200.0, 1e-3).unwrap();
        assert!((r - g).abs() <= 1e-3);
        assert!(r > 0.0 && r < 200.0);
    }
}

#[test]
fn samples_are_reproducible() {
    for name in ["linear-hetero", "randomized-logit", "smooth-logit", "lending"] {
        let spec = preset(name, 300, 77).unwrap();
        let (a, ta) = sample(&spec).unwrap();
        let (b, tb) = sample(&spec).unwrap();
        assert_eq!(a.y.as_slice(), b.y.as_slice());
        assert_eq!(a.t.as_slice(), b.t.as_slice());
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(ta.theta.as_slice(), tb.theta.as_slice());
        let (c, _) = sample(&preset(name, 300, 78).unwrap()).unwrap();
        assert_ne!(a.x.as_slice(), c.x.as_slice());
    }
}

#[test]
fn propensities_stay_inside_the_band() {
    let spec = preset("linear-hetero", 2000, 3).unwrap();
    let (_, truth) = sample(&spec).unwrap();
    let p = truth.propensity.unwrap();
    assert!(p.iter().all(|v| (0.1..=0.9).contains(v)));
}

#[test]
fn formula_and_preset_errors() {
    let mut f = Formula::sine(0.0, 1.0, 3);
    assert!(matches!(f.validate(2), Err(Error::IndexOutOfRange { .. })));
    f.kind = "cubic".into();
    assert!(matches!(f.validate(2), Err(Error::UnknownFormulaKey(_))));
    assert!(matches!(preset("nope", 10, 0), Err(Error::UnknownKey(_))));
}

#[test]
fn linear_truth_matches_design_mean() {
    let mut spec = preset("linear-hetero", 50, 0).unwrap();
    if let Some(t) = spec.target.as_mut() {
        t.draws = 200_000;
    }
    let (_, truth) = generate(&spec).unwrap();
    let mu0 = truth.mu0.unwrap();
    assert!((mu0.value[0] - 1.0).abs() < 4.0 * mu0.se[0] + 1e-12, "{mu0:?}");
}

fn tiny_coverage(replications: usize) -> CoverageConfig {
    CoverageConfig {
        replications,
        level: 0.9,
        theta: ThetaSpec {
            hidden_widths: vec![4],
            train: TrainConfig {
                epochs: 2,
                batch_size: 32,
                ..TrainConfig::default()
            },
            ..ThetaSpec::default()
        },
        projector: ProjectorConfig::Truth,
        regularization: Regularization::None,
        inference: InferenceConfig {
            folds: 2,
            report_plugin: true,
            ..InferenceConfig::default()
        },
    }
}

#[test]
fn coverage_report_is_consistent() {
    let mut spec = preset("linear-hetero", 300, 21).unwrap();
    if let Some(t) = spec.target.as_mut() {
        t.draws = 20_000;
    }
    let report = coverage_experiment(&spec, &tiny_coverage(MIN_REPLICATIONS)).unwrap();
    assert_eq!(report.records.len(), MIN_REPLICATIONS);
    assert_eq!(report.failed, report.records.iter().filter(|r| r.error.is_some()).count());
    let ok = report.records.iter().filter(|r| r.covered == Some(true)).count();
    let done = MIN_REPLICATIONS - report.failed;
    assert!((report.coverage - ok as f64 / done as f64).abs() < 1e-12);
    assert!(report.plugin_coverage.is_some());
    assert!(report.mean_ci_length > 0.0);

    assert!(matches!(
        coverage_experiment(&spec, &tiny_coverage(MIN_REPLICATIONS - 1)),
        Err(Error::Config(_))
    ));
}
