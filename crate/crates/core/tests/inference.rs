use std::sync::Arc;

use hinf_core::dgp::{preset, sample, DgpSpec};
use hinf_core::inference::{
    assign_folds, cross_fit, orthogonality_diagnostic, score_statistics, Direction, InferenceConfig, Pipeline,
    ProjectorStrategy, SkipPolicy, ThetaSpec,
};
use hinf_core::net::TrainConfig;
use hinf_core::numerics::{sym_eigen, Mat};
use hinf_core::projector::{ProjectedHessian, Regularization};
use hinf_core::targets::{CustomTarget, SharedTarget, Target};
use hinf_core::{Error, Result};
use proptest::prelude::*;

fn quick_pipeline(spec: &DgpSpec, target: SharedTarget, tstar: Vec<f64>) -> Pipeline {
    Pipeline {
        loss: spec.loss().unwrap(),
        target,
        tstar,
        theta: ThetaSpec {
            hidden_widths: vec![8],
            train: TrainConfig {
                epochs: 3,
                batch_size: 32,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            ..ThetaSpec::default()
        },
        projector: ProjectorStrategy::Known(spec.true_hessian().unwrap()),
        regularization: Regularization::None,
        inference: InferenceConfig {
            seed: 9,
            ..InferenceConfig::default()
        },
    }
}

/// `θ₁`, undefined whenever `x₁ > 0.5`.
#[derive(Debug)]
struct Gated;

impl Target for Gated {
    fn name(&self) -> String {
        "gated".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], theta: &[f64], _tstar: &[f64]) -> Result<Vec<f64>> {
        if x[0] > 0.5 {
            return Err(Error::SignConditionViolated("gate".into()));
        }
        Ok(vec![theta[0]])
    }
    fn jac(&self, x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        self.eval(x, theta, tstar)?;
        let mut row = vec![0.0; theta.len()];
        row[0] = 1.0;
        Mat::new(1, theta.len(), row)
    }
}

#[test]
fn folds_partition_the_sample() {
    let folds = assign_folds(103, 4, 5);
    let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    assert_eq!(folds, assign_folds(103, 4, 5));
    assert_ne!(folds, assign_folds(103, 4, 6));
}

fn scores_strategy() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    proptest::collection::vec(
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 1..20),
        2..5,
    )
}

proptest! {
    #[test]
    fn statistics_ignore_fold_labels(folds in scores_strategy(), rot in 0usize..5) {
        let (mu, psi, _) = score_statistics(&folds).unwrap();
        let mut relabeled = folds.clone();
        let k = rot % relabeled.len();
        relabeled.rotate_left(k);
        for f in &mut relabeled {
            f.reverse();
        }
        let (mu2, psi2, _) = score_statistics(&relabeled).unwrap();
        for k in 0..2 {
            prop_assert!((mu[k] - mu2[k]).abs() < 1e-12);
            for j in 0..2 {
                prop_assert!((psi[(k, j)] - psi2[(k, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn variance_is_symmetric_psd(folds in scores_strategy()) {
        let (_, psi, summaries) = score_statistics(&folds).unwrap();
        prop_assert_eq!(psi[(0, 1)], psi[(1, 0)]);
        let (vals, _) = sym_eigen(&psi);
        prop_assert!(vals.iter().all(|v| *v >= -1e-9));
        prop_assert_eq!(summaries.len(), folds.len());
    }
}

#[test]
fn constant_target_has_zero_variance() {
    let spec = preset("linear-hetero", 600, 3).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let target: SharedTarget = Arc::new(CustomTarget::parse(&["2.5"]).unwrap());
    let res = cross_fit(&data, &quick_pipeline(&spec, target, vec![1.0, 1.0])).unwrap();
    assert!((res.mu[0] - 2.5).abs() < 1e-12);
    assert!(res.psi()[(0, 0)].abs() < 1e-20);
    assert_eq!(res.skipped, 0);
    assert_eq!(res.n, 600);
}

#[test]
fn skip_policy_drops_or_aborts() {
    let spec = preset("linear-hetero", 800, 4).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let expected = (0..data.n()).filter(|&i| data.x.row(i)[0] > 0.5).count();
    let mut p = quick_pipeline(&spec, Arc::new(Gated), vec![1.0, 1.0]);
    let res = cross_fit(&data, &p).unwrap();
    assert_eq!(res.skipped, expected);
    assert_eq!(res.n, data.n() - expected);

    p.inference.skip_policy = SkipPolicy::Abort;
    assert!(matches!(cross_fit(&data, &p), Err(Error::SignConditionViolated(_))));
}

#[test]
fn too_few_observations_per_fold() {
    let spec = preset("linear-hetero", 25, 1).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let (target, tstar) = spec.target().unwrap().unwrap();
    assert!(matches!(
        cross_fit(&data, &quick_pipeline(&spec, target, tstar)),
        Err(Error::FoldTooSmall { .. })
    ));
}

#[test]
fn result_json_has_required_fields() {
    let spec = preset("linear-hetero", 600, 8).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let (target, tstar) = spec.target().unwrap().unwrap();
    let res = cross_fit(&data, &quick_pipeline(&spec, target, tstar)).unwrap();
    let v: serde_json::Value = serde_json::to_value(&res).unwrap();
    for key in ["schema", "target", "mu", "psi_matrix", "n", "folds", "ci", "skipped", "diagnostics"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let ci = res.confidence_interval(0.95);
    assert!(ci[0][0] < res.mu[0] && res.mu[0] < ci[0][1]);
    assert_eq!(res.folds.len(), 3);
}

#[test]
fn target_free_of_theta_has_flat_scores() {
    let spec = preset("randomized-logit", 2000, 5).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let loss = spec.loss().unwrap();
    let truth = spec.true_hessian().unwrap();
    let lhat = ProjectedHessian::known(move |x, th| truth(x, th), Regularization::None);
    let target = CustomTarget::parse(&["x1 * x1"]).unwrap();
    let slopes = orthogonality_diagnostic(
        &data,
        &spec.theta0(),
        &lhat,
        loss.as_ref(),
        &target,
        &[1.0, 0.0],
        &Direction::builtin(spec.dx),
        1e-2,
    )
    .unwrap();
    for s in slopes {
        assert!(s.orthogonal[0].abs() < 1e-9 && s.plugin[0].abs() < 1e-9, "{s:?}");
    }
}

#[test]
fn logit_score_is_locally_flat_at_the_truth() {
    let spec = preset("randomized-logit", 20_000, 6).unwrap();
    let (data, _) = sample(&spec).unwrap();
    let loss = spec.loss().unwrap();
    let (target, tstar) = spec.target().unwrap().unwrap();
    let truth = spec.true_hessian().unwrap();
    let lhat = ProjectedHessian::known(move |x, th| truth(x, th), Regularization::None);
    let slopes = orthogonality_diagnostic(
        &data,
        &spec.theta0(),
        &lhat,
        loss.as_ref(),
        target.as_ref(),
        &tstar,
        &Direction::builtin(spec.dx),
        5e-2,
    )
    .unwrap();
    for s in slopes {
        assert!(s.orthogonal[0].abs() < 0.1 * s.plugin[0].abs(), "{s:?}");
    }
}
