use hinf_core::loss::{loss_from_key, IvStacked, LinearSq, LogisticNll, LossModel, MultinomialNll, Tobit1};
use hinf_core::numerics::special::{logistic, normal_hazard};
use hinf_core::numerics::sym_eigen;
use hinf_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Mean of `ℓ_θ` over simulated outcomes, with its largest |mean|/SE.
fn score_t_stat(loss: &dyn LossModel, draws: &[Vec<f64>], t: &[f64], theta: &[f64]) -> f64 {
    let d = theta.len();
    let n = draws.len() as f64;
    let grads: Vec<Vec<f64>> = draws.iter().map(|y| loss.grad(y, t, theta).unwrap()).collect();
    (0..d)
        .map(|k| {
            let m = grads.iter().map(|g| g[k]).sum::<f64>() / n;
            let v = grads.iter().map(|g| (g[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            if v == 0.0 {
                0.0
            } else {
                m.abs() / (v / n).sqrt()
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn score_has_mean_zero_at_the_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200_000;
    let t = [1.0, 0.7, -1.2];
    let theta = [0.3, -0.8, 0.5];
    let u: f64 = t.iter().zip(&theta).map(|(a, b)| a * b).sum();

    let logit: Vec<Vec<f64>> = (0..n).map(|_| vec![f64::from(u8::from(rng.gen_bool(logistic(u))))]).collect();
    assert!(score_t_stat(&LogisticNll::logit(3), &logit, &t, &theta) < 4.0);

    let linear: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![u + rng.sample::<f64, _>(StandardNormal)])
        .collect();
    assert!(score_t_stat(&LinearSq::new(3), &linear, &t, &theta) < 4.0);

    // latent y* = σ(u + ε) censored at zero, θ = (β/σ, 1/σ)
    let inv_scale = 0.8;
    let tobit: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            vec![((u + e) / inv_scale).max(0.0)]
        })
        .collect();
    let mut th = theta.to_vec();
    th.push(inv_scale);
    assert!(score_t_stat(&Tobit1::new(3), &tobit, &t, &th) < 4.0);

    // three inside options with two characteristics each
    let mn = MultinomialNll::new(3, 2);
    let tm = [0.5, -1.0, 1.5, 0.2, -0.3, 0.9];
    let thm = [0.2, -0.4, 0.1, 0.7, -0.5];
    let us: Vec<f64> = (0..3).map(|j| thm[j] + thm[3] * tm[2 * j] + thm[4] * tm[2 * j + 1]).collect();
    let denom = 1.0 + us.iter().map(|v| v.exp()).sum::<f64>();
    let probs: Vec<f64> = us.iter().map(|v| v.exp() / denom).collect();
    let choices: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let r: f64 = rng.gen();
            let mut y = vec![0.0; 3];
            let mut acc = 0.0;
            for (j, p) in probs.iter().enumerate() {
                acc += p;
                if r < acc {
                    y[j] = 1.0;
                    break;
                }
            }
            y
        })
        .collect();
    assert!(score_t_stat(&mn, &choices, &tm, &thm) < 4.0);
}

#[test]
fn hessians_of_conditional_mean_losses_ignore_y() {
    let t = [1.0, 0.4];
    let th = [0.2, -0.6];
    for loss in [
        loss_from_key("linear", 2, None, None).unwrap(),
        loss_from_key("logit", 2, None, None).unwrap(),
    ] {
        assert!(loss.hessian_free_of_y());
        let a = loss.hess(&[0.0], &t, &th).unwrap();
        let b = loss.hess(&[1.0], &t, &th).unwrap();
        assert_eq!(a, b);
    }
    let iv = IvStacked::new(2);
    assert_eq!(
        iv.hess(&[0.0, 0.0], &t, &[0.0; 4]).unwrap(),
        iv.hess(&[3.0, -1.0], &t, &[1.0; 4]).unwrap()
    );
    assert!(!Tobit1::new(2).hessian_free_of_y());
}

#[test]
fn domain_errors() {
    let t = [1.0, 0.5];
    assert!(matches!(
        LogisticNll::logit(2).value(&[0.5], &t, &[0.0, 0.0]),
        Err(Error::NotBinary(_))
    ));
    assert!(matches!(
        LogisticNll::fractional(2).value(&[1.5], &t, &[0.0, 0.0]),
        Err(Error::YOutOfRange(_))
    ));
    assert!(matches!(
        Tobit1::new(2).value(&[-1.0], &t, &[0.0, 0.0, 1.0]),
        Err(Error::NegativeY(_))
    ));
    assert!(matches!(
        Tobit1::new(2).grad(&[1.0], &t, &[0.0, 0.0, 0.0]),
        Err(Error::NonPositiveScale(_))
    ));
    assert!(matches!(
        MultinomialNll::new(2, 1).value(&[1.0, 1.0], &[0.0, 0.0], &[0.0; 3]),
        Err(Error::MultipleChoicesSet)
    ));
    assert!(matches!(loss_from_key("probit", 2, None, None), Err(Error::UnknownKey(_))));
    assert!(matches!(
        LinearSq::new(2).value(&[1.0], &[1.0], &[0.0, 0.0]),
        Err(Error::DimMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn tobit_censored_curvature_is_positive(u in -30.0f64..30.0) {
        let lam = normal_hazard(u);
        prop_assert!(u - lam < 0.0);
        prop_assert!(lam * (lam - u) > 0.0);
    }

    #[test]
    fn tobit_hessian_is_psd(
        b in proptest::collection::vec(-2.0f64..2.0, 2),
        tt in -2.0f64..2.0,
        s in 0.2f64..3.0,
        y in 0.0f64..5.0,
    ) {
        let t = [1.0, tt];
        let h = Tobit1::new(2).hess(&[y], &t, &[b[0], b[1], s]).unwrap();
        let (vals, _) = sym_eigen(&h);
        let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        prop_assert!(vals.iter().all(|v| *v >= -1e-10 * scale), "{:?}", vals);
    }

    #[test]
    fn logit_hessian_is_psd(
        th in proptest::collection::vec(-5.0f64..5.0, 3),
        t in proptest::collection::vec(-3.0f64..3.0, 2),
        y in 0u8..2,
    ) {
        let t = [1.0, t[0], t[1]];
        let h = LogisticNll::logit(3).hess(&[f64::from(y)], &t, &th).unwrap();
        let (vals, _) = sym_eigen(&h);
        prop_assert!(vals.iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn logit_value_is_finite_at_extreme_index(u in -1e4f64..1e4, y in 0u8..2) {
        let v = LogisticNll::logit(1).value(&[f64::from(y)], &[1.0], &[u]).unwrap();
        prop_assert!(v.is_finite() && v >= 0.0);
    }
}
