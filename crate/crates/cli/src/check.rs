//! Built-in self-test suites run by `hinf check`.

use hinf_core::dgp::{preset, sample};
use hinf_core::inference::{influence_eval, influence_eval_univariate, orthogonality_diagnostic, Direction};
use hinf_core::loss::{IvStacked, LinearSq, Link, LogisticNll, LossModel, MultinomialNll, Tobit1};
use hinf_core::numerics::{fd_gradient, fd_jacobian, max_rel_error, Mat};
use hinf_core::oracle::{oracle_aipw, oracle_graham_pinto, oracle_grid_fixed_point};
use hinf_core::projector::{ProjectedHessian, Regularization};
use hinf_core::targets::{
    optimal_rate, Coefficient, DefaultSpec, Elasticity, MarginalEffect, MarginalEffectChange, OptimalRate,
    ProfitAtOptimum, ProfitJacobian, RateProblem, Target, WillingnessToPay,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const CHECK_SCHEMA: &str = "hinf.check/1";
const DRAWS: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn with_intercept(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    std::iter::once(1.0).chain(uniform(rng, -2.0, 2.0, n - 1)).collect()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let b = Mat::new(n, n, uniform(rng, -1.0, 1.0, n * n)).expect("square");
    b.matmul(&b.transpose()).add_scaled_identity(0.2).symmetrize()
}

/// Keeps the worst error per name against its tolerance.
#[derive(Default)]
struct Worst(Vec<(String, f64, f64)>);

impl Worst {
    fn record(&mut self, name: &str, tol: f64, e: f64) {
        match self.0.iter_mut().find(|w| w.0 == name) {
            Some(w) => w.1 = w.1.max(e),
            None => self.0.push((name.to_string(), e, tol)),
        }
    }

    fn outcome(self, name: &str) -> CheckOutcome {
        CheckOutcome {
            name: name.into(),
            pass: self.0.iter().all(|(_, e, tol)| e < tol),
            detail: self
                .0
                .iter()
                .map(|(n, e, _)| format!("{n} {e:.1e}"))
                .collect::<Vec<_>>()
                .join(", "),
        }
    }
}

fn loss_error(loss: &dyn LossModel, y: &[f64], t: &[f64], th: &[f64]) -> f64 {
    let run = || -> hinf_core::Result<f64> {
        let g = loss.grad(y, t, th)?;
        let fd_g = fd_gradient(|p| loss.value(y, t, p).unwrap_or(f64::NAN), th)?;
        let h = loss.hess(y, t, th)?;
        let fd_h = fd_jacobian(|p| loss.grad(y, t, p).unwrap_or_else(|_| vec![f64::NAN; p.len()]), th)?.concat();
        Ok(max_rel_error(&g, &fd_g).max(max_rel_error(h.as_slice(), &fd_h)))
    };
    run().unwrap_or(f64::INFINITY)
}

fn losses(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut w = Worst::default();
    for _ in 0..DRAWS {
        let t = with_intercept(rng, 3);
        let th = uniform(rng, -1.5, 1.5, 3);
        w.record("linear", 1e-8, loss_error(&LinearSq::new(3), &[rng.gen_range(-3.0..3.0)], &t, &th));
        let yb = f64::from(u8::from(rng.gen_bool(0.5)));
        w.record("logit", 1e-5, loss_error(&LogisticNll::logit(3), &[yb], &t, &th));
        w.record("fractional", 1e-5, loss_error(&LogisticNll::fractional(3), &[rng.gen_range(0.0..1.0)], &t, &th));
        let mut tob = th.clone();
        tob.push(rng.gen_range(0.3..2.0));
        let yt = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.01..4.0) };
        w.record("tobit1", 1e-5, loss_error(&Tobit1::new(3), &[yt], &t, &tob));
        let mut ym = [0.0; 3];
        let pick = rng.gen_range(0..4);
        if pick < 3 {
            ym[pick] = 1.0;
        }
        let (tm, thm) = (uniform(rng, -2.0, 2.0, 6), uniform(rng, -1.5, 1.5, 5));
        w.record("multinomial", 1e-5, loss_error(&MultinomialNll::new(3, 2), &ym, &tm, &thm));
        let (yv, thv) = (uniform(rng, -3.0, 3.0, 2), uniform(rng, -1.5, 1.5, 6));
        w.record("iv", 1e-5, loss_error(&IvStacked::new(3), &yv, &t, &thv));
    }
    w.outcome("loss derivatives")
}

fn target_error(target: &dyn Target, th: &[f64], ts: &[f64]) -> f64 {
    let run = || -> hinf_core::Result<f64> {
        let j = target.jac(&[], th, ts)?;
        let fd = fd_gradient(|p| target.eval(&[], p, ts).map_or(f64::NAN, |v| v[0]), th)?;
        Ok(max_rel_error(j.row(0), &fd))
    };
    run().unwrap_or(f64::INFINITY)
}

fn targets(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut w = Worst::default();
    for _ in 0..DRAWS {
        let th = uniform(rng, -1.5, 1.5, 3);
        let ts = with_intercept(rng, 3);
        let checks: [(&str, f64, Box<dyn Target>); 5] = [
            ("coef", 1e-8, Box::new(Coefficient::new(2, 3).expect("in range"))),
            ("ame(identity)", 1e-8, Box::new(MarginalEffect::new(Link::Identity, 2, 3).expect("in range"))),
            ("ame(logistic)", 1e-5, Box::new(MarginalEffect::new(Link::Logistic, 2, 3).expect("in range"))),
            ("acme", 1e-5, Box::new(MarginalEffectChange::new(3, 3).expect("in range"))),
            ("elasticity", 1e-5, Box::new(Elasticity::new(3, 3).expect("in range"))),
        ];
        for (name, tol, t) in &checks {
            w.record(name, *tol, target_error(t.as_ref(), &th, &ts));
        }
        let mut wth = th.clone();
        wth[0] = rng.gen_range(0.2..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        w.record("wtp", 1e-5, target_error(&WillingnessToPay::new(2, 3).expect("in range"), &wth, &ts));

        let rp = RateProblem::new(DefaultSpec::new(rng.gen_range(-4.0..-2.0), rng.gen_range(0.02..0.1)), 3);
        let rth = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..-0.05)];
        let rts = [1.0, f64::from(u8::from(rng.gen_bool(0.5))), 0.0];
        let loan = rng.gen_range(0.5..5.0);
        w.record("opt_rate", 1e-5, target_error(&OptimalRate::new(rp.clone()), &rth, &rts));
        w.record("profit(envelope)", 1e-5, target_error(&ProfitAtOptimum::new(rp.clone(), loan), &rth, &rts));
        let imp = ProfitAtOptimum::new(rp, loan).with_jacobian(ProfitJacobian::Implicit);
        w.record("profit(implicit)", 1e-5, target_error(&imp, &rth, &rts));
    }
    w.outcome("target jacobians")
}

fn close(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn specializations(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut w = Worst::default();
    let x: [f64; 0] = [];
    for i in 0..DRAWS {
        let run = |rng: &mut ChaCha8Rng, w: &mut Worst| -> hinf_core::Result<()> {
            let logistic = i % 2 == 1;
            let link = if logistic { Link::Logistic } else { Link::Identity };
            let loss: Box<dyn LossModel> = if logistic {
                Box::new(LogisticNll::logit(2))
            } else {
                Box::new(LinearSq::new(2))
            };
            let th = uniform(rng, -1.0, 1.0, 2);
            let t = with_intercept(rng, 2);
            let y = if logistic {
                f64::from(u8::from(rng.gen_bool(0.5)))
            } else {
                rng.gen_range(-3.0..3.0)
            };
            let l = random_spd(rng, 2);
            let ts = with_intercept(rng, 2);
            let target = MarginalEffect::new(link, 2, 2)?;
            let generic = influence_eval(&[y], &t, &x, &th, &l, loss.as_ref(), &target, &ts)?[0];
            let h = target.eval(&x, &th, &ts)?[0];
            let hj = target.jac(&x, &th, &ts)?;
            let uni = influence_eval_univariate(y, &t, &th, [l[(0, 0)], l[(0, 1)], l[(1, 1)]], link, h, hj.row(0))?;
            w.record("univariate", 1e-10, close(generic, uni));

            let p = rng.gen_range(0.05..0.95);
            let d = f64::from(u8::from(rng.gen_bool(0.5)));
            let y = rng.gen_range(-3.0..3.0);
            let lp = Mat::from_rows(&[vec![1.0, p], vec![p, p]])?;
            let coef = Coefficient::new(2, 2)?;
            let generic = influence_eval(&[y], &[1.0, d], &x, &th, &lp, &LinearSq::new(2), &coef, &[1.0, 1.0])?[0];
            w.record("aipw", 1e-10, close(generic, oracle_aipw(y, d, th[0], th[1], p)?));

            let k = 2;
            let tt = uniform(rng, -2.0, 2.0, k);
            let e = uniform(rng, -1.0, 1.0, k);
            let v = random_spd(rng, k);
            let th3 = uniform(rng, -1.0, 1.0, k + 1);
            let mut lc = Mat::zeros(k + 1, k + 1);
            lc[(0, 0)] = 1.0;
            for a in 0..k {
                lc[(0, a + 1)] = e[a];
                lc[(a + 1, 0)] = e[a];
                for b in 0..k {
                    lc[(a + 1, b + 1)] = v[(a, b)] + e[a] * e[b];
                }
            }
            let full_t: Vec<f64> = std::iter::once(1.0).chain(tt.iter().copied()).collect();
            let y = rng.gen_range(-3.0..3.0);
            let oracle = oracle_graham_pinto(y, &tt, th3[0], &th3[1..], &e, &v.to_rows())?;
            for (j, o) in oracle.iter().enumerate() {
                let target = Coefficient::new(j + 2, k + 1)?;
                let g = influence_eval(&[y], &full_t, &x, &th3, &lc, &LinearSq::new(k + 1), &target, &full_t)?[0];
                w.record("partial effect", 1e-10, close(g, *o));
            }
            Ok(())
        };
        if run(rng, &mut w).is_err() {
            w.record("evaluation", 0.0, f64::INFINITY);
        }
    }
    w.outcome("score specializations")
}

fn fixed_point() -> CheckOutcome {
    let mut w = Worst::default();
    let tstar = [1.0, 1.0, 0.0];
    for i in 0..5 {
        for j in 0..5 {
            let theta = [1.0, 0.3, -0.3 + 0.06 * i as f64];
            let (d0, dr) = (-3.0, 0.02 + 0.04 * j as f64);
            let p = RateProblem::new(DefaultSpec::new(d0, dr), 3);
            match (
                optimal_rate(&theta, &tstar, &p),
                oracle_grid_fixed_point(&theta, &tstar, 3, d0, dr, p.bracket(), 1e-3),
            ) {
                (Ok(r), Ok(g)) => w.record("grid agreement", 1e-3 + 1e-12, (r - g).abs()),
                _ => w.record("solve", 0.0, f64::INFINITY),
            }
        }
    }
    w.outcome("optimal-rate fixed point")
}

fn orthogonality() -> CheckOutcome {
    let run = || -> hinf_core::Result<(bool, String)> {
        let spec = preset("linear-hetero", 20_000, 303)?;
        let (data, _) = sample(&spec)?;
        let (target, tstar) = spec
            .target()?
            .ok_or_else(|| hinf_core::Error::Config("preset without target".into()))?;
        let loss = spec.loss()?;
        let truth = spec.true_hessian()?;
        let lhat = ProjectedHessian::known(move |x, th| truth(x, th), Regularization::None);
        let slopes = orthogonality_diagnostic(
            &data,
            &spec.theta0(),
            &lhat,
            loss.as_ref(),
            target.as_ref(),
            &tstar,
            &Direction::builtin(spec.dx),
            1e-2,
        )?;
        let mut pass = true;
        let mut parts = Vec::new();
        for s in &slopes {
            let ratio = s.orthogonal[0].abs() / s.plugin[0].abs();
            pass &= ratio < 0.1;
            parts.push(format!("{} ratio {ratio:.3}", s.direction));
        }
        Ok((pass, parts.join(", ")))
    };
    let (pass, detail) = run().unwrap_or_else(|e| (false, e.to_string()));
    CheckOutcome {
        name: "neyman orthogonality".into(),
        pass,
        detail,
    }
}

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        losses(&mut rng),
        targets(&mut rng),
        specializations(&mut rng),
        fixed_point(),
        orthogonality(),
    ]
}
