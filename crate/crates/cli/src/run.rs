use hinf_core::data::{ingest, Dataset, IngestOptions};
use hinf_core::dgp::{coverage_experiment, generate, sample, CoverageConfig, DgpSpec, DGP_SCHEMA};
use hinf_core::inference::{cross_fit, mix, InferenceResult, Pipeline, ProjectorConfig, ThetaSpec};
use hinf_core::loss::{loss_from_key, SharedLoss};
use hinf_core::net::{ModelMeta, StructuredNet, TrainConfig};
use hinf_core::targets::{target_from_key, SharedTarget};
use serde::Serialize;

use crate::artifacts::*;
use crate::check;
use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

pub const FIT_SCHEMA: &str = "hinf.fit/1";
pub const TRUTH_SCHEMA: &str = DGP_SCHEMA;

/// Ingested or simulated data with its loss.
struct Prepared {
    data: Dataset,
    loss: SharedLoss,
    design: Option<DgpSpec>,
}

fn prepare(cfg: &RunConfig, seed: Option<u64>) -> CliResult<Prepared> {
    if let Some(src) = &cfg.data {
        let ls = cfg.loss.as_ref().expect("validated");
        let opts = IngestOptions {
            intercept: ls.key != "multinomial",
            rescale_x: src.rescale_x,
        };
        let data = ingest(&src.path, &src.columns, &opts)?;
        let loss = loss_from_key(&ls.key, data.t.cols(), ls.choices, ls.expression.as_deref())?;
        return Ok(Prepared {
            data,
            loss,
            design: None,
        });
    }
    let spec = cfg.design.as_ref().expect("validated").resolve(seed)?;
    let (data, _) = sample(&spec)?;
    let loss = match &cfg.loss {
        Some(ls) => loss_from_key(&ls.key, data.t.cols(), ls.choices, ls.expression.as_deref())?,
        None => spec.loss()?,
    };
    Ok(Prepared {
        data,
        loss,
        design: Some(spec),
    })
}

fn theta_spec(cfg: &RunConfig, seed: Option<u64>) -> ThetaSpec {
    let mut t = cfg.theta.clone();
    if let Some(s) = seed {
        t.seed = s;
    }
    t
}

pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Run<'_> {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    pub fn execute(&self, command: Command, out: &mut OutDir) -> CliResult<()> {
        match command {
            Command::Fit => self.fit(out),
            Command::Infer => self.infer(out),
            Command::Simulate => self.simulate(out),
            Command::Coverage => self.coverage(out),
            Command::Check => self.check(out),
        }
    }

    fn fit(&self, out: &mut OutDir) -> CliResult<()> {
        let p = prepare(self.cfg, self.seed)?;
        let spec = theta_spec(self.cfg, self.seed);
        let loss = p.loss.as_ref();
        let net = StructuredNet::new(spec.net_config(p.data.x.cols(), loss, spec.seed))?;
        let train = TrainConfig {
            seed: mix(spec.train.seed, spec.seed),
            ..spec.train.clone()
        };
        let (net, trace) = net.train(&p.data, loss, &train)?;
        out.log(&format!("trained {} epochs on n = {}", trace.len(), p.data.n()));

        let meta = ModelMeta {
            loss: Some(loss.key().to_string()),
            dims: Some(loss.dims()),
            fingerprint: Some(format!("seed={}", spec.seed)),
        };
        net.save(out.path("model.hinf"), &meta)?;
        out.register("model.hinf", MODEL_SCHEMA);

        let header = ["epoch", "train_loss", "validation_loss"].map(String::from);
        let rows: Vec<Vec<String>> = trace
            .iter()
            .map(|r| {
                vec![
                    r.epoch.to_string(),
                    num(r.train_loss),
                    r.validation_loss.map(num).unwrap_or_default(),
                ]
            })
            .collect();
        out.csv("trace.csv", TRACE_CSV_SCHEMA, &header, &rows)?;

        let theta = net.forward(&p.data.x)?;
        let dtheta = theta.cols();
        let header: Vec<String> = std::iter::once("row".to_string())
            .chain((1..=dtheta).map(|k| format!("theta{k}")))
            .collect();
        let rows: Vec<Vec<String>> = (0..theta.rows())
            .map(|i| std::iter::once(i.to_string()).chain(theta.row(i).iter().map(|v| num(*v))).collect())
            .collect();
        out.csv("theta.csv", THETA_CSV_SCHEMA, &header, &rows)?;

        #[derive(Serialize)]
        struct FitSummary<'a> {
            schema: &'a str,
            loss: &'a str,
            n: usize,
            dtheta: usize,
            epochs_run: usize,
            final_train_loss: Option<f64>,
            best_validation_loss: Option<f64>,
            config: &'a ThetaSpec,
        }
        let best = trace
            .iter()
            .filter_map(|r| r.validation_loss)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
        let summary = FitSummary {
            schema: FIT_SCHEMA,
            loss: loss.key(),
            n: p.data.n(),
            dtheta,
            epochs_run: trace.len(),
            final_train_loss: trace.last().map(|r| r.train_loss),
            best_validation_loss: best,
            config: &spec,
        };
        out.json("fit.json", FIT_SCHEMA, &summary)?;
        self.say(format!(
            "fit: {} epochs, n = {}, best validation loss {}",
            trace.len(),
            p.data.n(),
            best.map_or("-".into(), num)
        ));
        Ok(())
    }

    fn targets(&self, p: &Prepared) -> CliResult<(Vec<(String, SharedTarget)>, Vec<f64>)> {
        let dt = p.data.t.cols();
        let check_tstar = |tstar: &[f64]| {
            if tstar.len() != dt {
                return Err(CliError::Config(format!(
                    "t* has {} entries but the treatment has {dt} columns (intercept included)",
                    tstar.len()
                )));
            }
            Ok(())
        };
        if let Some(ts) = &self.cfg.target {
            check_tstar(&ts.tstar)?;
            let targets = ts
                .keys
                .iter()
                .map(|k| Ok((k.clone(), target_from_key(k, p.loss.as_ref(), &ts.options)?)))
                .collect::<CliResult<Vec<_>>>()?;
            return Ok((targets, ts.tstar.clone()));
        }
        let spec = p
            .design
            .as_ref()
            .ok_or_else(|| CliError::Config("`target` is required".into()))?;
        let (target, tstar) = spec
            .target()?
            .ok_or_else(|| CliError::Config("the design has no target; give `target`".into()))?;
        check_tstar(&tstar)?;
        let key = spec.target.as_ref().map(|t| t.key.clone()).unwrap_or_default();
        Ok((vec![(key, target)], tstar))
    }

    fn infer(&self, out: &mut OutDir) -> CliResult<()> {
        let p = prepare(self.cfg, self.seed)?;
        let (targets, tstar) = self.targets(&p)?;
        let truth = match (&self.cfg.projector, &p.design) {
            (ProjectorConfig::Truth, Some(spec)) => Some(spec.true_hessian()?),
            _ => None,
        };
        let projector = self.cfg.projector.resolve(&p.data, truth)?;
        let mut inference = self.cfg.inference.clone();
        if let Some(s) = self.seed {
            inference.seed = s;
        }
        for (key, target) in targets {
            let pipeline = Pipeline {
                loss: p.loss.clone(),
                target,
                tstar: tstar.clone(),
                theta: theta_spec(self.cfg, self.seed),
                projector: projector.clone(),
                regularization: self.cfg.regularization()?,
                inference: inference.clone(),
            };
            let res = cross_fit(&p.data, &pipeline)?;
            out.log(&format!("{key}: n = {}, skipped = {}", res.n, res.skipped));
            self.write_result(out, &key, &res)?;
        }
        Ok(())
    }

    fn write_result(&self, out: &mut OutDir, key: &str, res: &InferenceResult) -> CliResult<()> {
        let s = slug(key);
        out.json(&format!("{s}.result.json"), &res.schema, res)?;

        let d = &res.details;
        let dtheta = d.theta.first().map_or(0, Vec::len);
        let header: Vec<String> = ["row", "fold"]
            .map(String::from)
            .into_iter()
            .chain((1..=dtheta).map(|k| format!("theta{k}")))
            .collect();
        let rows: Vec<Vec<String>> = d
            .theta
            .iter()
            .enumerate()
            .map(|(i, th)| {
                [i.to_string(), d.fold[i].to_string()]
                    .into_iter()
                    .chain(th.iter().map(|v| num(*v)))
                    .collect()
            })
            .collect();
        out.csv(&format!("{s}.theta.csv"), THETA_CSV_SCHEMA, &header, &rows)?;

        let dmu = res.mu.len();
        let header: Vec<String> = ["row", "fold"]
            .map(String::from)
            .into_iter()
            .chain((1..=dmu).map(|k| format!("psi{k}")))
            .collect();
        let rows: Vec<Vec<String>> = d
            .psi
            .iter()
            .enumerate()
            .map(|(i, psi)| {
                let vals: Vec<String> = match psi {
                    Some(v) => v.iter().map(|x| num(*x)).collect(),
                    None => vec![String::new(); dmu],
                };
                [i.to_string(), d.fold[i].to_string()].into_iter().chain(vals).collect()
            })
            .collect();
        out.csv(&format!("{s}.scores.csv"), SCORE_CSV_SCHEMA, &header, &rows)?;

        let mut rows = Vec::new();
        let mut series = |name: String, values: Vec<f64>| {
            for (k, (lo, hi, c, dens)) in histogram(&values, DENSITY_BINS).into_iter().enumerate() {
                rows.push(vec![name.clone(), (k + 1).to_string(), num(lo), num(hi), c.to_string(), num(dens)]);
            }
        };
        for k in 0..dtheta {
            series(format!("theta{}", k + 1), d.theta.iter().map(|t| t[k]).collect());
        }
        for k in 0..dmu {
            series(format!("psi{}", k + 1), d.psi.iter().flatten().map(|v| v[k]).collect());
        }
        let header = ["series", "bin", "lo", "hi", "count", "density"].map(String::from);
        out.csv(&format!("{s}.density.csv"), DENSITY_CSV_SCHEMA, &header, &rows)?;

        let se = res.std_errors();
        for (k, m) in res.mu.iter().enumerate() {
            let cis: Vec<String> = res
                .ci
                .iter()
                .map(|(lvl, ci)| format!("{lvl}: [{:.6}, {:.6}]", ci[k][0], ci[k][1]))
                .collect();
            self.say(format!("{key}[{}]: mu = {m:.6}, se = {:.6}, {}", k + 1, se[k], cis.join(", ")));
        }
        Ok(())
    }

    fn simulate(&self, out: &mut OutDir) -> CliResult<()> {
        let spec = self.cfg.design.as_ref().expect("validated").resolve(self.seed)?;
        let (data, truth) = generate(&spec)?;
        let meta = &data.meta;
        let t_skip = usize::from(meta.intercept);
        let header: Vec<String> = meta
            .y_names
            .iter()
            .chain(&meta.t_names[t_skip..])
            .chain(&meta.x_names)
            .cloned()
            .collect();
        let rows: Vec<Vec<String>> = (0..data.n())
            .map(|i| {
                data.y
                    .row(i)
                    .iter()
                    .chain(&data.t.row(i)[t_skip..])
                    .chain(data.x.row(i))
                    .map(|v| num(*v))
                    .collect()
            })
            .collect();
        out.csv("data.csv", DATA_CSV_SCHEMA, &header, &rows)?;

        let dtheta = truth.theta.cols();
        let mut header: Vec<String> = std::iter::once("row".to_string())
            .chain((1..=dtheta).map(|k| format!("theta{k}")))
            .collect();
        if truth.propensity.is_some() {
            header.push("propensity".into());
        }
        let rows: Vec<Vec<String>> = (0..data.n())
            .map(|i| {
                std::iter::once(i.to_string())
                    .chain(truth.theta.row(i).iter().map(|v| num(*v)))
                    .chain(truth.propensity.as_ref().map(|p| num(p[i])))
                    .collect()
            })
            .collect();
        out.csv("theta0.csv", THETA_CSV_SCHEMA, &header, &rows)?;

        #[derive(Serialize)]
        struct TruthFile<'a> {
            schema: &'a str,
            design: &'a DgpSpec,
            mu0: Option<&'a hinf_core::dgp::Mu0>,
        }
        out.json(
            "truth.json",
            TRUTH_SCHEMA,
            &TruthFile {
                schema: TRUTH_SCHEMA,
                design: &spec,
                mu0: truth.mu0.as_ref(),
            },
        )?;
        match &truth.mu0 {
            Some(m) => self.say(format!("simulate: n = {}, mu0 = {:?} (mc se {:?})", data.n(), m.value, m.se)),
            None => self.say(format!("simulate: n = {}", data.n())),
        }
        Ok(())
    }

    fn coverage(&self, out: &mut OutDir) -> CliResult<()> {
        let spec = self.cfg.design.as_ref().expect("validated").resolve(self.seed)?;
        let block = self.cfg.coverage.as_ref().expect("validated");
        let mut inference = self.cfg.inference.clone();
        if let Some(s) = self.seed {
            inference.seed = s;
        }
        let cc = CoverageConfig {
            replications: block.replications,
            level: block.level,
            theta: theta_spec(self.cfg, self.seed),
            projector: self.cfg.projector.clone(),
            regularization: self.cfg.regularization()?,
            inference,
        };
        let report = coverage_experiment(&spec, &cc)?;
        out.json("coverage.json", &report.schema, &report)?;

        let header = ["index", "data_seed", "mu_hat", "ci_lo", "ci_hi", "covered", "plugin_mu", "plugin_covered", "error"]
            .map(String::from);
        let flag = |b: Option<bool>| b.map(|v| u8::from(v).to_string()).unwrap_or_default();
        let first = |v: &Option<Vec<f64>>| v.as_ref().map(|v| num(v[0])).unwrap_or_default();
        let rows: Vec<Vec<String>> = report
            .records
            .iter()
            .map(|r| {
                vec![
                    r.index.to_string(),
                    r.data_seed.to_string(),
                    first(&r.mu_hat),
                    r.ci.as_ref().map(|c| num(c[0][0])).unwrap_or_default(),
                    r.ci.as_ref().map(|c| num(c[0][1])).unwrap_or_default(),
                    flag(r.covered),
                    first(&r.plugin_mu),
                    flag(r.plugin_covered),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        out.csv("coverage_records.csv", RECORDS_CSV_SCHEMA, &header, &rows)?;
        self.say(format!(
            "coverage: {:.3} at nominal {} over {} replications ({} failed){}",
            report.coverage,
            report.nominal_level,
            report.replications,
            report.failed,
            report
                .plugin_coverage
                .map_or(String::new(), |c| format!(", plug-in {c:.3}"))
        ));
        Ok(())
    }

    fn check(&self, out: &mut OutDir) -> CliResult<()> {
        let outcomes = check::run_all(self.seed.unwrap_or(0));
        for o in &outcomes {
            self.say(format!("{} [{}]: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail));
        }
        #[derive(Serialize)]
        struct Report<'a> {
            schema: &'a str,
            passed: usize,
            failed: usize,
            checks: &'a [check::CheckOutcome],
        }
        let failed = outcomes.iter().filter(|o| !o.pass).count();
        out.json(
            "check.json",
            check::CHECK_SCHEMA,
            &Report {
                schema: check::CHECK_SCHEMA,
                passed: outcomes.len() - failed,
                failed,
                checks: &outcomes,
            },
        )?;
        if failed > 0 {
            return Err(CliError::ChecksFailed { failed });
        }
        Ok(())
    }
}
