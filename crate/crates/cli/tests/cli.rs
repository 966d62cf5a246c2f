use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hinf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hinf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn small_theta() -> Value {
    json!({ "hidden_widths": [16], "train": { "epochs": 15, "batch_size": 64, "learning_rate": 0.003 } })
}

fn linear_infer_config() -> Value {
    json!({
        "design": { "preset": "linear-hetero", "n": 900, "seed": 5 },
        "projector": { "kind": "glm", "hidden_widths": [8], "train": { "epochs": 10, "batch_size": 32 } },
        "regularization": "reg:eig_floor:1e-2",
        "theta": small_theta(),
        "inference": { "folds": 3, "seed": 17, "report_plugin": true }
    })
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn infer_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "infer.json", &linear_infer_config());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let run_a = hinf(&["infer", "--config", &cfg, "--out", a.to_str().unwrap(), "-q"]);
    assert!(run_a.status.success(), "{}", String::from_utf8_lossy(&run_a.stderr));
    let run_b = hinf(&["infer", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "1", "-q"]);
    assert!(run_b.status.success(), "{}", String::from_utf8_lossy(&run_b.stderr));

    let names = files(&a);
    assert_eq!(names, files(&b));
    for f in ["coef_2.result.json", "coef_2.theta.csv", "coef_2.scores.csv", "coef_2.density.csv", "manifest.json"] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
    for n in names.iter().filter(|n| *n != "run.log") {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }

    let manifest = read_json(a.join("manifest.json"));
    assert_eq!(manifest["schema"], "hinf.manifest/1");
    assert!(manifest["files"].as_array().unwrap().iter().all(|f| f["schema"].is_string()));
    let res = read_json(a.join("coef_2.result.json"));
    assert_eq!(res["schema"], "hinf.result/1");
    assert!(res["plugin"].is_object());
}

#[test]
fn tstar_length_mismatch_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = linear_infer_config();
    cfg["target"] = json!({ "keys": ["coef:2"], "tstar": [1.0, 1.0, 0.0] });
    let path = write_config(tmp.path(), "bad.json", &cfg);
    let out = hinf(&["infer", "--config", &path, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t*"));
}

#[test]
fn config_and_data_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "unknown.json", &json!({ "design": { "preset": "linear-hetero", "n": 100 }, "colour": 1 }));
    assert_eq!(hinf(&["infer", "--config", &unknown]).status.code(), Some(2));

    fs::write(tmp.path().join("d.csv"), "y,a\n1,2\n0,3\n").unwrap();
    let missing = write_config(
        tmp.path(),
        "missing.json",
        &json!({
            "data": { "path": "d.csv", "columns": { "y": ["y"], "t": ["a"], "x": ["nope"] } },
            "loss": { "key": "logit" },
            "out": "o"
        }),
    );
    let out = hinf(&["fit", "--config", &missing]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("o/run.log").exists());
}

#[test]
fn lending_simulate_fit_infer() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let sim = write_config(
        dir,
        "sim.json",
        &json!({ "design": { "preset": "lending", "n": 3000, "seed": 11 }, "out": "sim" }),
    );
    let out = hinf(&["simulate", "--config", &sim, "-q"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth = read_json(dir.join("sim/truth.json"));
    let r0 = truth["mu0"]["value"][0].as_f64().unwrap();
    assert!(r0 > 0.0 && r0 < 200.0);
    let header = fs::read_to_string(dir.join("sim/data.csv")).unwrap();
    assert!(header.starts_with("y,t1,t2,x1,x2"));

    let base = json!({
        "data": { "path": "sim/data.csv", "columns": { "y": ["y"], "t": ["t1", "t2"], "x": ["x1", "x2"] } },
        "loss": { "key": "logit" },
        "theta": small_theta(),
    });
    let mut fit = base.clone();
    fit["out"] = json!("fit");
    let fit_cfg = write_config(dir, "fit.json", &fit);
    let out = hinf(&["fit", "--config", &fit_cfg, "-q"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.hinf", "trace.csv", "theta.csv", "fit.json", "manifest.json", "run.log"] {
        assert!(dir.join("fit").join(f).exists(), "missing {f}");
    }
    let trace = fs::read_to_string(dir.join("fit/trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);

    let mut infer = base;
    infer["out"] = json!("infer");
    infer["target"] = json!({
        "keys": ["opt_rate", "profit_at_opt"],
        "tstar": [1.0, 1.0, 0.0],
        "options": { "rate": { "defaults": { "intercept": -3.0, "slope": 0.05 }, "rate_index": 3 }, "loan": 1.0 }
    });
    infer["projector"] = json!({ "kind": "randomized" });
    infer["inference"] = json!({ "folds": 2, "seed": 3 });
    let infer_cfg = write_config(dir, "infer.json", &infer);
    let out = hinf(&["infer", "--config", &infer_cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for key in ["opt_rate", "profit_at_opt"] {
        let res = read_json(dir.join(format!("infer/{key}.result.json")));
        let mu = res["mu"][0].as_f64().unwrap();
        let var = res["psi_matrix"][0][0].as_f64().unwrap();
        let ci = res["ci"]["0.95"][0].as_array().unwrap();
        assert!(mu.is_finite() && var.is_finite() && var >= 0.0, "{res}");
        assert!(ci[0].as_f64().unwrap() <= mu && mu <= ci[1].as_f64().unwrap());
    }
}

#[test]
fn check_suites_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hinf(&["check", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(tmp.path().join("check.json"));
    assert_eq!(report["failed"], 0);
    assert_eq!(report["passed"], 5);
}
