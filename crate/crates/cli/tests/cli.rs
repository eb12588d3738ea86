use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bpca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpca")).args(args).env_remove("BPCA_OUT_ROOT").output().expect("spawn bpca")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run_ok(cmd: &str, config: &Path, out: &Path) {
    let o = bpca(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn exit_code(cmd: &str, config: &Path, out: &Path) -> i32 {
    bpca(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_schema(def: &str, instance: &Value) {
    let mut doc: Value = serde_json::from_str(include_str!("../schemas/bpca.schema.json")).unwrap();
    doc["$ref"] = Value::String(format!("#/$defs/{def}"));
    let validator = jsonschema::validator_for(&doc).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{def}: {errors:?}");
}

fn csv(p: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(p).unwrap().lines().map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

fn non_meta_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "meta.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_configs_match_their_schemas() {
    for (file, def) in [
        ("simulate_k1.json", "simulate_config"),
        ("fit_k1.json", "fit_config"),
        ("analyze_k1.json", "fit_config"),
        ("gcorr_k1.json", "stationary_config"),
        ("stationary_isotropic.json", "stationary_config"),
        ("stationary_anisotropic.json", "stationary_config"),
        ("verify.json", "verify_config"),
    ] {
        assert_schema(def, &read_json(&configs().join(file)));
    }
}

#[test]
fn simulate_is_deterministic_and_documented() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("simulate", &configs().join("simulate_k1.json"), &a);
    run_ok("simulate", &configs().join("simulate_k1.json"), &b);
    assert_eq!(non_meta_files(&a), non_meta_files(&b));
    let x = csv(&a.join("X.csv"));
    assert_eq!((x.len(), x[0].len()), (100, 10));
    let gen = read_json(&a.join("generative.json"));
    assert_schema("generative", &gen);
    assert_schema("meta", &read_json(&a.join("meta.json")));
    let l1 = gen["eigvals"][0].as_f64().unwrap();
    assert!((100.0..10_000.0).contains(&l1));
}

#[test]
fn fit_from_csv_equals_fit_from_inline_draw() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    run_ok("simulate", &configs().join("simulate_k1.json"), &sim);
    let model = read_json(&configs().join("simulate_k1.json"))["model"].clone();
    let cfg = write_config(
        tmp.path(),
        "fit_csv.json",
        &serde_json::json!({ "model": model, "data": { "csv": "sim/X.csv" }, "cavi": { "epsilon": 1e-12 } }),
    );
    let inline = write_config(
        tmp.path(),
        "fit_inline.json",
        &serde_json::json!({ "model": model, "data": { "simulate": { "seed": 7 } }, "cavi": { "epsilon": 1e-12 } }),
    );
    let (a, b) = (tmp.path().join("fa"), tmp.path().join("fb"));
    run_ok("fit", &cfg, &a);
    run_ok("fit", &inline, &b);
    assert_eq!(non_meta_files(&a), non_meta_files(&b));

    let state = read_json(&a.join("state.json"));
    assert_schema("fit_state", &state);
    assert_eq!(state["status"]["status"], "converged");
    let trace = fs::read_to_string(a.join("trace.jsonl")).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for line in trace.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert_schema("trace_record", &rec);
        let e = rec["elbo"].as_f64().unwrap();
        assert!(e >= prev - 1e-10 * (1.0 + prev.abs()));
        prev = e;
    }
}

#[test]
fn looser_tolerance_runs_fewer_sweeps() {
    let tmp = TempDir::new().unwrap();
    let mut sweeps = Vec::new();
    for eps in [1e-3, 1e-15] {
        let cfg = write_config(
            tmp.path(),
            "fit.json",
            &serde_json::json!({
                "model": { "n": 4, "d": 3, "k": 2, "tau0": 100.0, "lambda_diag": [1.0, 2.0] },
                "data": { "simulate": { "seed": 1 } },
                "cavi": { "epsilon": eps }
            }),
        );
        let out = tmp.path().join(format!("eps{eps}"));
        run_ok("fit", &cfg, &out);
        sweeps.push(read_json(&out.join("state.json"))["sweeps"].as_u64().unwrap());
    }
    assert!(sweeps[0] < sweeps[1], "{sweeps:?}");
}

#[test]
fn analyze_k1_emits_figure_data_under_the_bounds() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("k1");
    run_ok("analyze-k1", &configs().join("analyze_k1.json"), &out);
    let fp = read_json(&out.join("fixed_points.json"));
    assert_schema("fixed_points", &fp);
    assert_eq!(fp["rate_bound"]["bounds_hold"], true);
    let idx = fp["chosen"].as_u64().unwrap() as usize;
    let cand = &fp["report"]["candidates"][idx];
    assert!(cand["jacobian"]["eig_magnitudes"].as_array().unwrap().iter().all(|m| m.as_f64().unwrap() < 1.0));
    assert!(fp["scaling"]["fit_a"]["r2"].as_f64().unwrap() > 0.99);
    assert!(fp["scaling"]["fit_b"]["r2"].as_f64().unwrap() > 0.99);
    assert!(fp["scaling"]["limit_rel_err_a"].as_f64().unwrap() < 1e-6);

    for name in ["figure1_mu_z.csv", "figure1_mu_w.csv"] {
        for row in csv(&out.join(name)) {
            assert_eq!(row.len(), 3);
            if row[0] >= 2.0 && row[1] > 1e-12 {
                assert!(row[1] <= row[2], "{name} t={}: {} > {}", row[0], row[1], row[2]);
            }
        }
    }
    let fig2 = csv(&out.join("figure2.csv"));
    assert!(fig2.len() > 1000 && fig2.iter().all(|r| r.len() == 3));
}

#[test]
fn stationary_flags_the_isotropic_prior_only() {
    let tmp = TempDir::new().unwrap();
    let mut flags = Vec::new();
    for file in ["stationary_isotropic.json", "stationary_anisotropic.json"] {
        let out = tmp.path().join(file);
        run_ok("stationary", &configs().join(file), &out);
        let h = read_json(&out.join("hessian.json"));
        assert_schema("hessian", &h);
        assert_schema("refined_state", &read_json(&out.join("state.json")));
        assert!(h["hessian"]["grad_norm_at_point"].as_f64().unwrap() <= 1e-12);
        let eig = csv(&out.join("eigenvalues.csv"));
        assert_eq!(eig.len(), h["hessian"]["eigvals"].as_array().unwrap().len());
        flags.push(h["hessian"]["singular_flag"].as_bool().unwrap());
    }
    assert_eq!(flags, [true, false]);
}

#[test]
fn gcorr_reports_four_positive_terms() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    run_ok("gcorr", &configs().join("gcorr_k1.json"), &out);
    let g = read_json(&out.join("gcorr.json"));
    assert_schema("gcorr", &g);
    for t in ["term1", "term2", "term3", "term4"] {
        let v = g["report"][t].as_f64().unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
}

#[test]
fn verify_passes_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("verify", &configs().join("verify.json"), &a);
    run_ok("verify", &configs().join("verify.json"), &b);
    assert_eq!(non_meta_files(&a), non_meta_files(&b));
    let v = read_json(&a.join("verify.json"));
    assert_schema("verify", &v);
    assert_eq!(v["all_pass"], true);
    let w = &v["inequalities"]["tightness_witness"];
    assert_eq!((w[0].as_f64().unwrap(), w[1].as_f64().unwrap()), (0.5, 0.5));
}

#[test]
fn bad_inputs_exit_with_schema_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("never");
    let cases = [
        ("simulate", serde_json::json!({ "model": { "n": 3, "d": 5, "k": 1, "tau0": 1.0, "lambda_diag": [1.0] }, "seed": 1 })),
        ("simulate", serde_json::json!({ "model": { "n": 5, "d": 3, "k": 1, "tau0": 1.0, "lambda_diag": [1.0] }, "seed": 1, "typo": 0 })),
        ("fit", serde_json::json!({ "model": { "n": 5, "d": 3, "k": 1, "tau0": 1.0, "lambda_diag": [1.0, 2.0] }, "data": { "simulate": { "seed": 1 } } })),
        ("fit", serde_json::json!({ "model": { "n": 5, "d": 3, "k": 1, "tau0": 1.0, "lambda_diag": [1.0] }, "data": { "csv": "missing.csv" } })),
        ("fit", serde_json::json!({ "model": { "n": 5, "d": 3, "k": 1, "tau0": 1.0, "lambda_diag": [1.0] }, "data": { "simulate": { "seed": 1 } }, "cavi": { "init": { "mu_z": 0.0 } } })),
        ("analyze-k1", serde_json::json!({ "model": { "n": 4, "d": 3, "k": 2, "tau0": 1.0, "lambda_diag": [1.0, 1.0] }, "data": { "simulate": { "seed": 1 } } })),
        ("verify", serde_json::json!({ "trials": 0 })),
    ];
    for (i, (cmd, cfg)) in cases.iter().enumerate() {
        let p = write_config(tmp.path(), &format!("bad{i}.json"), cfg);
        assert_eq!(exit_code(cmd, &p, &out), 2, "case {i}: {cfg}");
    }
    assert!(!out.exists(), "rejected configs must not create the output directory");
    assert_eq!(exit_code("fit", &tmp.path().join("absent.json"), &out), 2);
    let o = bpca(&["verify", "--config", configs().join("verify.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runaway_initialization_is_a_numerical_abort() {
    let tmp = TempDir::new().unwrap();
    let p = write_config(
        tmp.path(),
        "blowup.json",
        &serde_json::json!({
            "model": { "n": 5, "d": 3, "k": 1, "tau0": 1.0, "lambda_diag": [1.0] },
            "data": { "simulate": { "seed": 1 } },
            "cavi": { "init": { "mu_z": 1e200 } }
        }),
    );
    assert_eq!(exit_code("fit", &p, &tmp.path().join("o")), 3);
}

#[test]
fn out_root_variable_supplies_the_default_directory() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bpca"))
        .args(["verify", "--config", configs().join("verify.json").to_str().unwrap()])
        .env("BPCA_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("verify").join("verify.json").exists());
}
