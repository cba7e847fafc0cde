use sciuq::eval::{kl_g, nip_g, PredictiveSummary};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sciuq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sciuq")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = sciuq(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FUNCTION_PROBLEM: &str = r#"
[problem]
kind = "function"
[problem.data]
n_train = 16
n_validation = 8
n_calibration = 24
n_test = 30
[problem.network]
hidden = [10]
"#;

fn function_manifest(dir: &Path, name: &str, method: &str, seed: u64) -> PathBuf {
    let out = dir.join(name);
    write(
        dir,
        &format!("{name}.toml"),
        &format!("seed = {seed}\noutput = {:?}\n{FUNCTION_PROBLEM}\n{method}", out.to_str().unwrap()),
    )
}

const LAPLACE: &str = "[method]\nid = \"la\"\nsamples = 10\n[method.map]\nsteps = 300\n[method.map.lr]\nkind = \"constant\"\nlr = 0.01\n";

/// Reads a prediction CSV into a summary plus the first input column.
fn read_predictions(path: &Path) -> (Vec<String>, PredictiveSummary) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    let k = header.iter().position(|h| h == "mean").unwrap();
    let (mut m, mut a, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.unwrap();
        let v = |i: usize| rec[i].parse::<f64>().unwrap();
        m.push(v(k));
        a.push(v(k + 1).powi(2));
        e.push(v(k + 2).powi(2));
    }
    (header, PredictiveSummary::from_moments(m, a, e).unwrap())
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = function_manifest(dir.path(), "g", LAPLACE, 0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", s(&m), "--out", s(&a)]);
    ok(&["generate", s(&m), "--out", s(&b)]);
    for f in ["train.csv", "validation.csv", "calibration.csv", "test.csv", "ood.csv", "manifest.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = std::fs::read_to_string(a.join("train.csv")).unwrap();
    assert!(text.starts_with("x,u\n"));
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn pinn_problem_json_without_noise_reproduces_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "problem.json",
        r#"{"D": 0.01, "lambda": "network", "noise": {"f": 0, "b": 0, "u": 0, "lambda": 0},
            "N_f": 13, "seed": 5, "solver": {"nx": 64, "nt": 20, "tol": 1e-5}}"#,
    );
    let out = dir.path().join("data");
    ok(&["generate", s(&p), "--out", s(&out)]);
    let data = sciuq::pinn::PinnDataset::read_csv(&out.join("train.csv")).unwrap();
    assert_eq!(data.f.len(), 13);
    for i in 0..data.f.len() {
        assert_eq!(data.f.value[i], sciuq::pinn::ReferenceFields::source(data.f.x[i]));
    }
    for i in 0..data.lambda.len() {
        assert_eq!(data.lambda.value[i], sciuq::pinn::ReferenceFields::lambda(data.lambda.x[i]));
    }
    let header = std::fs::read_to_string(out.join("train.csv")).unwrap();
    assert!(header.starts_with("x,t,value,channel\n"));
}

#[test]
fn resolved_manifest_carries_method_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for (method, expect) in [
        ("hmc", vec!["step_size = 0.1", "leapfrog_steps = 50", "burn_in = 2000", "samples = 1000"]),
        ("dens", vec!["members = 10", "weight_decay = 0.0005"]),
    ] {
        let m = function_manifest(dir.path(), method, &format!("[method]\nid = \"{method}\"\n"), 0);
        let out = dir.path().join(format!("{method}-data"));
        ok(&["generate", s(&m), "--out", s(&out)]);
        let resolved = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
        for e in expect {
            assert!(resolved.contains(e), "{method}: missing `{e}` in\n{resolved}");
        }
    }
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = function_manifest(dir.path(), "bad", "[method]\nid = \"nuts\"\n", 0);
    let out = sciuq(&["train", s(&m)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nuts") && err.contains("hmc, ld, mfvi"), "{err}");

    let gp_pinn = write(dir.path(), "gp.toml", "[problem]\nkind = \"pinn\"\n[method]\nid = \"gp\"\n");
    assert_eq!(sciuq(&["train", s(&gp_pinn)]).status.code(), Some(2));
    assert_eq!(sciuq(&["evaluate", s(&dir.path().join("missing"))]).status.code(), Some(2));
    assert_eq!(sciuq(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let m = function_manifest(
        dir.path(),
        "div",
        "[method]\nid = \"ld\"\nstep_size = 1e6\nburn_in = 50\nsamples = 5\n",
        0,
    );
    let out = sciuq(&["train", s(&m)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_evaluate_calibrate_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let la = function_manifest(dir.path(), "la", LAPLACE, 1);
    ok(&["train", s(&la)]);
    let run = dir.path().join("la");
    for f in ["manifest.toml", "train_log.json", "snapshot/snapshot.json", "data/train.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    // deterministic evaluation
    ok(&["evaluate", s(&run)]);
    let first = std::fs::read(run.join("metrics_test.json")).unwrap();
    ok(&["evaluate", s(&run)]);
    assert_eq!(std::fs::read(run.join("metrics_test.json")).unwrap(), first);
    let (header, pred) = read_predictions(&run.join("predictions_test.csv"));
    assert_eq!(header, ["x", "mean", "sigma_a", "sigma_e", "sigma_total"]);
    assert_eq!(pred.len(), 30);

    // a gold run fills NIP_G and KL_G, matching the metric oracles on the written predictions
    let gp = function_manifest(dir.path(), "gp", "[method]\nid = \"gp\"\n", 1);
    ok(&["train", s(&gp)]);
    let gold_run = dir.path().join("gp");
    ok(&["evaluate", s(&gold_run)]);
    let cmp = dir.path().join("cmp");
    ok(&["evaluate", s(&run), "--gold", s(&gold_run), "--out", s(&cmp)]);
    assert!(cmp.join("manifest.toml").is_file());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(cmp.join("metrics_test.json")).unwrap()).unwrap();
    let (_, gold) = read_predictions(&gold_run.join("predictions_test.csv"));
    let want_nip = nip_g(&pred.total, &gold.total).unwrap();
    let want_kl = kl_g(&pred, &gold).unwrap();
    let got_nip = report["NIP_G"].as_f64().unwrap();
    let got_kl = report["KL_G"].as_f64().unwrap();
    // predictions are written as σ, so the oracle sees variances rounded through a square root
    assert!((got_nip - want_nip).abs() < 1e-9, "{got_nip} vs {want_nip}");
    assert!((got_kl - want_kl).abs() < 1e-9 * want_kl.abs().max(1.0), "{got_kl} vs {want_kl}");

    // calibration artifacts and calibrated evaluation
    for kind in ["scale", "isotonic", "crude"] {
        ok(&["calibrate", s(&run), "--kind", kind]);
        let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join(format!("calibration_report_{kind}.json"))).unwrap()).unwrap();
        assert!(rep["rmsce_before"].is_f64() && rep["rmsce_after"].is_f64(), "{rep}");
        let curve = std::fs::read_to_string(run.join(format!("calibration_curve_{kind}.csv"))).unwrap();
        assert!(curve.starts_with("p,p_hat,p_hat_calibrated\n"));
    }
    let calibrated = dir.path().join("calibrated");
    ok(&[
        "evaluate",
        s(&run),
        "--calibration",
        s(&run.join("calibration_scale.json")),
        "--out",
        s(&calibrated),
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(calibrated.join("metrics_test.json")).unwrap()).unwrap();
    assert_eq!(rep["calibration"]["kind"], "scale");

    let table = dir.path().join("table.csv");
    ok(&[
        "compare",
        s(&run.join("metrics_test.json")),
        s(&gold_run.join("metrics_test.json")),
        s(&cmp.join("metrics_test.json")),
        "--out",
        s(&table),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("source,method,seed,RL2E,MPL,RMSCE,PIW,SDCV,NIP_G,KL_G"));
    assert!(lines[2].contains(",gp,"));
}

#[test]
fn single_member_snapshot_has_zero_epistemic_column() {
    let dir = tempfile::tempdir().unwrap();
    let m = function_manifest(
        dir.path(),
        "sens",
        "[method]\nid = \"sens\"\n[method.schedule]\neps_init = 0.01\neps_final = 0.0001\nsteps_total = 100\ncycles = 1\nused = 1\n",
        0,
    );
    ok(&["train", s(&m)]);
    let run = dir.path().join("sens");
    ok(&["evaluate", s(&run)]);
    let text = std::fs::read_to_string(run.join("predictions_test.csv")).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0, "{line}");
    }
}

#[test]
fn pinn_run_evaluates_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pinn");
    let m = write(
        dir.path(),
        "pinn.toml",
        &format!(
            r#"output = {:?}
[problem]
kind = "pinn"
[problem.pde.solver]
nx = 64
nt = 20
tol = 1e-5
[problem.evaluation]
points = 11
n_calibration = 12
[method]
id = "hmc"
[method.sampler]
step_size = 0.0005
leapfrog_steps = 3
burn_in = 4
samples = 4
"#,
            out.to_str().unwrap()
        ),
    );
    ok(&["train", s(&m)]);
    ok(&["evaluate", s(&out)]);
    ok(&["evaluate", s(&out), "--field", "lambda"]);
    ok(&["evaluate", s(&out), "--field", "f"]);
    ok(&["calibrate", s(&out), "--kind", "scale"]);
    let (header, pred) = read_predictions(&out.join("predictions_test.csv"));
    assert_eq!(&header[..2], ["x", "t"]);
    assert_eq!(pred.len(), 11);
    let (header, _) = read_predictions(&out.join("predictions_test_lambda.csv"));
    assert_eq!(header[0], "x");
    assert!(out.join("data/reference.csv").is_file());
    assert_eq!(sciuq(&["evaluate", s(&out), "--split", "ood"]).status.code(), Some(2));
}

#[test]
fn identical_manifests_train_bit_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let method = "[method]\nid = \"dens\"\nmembers = 3\n[method.train]\nsteps = 50\nweight_decay = 0.0005\n";
    let m = function_manifest(dir.path(), "d", method, 9);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", s(&m), "--out", s(&a)]);
    ok(&["train", s(&m), "--out", s(&b)]);
    for f in ["train_log.json", "snapshot/ensemble/params.csv", "snapshot/ensemble/manifest.json", "data/train.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // the resolved manifests differ only in the overridden output directory
    let strip = |d: &Path| -> String {
        std::fs::read_to_string(d.join("manifest.toml"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output = "))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
}
