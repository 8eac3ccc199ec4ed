use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(file)
}

fn dp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(file: &str) -> String {
    corpus(file).to_string_lossy().into_owned()
}

#[test]
fn run_prints_program_output_then_value() {
    let o = dp(&["run", &path("taylor_sine.dp"), "--fn", "s", "--at", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    let expected: Vec<String> = [1, 3, 5, 7, 9, 11]
        .iter()
        .map(|i| format!("i={i}"))
        .chain(["0.841470984648068".to_string()])
        .collect();
    assert_eq!(lines, expected);
}

#[test]
fn grad_reverse_and_forward() {
    let rev = dp(&["grad", &path("taylor_sine.dp"), "--fn", "s", "--at", "1"]);
    let fwd = dp(&["grad", &path("taylor_sine.dp"), "--fn", "s", "--at", "1", "--mode", "forward"]);
    assert!(rev.status.success() && fwd.status.success());
    let r: f64 = stdout(&rev).lines().last().unwrap().trim().parse().unwrap();
    let f: f64 = stdout(&fwd).lines().last().unwrap().trim().parse().unwrap();
    assert_eq!(r, 0.5403023037918872);
    assert_eq!(f, 0.540302303791887);
}

#[test]
fn grad_with_sigma_propagates_uncertainty() {
    let o = dp(&["grad", &path("poly.dp"), "--fn", "f", "--at", "0.3333333333333333", "--sigma", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["mean"].as_f64().unwrap(), 3.6666666666666665);
    assert!((v["sigma"].as_f64().unwrap() - 0.02).abs() < 1e-12);
}

#[test]
fn mixed_mode_reads_noise_file() {
    let args = [
        "grad",
        &path("sde_gbm.dp"),
        "--fn",
        "loss",
        "--mode",
        "mixed",
        "--at",
        "0.1,0.2",
        "--noise-file",
        &path("sde_gbm_noise.json"),
    ];
    let a = dp(&args);
    let b = dp(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let g: Vec<f64> = serde_json::from_str(stdout(&a).trim()).unwrap();
    assert_eq!(g.len(), 2);
    assert!(g.iter().all(|x| x.is_finite()));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn check_all_reports_no_failures() {
    let o = dp(&["check", "--all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["failed"], 0);
    assert_eq!(v["seed"], 20190117);
    assert!(v["checks"].as_u64().unwrap() >= 128);
}

#[test]
fn check_single_point() {
    let o = dp(&["check", &path("poly.dp"), "--fn", "f", "--at", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["entries"][0]["analytic"], 4.0);
}

#[test]
fn emit_ir_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    for name in ["poly", "taylor_sine", "newton_bond"] {
        let o = dp(&["emit-ir", "--adjoint", &path(&format!("{name}.dp"))]);
        assert!(o.status.success(), "{}", stderr(&o));
        let expected = std::fs::read_to_string(golden.join(format!("{name}.dpir"))).unwrap();
        assert_eq!(stdout(&o), expected, "{name}");
    }
}

#[test]
fn missing_file_is_a_user_error() {
    let o = dp(&["run", "does-not-exist.dp", "--fn", "f", "--at", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does-not-exist.dp"));
}

#[test]
fn parse_error_reports_position() {
    let dir = std::env::temp_dir().join(format!("dp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("bad.dp");
    std::fs::write(&file, "fn f(x) { return x +; }\n").unwrap();
    let o = dp(&["run", &file.to_string_lossy(), "--fn", "f", "--at", "1"]);
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("1:"), "{}", stderr(&o));
}

#[test]
fn bench_rejects_bad_configuration() {
    let o = dp(&["bench", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("repetitions"));
    let o = dp(&["bench", "--sizes", "8,16"]);
    assert_eq!(o.status.code(), Some(1));
}
