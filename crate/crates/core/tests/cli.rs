use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flexquad::linops::generate_problem;
use flexquad::textio::{format_matrix, format_vector};
use serde_json::Value;

fn flexq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn run_by_name<'a>(s: &'a Value, name: &str) -> &'a Value {
    s["runs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == name)
        .unwrap_or_else(|| panic!("no run {name}"))
}

#[test]
fn generated_cg_run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = flexq(&[
        "--generate", "--seed", "42", "--m", "120", "--n", "100", "--preset", "cg", "--out", out_dir,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    let cg = run_by_name(&s, "cg");
    assert_eq!(cg["status"], "converged");
    let iterations = cg["iterations"].as_u64().unwrap() as usize;
    let csv = fs::read_to_string(dir.path().join("cg.csv")).unwrap();
    // header plus one record per iterate, including the last
    assert_eq!(csv.lines().count(), iterations + 2);
    assert!(csv.starts_with("k,"));
    assert_eq!(s["n"], 100);
}

#[test]
fn invalid_inputs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let base = ["--generate", "--n", "10", "--out", out_dir];
    let with = |extra: &[&str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(extra);
        code(&flexq(&v))
    };
    assert_eq!(with(&["--preset", "sd", "--omega", "2.0"]), 2);
    assert_eq!(with(&["--preset", "no-such-method"]), 2);
    assert_eq!(with(&["--preset", "sd", "--ell", "0.3"]), 2);
    assert_eq!(code(&flexq(&["--preset", "sd"])), 2);
    assert_eq!(code(&flexq(&["--bogus-flag"])), 2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&flexq(&["--config", bad.to_str().unwrap()])), 2);
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&flexq(&["--config", missing.to_str().unwrap()])), 2);
}

#[test]
fn config_file_with_custom_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = serde_json::json!({
        "problem": {"seed": 3, "m": 48, "n": 40},
        "runs": [
            {"name": "f3", "config": {"strategy": {"kind": "forsythe", "s": 3}, "norm": {"ell": 0.5}, "omega": 0.9}},
            {"name": "weighted", "config": {"strategy": {"kind": "grad_prev_step"}, "norm": {"coeffs": {"-1": 0.25, "0": 1.0}}}},
            {"name": "cr", "preset": "cr"}
        ],
        "output_dir": out_dir,
        "emit": {"csv": true, "json": true, "bounds": true}
    });
    let path = dir.path().join("exp.json");
    fs::write(&path, config.to_string()).unwrap();
    let out = flexq(&["--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out_dir);
    for name in ["f3", "weighted", "cr"] {
        let r = run_by_name(&s, name);
        assert_eq!(r["status"], "converged", "{name}");
        assert!(out_dir.join(format!("{name}.csv")).exists());
        assert!(r["bounds"].is_object(), "{name}");
    }
    assert_eq!(run_by_name(&s, "f3")["config"]["omega"], 0.9);
}

#[test]
fn norm_not_positive_on_the_spectrum_is_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "problem": {"seed": 1, "m": 24, "n": 20},
        "runs": [{"name": "signed", "config": {"strategy": {"kind": "gradient_only"}, "norm": {"coeffs": {"0": 1.0, "1": -1.0}}}}],
        "output_dir": dir.path().join("out")
    });
    let path = dir.path().join("exp.json");
    fs::write(&path, config.to_string()).unwrap();
    assert_eq!(code(&flexq(&["--config", path.to_str().unwrap()])), 3);
}

#[test]
fn relaxed_and_exact_forsythe2_both_converge() {
    for omega in ["0.95", "1.0"] {
        let dir = tempfile::tempdir().unwrap();
        let out = flexq(&[
            "--generate", "--seed", "42", "--n", "100", "--preset", "forsythe2", "--omega", omega,
            "--out", dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        let s = summary(dir.path());
        let r = run_by_name(&s, "forsythe2");
        assert_eq!(r["status"], "converged", "ω {omega}");
        assert!(r["iterations"].as_u64().unwrap() > 0);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = flexq(&[
            "--generate", "--seed", "7", "--n", "30", "--preset", "gdrd", "--preset", "mom-rand",
            "--preset", "nagm", "--out", d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    for file in ["gdrd.csv", "mom-rand.csv", "nagm.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn bounds_flag_adds_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = flexq(&[
        "--generate", "--seed", "2", "--n", "30", "--preset", "mg", "--preset", "cr", "--precond",
        "jacobi", "--bounds", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bounds ok"), "{stdout}");
    let s = summary(dir.path());
    for name in ["mg", "cr"] {
        let r = run_by_name(&s, name);
        let c = r["bounds"]["c_omega"].as_f64().unwrap();
        assert!(c > 0.0 && c < 1.0);
        assert!(r["verification"].is_object());
        assert_eq!(r["config"]["precond"], "jacobi");
    }
}

#[test]
fn problem_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_problem(9, 18, 15).unwrap();
    let write = |name: &str, text: String| {
        let path = dir.path().join(name);
        fs::write(&path, text).unwrap();
        path
    };
    let a = write("a.txt", format_matrix(p.matrix()));
    let b = write("b.txt", format_vector(p.rhs()));
    let config = serde_json::json!({
        "problem": {"matrix": a, "rhs": b, "seed": 9},
        "runs": [{"name": "cg", "preset": "cg"}],
        "output_dir": dir.path().join("out")
    });
    let path = write("exp.json", config.to_string());
    let out = flexq(&["--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&dir.path().join("out"));
    assert_eq!(s["n"], 15);
    assert_eq!(run_by_name(&s, "cg")["status"], "converged");
}

#[test]
fn lists_presets() {
    let out = flexq(&["--list-presets"]);
    assert_eq!(code(&out), 0);
    let names: Vec<String> = String::from_utf8_lossy(&out.stdout).lines().map(str::to_owned).collect();
    for expected in ["sd", "mg", "cg", "cr", "forsythe2", "gdwgm", "gdrd", "nagm"] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing");
    }
}
