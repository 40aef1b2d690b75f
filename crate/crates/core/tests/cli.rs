use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_curvametric"));
    c.env_remove("CURVAMETRIC_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

#[test]
fn generate_writes_csv_and_sidecar_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = d.path().to_str().unwrap();
        let o = run(&[
            "generate", "--shape", "sphere", "--radius", "1", "--n", "3", "--m", "2", "--count", "5000", "--seed", "7",
            "--out", out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["sample.csv", "sample.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
    let side = json(a.path(), "sample.json");
    assert_eq!(side["schema_version"], 1);
    assert_eq!(side["seed"], 7);
    assert_eq!(side["count"], 5000);
    let measure = side["analytic_measure"].as_f64().unwrap();
    assert!((measure - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    assert_eq!(read(a.path(), "sample.csv").lines().count(), 5001);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let o = run(&["generate", "--shape", "sphere"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--count"));

    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let o = run(&["generate", "--shape", "sphere", "--n", "4", "--count", "10", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["verify", "--suite", "no-such-suite"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = d.path().join("broken.csv");
    std::fs::write(&bad, "x1,x2,x3\n0,0,0\n1,zz,0\n").unwrap();
    let o = run(&["verify", "--input", bad.to_str().unwrap(), "--m", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["verify", "--input", d.path().join("missing.csv").to_str().unwrap(), "--m", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_sphere_reports_ratio_one() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let o = run(&["analyze", "--shape", "sphere", "--count", "3000", "--p", "4", "--kind", "tp", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(d.path(), "summary.json");
    assert_eq!(s["schema_version"], 1);
    let ratio = s["energy"]["ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    for f in ["field.csv", "profile.csv", "beta_decay.dat", "field_histogram.dat"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let field = read(d.path(), "field.csv");
    assert!(field.starts_with("point_index,value,certified,witness_0\n"));
    // Machine files carry 17 significant digits.
    let v = field.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(v.split('e').next().unwrap().replace(['.', '-'], "").len(), 17, "{v}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("ratio to bound"));
}

#[test]
fn analyze_flat_disk_gives_zero_fields() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let o = run(&["analyze", "--shape", "flat-disk", "--count", "800", "--kind", "menger", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(d.path(), "summary.json");
    assert_eq!(s["field"]["max"].as_f64().unwrap(), 0.0);
    assert!(s["decay"].is_null());
    assert!(s["decay_error"].as_str().unwrap().contains("too flat"));
}

#[test]
fn analyze_ellipsoid_exceeds_the_bound() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let o = run(&["analyze", "--shape", "ellipsoid", "--axes", "2,1,1", "--count", "3000", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(d.path(), "summary.json")["energy"]["ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let args = ["analyze", "--shape", "torus", "--count", "1500", "--tangents", "pca", "--seed", "4"];
    for (d, threads) in dirs.iter().zip(["1", "3"]) {
        let o = bin().args(args).args(["--threads", threads, "--out", d.path().to_str().unwrap()]).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = bin().args(args).args(["--out", dirs[2].path().to_str().unwrap()]).env("CURVAMETRIC_THREADS", "2").output().unwrap();
    assert!(o.status.success());
    for name in ["summary.json", "field.csv", "profile.csv", "beta_decay.dat", "field_histogram.dat"] {
        let a = read(dirs[0].path(), name);
        assert_eq!(a, read(dirs[1].path(), name), "{name}");
        assert_eq!(a, read(dirs[2].path(), name), "{name}");
    }
}

#[test]
fn analyze_reads_generated_csv() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert!(run(&["generate", "--shape", "circle", "--count", "400", "--out", out]).status.success());
    let input = d.path().join("sample.csv");
    let o = run(&["analyze", "--input", input.to_str().unwrap(), "--m", "1", "--p", "3", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(d.path(), "summary.json");
    assert!(s["tangents"]["pca"].as_f64().is_some());
    let ratio = s["energy"]["ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    let o = run(&["analyze", "--input", input.to_str().unwrap(), "--m", "1", "--tangents", "analytic", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_suite_passes_and_writes_json() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "simplex", "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[PASS] criterion  8"));
    let v = json(d.path(), "verify.json");
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["passed"], true);
}

#[test]
fn verify_input_runs_applicable_checks() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert!(run(&["generate", "--shape", "sphere", "--count", "1500", "--out", out]).status.success());
    let o = run(&["verify", "--input", d.path().join("sample.csv").to_str().unwrap(), "--m", "2"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("ahlfors") && text.contains("menger-beta"));
}

#[test]
fn verify_failure_exits_1_and_names_the_offender() {
    // Four points on a thin needle: mass ratios collapse below 1/2.
    let d = tempfile::tempdir().unwrap();
    let f = d.path().join("needle.csv");
    let mut text = String::from("x1,x2,x3,w\n");
    for i in 0..200 {
        let t = i as f64 / 199.0;
        text.push_str(&format!("{t},{},0,0.0001\n", 0.001 * (t * 40.0).sin()));
    }
    std::fs::write(&f, text).unwrap();
    let o = run(&["verify", "--input", f.to_str().unwrap(), "--m", "2"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(1), "{out}");
    assert!(out.contains("worst offender"));
}
