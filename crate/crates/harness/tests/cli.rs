use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rsbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsbm"))
        .args(args)
        .env_remove("RSBM_THREADS")
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn small_lln(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "lln.toml",
        &format!(
            r#"
experiment = "lln"
[lattice]
d = 1
n_grid = [4, 8]
M = 4
[environment]
seed = 20
[particles]
rho = 1.5
[time]
t_end = 0.5
obs_times = [0.25, 0.5]
[mc]
replicas = 1000
base_seed = 7
[output]
dir = "{}"
"#,
            dir.join("default-out").display()
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn column(csv: &[u8], name: &str) -> Vec<String> {
    let text = String::from_utf8(csv.to_vec()).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = rsbm(&["validate", path.to_str().unwrap()]);
            assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
            seen += 1;
        }
    }
    assert_eq!(seen, 8, "one config per experiment");
}

#[test]
fn missing_file_is_a_config_error() {
    let out = rsbm(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(stderr.contains("cannot read"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(small_lln(dir.path())).unwrap().replace("rho = 1.5", "rho = 1.5\nrate = 2");
    let path = write_config(dir.path(), "bad.toml", &text);
    let out = rsbm(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rate"));
}

#[test]
fn help_lists_config_keys() {
    let out = rsbm(&["run", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["n_grid", "M_grid", "offspring_probs", "obs_times", "base_seed", "max_threads", "picard_tol", "dt_factor", "dir"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_lln(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = rsbm(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.len() >= 3);
    assert_eq!(fa, fb);
    for name in ["summary.json", "provenance.json", "config.toml"] {
        assert!(a.join(name).exists(), "{name}");
    }
}

#[test]
fn seed_override_changes_monte_carlo_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_lln(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    rsbm(&["run", config.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    rsbm(&["run", config.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "8"]);
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_ne!(read(&a, "paths_n4.csv"), read(&b, "paths_n4.csv"));
    let (la, lb) = (read(&a, "lln.csv"), read(&b, "lln.csv"));
    assert_ne!(column(&la, "mean"), column(&lb, "mean"));
    assert_eq!(column(&la, "target"), column(&lb, "target"));
    assert_eq!(column(&la, "variance_functional"), column(&lb, "variance_functional"));

    let hash = |d: &Path| {
        let v: serde_json::Value = serde_json::from_slice(&read(d, "summary.json")).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&a), hash(&b));
}

#[test]
fn deterministic_experiment_ignores_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "duality.toml",
        r#"
experiment = "duality"
[lattice]
d = 1
n_grid = [4, 8]
M = 4
[environment]
count = 3
[time]
t_end = 0.25
[output]
dir = "unused"
"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o = rsbm(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(csv_files(&a), csv_files(&b));
}

#[test]
fn lln_reports_error_and_variance_per_scale() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_lln(dir.path());
    let out = dir.path().join("run");
    rsbm(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let csv = fs::read(out.join("lln.csv")).unwrap();
    let rows: Vec<Vec<f64>> = String::from_utf8(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // columns: n,time,mean,se_mean,target,error,variance,se_variance,variance_functional
    let at_end: Vec<&Vec<f64>> = rows.iter().filter(|r| r[1] == 0.5).collect();
    assert_eq!(at_end.len(), 2);
    for r in &at_end {
        assert!((r[5] - (r[2] - r[4]).abs()).abs() < 1e-15);
        assert!(r[5] < 3.0 * r[3], "mean error {} vs se {}", r[5], r[3]);
        assert!((r[6] - r[8]).abs() < 3.0 * r[7], "variance {} vs functional {}", r[6], r[8]);
    }
    // the exact variance decreases from n = 4 to n = 8 in this environment
    assert!(at_end[1][8] < at_end[0][8]);
}

#[test]
fn solver_subcommands_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let env = p("env.bin");
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(rsbm(&["env", "sample", "-n", "4", "-M", "4", "--seed", "3", "--out", &env]));
    ok(rsbm(&["env", "sample", "-n", "4", "-M", "4", "--seed", "3", "--out", &p("env.csv")]));
    assert_eq!(fs::read_to_string(p("env.csv")).unwrap().lines().count(), 17);
    ok(rsbm(&["pam", "solve", "--env", &env, "--times", "0.25,0.5", "--out", &p("pam.csv")]));
    assert_eq!(fs::read_to_string(p("pam.csv")).unwrap().lines().count(), 33);
    let dual = ok(rsbm(&["dual", "solve", "--env", &env, "--t", "0.5", "--out", &p("dual.csv")]));
    assert!(dual.contains("U(t, 0)"));
    let eig = ok(rsbm(&["spectral", "eig", "--env", &env, "-L", "4", "--out", &p("e1.csv")]));
    assert!(eig.starts_with("lambda1 = "));
    let missing = rsbm(&["pam", "solve", "--env", &p("nope.bin"), "--times", "0.5", "--out", &p("x.csv")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn report_merge_combines_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_lln(dir.path());
    let run = dir.path().join("run");
    rsbm(&["run", config.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    let merged = dir.path().join("merged.json");
    let o = rsbm(&["report", "merge", run.to_str().unwrap(), "--out", merged.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&merged).unwrap()).unwrap();
    assert_eq!(v["reports"][0]["experiment"], "lln");
    let all_pass = v["all_pass"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 1 }));
    for key in ["name", "statistic", "tolerance", "pass"] {
        assert!(v["reports"][0]["checks"][0].get(key).is_some(), "{key}");
    }
}
