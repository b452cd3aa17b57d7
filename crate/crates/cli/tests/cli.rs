use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critset"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

#[test]
fn basis_counts() {
    let out = scratch("basis");
    for (n, d, count) in [("3", "2", 5), ("2", "5", 2), ("4", "3", 16)] {
        let o = run(&out, &["basis", n, d]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v = json(out.join(format!("basis_n{n}_d{d}.json")));
        assert_eq!(v["basis"]["elements"].as_array().unwrap().len(), count);
        assert_eq!(v["meta"]["seed"], 0);
    }
}

#[test]
fn freq_profile_writes_header_and_rows() {
    let out = scratch("profile");
    let o = run(&out, &["freq-profile", "--expansion", &data("p3.json"), "--radii", "0.125,0.25,0.5,1"]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("profile_p3.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.iter().any(|l| l.starts_with("# command")));
    assert!(lines.iter().any(|l| l.starts_with("# config_hash")));
    let rows: Vec<&str> = lines.iter().copied().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        assert!(row.contains(",3"), "{row}");
    }
}

#[test]
fn constant_expansion_is_an_error() {
    let out = scratch("constant");
    let o = run(&out, &["freq-profile", "--expansion", &data("constant.json")]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&out, &["freq-profile"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&out, &["basis", "1", "2"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn count2d_on_cubic() {
    let out = scratch("count2d");
    let o = run(&out, &["count2d", "--expansion", &data("cubic.json")]);
    assert!(o.status.success());
    let v = json(out.join("count2d_cubic.json"));
    assert_eq!(v["count"], 2);
    assert_eq!(v["degree_bound"], 2);
}

#[test]
fn cover_linear_and_cubic() {
    let out = scratch("cover");
    let o = run(&out, &["cover", "--expansion", &data("linear.json")]);
    assert!(o.status.success());
    let v = json(out.join("cover_linear.json"));
    assert_eq!(v["levels"].as_array().unwrap().len(), 1);
    assert_eq!(v["escapes"], 0);

    let o = run(&out, &["cover", "--expansion", &data("p3.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("cover_p3.csv").exists());
}

#[test]
fn scans_and_pinch_check() {
    let out = scratch("scans");
    let rez2 = data("rez2.json");
    for args in [
        vec!["critical-scan", "--expansion", &rez2],
        vec!["nodal-scan", "--expansion", &rez2],
        vec!["volume-scan", "--expansion", &rez2, "--radii", "0.0625,0.03125"],
        vec!["pinch-check", "--expansion", &rez2],
    ] {
        let o = run(&out, &args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["critical_rez2.csv", "nodal_rez2.csv", "volume_rez2.csv", "pinch_rez2.json", "pinch_ode_rez2.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let text = fs::read_to_string(out.join("volume_rez2.csv")).unwrap();
    let ratios: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("id"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 2);
    assert!(ratios[0] / ratios[1] < 2.0 && ratios[1] / ratios[0] < 2.0);
}

#[test]
fn elliptic_identity_matches_classical_frequency() {
    let out = scratch("elliptic");
    let o = run(&out, &["elliptic", "--lambda", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(out.join("elliptic.json"));
    assert!(v["classical_match"]["max_difference"].as_f64().unwrap() <= 1e-6);
    assert!(out.join("elliptic_solution.bin").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs_jobs_and_directories() {
    let a = scratch("det_a");
    let b = scratch("det_b");
    let args = ["--seed", "5", "freq-profile", "--random", "3,4", "--radii", "geom:0.01:1:16"];
    assert!(run(&a, &args).status.success());
    let mut with_jobs = vec!["--jobs", "1"];
    with_jobs.extend(args);
    assert!(run(&b, &with_jobs).status.success());
    let name = "profile_random-n3-D4-s5.csv";
    assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());

    let args = ["--seed", "2", "cover", "--random", "2,3"];
    assert!(run(&a, &args).status.success());
    let mut with_jobs = vec!["--jobs", "1"];
    with_jobs.extend(args);
    assert!(run(&b, &with_jobs).status.success());
    for f in ["cover_random-n2-D3-s2.csv", "cover_random-n2-D3-s2.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // A different seed changes the draw and the recorded hash.
    let c = scratch("det_c");
    assert!(run(&c, &["--seed", "6", "freq-profile", "--random", "3,4", "--radii", "geom:0.01:1:16"]).status.success());
    let hash = |p: PathBuf| {
        fs::read_to_string(p).unwrap().lines().find(|l| l.starts_with("# config_hash")).unwrap().to_string()
    };
    assert_ne!(hash(a.join(name)), hash(c.join("profile_random-n3-D4-s6.csv")));
}

#[test]
fn config_overrides_are_recorded_and_validated() {
    let out = scratch("config");
    let cfg = out.join("cfg.json");
    fs::write(&cfg, r#"{"covering":{"eps":0.2}}"#).unwrap();
    let o = run(&out, &["--config", cfg.to_str().unwrap(), "count2d", "--expansion", &data("cubic.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(out.join("count2d_cubic.json"));
    assert_eq!(v["meta"]["overrides"]["covering"]["eps"], 0.2);

    fs::write(&cfg, r#"{"no_such_section":1}"#).unwrap();
    let o = run(&out, &["--config", cfg.to_str().unwrap(), "basis", "2", "2"]);
    assert_eq!(o.status.code(), Some(2));
}
