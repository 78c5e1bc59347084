use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn dsaga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsaga")).args(args).env_remove("DSAGA_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dsaga(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Rows of a CSV as column-name → value maps.
fn table(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().zip(l.split(',')).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn saga_writes_one_record_per_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    ok(&["run", "--algo", "saga", "--synthetic", "gaussian:n=1000,d=20", "--lambda", "0.01", "--passes", "10", "--seed", "1", "--out", path_str(&out)]);
    let rows = table(&out);
    assert_eq!(rows.len(), 10);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["pass_opt"], (i + 1).to_string());
        assert_eq!(r["pass_total"], (i + 1).to_string());
        let excess: f64 = r["excess"].parse().unwrap();
        assert!(excess >= 0.0);
    }
}

#[test]
fn one_node_dsaga_matches_saga() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("saga.csv");
    let b = dir.path().join("dsaga.csv");
    let data = ["--synthetic", "gaussian:n=500,d=10", "--seed", "4"];
    ok(&[&["run", "--algo", "saga", "--passes", "6", "--out", path_str(&a)], &data[..]].concat());
    ok(&[
        &["run", "--algo", "dsaga", "--k", "1", "--u", "2", "--rounds", "3", "--sync-grad", "exact", "--no-refresh", "--out", path_str(&b)],
        &data[..],
    ]
    .concat());
    let saga: BTreeMap<String, String> = table(&a).into_iter().map(|r| (r["pass_opt"].clone(), r["f"].clone())).collect();
    let avg: Vec<_> = table(&b).into_iter().filter(|r| r["node"] == "avg" && r["round"] != "0").collect();
    assert_eq!(avg.len(), 3);
    for r in avg {
        assert_eq!(saga[&r["pass_opt"]], r["f"], "pass {}", r["pass_opt"]);
    }
}

#[test]
fn exact_inner_needs_a_quadratic() {
    let out = dsaga(&["run", "--algo", "dsaga", "--k", "2", "--exact-inner", "--synthetic", "gaussian:n=100,d=4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quadratic"));
}

#[test]
fn invalid_specs_exit_nonzero() {
    for args in [
        &["run", "--algo", "dsaga", "--k", "0", "--synthetic", "gaussian:n=100,d=4"][..],
        &["run", "--algo", "saga", "--lambda", "-1", "--synthetic", "gaussian:n=100,d=4"],
        &["run", "--algo", "saga", "--synthetic", "gaussian:n=100"],
        &["run", "--algo", "saga"],
    ] {
        assert!(!dsaga(args).status.success(), "{args:?}");
    }
}

#[test]
fn config_file_fills_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# shared settings\nsynthetic = gaussian:n=300,d=5\npasses = 7\nseed = 2\n").unwrap();
    let a = dir.path().join("a.csv");
    ok(&["run", "--algo", "saga", "--config", path_str(&cfg), "--out", path_str(&a)]);
    assert_eq!(table(&a).len(), 7);
    let b = dir.path().join("b.csv");
    ok(&["run", "--algo", "saga", "--config", path_str(&cfg), "--passes", "3", "--out", path_str(&b)]);
    let rows = table(&b);
    assert_eq!(rows.len(), 3);
    // same seed and data, so the shared prefix agrees
    assert_eq!(rows[2]["f"], table(&a)[2]["f"]);
}

#[test]
fn sweep_over_u_charges_u_plus_one_passes_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    ok(&[
        "sweep", "--axis", "u", "--values", "1,2,4", "--objective", "quadratic", "--synthetic", "gaussian:n=400,d=5", "--k", "2", "--rounds",
        "3", "--out", path_str(&out),
    ]);
    let rows = table(&out);
    for u in [1usize, 2, 4] {
        let avg: Vec<_> = rows.iter().filter(|r| r["U"] == u.to_string() && r["node"] == "avg").collect();
        assert_eq!(avg.len(), 4, "U={u}");
        for (t, r) in avg.iter().enumerate() {
            assert_eq!(r["pass_total"], (t * (u + 1)).to_string());
            assert_eq!(r["pass_opt"], (t * u).to_string());
        }
    }
}

#[test]
fn sweep_over_single_k_equals_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.csv");
    let r = dir.path().join("r.csv");
    let common = ["--synthetic", "gaussian:n=600,d=6", "--u", "2", "--rounds", "3", "--seed", "5"];
    ok(&[&["sweep", "--axis", "k", "--values", "3", "--out", path_str(&s), "--report", path_str(&dir.path().join("sr.csv"))], &common[..]].concat());
    ok(&[&["run", "--algo", "dsaga", "--k", "3", "--out", path_str(&r), "--report", path_str(&dir.path().join("rr.csv"))], &common[..]].concat());
    let strip = |rows: Vec<BTreeMap<String, String>>| -> Vec<BTreeMap<String, String>> {
        rows.into_iter()
            .map(|mut m| {
                m.remove("run_id");
                m
            })
            .collect()
    };
    assert_eq!(strip(table(&s)), strip(table(&r)));
}

#[test]
fn verify_lemma1_exit_codes() {
    let out = ok(&["verify", "lemma1", "--preset", "two-node", "--rounds", "4"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rho"));
    ok(&["verify", "lemma1", "--identical-shards", "--k", "3", "--synthetic", "gaussian:n=300,d=5", "--rounds", "2"]);
    ok(&["verify", "lemma1", "--k", "4", "--synthetic", "gaussian:n=2000,d=10", "--rounds", "5"]);
}

#[test]
fn optimum_prints_certified_point() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    let out = ok(&["optimum", "--synthetic", "gaussian:n=400,d=5", "--out", path_str(&w)]);
    let text = String::from_utf8_lossy(&out.stdout);
    let g: f64 = text.lines().find_map(|l| l.strip_prefix("grad_norm = ")).unwrap().parse().unwrap();
    assert!(g <= 1e-10);
    assert_eq!(std::fs::read_to_string(&w).unwrap().lines().count(), 5);
}

#[test]
fn libsvm_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.svm");
    std::fs::write(&data, "1 1:0.5 3:1.0\n-1 2:1.5\n+1 1:-0.2 2:0.3 3:0.1\n-1 3:-1.0\n").unwrap();
    let out = dir.path().join("t.csv");
    ok(&["run", "--algo", "lbfgs", "--data", path_str(&data), "--lambda", "0.1", "--passes", "50", "--out", path_str(&out)]);
    assert!(!table(&out).is_empty());
}
