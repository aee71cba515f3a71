use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_commforge"))
        .args(args)
        .env_remove("COMMFORGE_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Builds `algo` into `dir/name` and returns the path.
fn build(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["build", "--out", path_str(&out)];
    args.extend_from_slice(extra);
    let o = cmd(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn edit_plan(src: &Path, dst: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(src).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(dst, serde_json::to_vec(&v).unwrap()).unwrap();
}

fn drop_ops(v: &mut serde_json::Value, keep: impl Fn(&serde_json::Value) -> bool) {
    for p in v["programs"].as_array_mut().unwrap() {
        p["ops"].as_array_mut().unwrap().retain(|o| keep(o));
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&cmd(&["--help"])), 0);
    assert_eq!(code(&cmd(&["--version"])), 0);
    assert!(stdout(&cmd(&["run", "--help"])).contains("--check-oracle"));
}

#[test]
fn unknown_flag_and_subcommand_exit_two() {
    assert_eq!(code(&cmd(&["run", "--bogus"])), 2);
    assert_eq!(code(&cmd(&["explode"])), 2);
    assert_eq!(code(&cmd(&[])), 2);
}

#[test]
fn bad_flag_values_are_usage_errors() {
    for args in [
        &["run", "--algo", "nope"][..],
        &["run", "--algo", "1pa", "--dtype", "f64"],
        &["run", "--algo", "1pa", "--collective", "allgather"],
        &["run", "--algo", "1pa", "--schedules", "0"],
        &["run", "--ranks", "6", "--nodes", "4", "--algo", "1pa"],
        &["run"],
        &["build"],
        &["build", "--algo", "1pa", "--passes", "all-of-them"],
        &["bench", "--collective", "broadcast"],
        &["bench", "--min-bytes", "100", "--max-bytes", "10"],
    ] {
        let o = cmd(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn run_builtin_algorithms_against_oracle() {
    for (algo, extra) in [
        ("1pa", &["--ranks", "4"][..]),
        ("2pa-ll", &["--ranks", "4"]),
        ("2pa-hb", &["--ranks", "8", "--dtype", "f32"]),
        ("2pr", &["--ranks", "8"]),
        ("ring_rs", &["--ranks", "4"]),
        ("ring_ag", &["--ranks", "4"]),
        ("allpairs_ag", &["--ranks", "4"]),
        ("2ph-hb", &["--nodes", "2", "--ranks", "4"]),
        ("2ph-ll", &["--nodes", "2", "--ranks", "4"]),
    ] {
        let mut args = vec!["run", "--algo", algo, "--elems", "100", "--check-oracle", "--schedules", "3"];
        args.extend_from_slice(extra);
        let o = cmd(&args);
        assert_eq!(code(&o), 0, "{algo}: {}{}", stdout(&o), stderr(&o));
        let out = stdout(&o);
        assert!(out.contains("oracle: match"), "{out}");
        assert!(out.contains("0 race report(s)"), "{out}");
    }
}

#[test]
fn run_by_collective_selects_an_algorithm() {
    let o = cmd(&["run", "--collective", "allreduce", "--ranks", "8", "--elems", "64", "--check-oracle"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // 256 bytes is in the smallest tile
    assert!(stdout(&o).starts_with("1pa:"), "{}", stdout(&o));
}

#[test]
fn run_plan_file_with_matching_ranks() {
    let dir = TempDir::new().unwrap();
    let p = build(&dir, "p.json", &["--algo", "2pr", "--ranks", "8", "--elems", "64"]);
    let o = cmd(&["run", "--plan", path_str(&p), "--ranks", "8", "--check-oracle"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("oracle: match"));
}

#[test]
fn run_plan_on_wrong_world_size_fails() {
    let dir = TempDir::new().unwrap();
    let p = build(&dir, "p.json", &["--algo", "1pa", "--ranks", "4", "--elems", "8"]);
    let o = cmd(&["run", "--plan", path_str(&p), "--ranks", "3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error[E_RANK_MISMATCH]"), "{}", stderr(&o));
}

#[test]
fn unsynchronized_plan_fails_with_races() {
    let dir = TempDir::new().unwrap();
    let p = build(&dir, "p.json", &["--algo", "ring_rs", "--ranks", "4", "--elems", "8"]);
    let broken = dir.path().join("broken.json");
    edit_plan(&p, &broken, |v| drop_ops(v, |o| o["op"] != "tb_sync"));
    let o = cmd(&["run", "--plan", path_str(&broken), "--schedules", "4"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("race on region"), "{}", stdout(&o));
}

#[test]
fn recorded_document_lowers_and_runs() {
    let dir = TempDir::new().unwrap();
    let raw = build(&dir, "raw.json", &["--algo", "ring_rs", "--ranks", "4", "--elems", "8", "--raw"]);
    let text = std::fs::read_to_string(&raw).unwrap();
    assert!(text.contains("\"lowered\":false"), "{text}");

    // run lowers implicitly
    let o = cmd(&["run", "--plan", path_str(&raw), "--check-oracle", "--schedules", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let lowered = dir.path().join("lowered.json");
    let o = cmd(&["build", "--plan", path_str(&raw), "--lower", "--out", path_str(&lowered)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&lowered).unwrap();
    assert!(!text.contains("\"lowered\""));
    assert!(text.contains("tb_sync"));

    // the natively built plan is the same document
    let native = build(&dir, "native.json", &["--algo", "ring_rs", "--ranks", "4", "--elems", "8"]);
    assert_eq!(std::fs::read(&native).unwrap(), std::fs::read(&lowered).unwrap());
}

#[test]
fn build_to_stdout_is_deterministic_and_respects_options() {
    let a = cmd(&["build", "--algo", "2pa-hb", "--ranks", "4", "--elems", "16"]);
    let b = cmd(&["build", "--algo", "2pa-hb", "--ranks", "4", "--elems", "16"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);

    let count = |o: &Output| -> usize {
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["programs"].as_array().unwrap().len()
    };
    let two = cmd(&["build", "--algo", "2pa-hb", "--ranks", "4", "--elems", "16", "--instances", "2"]);
    assert_eq!(code(&two), 0, "{}", stderr(&two));
    assert_eq!(count(&two), 2 * count(&a));

    let odd = cmd(&["build", "--algo", "2pa-hb", "--ranks", "4", "--elems", "12", "--instances", "8"]);
    assert_eq!(code(&odd), 1);
    assert!(stderr(&odd).contains("error[E_SHAPE]"), "{}", stderr(&odd));

    let unfused = cmd(&["build", "--algo", "ring_rs", "--ranks", "4", "--elems", "8", "--passes", "sync-only"]);
    let fused = cmd(&["build", "--algo", "ring_rs", "--ranks", "4", "--elems", "8"]);
    assert!(stdout(&unfused).contains("\"signal\""));
    assert!(!stdout(&fused).contains("\"signal\""));
}

#[test]
fn build_rejects_unavailable_topology() {
    let o = cmd(&["build", "--algo", "2ph-hb", "--ranks", "8"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error[E_TOPOLOGY]"), "{}", stderr(&o));
}

#[test]
fn validate_accepts_good_and_rejects_dangling_reference() {
    let dir = TempDir::new().unwrap();
    let p = build(&dir, "p.json", &["--algo", "ring_rs", "--ranks", "4", "--elems", "8"]);
    let o = cmd(&["validate", "--plan", path_str(&p)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("0 error(s)"));

    let bad = dir.path().join("bad.json");
    edit_plan(&p, &bad, |v| v["programs"][0]["ops"][0]["src"]["buffer"] = 99.into());
    let o = cmd(&["validate", "--plan", path_str(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("buffer 99"), "{}", stderr(&o));

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&cmd(&["validate", "--plan", path_str(&missing)])), 1);
}

#[test]
fn validate_reports_semantic_errors_as_diagnostics() {
    let dir = TempDir::new().unwrap();
    let p = build(&dir, "p.json", &["--algo", "1pa", "--ranks", "2", "--elems", "4"]);
    let bad = dir.path().join("bad.json");
    // an LL op inside an HB plan
    edit_plan(&p, &bad, |v| v["protocol"] = "HB".into());
    let o = cmd(&["validate", "--plan", path_str(&bad)]);
    assert_eq!(code(&o), 1, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("error"), "{}", stdout(&o));
}

#[test]
fn lint_flags_warnings_and_non_canonical_documents() {
    let dir = TempDir::new().unwrap();
    let p = build(&dir, "p.json", &["--algo", "ring_rs", "--ranks", "4", "--elems", "8"]);
    assert_eq!(code(&cmd(&["lint", "--plan", path_str(&p)])), 0);

    // one wait fewer than signals: a warning, which validate tolerates
    let unbalanced = dir.path().join("unbalanced.json");
    edit_plan(&p, &unbalanced, |v| {
        let ops = v["programs"][0]["ops"].as_array_mut().unwrap();
        let i = ops.iter().position(|o| o["op"] == "wait").unwrap();
        ops.remove(i);
    });
    assert_eq!(code(&cmd(&["validate", "--plan", path_str(&unbalanced)])), 0);
    let o = cmd(&["lint", "--plan", path_str(&unbalanced)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("warning"), "{}", stdout(&o));

    let pretty = dir.path().join("pretty.json");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
    std::fs::write(&pretty, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let o = cmd(&["lint", "--plan", path_str(&pretty)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("canonical"));
}

const SWEEP: &[&str] = &["--min-bytes", "1024", "--max-bytes", "1048576", "--factor", "4"];

#[test]
fn bench_csv_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("a.csv");
    let mut args = vec!["bench", "--ranks", "8", "--collective", "allreduce,allgather", "--csv", path_str(&csv)];
    args.extend_from_slice(SWEEP);
    assert_eq!(code(&cmd(&args)), 0);
    let first = std::fs::read(&csv).unwrap();
    assert_eq!(code(&cmd(&args)), 0);
    assert_eq!(first, std::fs::read(&csv).unwrap());

    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("algo,collective,bytes,latency_us,algobw_gbps,selected"));
    assert!(text.contains("2pr,allreduce,1048576,"));
    assert!(text.contains("ring_ag,allgather,"));

    // stdout carries the same bytes
    let mut args = vec!["bench", "--ranks", "8", "--collective", "allreduce,allgather"];
    args.extend_from_slice(SWEEP);
    assert_eq!(cmd(&args).stdout, text.as_bytes());
}

fn latency(csv: &str, algo: &str, bytes: u64) -> f64 {
    let prefix = format!("{algo},allreduce,{bytes},");
    let line = csv.lines().find(|l| l.starts_with(&prefix)).expect("row present");
    line.split(',').nth(3).unwrap().parse().unwrap()
}

#[test]
fn config_overrides_reach_timing() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let slow = dir.path().join("slow.json");
    std::fs::write(
        &slow,
        r#"{"topology": {"nodes": 2, "gpus_per_node": 4}, "cost": {"beta_inter_gbps": 4.894}}"#,
    )
    .unwrap();

    let bench = |cfg: &Path| {
        let mut args = vec!["bench", "--nodes", "2", "--ranks", "8", "--config", path_str(cfg)];
        args.extend_from_slice(SWEEP);
        let o = cmd(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    let base = bench(&empty);
    let no_cfg = {
        let mut args = vec!["bench", "--nodes", "2", "--ranks", "8"];
        args.extend_from_slice(SWEEP);
        stdout(&cmd(&args))
    };
    assert_eq!(base, no_cfg, "empty config means defaults");

    let slowed = bench(&slow);
    let (a, b) = (latency(&base, "2ph-hb", 1 << 20), latency(&slowed, "2ph-hb", 1 << 20));
    // each rank ships at least its 1/8 share across nodes once; at a tenth
    // of the bandwidth that alone costs an extra 131072 B / 4894 B/us
    let floor = 131072.0 / 4894.0 - 131072.0 / 48940.0;
    assert!(b - a >= floor, "inter-node bandwidth cut by 10x: {a} -> {b}");
}

#[test]
fn config_topology_sets_default_world() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"topology": {"nodes": 2, "gpus_per_node": 2}}"#).unwrap();
    let o = cmd(&["run", "--config", path_str(&cfg), "--algo", "2ph-hb", "--elems", "16", "--check-oracle"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("4 ranks"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{\n  \"cost\": {\"beta_interr_gbps\": 1.0}\n}").unwrap();
    let o = cmd(&["run", "--config", path_str(&cfg), "--algo", "1pa"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("error[E_CONFIG]"), "{err}");
    assert!(err.contains("beta_interr_gbps"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn seed_from_environment_and_flag() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_commforge"));
        c.args(["run", "--algo", "1pa", "--ranks", "2", "--elems", "4"]);
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        match env {
            Some(e) => c.env("COMMFORGE_SEED", e),
            None => c.env_remove("COMMFORGE_SEED"),
        };
        c.output().unwrap()
    };
    assert_eq!(code(&run(Some("17"), None)), 0);
    let o = run(Some("not-a-number"), None);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("error[E_CONFIG]"));
    // the flag wins over the environment only once the environment parses
    assert_eq!(code(&run(Some("3"), Some("9"))), 0);
    assert_eq!(code(&cmd(&["run", "--algo", "1pa", "--seed", "-1"])), 2);
}
