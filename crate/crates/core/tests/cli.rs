use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use apfl::report::{read_metrics, read_summary, SUMMARY_HEADER};

fn apfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apfl")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "seed = 4
protocol = \"async-decay\"
[population]
groups = 2
clients_per_group = 2
samples_per_client = 60
[stop]
time_budget = 20.0
";

#[test]
fn run_writes_both_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = apfl(&["run", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = out_dir.join("metrics.csv");
    let rows = read_metrics(fs::File::open(&metrics).unwrap(), &metrics).unwrap();
    assert!(!rows.is_empty());
    let summary = read_summary(&out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].get("protocol"), "async-decay");
    assert_eq!(summary[0].get("clients"), "4");
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = apfl(&[
        "run",
        "--config",
        &cfg,
        "--protocol",
        "standalone",
        "--seed",
        "9",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let summary = read_summary(&out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary[0].get("protocol"), "standalone");
    assert_eq!(summary[0].get("seed"), "9");
    assert_eq!(summary[0].get("up_bytes"), "0");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(code(&apfl(&["run", "--config", &cfg, "--out-dir", d.to_str().unwrap()])), 0);
    }
    for f in ["metrics.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("no_seed.toml", "protocol = \"apfl\"\n", "seed"),
        ("asym.toml", "seed = 1\n[link]\nasymmetry = 0\n", "asymmetry"),
        ("unknown.toml", "seed = 1\nbogus = 3\n", "bogus"),
        ("proto.toml", "seed = 1\nprotocol = \"gossip\"\n", "gossip"),
    ];
    for (name, text, needle) in cases {
        let cfg = write(dir.path(), name, text);
        let out = apfl(&["run", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
        assert_eq!(code(&out), 1, "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{name}: {err}");
    }
    let missing = apfl(&["run", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(code(&missing), 1);
    let bad_mode = apfl(&["scenario", "A", "--broadcast-mode", "sometimes"]);
    assert_eq!(code(&bad_mode), 1);
    assert_eq!(code(&apfl(&["scenario", "Z"])), 1);
    assert_eq!(code(&apfl(&["launch"])), 1);
    assert_eq!(code(&apfl(&["--help"])), 0);
}

#[test]
fn compare_reports_missing_columns_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let header: Vec<&str> = SUMMARY_HEADER.iter().copied().filter(|c| *c != "q_max").collect();
    let row: Vec<&str> = header.iter().map(|_| "1").collect();
    let path = write(dir.path(), "summary.csv", &format!("{}\n{}\n", header.join(","), row.join(",")));
    let out = apfl(&["compare", &path]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("q_max"));
}

#[test]
fn compare_lines_up_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let mut summaries = Vec::new();
    for p in ["apfl", "sync-fedavg"] {
        let d = dir.path().join(p);
        let out = apfl(&["run", "--config", &cfg, "--protocol", p, "--out-dir", d.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        summaries.push(d.join("summary.csv").to_string_lossy().into_owned());
    }
    let out = apfl(&["compare", &summaries[0], &summaries[1]]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("protocol"));
    assert!(lines[1].starts_with("apfl"));
    assert!(lines[2].starts_with("sync-fedavg"));
}
