use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ruledfs"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn train_wine(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("wine.bundle");
    let wine = data("wine.csv");
    let mut args = vec!["train", "--data", wine.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", text(&o.stderr));
    out
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let o = run(&["benchmark", "--help"]);
    assert!(o.status.success());
    let help = text(&o.stdout);
    for flag in ["--budget", "--lambda", "--theta", "--repeats", "--expectation", "--value-source", "--max-depth", "--out"] {
        assert!(help.contains(flag), "{flag} missing");
    }
    assert!(help.contains("[default: 10]") && help.contains("[default: 0.1]") && help.contains("[default: fixed-reference]"));
    assert!(!help.contains("--inject-fault"));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let o = run(&["train", "--data", "missing.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("file not found: missing.csv"));

    assert_eq!(run(&["train", "--data", "x.csv", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["verify", "nonsense"]).status.code(), Some(1));
    let bins = run(&["train", "--data", data("wine.csv").to_str().unwrap(), "--bins", "1"]);
    assert_eq!(bins.status.code(), Some(1));
}

#[test]
fn train_writes_bundle_and_rules() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = train_wine(dir.path(), &[]);
    assert!(bundle.is_file());
    let rules = std::fs::read_to_string(dir.path().join("wine.rules.txt")).unwrap();
    assert!(rules.contains("R0:") && rules.contains("THEN"));
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"max_depth": 2, "seed": 4, "model": "cart"}"#).unwrap();
    let out = dir.path().join("b.bundle");
    let o = run(&[
        "train", "--config", cfg.to_str().unwrap(), "--data", data("wine.csv").to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--seed", "9",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["config"]["model"]["cart"]["max_depth"], 2);
    assert_eq!(json["config"]["seed"], 9);

    std::fs::write(&cfg, r#"{"max_dept": 2}"#).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--data", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("unknown key 'max_dept'"));
}

#[test]
fn benchmark_budget_one_gives_a_single_point_curve() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "benchmark", "--data", data("heart.csv").to_str().unwrap(), "--budget", "1", "--repeats", "1",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let run_dir = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    assert!(run_dir.file_name().unwrap().to_str().unwrap().ends_with("_seed0"));
    let curves = std::fs::read_to_string(run_dir.join("curves_heart.csv")).unwrap();
    assert_eq!(curves.lines().count(), 2, "{curves}");
    for f in ["summary.csv", "curves_heart.svg", "result.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn estimator_source_needs_a_trained_net() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = train_wine(dir.path(), &[]);
    let wine = data("wine.csv");
    for extra in [vec![], vec!["--bundle", bundle.to_str().unwrap()]] {
        let mut args = vec!["benchmark", "--data", wine.to_str().unwrap(), "--value-source", "estimator"];
        args.extend(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1));
        assert!(text(&o.stderr).contains("--estimator"));
    }
}

#[test]
fn verify_passes_and_reports_injected_faults() {
    let dd = data("");
    let o = run(&["verify", "--data-dir", dd.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", text(&o.stdout), text(&o.stderr));
    assert_eq!(text(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let o = run(&["verify", "gradient", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stdout).starts_with("FAIL gradient"));
}

#[test]
fn serve_refuses_invalid_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bundle");
    std::fs::write(&bad, "{\"version\": 1}").unwrap();
    let o = run(&["serve", "--bundle", bad.to_str().unwrap(), "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("refusing to start"));
}

#[cfg(unix)]
#[test]
fn serve_reports_ready_drains_on_sigterm_and_rejects_busy_ports() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = train_wine(dir.path(), &[]);
    let traces = dir.path().join("traces");
    let mut child = bin()
        .args(["serve", "--bundle", bundle.to_str().unwrap(), "--port", "0", "--trace-dir", traces.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut ready = String::new();
    stdout.read_line(&mut ready).unwrap();
    assert!(ready.contains("ready on http://"), "{ready}");
    let addr = ready.split("http://").nth(1).unwrap().split_whitespace().next().unwrap().to_string();

    let mut s = TcpStream::connect(&addr).unwrap();
    s.write_all(b"POST /sessions HTTP/1.1\r\nhost: x\r\ncontent-length: 0\r\nconnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");

    let port = addr.rsplit(':').next().unwrap();
    let busy = run(&["serve", "--bundle", bundle.to_str().unwrap(), "--port", port]);
    assert_eq!(busy.status.code(), Some(2));
    assert!(text(&busy.stderr).contains(&format!("port {port} on 127.0.0.1 is already in use")));

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert!(status.success(), "{status:?}");
    let mut rest = String::new();
    stdout.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("stopped"));
    assert_eq!(std::fs::read_dir(&traces).unwrap().count(), 1);
}
