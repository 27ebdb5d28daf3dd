use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ibrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibrisk"))
        .args(args)
        .env("SIM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "n_banks = 10\nn_firms = 10\ninitial_household_cash = 120\nmax_timesteps = 150\n";

#[test]
fn run_writes_record_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = ibrisk(&["run", "--config", path(&cfg), "--out", path(out), "--seed", "4", "--mode", "fast"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(record["seed"], 4);
    assert_eq!(record["mode"], "fast");
    let events = fs::read_to_string(a.join("events.ndjson")).unwrap();
    let first: serde_json::Value = serde_json::from_str(events.lines().next().unwrap()).unwrap();
    for key in ["t", "kind", "agents", "amount"] {
        assert!(first.get(key).is_some(), "event lacks {key}");
    }
    for f in ["run_record.json", "events.ndjson"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("o");
    let args = ["run", "--config", path(&cfg), "--out", path(&out)];
    assert_eq!(code(&ibrisk(&args)), 0);
    let again = ibrisk(&args);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&ibrisk(&forced)), 0);
}

#[test]
fn bad_config_lists_every_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(&cfg, "deposit_fraction = 1.5\ntau = 0\nno_such_key = 3\n").unwrap();
    let o = ibrisk(&["run", "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    for key in ["deposit_fraction", "tau", "no_such_key"] {
        assert!(err.contains(key), "{key} missing from: {err}");
    }
    let o = ibrisk(&["run", "--config", path(&dir.path().join("missing.toml"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ensemble_tables_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(&cfg, SMALL).unwrap();
    let run = |out: &Path, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_ibrisk"))
            .args(["ensemble", "--config", path(&cfg), "--out", path(out), "--runs", "2", "--seed", "5"])
            .args(["--mode", "normal", "--mode", "transparent"])
            .env("SIM_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a, "1");
    run(&b, "4");
    let csv = fs::read_to_string(a.join("ensemble.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,seed,mode,network,t_fd,censored,losses,cascade_size,efficiency,volume"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some("normal")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some("transparent")).count(), 2);
    assert!(rows[0].starts_with("0,5,normal,complete,"));
    let profile = fs::read_to_string(a.join("profile_transparent.csv")).unwrap();
    assert!(profile.starts_with("run_id,bank_rank_position,normalized_debtrank\n"));
    for f in ["ensemble.csv", "profile_normal.csv", "profile_transparent.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} depends on threads");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let eff = &summary["modes"]["normal"]["metrics"]["efficiency"];
    // both runs serve every request: a constant column has no shape
    assert!(eff["kurtosis"].is_null(), "{eff}");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ibrisk"))
        .args(["ensemble", "--runs", "1", "--out", path(dir.path())])
        .env("SIM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

fn centrality(dir: &Path, liabilities: &str, capital: &str) -> Output {
    let l = dir.join("l.csv");
    let c = dir.join("c.csv");
    fs::write(&l, liabilities).unwrap();
    fs::write(&c, capital).unwrap();
    ibrisk(&["centrality", "--liabilities", path(&l), "--capital", path(&c)])
}

#[test]
fn centrality_two_bank_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = centrality(dir.path(), "borrower,lender,amount\n0,1,4\n0,1,6\n", "bank,capital\n0,10\n1,10\n");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "bank_id,debtrank,katz,rank_debt,rank_katz");
    let row0: Vec<&str> = lines[1].split(',').collect();
    let row1: Vec<&str> = lines[2].split(',').collect();
    // duplicate rows sum to a 10-unit exposure, which wipes out bank 1
    assert_eq!((row0[1], row1[1]), ("1", "0"));
    assert_eq!((row0[3], row1[3]), ("1", "2"));
    assert_eq!((row0[4], row1[4]), ("1", "2"));
}

#[test]
fn centrality_without_liabilities() {
    let dir = tempfile::tempdir().unwrap();
    let o = centrality(dir.path(), "", "0,5\n1,5\n2,5\n");
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    for line in out.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("1"));
    }
}

#[test]
fn centrality_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = centrality(dir.path(), "borrower,lender,amount\n0,1,4\n1,x,2\n", "0,5\n1,5\n");
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":3:"), "{err}");
    let o = centrality(dir.path(), "0,1,4\n0,7,1\n", "0,5\n1,5\n");
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
    let o = centrality(dir.path(), "0,1\n", "0,5\n1,5\n");
    assert_eq!(code(&o), 2);
}
