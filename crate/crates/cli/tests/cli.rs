use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safe-olm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_both_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = run(&[
        "run",
        "--game",
        "kuhn",
        "--alice",
        "phased",
        "--bob",
        "bluffj",
        "--rounds",
        "50",
        "--reps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("rep,t,realized,expected,cum_expected,phase,alpha\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 50);
    assert!(dir.path().join("m.regret.csv").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        let o = run(&[
            "run",
            "--game",
            "rps",
            "--bob",
            "exp3",
            "--rounds",
            "300",
            "--reps",
            "3",
            "--seed",
            "9",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[1]));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("match.cfg");
    std::fs::write(
        &cfg,
        "# matrix run\ngame = pennies\nbob = omd\nrounds = 999\nreps = 1\n",
    )
    .unwrap();
    let out = dir.path().join("o.csv");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--rounds",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn report_reads_back_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    assert!(run(&[
        "run",
        "--game",
        "rps",
        "--bob",
        "rock",
        "--rounds",
        "64",
        "--reps",
        "2",
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let o = run(&["report", out.to_str().unwrap(), "--aggregate"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("t,mean,sd,n\n1,"));
    assert!(text.contains("final t             64"));
    assert!(text.contains("comparator regret"));
}

#[test]
fn report_rejects_a_tampered_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    assert!(run(&[
        "run",
        "--game",
        "pennies",
        "--bob",
        "omd",
        "--rounds",
        "5",
        "--reps",
        "1",
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[3].split(',').map(String::from).collect();
    cols[4] = "12.5".into();
    lines[3] = cols.join(",");
    std::fs::write(&out, lines.join("\n") + "\n").unwrap();
    let o = run(&["report", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn solve_certifies_matrix_and_kuhn() {
    for game in ["rps", "pennies", "kuhn"] {
        let o = run(&["solve", game]);
        assert!(o.status.success(), "{game}");
        let text = stdout(&o);
        let gap: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("exploitability"))
            .map(|v| v.trim().parse().unwrap())
            .expect("certificate line");
        assert!(gap <= 1e-3, "{game}: {gap}");
    }
}

#[test]
fn lowerbound_runs_with_positive_sign() {
    let o = run(&[
        "lowerbound",
        "--delta",
        "0.2",
        "--sign",
        "+",
        "--rounds",
        "200",
        "--reps",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("max phase"));
}

#[test]
fn bad_input_exits_nonzero_with_a_diagnostic() {
    for args in [
        vec!["run", "--game", "chess"],
        vec!["run", "--rounds", "0"],
        vec!["run", "--game", "rps", "--bob", "bluffj"],
        vec!["solve", "go"],
        vec!["report", "/nonexistent/file.csv"],
    ] {
        let o = run(&args);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{args:?}: {err}");
    }
}
