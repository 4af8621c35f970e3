use std::fs;
use std::process::Command;

fn tool() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptm-tomolab"))
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 4\nsigmaa = 0.1\n").unwrap();
    let out = tool().args(["gen-gateset", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn inverted_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = tool()
        .args(["gen-gateset", "--p-min", "1e-3", "--p-max", "1e-6", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimates_without_hints_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("e.txt");
    fs::write(&est, "").unwrap();
    let out = tool().args(["reconstruct", "--estimates"]).arg(&est).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gateset_then_reconstruct_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    ok(tool().args(["gen-gateset", "--seed", "9", "--sets", "2", "--out"]).arg(d));
    let gs = d.join("gateset.csv");
    let text = fs::read_to_string(&gs).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# config_hash=")));

    let first = d.join("first");
    ok(tool().args(["reconstruct", "--seed", "9", "--set", "1", "--emit-estimates", "--gateset"]).arg(&gs).arg("--out").arg(&first));
    for f in ["reconstruction.csv", "quadruple_traces.csv", "diagnostics.csv", "distances.csv", "estimates.txt"] {
        assert!(first.join(f).exists(), "{f}");
    }

    // Per-gate rates of set 1 as hints; gate 0 is the frame.
    let rates: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && l.starts_with("1,"))
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap())
        .collect();
    assert_eq!(rates.len(), 7);
    let replay = d.join("replay");
    ok(tool()
        .args(["reconstruct", "--estimates"])
        .arg(first.join("estimates.txt"))
        .args(["--p-hints", &rates.join(","), "--out"])
        .arg(&replay));
    let body = |p: &std::path::Path| {
        fs::read_to_string(p.join("reconstruction.csv")).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect::<Vec<_>>()
    };
    assert_eq!(body(&first), body(&replay));
}
