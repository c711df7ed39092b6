use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delaycont"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn events(csv: &str) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).filter(|e| !e.is_empty()).collect()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn eq_branch_reports_hopf_and_branch_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eq-branch", "--model", "enso", "--free", "k0", "--range", "0:3", "--fix", "d_k=0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("branch.csv")).unwrap();
    let ev = events(&csv);
    let at = |label: &str| -> f64 {
        let e = ev.iter().find(|e| e.starts_with(label)).unwrap_or_else(|| panic!("no {label} in {ev:?}"));
        e.split('@').nth(1).unwrap().parse().unwrap()
    };
    assert!((at("hopf@") - 1.426).abs() < 0.01);
    assert!((at("branch-point@") - 2.526).abs() < 1e-3);
    for f in ["spectra.csv", "merges.csv", "branch.restart", "config.echo", "versions.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn floquet_reports_torus_and_period_doubling() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["floquet", "--model", "enso", "--fix", "k0=1.8", "--free", "d_k", "--range", "0:2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("branch.csv")).unwrap();
    let ev = events(&csv);
    assert!(ev.contains(&"torus@1.659".to_string()), "{ev:?}");
    assert!(ev.contains(&"period-doubling@1.814".to_string()), "{ev:?}");
}

#[test]
fn simulate_from_zero_history_stays_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--model", "enso", "--fix", "k0=1.8,d_k=0", "--history", "const:0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let h = column(&csv, "h");
    assert!(h.len() > 1000);
    assert!(h.iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn reruns_are_bit_identical_and_echo_rereads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["po-branch", "--fix", "d_k=0", "--free", "k0", "--range", "0:2", "--set", "max_points=40"];
    assert!(run(&args, a.path()).status.success());
    let echo = a.path().join("config.echo");
    let rerun = ["po-branch", "--config", echo.to_str().unwrap(), "--free", "k0", "--range", "0:2"];
    assert!(run(&rerun, b.path()).status.success());
    for f in ["branch.csv", "multipliers.csv", "branch.restart", "orbits/last.json", "versions.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn errors_are_single_lines_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], i32, &str); 5] = [
        (&["eq-branch", "--free", "k0", "--range", "0:3", "--fix", "nope=1"], 2, "config"),
        (&["eq-branch", "--free", "k0", "--range", "3:0"], 2, "config"),
        (&["spectrum", "--model", "lorenz"], 2, "config"),
        (&["eq-branch", "--bogus"], 2, "config"),
        (&["tongue", "--root", "/nonexistent/root.json"], 4, "missing-input"),
    ];
    for (args, code, kind) in cases {
        let o = run(args, dir.path());
        assert_eq!(o.status.code(), Some(code), "{args:?}");
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error kind={kind}: ")), "{err}");
    }
    // nothing was written for the failed runs
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn tongue_chain_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve");
    let args = [
        "bif-curve", "--fix", "k0=1.8", "--free", "d_k", "--range", "0:3", "--kind", "torus", "--second", "k0",
        "--second-range", "0.5:3.5",
    ];
    let o = run(&args, &curve);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let roots = std::fs::read_to_string(curve.join("roots.csv")).unwrap();
    assert!(roots.lines().any(|l| l.starts_with("1,3,")));

    let tongue = dir.path().join("tongue");
    let root = curve.join("roots/1-3.json");
    let args = ["tongue", "--root", root.to_str().unwrap(), "--set", "circles=4", "--box", "0:2.5,0.5:3"];
    let o = run(&args, &tongue);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(tongue.join("tongue.csv")).unwrap();
    assert_eq!(t.lines().next(), Some("d_k,k0,side"));
    let sides = column(&t, "side");
    assert!(sides.iter().any(|s| s == "left") && sides.iter().any(|s| s == "right"));

    let plots = dir.path().join("plots");
    for (kind, input) in [("tongue", tongue.join("tongue.csv")), ("phases", tongue.join("phases.csv"))] {
        let o = run(&["plot", "--kind", kind, "--input", input.to_str().unwrap()], &plots);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let svg = std::fs::read_to_string(plots.join(format!("{kind}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"));
    }
}

#[test]
fn default_output_root_from_environment() {
    let root = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_delaycont"))
        .args(["spectrum", "--fix", "k0=1"])
        .env("DELAYCONT_OUT", root.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let s = std::fs::read_to_string(root.path().join("spectrum/spectrum.csv")).unwrap();
    assert_eq!(s.lines().next(), Some("re,im,kind"));
}
