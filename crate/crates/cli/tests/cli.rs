use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kpzkp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpzkp")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", dir.to_str().unwrap()]);
    kpzkp(&all)
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let k = lines.next().unwrap().split(',').position(|h| h == name).expect("column present");
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn tw_table_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["tw-table"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("tw-table.csv")).unwrap();
    let r = column(&csv, "r");
    assert_eq!(r.len(), 101);
    assert!((r[0] + 6.0).abs() < 1e-12 && (r[100] - 4.0).abs() < 1e-12);
    for name in ["f_gue", "f_goe"] {
        let f = column(&csv, name);
        assert!(f.windows(2).all(|w| w[1] > w[0]), "{name} not increasing");
    }
    assert!(column(&csv, "f_gue")[100] > 0.9999);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tw-table.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn malformed_config_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "command = det-eval\n[kernel]\nt = abc\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run_in(&out_dir, &["det-eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(kpzkp(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(kpzkp(&["tw-table", "--bogus"]).status.code(), Some(2));
    assert_eq!(kpzkp(&["det-eval", "--quad-n", "0"]).status.code(), Some(2));
    assert_eq!(kpzkp(&["det-eval", "--tolerance", "-1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("other.conf");
    fs::write(&cfg, "command = tw-table\n").unwrap();
    assert_eq!(kpzkp(&["det-eval", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn library_domain_errors_exit_two_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("neg.conf");
    fs::write(&cfg, "[kernel]\nt = -1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run_in(&out_dir, &["det-eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.join("det-eval.csv").exists() && !out_dir.join("det-eval.json").exists());
}

#[test]
fn exceeded_threshold_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["bracket-check", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bracket-check.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mc.conf");
    fs::write(&cfg, "seed = 11\n[sweep]\ntimes = 0.1, 0.05\n[quadrature]\nn = 32\nsamples = 2000\n").unwrap();
    for d in [&a, &b] {
        let out = run_in(d.path(), &["scattering-limit", "--config", cfg.to_str().unwrap()]);
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["scattering-limit.csv", "scattering-limit.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let csv = fs::read_to_string(a.path().join("scattering-limit.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,entry,fredholm_value,oracle_value,abs_err");
}

#[test]
fn cheap_checks_pass_with_their_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["det-eval", "path-integral-check", "bracket-check", "matrix-kp"] {
        let out = run_in(dir.path(), &[cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(dir.path().join(format!("{cmd}.json")).exists());
    }
}

#[test]
fn print_config_round_trips() {
    let out = kpzkp(&["solve-kp", "--print-config", "--quad-n", "40"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("command = solve-kp\n") && text.contains("\nn = 40\n"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("echo.conf");
    fs::write(&cfg, &text).unwrap();
    let again = kpzkp(&["solve-kp", "--print-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cmd = text
            .lines()
            .find_map(|l| l.strip_prefix("command"))
            .and_then(|l| l.split('=').nth(1))
            .map(str::trim)
            .expect("config names its command");
        let out = kpzkp(&[cmd, "--print-config", "--config", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        n += 1;
    }
    assert_eq!(n, 14);
}
