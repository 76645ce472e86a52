use std::path::Path;
use std::process::{Command, Output};

fn fermigap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fermigap"))
        .args(args)
        .current_dir(dir)
        .env_remove("FERMIGAP_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

const CHAIN6: &str = "[lattice]\nL = 6\n[onebody]\nstaggered = 0.8\ndimerization = 0.3\n[run]\ng_grid = [0.0, 0.02, 0.05]\n";

#[test]
fn car_suite_on_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fermigap(dir.path(), &["verify", "--suite", "car", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("PASS [ 1] car"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("o/verify.csv")).unwrap();
    assert!(csv.starts_with("# fermigap verify csv v1\nid,suite,check,value,limit,relation,passed\n"));
}

#[test]
fn malformed_config_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[lattice]\nL = 1\n");
    let out = fermigap(dir.path(), &["spectrum", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lattice.L"));

    let cfg = write(dir.path(), "unknown.toml", "[run]\nbetas = [1.0]\n");
    let out = fermigap(dir.path(), &["alpha", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run") && err.contains("betas"), "{err}");
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fermigap(dir.path(), &["verify", "--suite", "everything"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--suite"));
}

#[test]
fn failing_suite_exits_1_and_names_the_check() {
    // The series prefactor comparison in the tree suite does not hold for ||V|| > 0.
    let dir = tempfile::tempdir().unwrap();
    let out = fermigap(dir.path(), &["verify", "--suite", "cayley", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assertion failed: cayley: series_sum"));
}

#[test]
fn gap_scan_csv_gap_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain6.toml", CHAIN6);
    let out = fermigap(dir.path(), &["gap-scan", "--config", &cfg, "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/gap_scan.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# fermigap gap_scan csv v1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "gap").unwrap();
    let cert = header.iter().position(|h| *h == "certified").unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 3);
    let gaps: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{gaps:?}");
    }
    assert!(rows.iter().all(|r| r[cert] == "true"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain6.toml", CHAIN6);
    for out in ["a", "b"] {
        let o = fermigap(dir.path(), &["report", "--config", &cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let sequential = fermigap(dir.path(), &["report", "--config", &cfg, "--out", "c", "--sequential"]);
    assert_eq!(sequential.status.code(), Some(0));
    for name in ["spectrum.csv", "alpha.csv", "gap_scan.csv", "correlations.csv", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(name)).unwrap(), "{name}");
        assert_eq!(a, std::fs::read(dir.path().join("c").join(name)).unwrap(), "{name} (sequential)");
    }
}

#[test]
fn report_on_two_sites_includes_trotter_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = fermigap(dir.path(), &["report", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/trotter.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert_eq!(
        lines.next(),
        Some("N,z_trace_re,z_trace_im,z_grassmann_re,z_grassmann_im,diff,snapped_t")
    );
    for line in lines {
        let diff: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        let z: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(diff <= 1e-8 * z.abs().max(1.0), "{line}");
    }
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fermigap"))
        .args(["verify", "--suite", "car", "--out", "o"])
        .current_dir(dir.path())
        .env("FERMIGAP_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--threads"));
}
