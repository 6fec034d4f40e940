use std::path::Path;
use std::process::{Command, Output};

fn ratetip(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratetip"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn singularities_of_the_exponential_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[forcing]\nkind = \"exponential-approach\"\nepsilon = 1.0\n").unwrap();
    let o = ratetip(&["singularities", "--config", cfg.to_str().unwrap()], dir.path());
    assert_ok(&o);
    let (header, rows) = read_csv(&dir.path().join("singularities.csv"));
    assert_eq!(
        header,
        ["kind", "x_star", "tau_star", "lambda_star", "xi1_re", "xi1_im", "xi2_re", "xi2_im", "residual"]
    );
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "folded-saddle");
    let lambda: f64 = rows[0][3].parse().unwrap();
    assert!((lambda - 2.0).abs() < 1e-9, "{lambda}");
}

#[test]
fn critical_rate_is_one_fifth() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&ratetip(&["critical-rate"], dir.path()));
    let (header, rows) = read_csv(&dir.path().join("critical_rate.csv"));
    assert_eq!(
        header,
        ["delta", "epsilon_c_singular", "epsilon_c_empirical", "e_delta", "order_exponent"]
    );
    let eps: f64 = rows[0][1].parse().unwrap();
    assert!((eps - 0.2).abs() < 1e-9, "{eps}");
}

#[test]
fn slow_rate_grid_is_fully_tracked() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&ratetip(&["reproduce", "fig2a", "--grid", "10,10"], dir.path()));
    let fig = dir.path().join("fig2a");
    let (header, rows) = read_csv(&fig.join("scan.csv"));
    assert_eq!(header, ["lambda", "x", "verdict"]);
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r[2] == "tracked"));
    let svg = std::fs::read_to_string(fig.join("scan.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 100);
    // the effective configuration is written next to the artifacts
    let run = std::fs::read_to_string(fig.join("run.toml")).unwrap();
    assert!(run.contains("n_x = 10"), "{run}");
}

#[test]
fn headers_of_the_remaining_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&ratetip(&["manifold"], d));
    assert_ok(&ratetip(&["trajectory", "--comoving", "--x0", "-0.1"], d));
    let header = |name: &str| read_csv(&d.join(name)).0;
    assert_eq!(header("fold.csv"), ["lambda", "x_fold", "y_fold", "x_stable", "y_stable"]);
    assert_eq!(header("manifold.csv"), ["lambda", "x", "y", "stability"]);
    assert_eq!(
        header("trajectory.csv"),
        ["id", "kind", "t", "tau", "lambda", "x", "y", "x_rel", "y_rel"]
    );
    let text = std::fs::read_to_string(d.join("trajectory.csv")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# verdict="), "{text}");
    let (h, rows) = read_csv(&d.join("trajectory_summary.csv"));
    assert_eq!(h[0], "verdict");
    assert_eq!(rows.len(), 1);
}

#[test]
fn unknown_config_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "workers = 1\n\n[scan]\nn_x = 4\nnx = 5\n").unwrap();
    let o = ratetip(&["scan", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:5:1"), "{err}");
    assert!(!dir.path().join("scan.csv").exists());
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    // a system without a fold violates the model assumptions
    let cfg = dir.path().join("linear.toml");
    std::fs::write(&cfg, "[system]\nname = \"linear\"\nf = [[1, 0, 0, -1.0], [0, 1, 0, 1.0], [0, 0, 1, 1.0]]\ng = [[1, 0, 0, -1.0]]\n").unwrap();
    let o = ratetip(&["singularities", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // an empty bracket is a numerical failure
    let cfg = dir.path().join("bracket.toml");
    std::fs::write(&cfg, "[critical_rate]\nbracket = [0.3, 0.5]\n").unwrap();
    let o = ratetip(&["critical-rate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ratetip(&["scan", "--grid", "ten"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = ratetip(&["scan", "--epsilon", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["manifold", "singularities", "critical-rate", "trajectory", "canards", "scan", "reproduce"] {
        let o = ratetip(&[sub, "--help"], dir.path());
        assert!(o.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage: ratetip"), "{sub}");
    }
}
