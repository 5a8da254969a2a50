//! Black-box tests of the `mixzone` binary: argument handling, output
//! contracts, exit codes, and the shipped example scenarios.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixzone"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr is UTF-8")
}

#[track_caller]
fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "exit code (stdout: {:?}, stderr: {:?})",
        stdout_of(output),
        stderr_of(output)
    );
}

/// Pulls the value out of a `name: value` stdout line.
#[track_caller]
fn field(stdout: &str, name: &str) -> String {
    let prefix = format!("{name}: ");
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no `{name}:` line in {stdout:?}"))
        .to_string()
}

#[track_caller]
fn float_field(stdout: &str, name: &str) -> f64 {
    field(stdout, name).parse().expect("numeric field")
}

const TWO_GATE_SCENARIO: &str = r#"
id = "two-gate"
duration_s = 60.0

[zone]
transition = [[0.5, 0.5], [0.5, 0.5]]

[arrivals]
rate_per_s = 0.05
"#;

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[test]
fn validate_accepts_the_shipped_intersection_scenario() {
    let output = bin().arg("validate").arg(shipped("intersection.toml")).output().unwrap();
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);
    assert!(stdout.contains("scenario OK: 4 gates, fingerprint "), "{stdout}");
    assert!(stdout.contains("wmap_threshold = 0.1"), "{stdout}");
    // The echo is canonical: scalar arrival shorthand expands per gate.
    assert!(stdout.contains("rates_per_s = [0.05, 0.05, 0.05, 0.05]"), "{stdout}");
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for name in ["intersection.toml", "uniform_zone.toml", "low_traffic.toml"] {
        let output = bin().arg("validate").arg(shipped(name)).output().unwrap();
        assert_exit(&output, 0);
        assert!(stdout_of(&output).contains("scenario OK"), "{name}");
    }
}

#[test]
fn validate_rejects_a_non_stochastic_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"
[zone]
transition = [[0.5, 0.5], [0.6, 0.6]]
"#,
    )
    .unwrap();
    let output = bin().arg("validate").arg(&path).output().unwrap();
    assert_exit(&output, 2);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("row 2"), "{stderr}");
    assert!(stderr.contains("sums to"), "{stderr}");
}

#[test]
fn validate_echoes_the_default_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two_gate.toml");
    std::fs::write(&path, TWO_GATE_SCENARIO).unwrap();
    let output = bin().arg("validate").arg(&path).output().unwrap();
    assert_exit(&output, 0);
    // No threshold in the file: the echo shows the resolved 1/n default.
    assert!(stdout_of(&output).contains("wmap_threshold = 0.5"), "{}", stdout_of(&output));
}

#[test]
fn validate_round_trips_its_own_echo() {
    let first = bin().arg("validate").arg(shipped("intersection.toml")).output().unwrap();
    assert_exit(&first, 0);
    let stdout = stdout_of(&first);
    let (toml_echo, status_line) = stdout.split_once("scenario OK").expect("echo then status line");
    let fingerprint = status_line.rsplit(' ').next().unwrap().trim().to_string();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("echoed.toml");
    std::fs::write(&path, toml_echo).unwrap();
    let second = bin().arg("validate").arg(&path).output().unwrap();
    assert_exit(&second, 0);
    assert!(
        stdout_of(&second).contains(&fingerprint),
        "the echoed scenario must keep the fingerprint {fingerprint}"
    );
}

// ---------------------------------------------------------------------------
// wmap
// ---------------------------------------------------------------------------

fn parse_normalized(stdout: &str) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    let mut in_section = false;
    for line in stdout.lines() {
        if line == "normalized weights:" {
            in_section = true;
            continue;
        }
        if in_section {
            let Some(rest) = line.trim_start().strip_prefix("gate ") else { break };
            let (_, cells) = rest.split_once('|').expect("gate row");
            rows.push(cells.split_whitespace().map(|v| v.parse().unwrap()).collect());
        }
    }
    rows
}

#[test]
fn wmap_reproduces_the_worked_example() {
    let output = bin()
        .arg("wmap")
        .arg(shipped("intersection.toml"))
        .args(["--ingress", "10,3,6,8", "--egress", "7,10,9,8"])
        .output()
        .unwrap();
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);

    let rows = parse_normalized(&stdout);
    let expected = [
        [0.000030, 0.898446, 0.089845, 0.011680],
        [0.036122, 0.051331, 0.684411, 0.228137],
        [0.015385, 0.852071, 0.014201, 0.118343],
        [0.009096, 0.698605, 0.291086, 0.001213],
    ];
    assert_eq!(rows.len(), 4);
    for (i, row) in expected.iter().enumerate() {
        for (j, want) in row.iter().enumerate() {
            assert!(
                (rows[i][j] - want).abs() <= 0.001,
                "normalized[{i}][{j}] printed {} want {want}",
                rows[i][j]
            );
        }
    }

    assert!(stdout.contains("raw-weight evaluations: 16"), "{stdout}");
    assert!(
        stdout.contains("triggering pairs: (1,1) (1,3) (1,4) (2,1) (2,2) (3,1) (3,3) (4,1) (4,4)"),
        "{stdout}"
    );
    assert!(stdout.contains("gate 2 | ingress +7, egress +0"), "{stdout}");
    assert!(stderr_of(&output).is_empty(), "no warnings for a populated zone");
}

#[test]
fn wmap_rejects_count_lists_of_the_wrong_length() {
    let output = bin()
        .arg("wmap")
        .arg(shipped("intersection.toml"))
        .args(["--ingress", "1,2", "--egress", "7,10,9,8"])
        .output()
        .unwrap();
    assert_exit(&output, 2);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("ingress"), "{stderr}");
    assert!(stderr.contains('4'), "{stderr}");
}

#[test]
fn wmap_flags_every_row_of_an_empty_zone() {
    let output = bin().arg("wmap").arg(shipped("intersection.toml")).output().unwrap();
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);
    let stderr = stderr_of(&output);

    assert_eq!(
        stderr.lines().filter(|l| l.contains("degenerate")).count(),
        4,
        "one warning per empty ingress lane: {stderr}"
    );
    let pairs_line = stdout.lines().find(|l| l.contains("triggering pairs:")).unwrap();
    assert_eq!(pairs_line.matches('(').count(), 16, "every pair triggers: {pairs_line}");
    for g in 1..=4 {
        assert!(
            stdout.contains(&format!("gate {g} | ingress +10, egress +10")),
            "empty lanes pad to capacity: {stdout}"
        );
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn simulate_writes_empty_traces_without_arrivals() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quiet.toml");
    std::fs::write(
        &path,
        r#"
id = "quiet"
duration_s = 120.0
activation = false

[zone]
transition = [[0.5, 0.5], [0.5, 0.5]]

[arrivals]
rate_per_s = 0.0
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = bin().arg("simulate").arg(&path).arg("--out").arg(&out).output().unwrap();
    assert_exit(&output, 0);
    assert_eq!(field(&stdout_of(&output), "observations"), "0");
    assert_eq!(std::fs::read(out.join("observations.csv")).unwrap(), b"");
    assert_eq!(std::fs::read(out.join("ground_truth.csv")).unwrap(), b"");
}

#[test]
fn simulate_respects_seed_and_policy_flags() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path, extra: &[&str]| {
        let output = bin()
            .arg("simulate")
            .arg(shipped("low_traffic.toml"))
            .arg("--out")
            .arg(out)
            .args(extra)
            .output()
            .unwrap();
        assert_exit(&output, 0);
        std::fs::read(out.join("observations.csv")).unwrap()
    };
    let base = run(&dir.path().join("base"), &[]);
    let reseeded = run(&dir.path().join("seeded"), &["--seed", "7"]);
    let repoliced =
        run(&dir.path().join("policy"), &["--policy", "most-probable-exit", "--seed", "7"]);
    assert_ne!(base, reseeded, "--seed must reroll the trace");
    assert_ne!(reseeded, repoliced, "--policy must change decoy pairing");
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

/// One real vehicle crossing gate 1 → gate 2 in 15 s.
const LONE_OBSERVATIONS: &str = "0,1,ingress,caffe0\n15,2,egress,caffe1\n";
const LONE_TRUTH: &str = "caffe1,caffe0,real\n";

fn write_trace(dir: &Path, obs: &str, truth: &str) -> (PathBuf, PathBuf) {
    let obs_path = dir.join("observations.csv");
    let truth_path = dir.join("ground_truth.csv");
    std::fs::write(&obs_path, obs).unwrap();
    std::fs::write(&truth_path, truth).unwrap();
    (obs_path, truth_path)
}

fn attack(obs_path: &Path, truth_path: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("attack")
        .arg(shipped("intersection.toml"))
        .arg("--obs")
        .arg(obs_path)
        .arg("--truth")
        .arg(truth_path)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn attack_links_a_lone_vehicle_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, truth_path) = write_trace(dir.path(), LONE_OBSERVATIONS, LONE_TRUTH);
    let report = dir.path().join("report.csv");
    let output =
        attack(&obs_path, &truth_path, &["--report", report.to_str().unwrap(), "--label", "lone"]);
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);

    assert_eq!(field(&stdout, "accuracy_ml"), "1.000000");
    assert_eq!(field(&stdout, "mean_entropy_bits"), "0.000000");
    assert_eq!(field(&stdout, "mean_degree"), "1.000000");
    assert_eq!(field(&stdout, "decoy_capture_rate"), "0.000000");
    assert_eq!(field(&stdout, "ml_links"), "1");
    assert_eq!(field(&stdout, "feasible_mappings"), "1");

    let report_text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = report_text.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one row: {report_text}");
    assert!(lines[0].starts_with("scenario_id,fingerprint,seed,"), "{report_text}");
    assert!(lines[1].starts_with("lone,"), "{report_text}");
}

#[test]
fn attack_reports_higher_entropy_once_decoys_pad_the_lane() {
    let dir = tempfile::tempdir().unwrap();
    let (lone_obs, lone_truth) = write_trace(dir.path(), LONE_OBSERVATIONS, LONE_TRUTH);
    let lone = attack(&lone_obs, &lone_truth, &[]);
    assert_exit(&lone, 0);
    let lone_entropy = float_field(&stdout_of(&lone), "mean_entropy_bits");

    // The same crossing plus two decoy entities on the same gates; all
    // three ingress observations are time-feasible for the real egress.
    let padded_dir = dir.path().join("padded");
    std::fs::create_dir(&padded_dir).unwrap();
    let (padded_obs, padded_truth) = write_trace(
        &padded_dir,
        "0,1,ingress,caffe0\n\
         1,1,ingress,decaf0\n\
         2,1,ingress,decaf2\n\
         15,2,egress,caffe1\n\
         16,2,egress,decaf1\n\
         17,2,egress,decaf3\n",
        "caffe1,caffe0,real\ndecaf1,decaf0,virtual\ndecaf3,decaf2,virtual\n",
    );
    let padded = attack(&padded_obs, &padded_truth, &[]);
    assert_exit(&padded, 0);
    let stdout = stdout_of(&padded);

    assert!(
        float_field(&stdout, "mean_entropy_bits") > lone_entropy,
        "decoys must add candidate confusion: {stdout}"
    );
    assert!(float_field(&stdout, "accuracy_ml") <= 1.0);
    assert_eq!(field(&stdout, "entities"), "1 real, 2 virtual");
}

#[test]
fn attack_survives_an_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, truth_path) = write_trace(dir.path(), "", "");
    let output = attack(&obs_path, &truth_path, &[]);
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);
    assert!(stdout.contains("observations: 0"), "{stdout}");
    assert!(stdout.contains("empty trace; nothing to attack"), "{stdout}");
}

#[test]
fn attack_rejects_malformed_observations() {
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, truth_path) =
        write_trace(dir.path(), "0,1,ingress,caffe0\nnot-a-time,2,egress,x\n", LONE_TRUTH);
    let output = attack(&obs_path, &truth_path, &[]);
    assert_exit(&output, 2);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("observations.csv:2"), "{stderr}");
}

#[test]
fn attack_epsilon_prunes_unlikely_transitions() {
    // Gate 1 → gate 1 has probability 0.01 in the intersection matrix;
    // an epsilon above that leaves the pair infeasible.
    let dir = tempfile::tempdir().unwrap();
    let (obs_path, truth_path) =
        write_trace(dir.path(), "0,1,ingress,caffe0\n15,1,egress,caffe1\n", LONE_TRUTH);

    let kept = attack(&obs_path, &truth_path, &[]);
    assert_exit(&kept, 0);
    assert_eq!(field(&stdout_of(&kept), "ml_links"), "1");

    let pruned = attack(&obs_path, &truth_path, &["--epsilon", "0.05"]);
    assert_exit(&pruned, 0);
    let stdout = stdout_of(&pruned);
    assert_eq!(field(&stdout, "ml_links"), "0", "{stdout}");
    assert_eq!(field(&stdout, "accuracy_ml"), "0.000000");
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// A scenario small enough that sweep cells finish in milliseconds.
fn fast_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("fast.toml");
    std::fs::write(
        &path,
        r#"
id = "fast"
duration_s = 120.0

[zone]
wmap_threshold = 0.1
transition = [
    [0.01, 0.30, 0.30, 0.39],
    [0.19, 0.01, 0.40, 0.40],
    [0.39, 0.10, 0.01, 0.50],
    [0.60, 0.09, 0.30, 0.01],
]

[arrivals]
rate_per_s = 0.03
"#,
    )
    .unwrap();
    path
}

fn data_rows(stdout: &str) -> Vec<&str> {
    stdout.lines().skip(1).filter(|l| !l.is_empty()).collect()
}

#[test]
fn sweep_compares_activation_arms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let output = bin()
        .arg("sweep")
        .arg(fast_scenario(dir.path()))
        .args(["--axis", "activation", "--seeds", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);
    assert!(stdout.starts_with("axis,value,seeds,"), "{stdout}");

    let rows = data_rows(&stdout);
    assert_eq!(rows.len(), 2, "{stdout}");
    assert!(rows[0].starts_with("activation,off,3,"), "{stdout}");
    assert!(rows[1].starts_with("activation,on,3,"), "{stdout}");

    // The off arm mints no decoys; the on arm must.
    let virtual_mean = |row: &str| -> f64 { row.rsplit(',').next().unwrap().parse().unwrap() };
    assert_eq!(virtual_mean(rows[0]), 0.0, "{stdout}");
    assert!(virtual_mean(rows[1]) > 0.0, "{stdout}");

    let written = std::fs::read_to_string(&out).unwrap();
    assert_eq!(written.lines().count(), 3, "header plus two rows: {written}");
}

#[test]
fn sweep_walks_threshold_values() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("sweep")
        .arg(fast_scenario(dir.path()))
        .args(["--axis", "threshold", "--values", "0.05,0.2,0.6", "--seeds", "2"])
        .output()
        .unwrap();
    assert_exit(&output, 0);
    let stdout = stdout_of(&output);
    let rows = data_rows(&stdout);
    assert_eq!(rows.len(), 3, "{stdout}");
    for (row, value) in rows.iter().zip(["0.05", "0.2", "0.6"]) {
        assert!(row.starts_with(&format!("threshold,{value},2,")), "{stdout}");
        let virtual_mean: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(virtual_mean > 0.0, "activation stays on across the sweep: {stdout}");
    }
}

#[test]
fn sweep_requires_values_for_numeric_axes() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("sweep")
        .arg(fast_scenario(dir.path()))
        .args(["--axis", "arrival-rate", "--seeds", "2"])
        .output()
        .unwrap();
    assert_exit(&output, 2);
    assert!(stderr_of(&output).contains("--values"), "{}", stderr_of(&output));
}

#[test]
fn sweep_rejects_out_of_range_values() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("sweep")
        .arg(fast_scenario(dir.path()))
        .args(["--axis", "threshold", "--values", "1.5", "--seeds", "2"])
        .output()
        .unwrap();
    assert_exit(&output, 2);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("between 0 and 1"), "{stderr}");
}
