//! The five CLI commands, factored away from argument parsing so the
//! logic is callable (and testable) without spawning a process.
//!
//! Exit-code contract: 0 success, 1 runtime failure (I/O while writing,
//! internal errors), 2 validation or usage failure (bad scenario, bad
//! flags, malformed input files).

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mixzone::adversary::{anonymity_metrics, AdversarySettings, GroundTruth, ScoreMatrix};
use mixzone::sim::{simulate, PairingPolicy, Trace};
use mixzone::wmap::{compute_wmap_instrumented, plan_activation, WMap};
use mixzone::zone::StateMatrix;

use crate::report::{append_rows, write_sweep, ReportRow, SweepRow, SWEEP_HEADER};
use crate::scenario::{Scenario, ScenarioError};
use crate::trace_io::{
    read_ground_truth, read_observations, write_ground_truth, write_observations, TraceIoError,
};

#[derive(Debug)]
pub enum AppError {
    /// Bad inputs: scenario, flags, or trace files. Exit code 2.
    Validation(String),
    /// Failures after validation: writing outputs, internal errors. Exit 1.
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            AppError::Validation(m) | AppError::Runtime(m) => m,
        }
    }
}

impl From<ScenarioError> for AppError {
    fn from(err: ScenarioError) -> Self {
        AppError::Validation(err.to_string())
    }
}

impl From<TraceIoError> for AppError {
    fn from(err: TraceIoError) -> Self {
        AppError::Validation(err.to_string())
    }
}

fn runtime(err: impl std::fmt::Display) -> AppError {
    AppError::Runtime(err.to_string())
}

fn validation(err: impl std::fmt::Display) -> AppError {
    AppError::Validation(err.to_string())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn cmd_validate(scenario_path: &Path) -> Result<(), AppError> {
    let scenario = Scenario::load(scenario_path)?;
    print!("{}", scenario.to_toml());
    println!();
    println!("scenario OK: {} gates, fingerprint {}", scenario.n_gates(), scenario.fingerprint());
    Ok(())
}

// ---------------------------------------------------------------------------
// wmap
// ---------------------------------------------------------------------------

fn parse_counts(raw: &str, what: &str, n_gates: usize) -> Result<Vec<u32>, AppError> {
    let counts: Vec<u32> =
        raw.split(',').map(|f| f.trim().parse()).collect::<Result<_, _>>().map_err(|_| {
            validation(format!("--{what} wants comma-separated counts, got {raw:?}"))
        })?;
    if counts.len() != n_gates {
        return Err(validation(format!(
            "--{what} has {} entries for {} gates",
            counts.len(),
            n_gates
        )));
    }
    Ok(counts)
}

fn print_wmap(wmap: &WMap) {
    println!("raw weights:");
    for (i, row) in wmap.raw().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4e}")).collect();
        println!("  gate {} | {}", i + 1, cells.join(" "));
    }
    println!("normalized weights:");
    for (i, row) in wmap.normalized().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("  gate {} | {}", i + 1, cells.join(" "));
    }
}

pub fn cmd_wmap(
    scenario_path: &Path,
    ingress: Option<&str>,
    egress: Option<&str>,
    threshold: Option<f64>,
) -> Result<(), AppError> {
    let scenario = Scenario::load(scenario_path)?;
    let mut config = scenario.zone_config().map_err(validation)?;
    if let Some(t) = threshold {
        config = config.with_threshold(t).map_err(validation)?;
    }
    let n = config.n_gates();

    let state = match (ingress, egress) {
        (None, None) => StateMatrix::zeros(n),
        (Some(i), Some(e)) => {
            StateMatrix::new(parse_counts(i, "ingress", n)?, parse_counts(e, "egress", n)?)
                .map_err(validation)?
        }
        _ => return Err(validation("--ingress and --egress must be given together")),
    };

    let (wmap, stats) =
        compute_wmap_instrumented(&state, config.transition()).map_err(validation)?;
    for gate in wmap.degenerate_rows() {
        eprintln!(
            "warning: gate {gate} has an empty ingress lane; its weight row is degenerate and \
             every pair triggers"
        );
    }

    println!("state: ingress {:?}, egress {:?}", state.ingress(), state.egress());
    print_wmap(&wmap);
    println!("raw-weight evaluations: {}", stats.raw_weight_evaluations);

    let plan = plan_activation(&wmap, &state, &config).map_err(validation)?;
    println!("activation plan (threshold {}):", config.wmap_threshold());
    if plan.triggering_pairs().is_empty() {
        println!("  no gate pair fell below the threshold; nothing to activate");
        return Ok(());
    }
    let pairs: Vec<String> =
        plan.triggering_pairs().iter().map(|(i, j)| format!("({i},{j})")).collect();
    println!("  triggering pairs: {}", pairs.join(" "));
    for g in 0..n {
        println!(
            "  gate {} | ingress +{}, egress +{}",
            g + 1,
            plan.ingress_counts()[g],
            plan.egress_counts()[g]
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(
    scenario_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    policy: Option<PairingPolicy>,
) -> Result<(), AppError> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(policy) = policy {
        scenario.pairing_policy = policy;
    }
    let seed = seed.unwrap_or(scenario.seed);
    let fingerprint = scenario.fingerprint();
    let params = scenario.sim_params()?;
    let trace = simulate(&params, seed, &fingerprint).map_err(validation)?;

    std::fs::create_dir_all(out_dir).map_err(runtime)?;
    let obs_path = out_dir.join("observations.csv");
    let truth_path = out_dir.join("ground_truth.csv");
    write_observations(&obs_path, trace.observations()).map_err(runtime)?;
    write_ground_truth(&truth_path, trace.links()).map_err(runtime)?;

    let real = trace.real_entities();
    let virt = trace.virtual_entities();
    println!("observations: {}", trace.observations().len());
    println!("entities: {} ({real} real, {virt} virtual)", trace.links().len());
    println!("seed: {seed}");
    println!("fingerprint: {fingerprint}");
    println!("wrote {}", obs_path.display());
    println!("wrote {}", truth_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct AttackOverrides {
    pub epsilon: Option<f64>,
    pub dwell: Option<f64>,
    pub horizon: Option<f64>,
    pub report: Option<PathBuf>,
    pub label: Option<String>,
    pub seed: Option<u64>,
}

fn attack_settings(
    scenario: &Scenario,
    overrides: &AttackOverrides,
) -> Result<AdversarySettings, AppError> {
    let mut settings = scenario.adversary_settings();
    if let Some(e) = overrides.epsilon {
        if !(0.0..=1.0).contains(&e) {
            return Err(validation(format!("--epsilon must be in [0, 1], got {e}")));
        }
        settings.min_probability = e;
    }
    if let Some(d) = overrides.dwell {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(validation(format!("--dwell must be finite and non-negative, got {d}")));
        }
        settings.dwell_s = d;
    }
    if let Some(h) = overrides.horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(validation(format!("--horizon must be positive and finite, got {h}")));
        }
        settings.horizon_s = Some(h);
    }
    Ok(settings)
}

pub fn cmd_attack(
    scenario_path: &Path,
    obs_path: &Path,
    truth_path: &Path,
    overrides: &AttackOverrides,
) -> Result<(), AppError> {
    let scenario = Scenario::load(scenario_path)?;
    let settings = attack_settings(&scenario, &overrides.clone())?;
    let observations = read_observations(obs_path)?;
    let links = read_ground_truth(truth_path)?;

    if observations.is_empty() {
        println!("observations: 0");
        println!("empty trace; nothing to attack");
        return Ok(());
    }

    let travel = scenario.travel.model(scenario.n_gates()).map_err(validation)?;
    let scores = ScoreMatrix::build(&observations, &scenario.transition, &travel, &settings);
    let truth = GroundTruth::from_links(&links);
    let report = anonymity_metrics(&scores, &truth);

    println!(
        "observations: {} (ingress {}, egress {})",
        observations.len(),
        scores.n_ingress(),
        scores.n_egress()
    );
    println!("entities: {} real, {} virtual", report.real_entities, report.virtual_entities);
    println!("accuracy_ml: {:.6}", report.linkage_accuracy_ml);
    println!("accuracy_greedy: {:.6}", report.linkage_accuracy_greedy);
    println!("decoy_capture_rate: {:.6}", report.decoy_capture_rate);
    println!("mean_entropy_bits: {:.6}", report.mean_entropy_bits);
    println!("mean_degree: {:.6}", report.mean_degree);
    println!("ml_links: {}", report.ml_links);
    if let Some(count) = report.feasible_mappings {
        println!("feasible_mappings: {count}");
    }

    if let Some(report_path) = &overrides.report {
        let label = overrides.label.clone().unwrap_or_else(|| scenario.id.clone());
        let row = ReportRow::new(
            &label,
            &scenario.fingerprint(),
            overrides.seed.unwrap_or(scenario.seed),
            scenario.activation,
            &report,
        );
        append_rows(report_path, &[row]).map_err(runtime)?;
        println!("appended 1 row to {}", report_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    ArrivalRate,
    Threshold,
    Activation,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::ArrivalRate => "arrival-rate",
            SweepAxis::Threshold => "threshold",
            SweepAxis::Activation => "activation",
        }
    }
}

/// One simulate-plus-attack run; the unit of sweep parallelism.
fn run_cell(scenario: &Scenario, seed: u64) -> Result<ReportRow, AppError> {
    let fingerprint = scenario.fingerprint();
    let params = scenario.sim_params()?;
    let trace = simulate(&params, seed, &fingerprint).map_err(validation)?;
    let report = attack_trace(scenario, &trace)?;
    Ok(ReportRow::new(&scenario.id, &fingerprint, seed, scenario.activation, &report))
}

fn attack_trace(
    scenario: &Scenario,
    trace: &Trace,
) -> Result<mixzone::adversary::PrivacyReport, AppError> {
    let travel = scenario.travel.model(scenario.n_gates()).map_err(validation)?;
    let scores = ScoreMatrix::build(
        trace.observations(),
        &scenario.transition,
        &travel,
        &scenario.adversary_settings(),
    );
    let truth = GroundTruth::from_links(trace.links());
    Ok(anonymity_metrics(&scores, &truth))
}

fn sweep_values(axis: SweepAxis, values: Option<&str>) -> Result<Vec<String>, AppError> {
    match axis {
        SweepAxis::Activation => Ok(vec!["off".into(), "on".into()]),
        SweepAxis::ArrivalRate | SweepAxis::Threshold => {
            let raw = values
                .ok_or_else(|| validation(format!("axis {} requires --values", axis.name())))?;
            let parsed: Vec<f64> =
                raw.split(',').map(|f| f.trim().parse()).collect::<Result<_, _>>().map_err(
                    |_| validation(format!("--values wants comma-separated numbers, got {raw:?}")),
                )?;
            if parsed.is_empty() {
                return Err(validation("--values must not be empty"));
            }
            for v in &parsed {
                if !v.is_finite() {
                    return Err(validation(format!("axis values must be finite, got {v}")));
                }
            }
            Ok(parsed.into_iter().map(|v| v.to_string()).collect())
        }
    }
}

fn apply_axis(template: &Scenario, axis: SweepAxis, value: &str) -> Result<Scenario, AppError> {
    let mut scenario = template.clone();
    match axis {
        SweepAxis::ArrivalRate => {
            let rate: f64 = value.parse().expect("pre-parsed by sweep_values");
            scenario.arrival_rates = vec![rate; scenario.n_gates()];
        }
        SweepAxis::Threshold => {
            scenario.wmap_threshold = value.parse().expect("pre-parsed by sweep_values");
        }
        SweepAxis::Activation => scenario.activation = value == "on",
    }
    // Surface invalid axis values (negative rates, thresholds outside
    // (0,1)) before any cell runs.
    scenario.sim_params()?;
    Ok(scenario)
}

pub fn cmd_sweep(
    scenario_path: &Path,
    axis: SweepAxis,
    values: Option<&str>,
    seeds: u64,
    out: Option<&Path>,
) -> Result<(), AppError> {
    if seeds == 0 {
        return Err(validation("--seeds must be at least 1"));
    }
    let template = Scenario::load(scenario_path)?;
    let labels = sweep_values(axis, values)?;
    let scenarios = labels
        .iter()
        .map(|label| apply_axis(&template, axis, label))
        .collect::<Result<Vec<_>, _>>()?;

    let cells: Vec<(usize, u64)> =
        (0..labels.len()).flat_map(|v| (0..seeds).map(move |s| (v, template.seed + s))).collect();
    let runs: Vec<(usize, ReportRow)> = cells
        .into_par_iter()
        .map(|(v, seed)| run_cell(&scenarios[v], seed).map(|row| (v, row)))
        .collect::<Result<_, _>>()?;

    let mut aggregates = Vec::with_capacity(labels.len());
    for (v, label) in labels.iter().enumerate() {
        let rows: Vec<ReportRow> =
            runs.iter().filter(|(i, _)| *i == v).map(|(_, r)| r.clone()).collect();
        aggregates.push(SweepRow::aggregate(axis.name(), label, &rows));
    }

    println!("{SWEEP_HEADER}");
    for row in &aggregates {
        println!("{}", row.to_csv_line());
    }
    if let Some(path) = out {
        write_sweep(path, &aggregates).map_err(runtime)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
