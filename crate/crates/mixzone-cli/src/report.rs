//! Report emission: append-only CSV rows for attack runs and aggregated
//! sweep cells.

use std::io::Write as _;
use std::path::Path;

use mixzone::adversary::PrivacyReport;

pub const REPORT_HEADER: &str = "scenario_id,fingerprint,seed,activation,accuracy_ml,\
accuracy_greedy,mean_entropy_bits,mean_degree,decoy_capture_rate,real_entities,virtual_entities";

/// One attack run's outcome, keyed for exact reproduction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario_id: String,
    pub fingerprint: String,
    pub seed: u64,
    pub activation: bool,
    pub accuracy_ml: f64,
    pub accuracy_greedy: f64,
    pub mean_entropy_bits: f64,
    pub mean_degree: f64,
    pub decoy_capture_rate: f64,
    pub real_entities: usize,
    pub virtual_entities: usize,
}

impl ReportRow {
    pub fn new(
        scenario_id: &str,
        fingerprint: &str,
        seed: u64,
        activation: bool,
        report: &PrivacyReport,
    ) -> Self {
        ReportRow {
            scenario_id: scenario_id.to_string(),
            fingerprint: fingerprint.to_string(),
            seed,
            activation,
            accuracy_ml: report.linkage_accuracy_ml,
            accuracy_greedy: report.linkage_accuracy_greedy,
            mean_entropy_bits: report.mean_entropy_bits,
            mean_degree: report.mean_degree,
            decoy_capture_rate: report.decoy_capture_rate,
            real_entities: report.real_entities,
            virtual_entities: report.virtual_entities,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.scenario_id,
            self.fingerprint,
            self.seed,
            self.activation,
            self.accuracy_ml,
            self.accuracy_greedy,
            self.mean_entropy_bits,
            self.mean_degree,
            self.decoy_capture_rate,
            self.real_entities,
            self.virtual_entities,
        )
    }
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ReportRow]) -> std::io::Result<()> {
    let needs_header = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if needs_header {
        writeln!(file, "{REPORT_HEADER}")?;
    }
    for row in rows {
        writeln!(file, "{}", row.to_csv_line())?;
    }
    Ok(())
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let variance =
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, variance.sqrt())
}

pub const SWEEP_HEADER: &str = "axis,value,seeds,accuracy_ml_mean,accuracy_ml_std,\
accuracy_greedy_mean,accuracy_greedy_std,entropy_mean,entropy_std,degree_mean,degree_std,\
decoy_capture_mean,decoy_capture_std,real_mean,virtual_mean";

/// One sweep cell aggregated over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seeds: usize,
    pub accuracy_ml: (f64, f64),
    pub accuracy_greedy: (f64, f64),
    pub entropy: (f64, f64),
    pub degree: (f64, f64),
    pub decoy_capture: (f64, f64),
    pub real_mean: f64,
    pub virtual_mean: f64,
}

impl SweepRow {
    pub fn aggregate(axis: &str, value: &str, runs: &[ReportRow]) -> Self {
        let collect = |f: fn(&ReportRow) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
        SweepRow {
            axis: axis.to_string(),
            value: value.to_string(),
            seeds: runs.len(),
            accuracy_ml: mean_std(&collect(|r| r.accuracy_ml)),
            accuracy_greedy: mean_std(&collect(|r| r.accuracy_greedy)),
            entropy: mean_std(&collect(|r| r.mean_entropy_bits)),
            degree: mean_std(&collect(|r| r.mean_degree)),
            decoy_capture: mean_std(&collect(|r| r.decoy_capture_rate)),
            real_mean: mean_std(&collect(|r| r.real_entities as f64)).0,
            virtual_mean: mean_std(&collect(|r| r.virtual_entities as f64)).0,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3}",
            self.axis,
            self.value,
            self.seeds,
            self.accuracy_ml.0,
            self.accuracy_ml.1,
            self.accuracy_greedy.0,
            self.accuracy_greedy.1,
            self.entropy.0,
            self.entropy.1,
            self.degree.0,
            self.degree.1,
            self.decoy_capture.0,
            self.decoy_capture.1,
            self.real_mean,
            self.virtual_mean,
        )
    }
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)
}
