//! Scenario files: the on-disk description of a full experiment.
//!
//! A scenario is a TOML document with named sections mirroring the
//! simulator's configuration types. Everything except the transition
//! matrix is optional; omitted fields take documented defaults and the
//! resolved values are echoed back by `mixzone validate`. Loading always
//! validates — a `Scenario` in hand is a runnable experiment.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use mixzone::sim::{ArrivalModel, PairingPolicy, SimError, SimParams};
use mixzone::zone::{
    GateId, PairTravelTime, TransitionMatrix, TravelTimeModel, TravelTimeShape, ZoneConfig,
    ZoneError,
};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_DURATION_S: f64 = 600.0;
pub const DEFAULT_LANE_CAPACITY: u32 = 10;
pub const DEFAULT_WINDOW_DURATION_S: f64 = 60.0;
pub const DEFAULT_WINDOW_STEP_S: f64 = 5.0;
pub const DEFAULT_TRAVEL_MIN_S: f64 = 10.0;
pub const DEFAULT_TRAVEL_MAX_S: f64 = 20.0;

#[derive(Error, Debug)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Zone(#[from] ZoneError),
    #[error("invalid scenario: {0}")]
    Sim(#[from] SimError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Raw file schema (what serde sees)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    id: Option<String>,
    seed: Option<u64>,
    duration_s: Option<f64>,
    activation: Option<bool>,
    pairing_policy: Option<String>,
    zone: ZoneSection,
    arrivals: Option<ArrivalsSection>,
    adversary: Option<AdversarySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoneSection {
    transition: Vec<Vec<f64>>,
    lane_capacity: Option<u32>,
    wmap_threshold: Option<f64>,
    window_duration_s: Option<f64>,
    window_step_s: Option<f64>,
    travel: Option<TravelSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TravelSection {
    min_s: Option<f64>,
    max_s: Option<f64>,
    shape: Option<String>,
    mean_s: Option<f64>,
    stddev_s: Option<f64>,
    #[serde(default, rename = "pair")]
    pairs: Vec<PairSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairSection {
    from: usize,
    to: usize,
    min_s: f64,
    max_s: f64,
    shape: Option<String>,
    mean_s: Option<f64>,
    stddev_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrivalsSection {
    rate_per_s: Option<f64>,
    rates_per_s: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdversarySection {
    min_probability: Option<f64>,
    dwell_s: Option<f64>,
    horizon_s: Option<f64>,
}

// ---------------------------------------------------------------------------
// Resolved scenario
// ---------------------------------------------------------------------------

/// One gate pair's travel-time override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelOverride {
    pub from: GateId,
    pub to: GateId,
    pub pair: PairTravelTime,
}

/// Base travel-time distribution plus per-pair overrides, kept in the
/// form the file uses so scenarios round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelSpec {
    pub base: PairTravelTime,
    pub overrides: Vec<TravelOverride>,
}

impl TravelSpec {
    pub fn model(&self, n_gates: usize) -> Result<TravelTimeModel, ZoneError> {
        let mut model = TravelTimeModel::from_pairs(n_gates, vec![self.base; n_gates * n_gates])?;
        for o in &self.overrides {
            model = model.with_pair(o.from, o.to, o.pair)?;
        }
        Ok(model)
    }
}

/// Adversary pruning configuration carried by the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryDefaults {
    pub min_probability: f64,
    pub dwell_s: f64,
    pub horizon_s: Option<f64>,
}

impl Default for AdversaryDefaults {
    fn default() -> Self {
        AdversaryDefaults { min_probability: 0.0, dwell_s: 0.0, horizon_s: None }
    }
}

/// A fully resolved, validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub duration_s: f64,
    pub activation: bool,
    pub pairing_policy: PairingPolicy,
    pub lane_capacity: u32,
    pub wmap_threshold: f64,
    pub window_duration_s: f64,
    pub window_step_s: f64,
    pub transition: TransitionMatrix,
    pub travel: TravelSpec,
    pub arrival_rates: Vec<f64>,
    pub adversary: AdversaryDefaults,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Scenario::resolve(file)
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        Scenario::resolve(file)
    }

    fn resolve(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        let transition = TransitionMatrix::new(file.zone.transition)?;
        let n = transition.n_gates();

        let travel = resolve_travel(file.zone.travel.unwrap_or_else(empty_travel_section), n)?;
        let arrival_rates = resolve_arrivals(file.arrivals, n)?;
        let adversary = resolve_adversary(file.adversary)?;
        let pairing_policy = match file.pairing_policy.as_deref() {
            None | Some("triggering-pair") => PairingPolicy::TriggeringPair,
            Some("most-probable-exit") => PairingPolicy::MostProbableExit,
            Some(other) => {
                return Err(ScenarioError::Invalid(format!(
                    "unknown pairing_policy {other:?} (expected \"triggering-pair\" or \
                     \"most-probable-exit\")"
                )))
            }
        };

        let scenario = Scenario {
            id: file.id.unwrap_or_default(),
            seed: file.seed.unwrap_or(DEFAULT_SEED),
            duration_s: file.duration_s.unwrap_or(DEFAULT_DURATION_S),
            activation: file.activation.unwrap_or(true),
            pairing_policy,
            lane_capacity: file.zone.lane_capacity.unwrap_or(DEFAULT_LANE_CAPACITY),
            wmap_threshold: file.zone.wmap_threshold.unwrap_or(1.0 / n as f64),
            window_duration_s: file.zone.window_duration_s.unwrap_or(DEFAULT_WINDOW_DURATION_S),
            window_step_s: file.zone.window_step_s.unwrap_or(DEFAULT_WINDOW_STEP_S),
            transition,
            travel,
            arrival_rates,
            adversary,
        };
        // Building the runnable pieces runs every component validation.
        scenario.sim_params()?;
        if !(scenario.duration_s >= 0.0 && scenario.duration_s.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "duration_s must be finite and non-negative, got {}",
                scenario.duration_s
            )));
        }
        Ok(scenario)
    }

    pub fn n_gates(&self) -> usize {
        self.transition.n_gates()
    }

    pub fn zone_config(&self) -> Result<ZoneConfig, ZoneError> {
        ZoneConfig::new(
            self.lane_capacity,
            self.transition.clone(),
            self.travel.model(self.n_gates())?,
            self.window_duration_s,
            self.window_step_s,
            self.wmap_threshold,
        )
    }

    pub fn sim_params(&self) -> Result<SimParams, ScenarioError> {
        let params = SimParams {
            zone: self.zone_config()?,
            arrivals: ArrivalModel::new(self.arrival_rates.clone())?,
            duration_s: self.duration_s,
            activation_enabled: self.activation,
            pairing_policy: self.pairing_policy,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn adversary_settings(&self) -> mixzone::adversary::AdversarySettings {
        mixzone::adversary::AdversarySettings {
            min_probability: self.adversary.min_probability,
            dwell_s: self.adversary.dwell_s,
            horizon_s: self.adversary.horizon_s,
        }
    }

    /// Canonical TOML: every field explicit, overrides sorted, stable
    /// formatting. `load(to_toml(s)) == s` for every valid scenario.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "id = {:?}", self.id);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "duration_s = {}", fmt_f64(self.duration_s));
        let _ = writeln!(out, "activation = {}", self.activation);
        let _ = writeln!(out, "pairing_policy = \"{}\"", policy_name(self.pairing_policy));
        let _ = writeln!(out);
        let _ = writeln!(out, "[zone]");
        let _ = writeln!(out, "lane_capacity = {}", self.lane_capacity);
        let _ = writeln!(out, "wmap_threshold = {}", fmt_f64(self.wmap_threshold));
        let _ = writeln!(out, "window_duration_s = {}", fmt_f64(self.window_duration_s));
        let _ = writeln!(out, "window_step_s = {}", fmt_f64(self.window_step_s));
        let _ = writeln!(out, "transition = [");
        for row in self.transition.rows() {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(out, "    [{}],", cells.join(", "));
        }
        let _ = writeln!(out, "]");
        let _ = writeln!(out);
        let _ = writeln!(out, "[zone.travel]");
        out.push_str(&travel_pair_fields(&self.base_pair()));
        let mut overrides = self.travel.overrides.clone();
        overrides.sort_by_key(|o| (o.from, o.to));
        for o in &overrides {
            let _ = writeln!(out);
            let _ = writeln!(out, "[[zone.travel.pair]]");
            let _ = writeln!(out, "from = {}", o.from.get());
            let _ = writeln!(out, "to = {}", o.to.get());
            out.push_str(&travel_pair_fields(&o.pair));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "[arrivals]");
        let rates: Vec<String> = self.arrival_rates.iter().map(|&r| fmt_f64(r)).collect();
        let _ = writeln!(out, "rates_per_s = [{}]", rates.join(", "));
        let _ = writeln!(out);
        let _ = writeln!(out, "[adversary]");
        let _ = writeln!(out, "min_probability = {}", fmt_f64(self.adversary.min_probability));
        let _ = writeln!(out, "dwell_s = {}", fmt_f64(self.adversary.dwell_s));
        if let Some(h) = self.adversary.horizon_s {
            let _ = writeln!(out, "horizon_s = {}", fmt_f64(h));
        }
        out
    }

    fn base_pair(&self) -> PairTravelTime {
        self.travel.base
    }

    /// Short content hash identifying the experiment setup, independent
    /// of the run seed and display id. Report rows carry it so any row
    /// can be traced back to the exact configuration that produced it.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.seed = 0;
        canonical.id = String::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

fn empty_travel_section() -> TravelSection {
    TravelSection {
        min_s: None,
        max_s: None,
        shape: None,
        mean_s: None,
        stddev_s: None,
        pairs: Vec::new(),
    }
}

fn shape_from_parts(
    shape: Option<&str>,
    mean_s: Option<f64>,
    stddev_s: Option<f64>,
    context: &str,
) -> Result<TravelTimeShape, ScenarioError> {
    match shape {
        None | Some("uniform") => {
            if mean_s.is_some() || stddev_s.is_some() {
                return Err(ScenarioError::Invalid(format!(
                    "{context}: mean_s/stddev_s only apply to shape = \"truncated-normal\""
                )));
            }
            Ok(TravelTimeShape::Uniform)
        }
        Some("truncated-normal") => {
            let (Some(mean_s), Some(stddev_s)) = (mean_s, stddev_s) else {
                return Err(ScenarioError::Invalid(format!(
                    "{context}: shape \"truncated-normal\" requires mean_s and stddev_s"
                )));
            };
            Ok(TravelTimeShape::TruncatedNormal { mean_s, stddev_s })
        }
        Some(other) => Err(ScenarioError::Invalid(format!(
            "{context}: unknown shape {other:?} (expected \"uniform\" or \"truncated-normal\")"
        ))),
    }
}

fn resolve_travel(section: TravelSection, n_gates: usize) -> Result<TravelSpec, ScenarioError> {
    let base = PairTravelTime {
        min_s: section.min_s.unwrap_or(DEFAULT_TRAVEL_MIN_S),
        max_s: section.max_s.unwrap_or(DEFAULT_TRAVEL_MAX_S),
        shape: shape_from_parts(
            section.shape.as_deref(),
            section.mean_s,
            section.stddev_s,
            "zone.travel",
        )?,
    };
    let mut overrides = Vec::with_capacity(section.pairs.len());
    for p in &section.pairs {
        let context = format!("zone.travel.pair {}→{}", p.from, p.to);
        let gate = |g: usize| {
            GateId::checked(g, n_gates).ok_or_else(|| {
                ScenarioError::Invalid(format!("{context}: gates must be in 1..={n_gates}"))
            })
        };
        overrides.push(TravelOverride {
            from: gate(p.from)?,
            to: gate(p.to)?,
            pair: PairTravelTime {
                min_s: p.min_s,
                max_s: p.max_s,
                shape: shape_from_parts(p.shape.as_deref(), p.mean_s, p.stddev_s, &context)?,
            },
        });
    }
    overrides.sort_by_key(|o| (o.from, o.to));
    if let Some(pair) = overrides.windows(2).find(|w| (w[0].from, w[0].to) == (w[1].from, w[1].to))
    {
        return Err(ScenarioError::Invalid(format!(
            "duplicate travel override for gate pair {}→{}",
            pair[0].from, pair[0].to
        )));
    }
    let spec = TravelSpec { base, overrides };
    spec.model(n_gates)?; // validate every distribution now
    Ok(spec)
}

fn resolve_arrivals(
    section: Option<ArrivalsSection>,
    n_gates: usize,
) -> Result<Vec<f64>, ScenarioError> {
    let Some(section) = section else {
        return Ok(vec![0.0; n_gates]);
    };
    match (section.rate_per_s, section.rates_per_s) {
        (Some(_), Some(_)) => Err(ScenarioError::Invalid(
            "arrivals: give either rate_per_s or rates_per_s, not both".into(),
        )),
        (Some(rate), None) => Ok(vec![rate; n_gates]),
        (None, Some(rates)) => {
            if rates.len() != n_gates {
                return Err(ScenarioError::Invalid(format!(
                    "arrivals.rates_per_s has {} entries for {} gates",
                    rates.len(),
                    n_gates
                )));
            }
            Ok(rates)
        }
        (None, None) => Ok(vec![0.0; n_gates]),
    }
}

fn resolve_adversary(
    section: Option<AdversarySection>,
) -> Result<AdversaryDefaults, ScenarioError> {
    let Some(section) = section else {
        return Ok(AdversaryDefaults::default());
    };
    let defaults = AdversaryDefaults {
        min_probability: section.min_probability.unwrap_or(0.0),
        dwell_s: section.dwell_s.unwrap_or(0.0),
        horizon_s: section.horizon_s,
    };
    if !(defaults.min_probability >= 0.0 && defaults.min_probability <= 1.0) {
        return Err(ScenarioError::Invalid(format!(
            "adversary.min_probability must be in [0, 1], got {}",
            defaults.min_probability
        )));
    }
    if !(defaults.dwell_s >= 0.0 && defaults.dwell_s.is_finite()) {
        return Err(ScenarioError::Invalid(format!(
            "adversary.dwell_s must be finite and non-negative, got {}",
            defaults.dwell_s
        )));
    }
    if let Some(h) = defaults.horizon_s {
        if !(h > 0.0 && h.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "adversary.horizon_s must be positive and finite, got {h}"
            )));
        }
    }
    Ok(defaults)
}

pub fn policy_name(policy: PairingPolicy) -> &'static str {
    match policy {
        PairingPolicy::TriggeringPair => "triggering-pair",
        PairingPolicy::MostProbableExit => "most-probable-exit",
    }
}

fn travel_pair_fields(pair: &PairTravelTime) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "min_s = {}", fmt_f64(pair.min_s));
    let _ = writeln!(out, "max_s = {}", fmt_f64(pair.max_s));
    match pair.shape {
        TravelTimeShape::Uniform => {
            let _ = writeln!(out, "shape = \"uniform\"");
        }
        TravelTimeShape::TruncatedNormal { mean_s, stddev_s } => {
            let _ = writeln!(out, "shape = \"truncated-normal\"");
            let _ = writeln!(out, "mean_s = {}", fmt_f64(mean_s));
            let _ = writeln!(out, "stddev_s = {}", fmt_f64(stddev_s));
        }
    }
    out
}

/// Shortest round-tripping decimal; integral values keep a trailing `.0`
/// so the TOML value stays a float.
fn fmt_f64(value: f64) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{value:.1}")
    } else {
        format!("{value}")
    }
}
