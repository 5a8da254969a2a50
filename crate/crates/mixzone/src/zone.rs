//! Zone domain model: gates, lanes, exit probabilities, per-lane vehicle
//! counts, and gate-to-gate travel times.
//!
//! Everything here is a plain validated value. Constructors check the
//! invariants once and the types stay immutable afterwards, so the rest
//! of the crate can index matrices without re-checking bounds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Tolerance used when checking that transition-matrix rows sum to 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Validation failures for zone-level configuration.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum ZoneError {
    #[error("transition matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("transition matrix entry ({row},{col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("transition matrix row {row} sums to {sum:.12}, expected 1")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("{context}: got {actual}, expected {expected}")]
    DimensionMismatch { context: &'static str, actual: usize, expected: usize },
    #[error("wmap threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("window step must be positive and no larger than the window duration (duration {duration_s} s, step {step_s} s)")]
    InvalidWindow { duration_s: f64, step_s: f64 },
    #[error("a mix zone needs at least 2 gates, got {0}")]
    InvalidGateCount(usize),
    #[error("lane capacity must be at least 1")]
    InvalidCapacity,
    #[error("invalid travel time for gate pair ({from},{to}): {reason}")]
    InvalidTravelTime { from: usize, to: usize, reason: String },
}

/// 1-based gate index. Each gate has one ingress and one egress lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateId(usize);

impl GateId {
    /// Builds a gate id; indices start at 1.
    pub fn new(index: usize) -> Option<Self> {
        (index >= 1).then_some(GateId(index))
    }

    /// Builds a gate id, additionally checking it against a gate count.
    pub fn checked(index: usize, n_gates: usize) -> Option<Self> {
        (index >= 1 && index <= n_gates).then_some(GateId(index))
    }

    pub fn from_zero_based(index: usize) -> Self {
        GateId(index + 1)
    }

    /// The 1-based index as configured.
    pub fn get(self) -> usize {
        self.0
    }

    /// The matching 0-based matrix index.
    pub fn zero_based(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Direction of travel on a lane relative to the zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneDirection {
    Ingress,
    Egress,
}

impl LaneDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            LaneDirection::Ingress => "ingress",
            LaneDirection::Egress => "egress",
        }
    }
}

impl fmt::Display for LaneDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LaneDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ingress" => Ok(LaneDirection::Ingress),
            "egress" => Ok(LaneDirection::Egress),
            other => Err(format!("unknown lane direction `{other}`")),
        }
    }
}

/// Row-stochastic matrix of exit probabilities: entry `(i, j)` is the
/// probability that a vehicle entering at gate `i` leaves at gate `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    /// Validates and wraps a square, row-stochastic matrix.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ZoneError> {
        validate_transition_matrix(rows)
    }

    /// The matrix with every entry `1/n` (maximum mixing).
    pub fn uniform(n_gates: usize) -> Self {
        let p = 1.0 / n_gates as f64;
        TransitionMatrix { rows: vec![vec![p; n_gates]; n_gates] }
    }

    pub fn n_gates(&self) -> usize {
        self.rows.len()
    }

    /// Exit probability for the `(entry, exit)` gate pair.
    pub fn prob(&self, entry: GateId, exit: GateId) -> f64 {
        self.rows[entry.zero_based()][exit.zero_based()]
    }

    /// All exit probabilities for one entry gate.
    pub fn row(&self, entry: GateId) -> &[f64] {
        &self.rows[entry.zero_based()]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Checks that `rows` is square, non-negative, and that every row sums to
/// 1 within [`ROW_SUM_TOLERANCE`]. Row/column indices in errors are 1-based
/// to match gate numbering.
pub fn validate_transition_matrix(rows: Vec<Vec<f64>>) -> Result<TransitionMatrix, ZoneError> {
    let n = rows.len();
    if n == 0 {
        return Err(ZoneError::NotSquare { row: 1, len: 0, expected: 1 });
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(ZoneError::NotSquare { row: i + 1, len: row.len(), expected: n });
        }
        for (j, &value) in row.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(ZoneError::NegativeEntry { row: i + 1, col: j + 1, value });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ZoneError::NonStochasticRow { row: i + 1, sum });
        }
    }
    Ok(TransitionMatrix { rows })
}

/// Vehicle counts observed per lane over one evaluation window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMatrix {
    ingress: Vec<u32>,
    egress: Vec<u32>,
}

impl StateMatrix {
    /// Wraps per-gate ingress/egress counts; both vectors must have the
    /// same nonzero length.
    pub fn new(ingress: Vec<u32>, egress: Vec<u32>) -> Result<Self, ZoneError> {
        if ingress.is_empty() {
            return Err(ZoneError::InvalidGateCount(0));
        }
        if ingress.len() != egress.len() {
            return Err(ZoneError::DimensionMismatch {
                context: "state matrix egress count length",
                actual: egress.len(),
                expected: ingress.len(),
            });
        }
        Ok(StateMatrix { ingress, egress })
    }

    pub fn zeros(n_gates: usize) -> Self {
        StateMatrix { ingress: vec![0; n_gates], egress: vec![0; n_gates] }
    }

    pub fn n_gates(&self) -> usize {
        self.ingress.len()
    }

    pub fn ingress(&self) -> &[u32] {
        &self.ingress
    }

    pub fn egress(&self) -> &[u32] {
        &self.egress
    }

    pub fn ingress_at(&self, gate: GateId) -> u32 {
        self.ingress[gate.zero_based()]
    }

    pub fn egress_at(&self, gate: GateId) -> u32 {
        self.egress[gate.zero_based()]
    }
}

/// Shape of a gate-to-gate travel-time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TravelTimeShape {
    /// Uniform over the support.
    Uniform,
    /// Normal with the given parameters, truncated to the support.
    TruncatedNormal { mean_s: f64, stddev_s: f64 },
}

/// Travel-time distribution for one `(entry, exit)` gate pair, supported
/// on `[min_s, max_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTravelTime {
    pub min_s: f64,
    pub max_s: f64,
    pub shape: TravelTimeShape,
}

impl PairTravelTime {
    pub fn uniform(min_s: f64, max_s: f64) -> Self {
        PairTravelTime { min_s, max_s, shape: TravelTimeShape::Uniform }
    }

    pub fn truncated_normal(min_s: f64, max_s: f64, mean_s: f64, stddev_s: f64) -> Self {
        PairTravelTime {
            min_s,
            max_s,
            shape: TravelTimeShape::TruncatedNormal { mean_s, stddev_s },
        }
    }

    fn validate(&self, from: usize, to: usize) -> Result<(), ZoneError> {
        let fail = |reason: String| ZoneError::InvalidTravelTime { from, to, reason };
        if !(self.min_s > 0.0 && self.min_s.is_finite()) {
            return Err(fail(format!("minimum must be positive and finite, got {}", self.min_s)));
        }
        if !(self.max_s >= self.min_s && self.max_s.is_finite()) {
            return Err(fail(format!(
                "maximum must be finite and at least the minimum, got [{}, {}]",
                self.min_s, self.max_s
            )));
        }
        if let TravelTimeShape::TruncatedNormal { mean_s, stddev_s } = self.shape {
            if !(stddev_s > 0.0 && stddev_s.is_finite()) || !mean_s.is_finite() {
                return Err(fail(format!(
                    "truncated normal needs a finite mean and positive stddev, got mean {mean_s}, stddev {stddev_s}"
                )));
            }
            if self.support_mass() < 1e-12 {
                return Err(fail(format!(
                    "truncated normal support [{}, {}] carries negligible mass for mean {mean_s}, stddev {stddev_s}",
                    self.min_s, self.max_s
                )));
            }
        }
        Ok(())
    }

    /// Whether `dt` lies inside the support (ends inclusive).
    pub fn contains(&self, dt_s: f64) -> bool {
        dt_s >= self.min_s && dt_s <= self.max_s
    }

    fn width(&self) -> f64 {
        // Degenerate zero-width supports are treated as a nanosecond wide
        // so the density stays finite.
        (self.max_s - self.min_s).max(1e-9)
    }

    /// Probability mass the untruncated normal puts on the support.
    fn support_mass(&self) -> f64 {
        match self.shape {
            TravelTimeShape::Uniform => 1.0,
            TravelTimeShape::TruncatedNormal { mean_s, stddev_s } => {
                let normal = Normal::new(mean_s, stddev_s).expect("validated parameters");
                normal.cdf(self.max_s) - normal.cdf(self.min_s)
            }
        }
    }

    /// Probability density at `dt`; zero outside the support.
    pub fn density(&self, dt_s: f64) -> f64 {
        if !self.contains(dt_s) {
            return 0.0;
        }
        match self.shape {
            TravelTimeShape::Uniform => 1.0 / self.width(),
            TravelTimeShape::TruncatedNormal { mean_s, stddev_s } => {
                let mass = self.support_mass();
                if mass <= 0.0 {
                    return 0.0;
                }
                let z = (dt_s - mean_s) / stddev_s;
                let phi = (-0.5 * z * z).exp() / (stddev_s * (2.0 * std::f64::consts::PI).sqrt());
                phi / mass
            }
        }
    }

    /// Draws a travel time from the distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.shape {
            TravelTimeShape::Uniform => self.min_s + rng.gen::<f64>() * (self.max_s - self.min_s),
            TravelTimeShape::TruncatedNormal { mean_s, stddev_s } => {
                // Inverse-CDF restricted to the truncated band: exact and
                // always terminates, unlike rejection sampling.
                let normal = Normal::new(mean_s, stddev_s).expect("validated parameters");
                let lo = normal.cdf(self.min_s);
                let hi = normal.cdf(self.max_s);
                let u = lo + rng.gen::<f64>() * (hi - lo);
                normal
                    .inverse_cdf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
                    .clamp(self.min_s, self.max_s)
            }
        }
    }

    /// The same distribution with the support extended by `extra_s` at the
    /// top; the density renormalizes over the widened band.
    pub fn widened(&self, extra_s: f64) -> Self {
        PairTravelTime {
            min_s: self.min_s,
            max_s: self.max_s + extra_s.max(0.0),
            shape: self.shape,
        }
    }
}

/// Travel-time distributions for every `(entry, exit)` gate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeModel {
    n_gates: usize,
    pairs: Vec<PairTravelTime>, // row-major by entry gate
}

impl TravelTimeModel {
    /// The same uniform distribution for every pair.
    pub fn uniform(n_gates: usize, min_s: f64, max_s: f64) -> Result<Self, ZoneError> {
        Self::from_pairs(n_gates, vec![PairTravelTime::uniform(min_s, max_s); n_gates * n_gates])
    }

    /// One distribution per pair, row-major by entry gate.
    pub fn from_pairs(n_gates: usize, pairs: Vec<PairTravelTime>) -> Result<Self, ZoneError> {
        if n_gates == 0 || pairs.len() != n_gates * n_gates {
            return Err(ZoneError::DimensionMismatch {
                context: "travel time pair count",
                actual: pairs.len(),
                expected: n_gates * n_gates,
            });
        }
        for (k, pair) in pairs.iter().enumerate() {
            pair.validate(k / n_gates + 1, k % n_gates + 1)?;
        }
        Ok(TravelTimeModel { n_gates, pairs })
    }

    /// Replaces the distribution for one pair.
    pub fn with_pair(
        mut self,
        from: GateId,
        to: GateId,
        pair: PairTravelTime,
    ) -> Result<Self, ZoneError> {
        pair.validate(from.get(), to.get())?;
        self.pairs[from.zero_based() * self.n_gates + to.zero_based()] = pair;
        Ok(self)
    }

    pub fn n_gates(&self) -> usize {
        self.n_gates
    }

    pub fn pair(&self, from: GateId, to: GateId) -> PairTravelTime {
        self.pairs[from.zero_based() * self.n_gates + to.zero_based()]
    }

    pub(crate) fn pair_zero_based(&self, from: usize, to: usize) -> PairTravelTime {
        self.pairs[from * self.n_gates + to]
    }

    /// All pairs, row-major by entry gate.
    pub fn pairs(&self) -> &[PairTravelTime] {
        &self.pairs
    }

    /// The model with every support widened by `extra_s`.
    pub fn widened(&self, extra_s: f64) -> Self {
        TravelTimeModel {
            n_gates: self.n_gates,
            pairs: self.pairs.iter().map(|p| p.widened(extra_s)).collect(),
        }
    }

    /// Largest support maximum over all pairs.
    pub fn max_travel_s(&self) -> f64 {
        self.pairs.iter().map(|p| p.max_s).fold(0.0, f64::max)
    }
}

/// Validated static configuration of one mix zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneConfig {
    lane_capacity: u32,
    transition: TransitionMatrix,
    travel_time: TravelTimeModel,
    window_duration_s: f64,
    window_step_s: f64,
    wmap_threshold: f64,
}

impl ZoneConfig {
    /// Checks all cross-field invariants and freezes the configuration.
    pub fn new(
        lane_capacity: u32,
        transition: TransitionMatrix,
        travel_time: TravelTimeModel,
        window_duration_s: f64,
        window_step_s: f64,
        wmap_threshold: f64,
    ) -> Result<Self, ZoneError> {
        let n = transition.n_gates();
        if n < 2 {
            return Err(ZoneError::InvalidGateCount(n));
        }
        if lane_capacity < 1 {
            return Err(ZoneError::InvalidCapacity);
        }
        if travel_time.n_gates() != n {
            return Err(ZoneError::DimensionMismatch {
                context: "travel time gate count",
                actual: travel_time.n_gates(),
                expected: n,
            });
        }
        if !(window_step_s > 0.0
            && window_duration_s >= window_step_s
            && window_duration_s.is_finite())
        {
            return Err(ZoneError::InvalidWindow {
                duration_s: window_duration_s,
                step_s: window_step_s,
            });
        }
        if !(wmap_threshold > 0.0 && wmap_threshold < 1.0) {
            return Err(ZoneError::InvalidThreshold(wmap_threshold));
        }
        Ok(ZoneConfig {
            lane_capacity,
            transition,
            travel_time,
            window_duration_s,
            window_step_s,
            wmap_threshold,
        })
    }

    /// Re-runs the invariant checks; valid configs come back unchanged.
    pub fn validated(self) -> Result<Self, ZoneError> {
        ZoneConfig::new(
            self.lane_capacity,
            self.transition,
            self.travel_time,
            self.window_duration_s,
            self.window_step_s,
            self.wmap_threshold,
        )
    }

    /// The same zone with a different activation threshold.
    pub fn with_threshold(self, wmap_threshold: f64) -> Result<Self, ZoneError> {
        ZoneConfig::new(
            self.lane_capacity,
            self.transition,
            self.travel_time,
            self.window_duration_s,
            self.window_step_s,
            wmap_threshold,
        )
    }

    pub fn n_gates(&self) -> usize {
        self.transition.n_gates()
    }

    /// Transceivers deployed per lane; also the padding target.
    pub fn lane_capacity(&self) -> u32 {
        self.lane_capacity
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn travel_time(&self) -> &TravelTimeModel {
        &self.travel_time
    }

    pub fn window_duration_s(&self) -> f64 {
        self.window_duration_s
    }

    pub fn window_step_s(&self) -> f64 {
        self.window_step_s
    }

    /// Mapping-weight threshold below which a gate pair counts as weakly
    /// mixed.
    pub fn wmap_threshold(&self) -> f64 {
        self.wmap_threshold
    }
}
