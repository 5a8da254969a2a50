//! Mapping-weight matrix and transceiver activation planning.
//!
//! The zone controller summarises how well each (entry gate, exit gate)
//! pair is currently mixed with a weight `ingress_i ^ egress_j * p_ij`,
//! row-normalized so each entry gate's weights form a distribution. Low
//! normalized weight means an observer could link that pair too easily,
//! so the planner marks both lanes and tops them up with virtual
//! transceivers until the lane looks fully occupied.

use crate::zone::{GateId, StateMatrix, TransitionMatrix, ZoneConfig, ZoneError};

/// Raw mapping weight for one gate pair: `ingress ^ egress * p`.
///
/// `0^0` is taken as 1, so a pair with no traffic on either lane reduces
/// to the bare transition probability.
pub fn raw_weight(ingress_count: u32, egress_count: u32, exit_probability: f64) -> f64 {
    if ingress_count == 0 {
        return if egress_count == 0 { exit_probability } else { 0.0 };
    }
    (ingress_count as f64).powi(egress_count as i32) * exit_probability
}

/// `ln(raw_weight)`, with zero weights mapped to −∞. Computing
/// `egress · ln(ingress) + ln(p)` directly keeps counts like `10^10`
/// representable where the raw product would lose precision or overflow.
fn log_raw_weight(ingress_count: u32, egress_count: u32, exit_probability: f64) -> f64 {
    if exit_probability <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ingress_count == 0 {
        // 0^0 = 1 leaves just ln(p); any positive egress count zeroes the weight.
        return if egress_count == 0 { exit_probability.ln() } else { f64::NEG_INFINITY };
    }
    egress_count as f64 * (ingress_count as f64).ln() + exit_probability.ln()
}

/// Mapping-weight matrix: raw weights plus the row-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct WMap {
    raw: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    degenerate: Vec<bool>,
}

impl WMap {
    pub fn n_gates(&self) -> usize {
        self.raw.len()
    }

    pub fn raw(&self) -> &[Vec<f64>] {
        &self.raw
    }

    /// Row-normalized weights; degenerate rows are all zero.
    pub fn normalized(&self) -> &[Vec<f64>] {
        &self.normalized
    }

    pub fn normalized_at(&self, entry: GateId, exit: GateId) -> f64 {
        self.normalized[entry.zero_based()][exit.zero_based()]
    }

    /// Whether the entry gate's row had zero total raw weight.
    pub fn is_degenerate_row(&self, entry: GateId) -> bool {
        self.degenerate[entry.zero_based()]
    }

    /// Entry gates whose rows had zero total raw weight.
    pub fn degenerate_rows(&self) -> Vec<GateId> {
        self.degenerate
            .iter()
            .enumerate()
            .filter(|(_, &d)| d)
            .map(|(i, _)| GateId::from_zero_based(i))
            .collect()
    }
}

/// Bookkeeping from a weight computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WmapStats {
    /// Number of gate pairs evaluated; always `n_gates²`.
    pub raw_weight_evaluations: usize,
}

/// Computes the mapping-weight matrix for a window state.
pub fn compute_wmap(state: &StateMatrix, transition: &TransitionMatrix) -> Result<WMap, ZoneError> {
    compute_wmap_instrumented(state, transition).map(|(wmap, _)| wmap)
}

/// [`compute_wmap`] plus an evaluation counter for complexity checks.
pub fn compute_wmap_instrumented(
    state: &StateMatrix,
    transition: &TransitionMatrix,
) -> Result<(WMap, WmapStats), ZoneError> {
    if state.n_gates() != transition.n_gates() {
        return Err(ZoneError::DimensionMismatch {
            context: "wmap state gate count",
            actual: state.n_gates(),
            expected: transition.n_gates(),
        });
    }
    compute_wmap_from_rows(state, transition.rows())
}

/// Weight pipeline over bare probability rows, without the row-stochastic
/// requirement. Normalization only divides by each row's own total, so
/// scaled rows give the same normalized weights; this entry point exists
/// for exactly that kind of analysis (and for the tests that exercise it).
pub fn compute_wmap_from_rows(
    state: &StateMatrix,
    rows: &[Vec<f64>],
) -> Result<(WMap, WmapStats), ZoneError> {
    let n = state.n_gates();
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ZoneError::DimensionMismatch {
            context: "wmap probability rows",
            actual: rows.len(),
            expected: n,
        });
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p.is_nan() || p < 0.0 {
                return Err(ZoneError::NegativeEntry { row: i + 1, col: j + 1, value: p });
            }
        }
    }

    let mut evaluations = 0usize;
    let mut raw = vec![vec![0.0; n]; n];
    let mut normalized = vec![vec![0.0; n]; n];
    let mut degenerate = vec![false; n];
    let mut log_row = vec![0.0; n];

    for i in 0..n {
        let ingress = state.ingress()[i];
        for j in 0..n {
            let p = rows[i][j];
            raw[i][j] = raw_weight(ingress, state.egress()[j], p);
            log_row[j] = log_raw_weight(ingress, state.egress()[j], p);
            evaluations += 1;
        }
        // An empty ingress lane has no mapping evidence, whatever the
        // 0^0 convention makes of individual cells: the row is degenerate
        // (normalized stays zero) and demands full padding downstream.
        if ingress == 0 {
            degenerate[i] = true;
            continue;
        }
        // Normalize in the log domain: subtract the row max before
        // exponentiating so rows spanning hundreds of orders of magnitude
        // still sum cleanly.
        let max = log_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            degenerate[i] = true;
            continue;
        }
        let mut sum = 0.0;
        for j in 0..n {
            normalized[i][j] = (log_row[j] - max).exp();
            sum += normalized[i][j];
        }
        for value in &mut normalized[i] {
            *value /= sum;
        }
    }

    Ok((WMap { raw, normalized, degenerate }, WmapStats { raw_weight_evaluations: evaluations }))
}

/// Per-lane transceiver demands derived from one weight matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPlan {
    ingress_transceivers: Vec<u32>,
    egress_transceivers: Vec<u32>,
    triggering_pairs: Vec<(GateId, GateId)>,
    degenerate_rows: Vec<GateId>,
}

impl ActivationPlan {
    /// Transceivers to activate on the gate's ingress lane.
    pub fn ingress_count(&self, gate: GateId) -> u32 {
        self.ingress_transceivers[gate.zero_based()]
    }

    /// Transceivers to activate on the gate's egress lane.
    pub fn egress_count(&self, gate: GateId) -> u32 {
        self.egress_transceivers[gate.zero_based()]
    }

    pub fn ingress_counts(&self) -> &[u32] {
        &self.ingress_transceivers
    }

    pub fn egress_counts(&self) -> &[u32] {
        &self.egress_transceivers
    }

    /// Gate pairs whose normalized weight fell below the threshold,
    /// sorted by (entry, exit).
    pub fn triggering_pairs(&self) -> &[(GateId, GateId)] {
        &self.triggering_pairs
    }

    /// Exit gates that triggered together with this entry gate.
    pub fn ingress_partners(&self, entry: GateId) -> Vec<GateId> {
        self.triggering_pairs.iter().filter(|(i, _)| *i == entry).map(|&(_, j)| j).collect()
    }

    /// Entry gates that triggered together with this exit gate.
    pub fn egress_partners(&self, exit: GateId) -> Vec<GateId> {
        self.triggering_pairs.iter().filter(|(_, j)| *j == exit).map(|&(i, _)| i).collect()
    }

    /// Entry gates flagged because their whole weight row was zero.
    /// Such rows trigger every pair; callers may want to surface this.
    pub fn degenerate_rows(&self) -> &[GateId] {
        &self.degenerate_rows
    }

    pub fn total_transceivers(&self) -> u32 {
        self.ingress_transceivers.iter().sum::<u32>() + self.egress_transceivers.iter().sum::<u32>()
    }

    pub fn is_empty(&self) -> bool {
        self.total_transceivers() == 0
    }
}

/// Derives the activation plan for one window.
///
/// Every pair with normalized weight below the zone threshold marks its
/// entry gate's ingress lane and exit gate's egress lane; a marked lane
/// is topped up to `lane_capacity` with virtual transceivers, and a lane
/// already at capacity gets none. Degenerate (zero-weight) rows trigger
/// all their pairs.
pub fn plan_activation(
    wmap: &WMap,
    state: &StateMatrix,
    config: &ZoneConfig,
) -> Result<ActivationPlan, ZoneError> {
    let n = config.n_gates();
    for (context, actual) in [
        ("activation wmap gate count", wmap.n_gates()),
        ("activation state gate count", state.n_gates()),
    ] {
        if actual != n {
            return Err(ZoneError::DimensionMismatch { context, actual, expected: n });
        }
    }

    let threshold = config.wmap_threshold();
    let mut triggering_pairs = Vec::new();
    let mut ingress_marked = vec![false; n];
    let mut egress_marked = vec![false; n];
    for (i, row) in wmap.normalized().iter().enumerate() {
        let degenerate = wmap.is_degenerate_row(GateId::from_zero_based(i));
        for (j, &weight) in row.iter().enumerate() {
            if degenerate || weight < threshold {
                triggering_pairs.push((GateId::from_zero_based(i), GateId::from_zero_based(j)));
                ingress_marked[i] = true;
                egress_marked[j] = true;
            }
        }
    }

    let capacity = config.lane_capacity();
    let top_up = |count: u32| capacity.saturating_sub(count);
    let ingress_transceivers =
        (0..n).map(|i| if ingress_marked[i] { top_up(state.ingress()[i]) } else { 0 }).collect();
    let egress_transceivers =
        (0..n).map(|j| if egress_marked[j] { top_up(state.egress()[j]) } else { 0 }).collect();

    Ok(ActivationPlan {
        ingress_transceivers,
        egress_transceivers,
        triggering_pairs,
        degenerate_rows: wmap.degenerate_rows(),
    })
}
