//! A global passive adversary that tries to undo pseudonym changes.
//!
//! The attacker sees only the observation stream: pseudonyms entering and
//! leaving the zone. For every (ingress, egress) observation pair it
//! assigns a likelihood score — transition probability times travel-time
//! density — after excluding pairs that are impossible on time grounds,
//! too improbable, or outside the attack horizon. Linking then becomes a
//! bipartite assignment problem; [`link_ml`] solves it optimally
//! (maximum cardinality first, maximum likelihood second) and
//! [`link_greedy`] provides the obvious baseline. [`anonymity_metrics`]
//! turns an attack plus ground truth into the report card for the
//! defense: linkage accuracy, decoy capture, entropy, and degree of
//! anonymity.

use std::collections::HashMap;

use thiserror::Error;

use crate::sim::{EntityKind, EntityLink, Observation, Pseudonym};
use crate::zone::{LaneDirection, TransitionMatrix, TravelTimeModel};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("score_pair needs an (ingress, egress) observation pair, got ({ingress}, {egress})")]
    WrongLane { ingress: LaneDirection, egress: LaneDirection },
    #[error("{rows}x{cols} feasibility matrix exceeds the enumeration limit {limit}")]
    TooLarge { rows: usize, cols: usize, limit: usize },
}

/// Knobs for the adversary's candidate pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarySettings {
    /// Transition probabilities strictly below this are discarded.
    pub min_probability: f64,
    /// Extra seconds vehicles may dwell inside the zone beyond the travel
    /// model; widens every travel-time support (density renormalizes).
    pub dwell_s: f64,
    /// Only ingress observations at most this many seconds before an
    /// egress observation are considered. `None` derives the horizon from
    /// the travel model: max travel time plus dwell.
    pub horizon_s: Option<f64>,
}

impl Default for AdversarySettings {
    fn default() -> Self {
        AdversarySettings { min_probability: 0.0, dwell_s: 0.0, horizon_s: None }
    }
}

/// Likelihood that `egress` continues `ingress`: transition probability
/// times travel-time density at the observed delay. Zero whenever the
/// delay falls outside the (possibly widened) support or either gate is
/// unknown to the model.
pub fn score_pair(
    ingress: &Observation,
    egress: &Observation,
    transition: &TransitionMatrix,
    travel: &TravelTimeModel,
) -> Result<f64, AdversaryError> {
    if ingress.lane != LaneDirection::Ingress || egress.lane != LaneDirection::Egress {
        return Err(AdversaryError::WrongLane { ingress: ingress.lane, egress: egress.lane });
    }
    let n = transition.n_gates();
    if ingress.gate.get() > n || egress.gate.get() > n {
        return Ok(0.0);
    }
    let dt = egress.time_s - ingress.time_s;
    if dt <= 0.0 {
        return Ok(0.0);
    }
    let p = transition.prob(ingress.gate, egress.gate);
    Ok(p * travel.pair(ingress.gate, egress.gate).density(dt))
}

/// Candidate scores for every (ingress, egress) observation pair.
///
/// Pruned pairs sit at score 0; a pair is *feasible* exactly when its
/// score is positive. Rows are ingress observations, columns egress
/// observations, both sorted by (time, pseudonym) so indices — and with
/// them every tie-break downstream — are deterministic.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    ingress: Vec<Observation>,
    egress: Vec<Observation>,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    /// Scores an observation stream, applying all three exclusion rules:
    /// time feasibility (delay must fall inside the dwell-widened travel
    /// support and the horizon), minimum transition probability, and the
    /// zone's transition structure itself (p = 0 pairs stay at 0).
    pub fn build(
        observations: &[Observation],
        transition: &TransitionMatrix,
        travel: &TravelTimeModel,
        settings: &AdversarySettings,
    ) -> ScoreMatrix {
        let sort_key = |o: &Observation| (o.time_s, o.pseudonym.clone());
        let mut ingress: Vec<Observation> =
            observations.iter().filter(|o| o.lane == LaneDirection::Ingress).cloned().collect();
        let mut egress: Vec<Observation> =
            observations.iter().filter(|o| o.lane == LaneDirection::Egress).cloned().collect();
        ingress.sort_by(|a, b| {
            sort_key(a).0.total_cmp(&sort_key(b).0).then_with(|| a.pseudonym.cmp(&b.pseudonym))
        });
        egress.sort_by(|a, b| {
            sort_key(a).0.total_cmp(&sort_key(b).0).then_with(|| a.pseudonym.cmp(&b.pseudonym))
        });

        let widened = travel.widened(settings.dwell_s);
        let horizon = settings.horizon_s.unwrap_or_else(|| widened.max_travel_s());
        let n = transition.n_gates();

        let mut scores = vec![0.0; ingress.len() * egress.len()];
        for (r, obs_in) in ingress.iter().enumerate() {
            for (c, obs_out) in egress.iter().enumerate() {
                let dt = obs_out.time_s - obs_in.time_s;
                if dt <= 0.0 || dt > horizon {
                    continue;
                }
                if obs_in.gate.get() > n || obs_out.gate.get() > n {
                    continue;
                }
                if transition.prob(obs_in.gate, obs_out.gate) < settings.min_probability {
                    continue;
                }
                scores[r * egress.len() + c] =
                    score_pair(obs_in, obs_out, transition, &widened).expect("lanes pre-sorted");
            }
        }
        ScoreMatrix { ingress, egress, scores }
    }

    /// Assembles a matrix from explicit parts (analysis and tests).
    /// `scores` is indexed `[ingress][egress]`.
    pub fn from_parts(
        ingress: Vec<Observation>,
        egress: Vec<Observation>,
        scores: Vec<Vec<f64>>,
    ) -> ScoreMatrix {
        assert_eq!(scores.len(), ingress.len(), "one score row per ingress observation");
        let flat: Vec<f64> = scores
            .iter()
            .inspect(|row| assert_eq!(row.len(), egress.len(), "one score per egress observation"))
            .flatten()
            .copied()
            .collect();
        ScoreMatrix { ingress, egress, scores: flat }
    }

    pub fn n_ingress(&self) -> usize {
        self.ingress.len()
    }

    pub fn n_egress(&self) -> usize {
        self.egress.len()
    }

    pub fn score(&self, ingress_idx: usize, egress_idx: usize) -> f64 {
        self.scores[ingress_idx * self.egress.len() + egress_idx]
    }

    pub fn is_feasible(&self, ingress_idx: usize, egress_idx: usize) -> bool {
        self.score(ingress_idx, egress_idx) > 0.0
    }

    pub fn ingress_observations(&self) -> &[Observation] {
        &self.ingress
    }

    pub fn egress_observations(&self) -> &[Observation] {
        &self.egress
    }

    /// Feasible ingress candidates for one egress observation.
    pub fn candidates_of(&self, egress_idx: usize) -> Vec<usize> {
        (0..self.ingress.len()).filter(|&r| self.is_feasible(r, egress_idx)).collect()
    }

    /// The 0/1 feasibility view used by the mapping counter.
    pub fn feasibility(&self) -> Vec<Vec<bool>> {
        (0..self.ingress.len())
            .map(|r| (0..self.egress.len()).map(|c| self.is_feasible(r, c)).collect())
            .collect()
    }
}

/// An injective linking of egress observations to ingress observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
    total_log_score: f64,
}

impl Assignment {
    fn new(mut pairs: Vec<(usize, usize)>, scores: &ScoreMatrix) -> Self {
        pairs.sort_unstable();
        let total_log_score = pairs.iter().map(|&(c, r)| scores.score(r, c).ln()).sum();
        Assignment { pairs, total_log_score }
    }

    /// Linked pairs as (egress index, ingress index), sorted by egress.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of ln(score) over the linked pairs.
    pub fn total_log_score(&self) -> f64 {
        self.total_log_score
    }

    /// Product of linked scores, multiplied in egress order.
    pub fn score_product(&self, scores: &ScoreMatrix) -> f64 {
        self.pairs.iter().map(|&(c, r)| scores.score(r, c)).product()
    }

    /// The ingress index linked to this egress index, if any.
    pub fn ingress_for(&self, egress_idx: usize) -> Option<usize> {
        self.pairs.binary_search_by_key(&egress_idx, |&(c, _)| c).ok().map(|at| self.pairs[at].1)
    }

    /// Linked observation pairs as (egress, ingress).
    pub fn linked_observations<'a>(
        &self,
        scores: &'a ScoreMatrix,
    ) -> Vec<(&'a Observation, &'a Observation)> {
        self.pairs
            .iter()
            .map(|&(c, r)| (&scores.egress_observations()[c], &scores.ingress_observations()[r]))
            .collect()
    }
}

/// Maximum-likelihood linking: among all feasible injective linkings of
/// maximum cardinality, returns one maximizing the product of scores.
///
/// Solved as min-cost max-flow with Dijkstra over reduced costs; one unit
/// of flow per link, edge cost `S − ln(score)` (with `S` the largest
/// feasible log-score, so costs are non-negative and minimizing total
/// cost maximizes total log-likelihood at fixed cardinality).
pub fn link_ml(scores: &ScoreMatrix) -> Assignment {
    let rows = scores.n_ingress();
    let cols = scores.n_egress();

    let mut max_log = f64::NEG_INFINITY;
    for r in 0..rows {
        for c in 0..cols {
            if scores.is_feasible(r, c) {
                max_log = max_log.max(scores.score(r, c).ln());
            }
        }
    }
    if max_log == f64::NEG_INFINITY {
        return Assignment::new(Vec::new(), scores);
    }

    // Node layout: source, rows, cols, sink.
    let source = 0;
    let row_node = |r: usize| 1 + r;
    let col_node = |c: usize| 1 + rows + c;
    let sink = 1 + rows + cols;
    let mut flow = MinCostFlow::new(sink + 1);
    for r in 0..rows {
        flow.add_edge(source, row_node(r), 1, 0.0);
    }
    let mut link_edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if scores.is_feasible(r, c) {
                let cost = max_log - scores.score(r, c).ln();
                link_edges.push((r, c, flow.add_edge(row_node(r), col_node(c), 1, cost)));
            }
        }
    }
    for c in 0..cols {
        flow.add_edge(col_node(c), sink, 1, 0.0);
    }
    flow.run(source, sink);

    let pairs = link_edges
        .into_iter()
        .filter(|&(_, _, edge)| flow.saturated(edge))
        .map(|(r, c, _)| (c, r))
        .collect();
    Assignment::new(pairs, scores)
}

/// Greedy baseline: repeatedly links the highest-scoring remaining pair.
/// Ties break on (ingress time, egress time), then pseudonyms via the
/// canonical index order.
pub fn link_greedy(scores: &ScoreMatrix) -> Assignment {
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for r in 0..scores.n_ingress() {
        for c in 0..scores.n_egress() {
            if scores.is_feasible(r, c) {
                edges.push((r, c));
            }
        }
    }
    edges.sort_by(|&(r1, c1), &(r2, c2)| {
        scores
            .score(r2, c2)
            .total_cmp(&scores.score(r1, c1))
            .then_with(|| {
                scores.ingress_observations()[r1]
                    .time_s
                    .total_cmp(&scores.ingress_observations()[r2].time_s)
            })
            .then_with(|| {
                scores.egress_observations()[c1]
                    .time_s
                    .total_cmp(&scores.egress_observations()[c2].time_s)
            })
            .then_with(|| (r1, c1).cmp(&(r2, c2)))
    });

    let mut row_used = vec![false; scores.n_ingress()];
    let mut col_used = vec![false; scores.n_egress()];
    let mut pairs = Vec::new();
    for (r, c) in edges {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            pairs.push((c, r));
        }
    }
    Assignment::new(pairs, scores)
}

/// Counts complete injective mappings (cardinality = min(rows, cols))
/// using only feasible cells — the permanent of the 0/1 matrix when it is
/// square. Empty matrices count 1: the vacuous mapping.
pub fn count_feasible_mappings(
    feasibility: &[Vec<bool>],
    limit: usize,
) -> Result<u64, AdversaryError> {
    let rows = feasibility.len();
    let cols = feasibility.first().map_or(0, Vec::len);
    if rows > limit || cols > limit {
        return Err(AdversaryError::TooLarge { rows, cols, limit });
    }
    // Orient so every row must be matched; columns form the bitmask.
    let transpose = rows > cols;
    let (r_max, c_max) = if transpose { (cols, rows) } else { (rows, cols) };
    let feasible =
        |r: usize, c: usize| if transpose { feasibility[c][r] } else { feasibility[r][c] };

    let mut dp = vec![0u64; 1 << c_max];
    dp[0] = 1;
    for r in 0..r_max {
        let mut next = vec![0u64; 1 << c_max];
        for (mask, &ways) in dp.iter().enumerate() {
            if ways == 0 {
                continue;
            }
            for c in 0..c_max {
                if feasible(r, c) && mask & (1 << c) == 0 {
                    next[mask | (1 << c)] += ways;
                }
            }
        }
        dp = next;
    }
    Ok(dp.iter().sum())
}

/// Per-egress-target anonymity: the candidate distribution's entropy and
/// normalized degree. Targets with no feasible candidate are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAnonymity {
    pub egress_pseudonym: Pseudonym,
    pub candidate_count: usize,
    pub entropy_bits: f64,
    pub degree: f64,
}

/// Outcome of one attack run against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    /// Fraction of Real entities whose egress the ML adversary linked to
    /// its true ingress pseudonym.
    pub linkage_accuracy_ml: f64,
    /// Same, for the greedy baseline.
    pub linkage_accuracy_greedy: f64,
    /// Fraction of ML links whose chosen ingress pseudonym belongs to a
    /// Virtual entity — the defense successfully fed the attacker a decoy.
    pub decoy_capture_rate: f64,
    /// Mean entropy over Real egress targets with ≥ 1 candidate.
    pub mean_entropy_bits: f64,
    /// Mean degree of anonymity over the same targets.
    pub mean_degree: f64,
    pub per_target: Vec<TargetAnonymity>,
    /// Complete-mapping count, for matrices no larger than 8×8.
    pub feasible_mappings: Option<u64>,
    /// Real egress observations in the matrix (accuracy denominator).
    pub real_entities: usize,
    pub virtual_entities: usize,
    pub ml_links: usize,
}

/// Ground truth the evaluator holds: pseudonym pairings and kinds.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    ingress_of: HashMap<Pseudonym, Pseudonym>,
    kinds: HashMap<Pseudonym, EntityKind>,
}

impl GroundTruth {
    pub fn from_links(links: &[EntityLink]) -> Self {
        let mut truth = GroundTruth::default();
        for link in links {
            truth.ingress_of.insert(link.egress.clone(), link.ingress.clone());
            truth.kinds.insert(link.ingress.clone(), link.kind);
            truth.kinds.insert(link.egress.clone(), link.kind);
        }
        truth
    }

    pub fn kind_of(&self, pseudonym: &Pseudonym) -> Option<EntityKind> {
        self.kinds.get(pseudonym).copied()
    }

    pub fn true_ingress(&self, egress: &Pseudonym) -> Option<&Pseudonym> {
        self.ingress_of.get(egress)
    }

    pub fn len(&self) -> usize {
        self.ingress_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ingress_of.is_empty()
    }
}

/// Shannon entropy (bits) of the distribution proportional to `weights`.
/// Non-positive weights are treated as absent candidates.
pub fn entropy_bits(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().filter(|&&w| w > 0.0).sum();
    if total <= 0.0 {
        return 0.0;
    }
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Degree of anonymity: entropy normalized by the maximum over the
/// candidate set. A single certain candidate has degree 1 by convention;
/// an empty candidate set has no defined degree.
pub fn anonymity_degree(weights: &[f64]) -> Option<f64> {
    let candidates = weights.iter().filter(|&&w| w > 0.0).count();
    match candidates {
        0 => None,
        1 => Some(1.0),
        k => Some(entropy_bits(weights) / (k as f64).log2()),
    }
}

/// Runs both adversaries over a score matrix and grades them against
/// ground truth.
pub fn anonymity_metrics(scores: &ScoreMatrix, truth: &GroundTruth) -> PrivacyReport {
    let ml = link_ml(scores);
    let greedy = link_greedy(scores);

    let egress = scores.egress_observations();
    let ingress = scores.ingress_observations();
    let real_entities =
        egress.iter().filter(|o| truth.kind_of(&o.pseudonym) == Some(EntityKind::Real)).count();
    let virtual_entities =
        egress.iter().filter(|o| truth.kind_of(&o.pseudonym) == Some(EntityKind::Virtual)).count();

    let accuracy = |assignment: &Assignment| {
        if real_entities == 0 {
            return 0.0;
        }
        let correct = assignment
            .pairs()
            .iter()
            .filter(|&&(c, r)| {
                truth.kind_of(&egress[c].pseudonym) == Some(EntityKind::Real)
                    && truth.true_ingress(&egress[c].pseudonym) == Some(&ingress[r].pseudonym)
            })
            .count();
        correct as f64 / real_entities as f64
    };
    let linkage_accuracy_ml = accuracy(&ml);
    let linkage_accuracy_greedy = accuracy(&greedy);

    let decoy_capture_rate = if ml.is_empty() {
        0.0
    } else {
        let captured = ml
            .pairs()
            .iter()
            .filter(|&&(_, r)| truth.kind_of(&ingress[r].pseudonym) == Some(EntityKind::Virtual))
            .count();
        captured as f64 / ml.len() as f64
    };

    let mut per_target = Vec::new();
    let mut real_entropy_sum = 0.0;
    let mut real_degree_sum = 0.0;
    let mut real_targets = 0usize;
    for (c, obs) in egress.iter().enumerate() {
        let weights: Vec<f64> = (0..ingress.len()).map(|r| scores.score(r, c)).collect();
        let Some(degree) = anonymity_degree(&weights) else {
            continue; // no candidates at all: nothing to report
        };
        let entropy = entropy_bits(&weights);
        per_target.push(TargetAnonymity {
            egress_pseudonym: obs.pseudonym.clone(),
            candidate_count: weights.iter().filter(|&&w| w > 0.0).count(),
            entropy_bits: entropy,
            degree,
        });
        if truth.kind_of(&obs.pseudonym) == Some(EntityKind::Real) {
            real_entropy_sum += entropy;
            real_degree_sum += degree;
            real_targets += 1;
        }
    }
    let (mean_entropy_bits, mean_degree) = if real_targets > 0 {
        (real_entropy_sum / real_targets as f64, real_degree_sum / real_targets as f64)
    } else {
        (0.0, 0.0)
    };

    let feasible_mappings = if scores.n_ingress().max(scores.n_egress()) <= 8 {
        count_feasible_mappings(&scores.feasibility(), 8).ok()
    } else {
        None
    };

    PrivacyReport {
        linkage_accuracy_ml,
        linkage_accuracy_greedy,
        decoy_capture_rate,
        mean_entropy_bits,
        mean_degree,
        per_target,
        feasible_mappings,
        real_entities,
        virtual_entities,
        ml_links: ml.len(),
    }
}

// ---------------------------------------------------------------------------
// Min-cost max-flow (successive shortest paths with potentials)
// ---------------------------------------------------------------------------

struct Edge {
    to: usize,
    cap: u32,
    cost: f64,
}

struct MinCostFlow {
    adjacency: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

impl MinCostFlow {
    fn new(nodes: usize) -> Self {
        MinCostFlow { adjacency: vec![Vec::new(); nodes], edges: Vec::new() }
    }

    /// Adds a forward edge and its residual twin; returns the forward
    /// edge's index.
    fn add_edge(&mut self, from: usize, to: usize, cap: u32, cost: f64) -> usize {
        let id = self.edges.len();
        self.adjacency[from].push(id);
        self.edges.push(Edge { to, cap, cost });
        self.adjacency[to].push(id + 1);
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
        id
    }

    /// Whether the forward edge carries flow.
    fn saturated(&self, edge: usize) -> bool {
        self.edges[edge].cap == 0
    }

    /// Pushes flow one augmenting unit at a time along shortest paths.
    /// All original costs are non-negative, so Dijkstra plus potentials
    /// stays exact; each prefix of augmentations is cost-optimal for its
    /// cardinality and the loop stops at maximum flow.
    fn run(&mut self, source: usize, sink: usize) {
        let n = self.adjacency.len();
        let mut potential = vec![0.0f64; n];
        loop {
            let mut dist = vec![f64::INFINITY; n];
            let mut parent_edge = vec![usize::MAX; n];
            let mut heap = std::collections::BinaryHeap::new();
            dist[source] = 0.0;
            heap.push(HeapEntry { dist: 0.0, node: source });
            while let Some(HeapEntry { dist: d, node }) = heap.pop() {
                if d > dist[node] {
                    continue;
                }
                for &edge_id in &self.adjacency[node] {
                    let edge = &self.edges[edge_id];
                    if edge.cap == 0 {
                        continue;
                    }
                    // Clamp away the negative dust floating-point
                    // arithmetic leaves on reduced costs.
                    let reduced = (edge.cost + potential[node] - potential[edge.to]).max(0.0);
                    let candidate = d + reduced;
                    if candidate < dist[edge.to] {
                        dist[edge.to] = candidate;
                        parent_edge[edge.to] = edge_id;
                        heap.push(HeapEntry { dist: candidate, node: edge.to });
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            for node in 0..n {
                if dist[node].is_finite() {
                    potential[node] += dist[node];
                }
            }
            let mut node = sink;
            while node != source {
                let edge_id = parent_edge[node];
                self.edges[edge_id].cap -= 1;
                self.edges[edge_id ^ 1].cap += 1;
                node = self.edges[edge_id ^ 1].to;
            }
        }
    }
}

/// Min-heap entry ordered by distance, then node for determinism.
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the smallest dist.
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
