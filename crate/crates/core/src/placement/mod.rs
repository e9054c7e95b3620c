//! Placement restructuring.
//!
//! Candidates are scored with a contention-free analytic model: for each
//! template, the slowest participating node's service time plus the slowest
//! participating node's expected transfer time. The expected latency of a
//! placement weights templates by frequency. The simulator is the judge of
//! whether a restructured placement actually helps under load.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{ensure_valid, Catalog, Placement};
use crate::engine::{rank_demanding_templates, Trace};
use crate::topology::{route_profile, RouteProfile, Tier, Topology};
use crate::{Error, Result};

/// Upper bound on the number of assignments brute force will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementCost {
    /// Frequency-weighted mean of `per_template`.
    pub expected_latency_s: f64,
    pub per_template: BTreeMap<String, f64>,
}

/// Where template weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// `frequency_weight` from the catalog.
    #[default]
    Design,
    /// Observed template counts in a trace.
    Measured,
}

/// Template counts observed in a trace, for measured-mode weighting.
pub fn observed_weights(trace: &Trace) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for r in &trace.records {
        *counts.entry(r.template_id.clone()).or_insert(0.0) += 1.0;
    }
    counts
}

struct NodeTerms {
    id: String,
    tier: Tier,
    /// vm_count × service_rate.
    throughput: f64,
    routes: RouteProfile,
}

struct TemplateTerms {
    id: String,
    weight: f64,
    cpu_work: f64,
    /// (fragment index, result bytes).
    reads: Vec<(usize, u64)>,
}

/// Precomputed analytic cost model over index-addressed fragments and nodes.
/// Fragments and nodes are indexed in ascending id order.
pub struct CostModel<'a> {
    catalog: &'a Catalog,
    topology: &'a Topology,
    fragments: Vec<String>,
    pins: Vec<Option<Tier>>,
    nodes: Vec<NodeTerms>,
    templates: Vec<TemplateTerms>,
}

impl<'a> CostModel<'a> {
    /// Weights from the catalog.
    pub fn new(catalog: &'a Catalog, topology: &'a Topology) -> Result<Self> {
        let weights = catalog
            .templates
            .iter()
            .map(|t| (t.template_id.clone(), t.frequency_weight))
            .collect();
        Self::with_weights(catalog, topology, &weights)
    }

    /// Templates missing from `weights` get weight zero.
    pub fn with_weights(
        catalog: &'a Catalog,
        topology: &'a Topology,
        weights: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let fragments: Vec<String> = catalog
            .fragments
            .iter()
            .map(|f| f.fragment_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pins = fragments
            .iter()
            .map(|id| catalog.fragment(id).and_then(|f| f.pinned_tier))
            .collect();
        let mut nodes: Vec<NodeTerms> = topology
            .nodes()
            .iter()
            .map(|n| NodeTerms {
                id: n.node_id.clone(),
                tier: n.tier,
                throughput: n.vm_count as f64 * n.service_rate,
                routes: route_profile(&n.node_id, topology),
            })
            .collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));

        let total: f64 = catalog
            .templates
            .iter()
            .map(|t| weights.get(&t.template_id).copied().unwrap_or(0.0))
            .sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Validation("template weights must have a positive sum".into()));
        }
        let templates = catalog
            .templates
            .iter()
            .map(|t| TemplateTerms {
                id: t.template_id.clone(),
                weight: weights.get(&t.template_id).copied().unwrap_or(0.0) / total,
                cpu_work: t.cpu_work,
                reads: t
                    .fragments_read
                    .iter()
                    .map(|f| {
                        let idx = fragments.binary_search(f).expect("catalog validated");
                        (idx, t.result_bytes(f))
                    })
                    .collect(),
            })
            .collect();
        Ok(Self { catalog, topology, fragments, pins, nodes, templates })
    }

    pub fn fragment_ids(&self) -> &[String] {
        &self.fragments
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.id.as_str())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Whether fragment `f` may live on node `n`.
    pub fn allowed(&self, f: usize, n: usize) -> bool {
        self.pins[f].is_none_or(|tier| tier == self.nodes[n].tier)
    }

    pub fn to_indices(&self, placement: &Placement) -> Result<Vec<usize>> {
        ensure_valid(placement, self.catalog, self.topology)?;
        Ok(self
            .fragments
            .iter()
            .map(|f| {
                let node = placement.node_of(f).expect("validated");
                self.nodes.iter().position(|n| n.id == node).expect("validated")
            })
            .collect())
    }

    pub fn to_placement(&self, assignment: &[usize]) -> Placement {
        self.fragments
            .iter()
            .zip(assignment)
            .map(|(f, &n)| (f.clone(), self.nodes[n].id.clone()))
            .collect()
    }

    fn template_latency(&self, t: &TemplateTerms, assignment: &[usize]) -> f64 {
        // Distinct nodes in ascending index order with summed bytes.
        let mut per_node: BTreeMap<usize, u64> = BTreeMap::new();
        for &(f, bytes) in &t.reads {
            *per_node.entry(assignment[f]).or_insert(0) += bytes;
        }
        let share = t.cpu_work / per_node.len() as f64;
        let mut service: f64 = 0.0;
        let mut network: f64 = 0.0;
        for (&n, &bytes) in &per_node {
            service = service.max(share / self.nodes[n].throughput);
            network = network.max(self.nodes[n].routes.expected_transfer_time(bytes));
        }
        service + network
    }

    /// Expected latency of an index assignment (no validation).
    pub fn expected_latency(&self, assignment: &[usize]) -> f64 {
        self.templates
            .iter()
            .filter(|t| t.weight > 0.0)
            .map(|t| t.weight * self.template_latency(t, assignment))
            .sum()
    }

    pub fn evaluate(&self, placement: &Placement) -> Result<PlacementCost> {
        let assignment = self.to_indices(placement)?;
        let per_template: BTreeMap<String, f64> = self
            .templates
            .iter()
            .map(|t| (t.id.clone(), self.template_latency(t, &assignment)))
            .collect();
        Ok(PlacementCost { expected_latency_s: self.expected_latency(&assignment), per_template })
    }
}

pub fn evaluate_placement(placement: &Placement, catalog: &Catalog, topology: &Topology) -> Result<PlacementCost> {
    CostModel::new(catalog, topology)?.evaluate(placement)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub fragment_id: String,
    pub from: String,
    pub to: String,
    pub expected_latency_after_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub placement: Placement,
    pub initial_cost_s: f64,
    pub final_cost_s: f64,
    pub moves: Vec<Move>,
}

fn improves(candidate: f64, best: f64) -> bool {
    candidate < best - 1e-12 * best.abs().max(1.0)
}

/// Hill-climbs over single-fragment reassignments, always taking the move
/// with the largest decrease (ties: first by fragment id, then node id).
pub fn greedy_improve_with(model: &CostModel<'_>, placement: &Placement, max_moves: usize) -> Result<GreedyOutcome> {
    let mut assignment = model.to_indices(placement)?;
    let initial = model.expected_latency(&assignment);
    let mut current = initial;
    let mut moves = Vec::new();
    while moves.len() < max_moves {
        let mut best: Option<(usize, usize, f64)> = None;
        for f in 0..assignment.len() {
            let home = assignment[f];
            for n in 0..model.node_count() {
                if n == home || !model.allowed(f, n) {
                    continue;
                }
                assignment[f] = n;
                let cost = model.expected_latency(&assignment);
                assignment[f] = home;
                let bar = best.map_or(current, |b| b.2);
                if improves(cost, bar) {
                    best = Some((f, n, cost));
                }
            }
        }
        let Some((f, n, cost)) = best else { break };
        moves.push(Move {
            fragment_id: model.fragments[f].clone(),
            from: model.nodes[assignment[f]].id.clone(),
            to: model.nodes[n].id.clone(),
            expected_latency_after_s: cost,
        });
        assignment[f] = n;
        current = cost;
    }
    Ok(GreedyOutcome {
        placement: model.to_placement(&assignment),
        initial_cost_s: initial,
        final_cost_s: current,
        moves,
    })
}

pub fn greedy_improve(
    placement: &Placement,
    catalog: &Catalog,
    topology: &Topology,
    max_moves: usize,
) -> Result<Placement> {
    let model = CostModel::new(catalog, topology)?;
    Ok(greedy_improve_with(&model, placement, max_moves)?.placement)
}

/// Exhaustive search over all pin-respecting placements. Among equal costs
/// the lexicographically smallest assignment (fragments and nodes in id
/// order) wins.
pub fn brute_force_optimal_with(model: &CostModel<'_>) -> Result<(Placement, f64)> {
    let frags = model.fragments.len();
    let nodes = model.node_count();
    let assignments = (nodes as f64).powi(frags as i32);
    if assignments > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge { assignments, limit: BRUTE_FORCE_LIMIT });
    }
    let choices: Vec<Vec<usize>> = (0..frags)
        .map(|f| (0..nodes).filter(|&n| model.allowed(f, n)).collect())
        .collect();
    if choices.iter().any(Vec::is_empty) {
        return Err(Error::Validation("a pinned fragment has no node in its tier".into()));
    }
    // Odometer over choice positions; the first fragment is most significant.
    let mut digits = vec![0usize; frags];
    let mut assignment: Vec<usize> = choices.iter().map(|c| c[0]).collect();
    let mut best = (assignment.clone(), model.expected_latency(&assignment));
    loop {
        let mut pos = frags;
        loop {
            if pos == 0 {
                return Ok((model.to_placement(&best.0), best.1));
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < choices[pos].len() {
                assignment[pos] = choices[pos][digits[pos]];
                break;
            }
            digits[pos] = 0;
            assignment[pos] = choices[pos][0];
        }
        let cost = model.expected_latency(&assignment);
        if cost < best.1 {
            best = (assignment.clone(), cost);
        }
    }
}

pub fn brute_force_optimal(catalog: &Catalog, topology: &Topology) -> Result<(Placement, PlacementCost)> {
    let model = CostModel::new(catalog, topology)?;
    let (placement, _) = brute_force_optimal_with(&model)?;
    let cost = model.evaluate(&placement)?;
    Ok((placement, cost))
}

/// Moves the unpinned fragments of the `k` most demanding templates in
/// `trace` onto public nodes, one fragment at a time, each to the public node
/// giving the lowest expected latency (ties by node id).
pub fn offload_demanding_to_public_with(
    model: &CostModel<'_>,
    placement: &Placement,
    trace: &Trace,
    k: usize,
) -> Result<Placement> {
    let public: Vec<usize> = (0..model.node_count())
        .filter(|&n| model.nodes[n].tier == Tier::Public)
        .collect();
    if public.is_empty() {
        return Err(Error::NoPublicNode);
    }
    let mut assignment = model.to_indices(placement)?;
    let mut seen = BTreeSet::new();
    for template_id in rank_demanding_templates(trace, k.max(1)) {
        let Some(template) = model.catalog.template(&template_id) else {
            continue;
        };
        for fragment_id in &template.fragments_read {
            let f = model.fragments.binary_search(fragment_id).expect("catalog validated");
            if model.pins[f].is_some() || !seen.insert(f) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for &n in &public {
                assignment[f] = n;
                let cost = model.expected_latency(&assignment);
                if best.is_none_or(|b| cost < b.1) {
                    best = Some((n, cost));
                }
            }
            assignment[f] = best.expect("public nodes nonempty").0;
        }
    }
    Ok(model.to_placement(&assignment))
}

pub fn offload_demanding_to_public(
    placement: &Placement,
    trace: &Trace,
    catalog: &Catalog,
    topology: &Topology,
    k: usize,
) -> Result<Placement> {
    let model = CostModel::new(catalog, topology)?;
    offload_demanding_to_public_with(&model, placement, trace, k)
}
