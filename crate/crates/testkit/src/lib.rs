//! Random instance generators and reference implementations used by the
//! property and acceptance tests.
//!
//! The oracles here are written from the model definitions, not from the
//! engine or optimiser code, so agreement between the two is evidence rather
//! than tautology.

use std::collections::{BTreeMap, BTreeSet};

use hybridsim_core::datamodel::{Catalog, Fragment, Placement, QueryTemplate};
use hybridsim_core::topology::{LinkSpec, NodeSpec, Route, Tier, Topology};
use hybridsim_core::workload::QueryInstance;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct TopologyShape {
    pub nodes: (usize, usize),
    pub classes: (usize, usize),
    /// Routes per (class, node) pair; `(1, 1)` makes transfers deterministic.
    pub routes_per_pair: (usize, usize),
    pub vm_count: (u32, u32),
}

impl Default for TopologyShape {
    fn default() -> Self {
        TopologyShape { nodes: (2, 4), classes: (1, 3), routes_per_pair: (1, 3), vm_count: (1, 3) }
    }
}

fn between<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Random valid topology with both tiers and full route coverage.
pub fn random_topology<R: Rng>(rng: &mut R, shape: &TopologyShape) -> Topology {
    let n_nodes = between(rng, shape.nodes).max(2);
    let nodes: Vec<NodeSpec> = (0..n_nodes)
        .map(|i| {
            let vm = rng.random_range(shape.vm_count.0..=shape.vm_count.1);
            NodeSpec {
                node_id: format!("n{i}"),
                tier: if i == 0 {
                    Tier::Private
                } else if i == 1 {
                    Tier::Public
                } else if rng.random_bool(0.5) {
                    Tier::Private
                } else {
                    Tier::Public
                },
                vm_count: vm,
                service_rate: rng.random_range(0.5..4.0),
                vm_min: 1,
                vm_max: vm.max(1) + 4,
            }
        })
        .collect();
    let n_links = rng.random_range(2..=5);
    let links: Vec<LinkSpec> = (0..n_links)
        .map(|i| LinkSpec {
            link_id: format!("l{i}"),
            latency_s: rng.random_range(0.0..0.1),
            bandwidth_bps: rng.random_range(1e4..1e7),
        })
        .collect();
    let classes = between(rng, shape.classes).max(1);
    let mut routes = Vec::new();
    for c in 0..classes {
        for node in &nodes {
            for r in 0..between(rng, shape.routes_per_pair).max(1) {
                let hops = rng.random_range(1..=3);
                routes.push(Route {
                    route_id: format!("c{c}-{}-{r}", node.node_id),
                    client_class: format!("c{c}"),
                    target_node: node.node_id.clone(),
                    links: (0..hops).map(|_| links.choose(rng).unwrap().link_id.clone()).collect(),
                    weight: rng.random_range(0.1..5.0),
                });
            }
        }
    }
    Topology::new(nodes, links, routes).expect("generator builds valid topologies")
}

#[derive(Debug, Clone)]
pub struct CatalogShape {
    pub fragments: (usize, usize),
    pub templates: (usize, usize),
    pub pin_probability: f64,
}

impl Default for CatalogShape {
    fn default() -> Self {
        CatalogShape { fragments: (1, 6), templates: (1, 4), pin_probability: 0.2 }
    }
}

pub fn random_catalog<R: Rng>(rng: &mut R, shape: &CatalogShape) -> Catalog {
    let n = between(rng, shape.fragments).max(1);
    let fragments: Vec<Fragment> = (0..n)
        .map(|i| Fragment {
            fragment_id: format!("f{i}"),
            table: format!("t{}", i / 2),
            size_bytes: rng.random_range(1..1_000_000_000),
            pinned_tier: rng.random_bool(shape.pin_probability).then(|| {
                if rng.random_bool(0.5) {
                    Tier::Private
                } else {
                    Tier::Public
                }
            }),
        })
        .collect();
    let templates = (0..between(rng, shape.templates).max(1))
        .map(|t| {
            let k = rng.random_range(1..=n.min(3));
            let read: BTreeSet<String> =
                fragments.choose_multiple(rng, k).map(|f| f.fragment_id.clone()).collect();
            let mut bytes = BTreeMap::new();
            for f in &read {
                if rng.random_bool(0.8) {
                    bytes.insert(f.clone(), rng.random_range(0..2_000_000u64));
                }
            }
            QueryTemplate {
                template_id: format!("q{t}"),
                fragments_read: read,
                cpu_work: rng.random_range(0.05..10.0),
                result_bytes_per_fragment: bytes,
                frequency_weight: rng.random_range(0.1..10.0),
            }
        })
        .collect();
    let catalog = Catalog { fragments, templates };
    catalog.validate().expect("generator builds valid catalogs");
    catalog
}

/// Random placement respecting tier pins.
pub fn random_placement<R: Rng>(rng: &mut R, catalog: &Catalog, topology: &Topology) -> Placement {
    catalog
        .fragments
        .iter()
        .map(|f| {
            let allowed: Vec<&NodeSpec> =
                topology.nodes().iter().filter(|n| f.pinned_tier.is_none_or(|t| t == n.tier)).collect();
            (f.fragment_id.clone(), allowed.choose(rng).unwrap().node_id.clone())
        })
        .collect()
}

/// Arrival-sorted instances drawn uniformly over templates and classes.
pub fn random_workload<R: Rng>(rng: &mut R, catalog: &Catalog, topology: &Topology, n: usize, horizon_s: f64) -> Vec<QueryInstance> {
    let mut arrivals: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..horizon_s)).collect();
    // Occasional exact ties exercise the equal-time ordering rules.
    if n > 1 && rng.random_bool(0.3) {
        arrivals[1] = arrivals[0];
    }
    arrivals.sort_by(f64::total_cmp);
    arrivals
        .into_iter()
        .enumerate()
        .map(|(i, t)| QueryInstance {
            instance_id: i as u64,
            template_id: catalog.templates.choose(rng).unwrap().template_id.clone(),
            client_class: topology.client_classes().choose(rng).unwrap().clone(),
            arrival_s: t,
        })
        .collect()
}

/// Placement rule breaches found by a direct reading of the rules, as
/// `(rule, fragment_id)` pairs.
pub fn naive_violations(placement: &Placement, catalog: &Catalog, topology: &Topology) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for f in &catalog.fragments {
        match placement.assignment.get(&f.fragment_id) {
            None => {
                out.insert(("unassigned_fragment".into(), f.fragment_id.clone()));
            }
            Some(node_id) => match topology.nodes().iter().find(|n| &n.node_id == node_id) {
                None => {
                    out.insert(("unknown_node".into(), f.fragment_id.clone()));
                }
                Some(node) => {
                    if f.pinned_tier.is_some_and(|t| t != node.tier) {
                        out.insert(("pinned_tier".into(), f.fragment_id.clone()));
                    }
                }
            },
        }
    }
    for id in placement.assignment.keys() {
        if !catalog.fragments.iter().any(|f| &f.fragment_id == id) {
            out.insert(("unknown_fragment".into(), id.clone()));
        }
    }
    out
}

/// Σ latency + bytes / slowest bandwidth over the links of `route`.
pub fn reference_transfer(bytes: u64, route: &Route, topology: &Topology) -> f64 {
    let links: Vec<&LinkSpec> =
        route.links.iter().map(|id| topology.links().iter().find(|l| &l.link_id == id).unwrap()).collect();
    let latency: f64 = links.iter().map(|l| l.latency_s).sum();
    let slowest = links.iter().map(|l| l.bandwidth_bps).fold(f64::INFINITY, f64::min);
    latency + bytes as f64 / slowest
}

/// Latency per instance computed without an event queue: each node serves
/// its items first come first served on `vm_count` servers (earliest free
/// server wins, arrival ties by instance id), then the result crosses the
/// pair's single route. Requires exactly one route per (class, node).
pub fn replay_latencies(
    topology: &Topology,
    catalog: &Catalog,
    placement: &Placement,
    workload: &[QueryInstance],
) -> Vec<f64> {
    let mut finish = vec![f64::NEG_INFINITY; workload.len()];
    for node in topology.nodes() {
        let mut free = vec![0.0_f64; node.vm_count as usize];
        let mut order: Vec<usize> = (0..workload.len()).collect();
        order.sort_by(|&a, &b| {
            workload[a].arrival_s.total_cmp(&workload[b].arrival_s).then(workload[a].instance_id.cmp(&workload[b].instance_id))
        });
        for q in order {
            let inst = &workload[q];
            let template = catalog.templates.iter().find(|t| t.template_id == inst.template_id).unwrap();
            let here: Vec<&String> = template
                .fragments_read
                .iter()
                .filter(|f| placement.assignment[*f] == node.node_id)
                .collect();
            if here.is_empty() {
                continue;
            }
            let nodes_touched: BTreeSet<&String> =
                template.fragments_read.iter().map(|f| &placement.assignment[f]).collect();
            let share = template.cpu_work / nodes_touched.len() as f64;
            let bytes: u64 = here.iter().map(|f| template.result_bytes_per_fragment.get(*f).copied().unwrap_or(0)).sum();
            let (server, &earliest) =
                free.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("vm_count ≥ 1");
            let start = earliest.max(inst.arrival_s);
            let done = start + share / node.service_rate;
            free[server] = done;
            let route = topology
                .routes()
                .iter()
                .find(|r| r.client_class == inst.client_class && r.target_node == node.node_id)
                .unwrap();
            finish[q] = finish[q].max(done + reference_transfer(bytes, route, topology));
        }
    }
    finish.iter().zip(workload).map(|(f, q)| f - q.arrival_s).collect()
}
