//! Randomised invariant checks, 1000 cases each. Instances are built from a
//! proptest-drawn seed by the generators in `hybridsim-testkit`.

use std::collections::BTreeSet;

use hybridsim_core::control::{run_closed_loop, step_controller, ControllerConfig, LinearModel, Output};
use hybridsim_core::datamodel::{query_footprint, validate_placement, Placement, Violation};
use hybridsim_core::engine::{simulate, write_trace_csv, LogEntry, SimInput, Simulation, Trace};
use hybridsim_core::placement::{brute_force_optimal_with, greedy_improve_with, CostModel};
use hybridsim_core::topology::{sample_route, transfer_time, LinkSpec, Route, Topology};
use hybridsim_core::workload::{generate_workload, Arrival, Burst, QueryInstance, WorkloadSpec};
use hybridsim_testkit::{
    naive_violations, random_catalog, random_placement, random_topology, random_workload, replay_latencies, rng,
    CatalogShape, TopologyShape,
};
use nalgebra::{dmatrix, DVector};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

const CASES: u32 = 1000;

fn config() -> ProptestConfig {
    ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() }
}

struct Instance {
    topology: Topology,
    catalog: hybridsim_core::datamodel::Catalog,
    placement: Placement,
    workload: Vec<QueryInstance>,
}

fn instance(seed: u64, shape: &TopologyShape, queries: usize) -> Instance {
    let mut r = rng(seed);
    let topology = random_topology(&mut r, shape);
    let catalog = random_catalog(&mut r, &CatalogShape::default());
    let placement = random_placement(&mut r, &catalog, &topology);
    let n = r.random_range(0..=queries);
    let workload = random_workload(&mut r, &catalog, &topology, n, 50.0);
    Instance { topology, catalog, placement, workload }
}

impl Instance {
    fn input(&self, seed: u64) -> SimInput<'_> {
        SimInput {
            topology: &self.topology,
            catalog: &self.catalog,
            placement: &self.placement,
            workload: &self.workload,
            seed,
        }
    }
}

fn single_route() -> TopologyShape {
    TopologyShape { routes_per_pair: (1, 1), ..TopologyShape::default() }
}

fn csv(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    write_trace_csv(trace, &mut out).unwrap();
    out
}

fn with_links(topology: &Topology, links: Vec<LinkSpec>) -> Topology {
    Topology::new(topology.nodes().to_vec(), links, topology.routes().to_vec()).unwrap()
}

proptest! {
    #![proptest_config(config())]

    // ---- topology ----

    #[test]
    fn transfer_is_monotone_in_bytes_and_bandwidth(seed: u64, b1 in 0u64..10_000_000, b2 in 0u64..10_000_000, factor in 1.0f64..100.0) {
        let mut r = rng(seed);
        let topology = random_topology(&mut r, &TopologyShape::default());
        let route: &Route = topology.routes().choose(&mut r).unwrap();
        let (lo, hi) = (b1.min(b2), b1.max(b2));
        prop_assert!(transfer_time(lo, route, &topology) <= transfer_time(hi, route, &topology));

        let mut links = topology.links().to_vec();
        let i = r.random_range(0..links.len());
        links[i].bandwidth_bps *= factor;
        let faster = with_links(&topology, links);
        let same = faster.routes().iter().find(|x| x.route_id == route.route_id).unwrap();
        prop_assert!(transfer_time(hi, same, &faster) <= transfer_time(hi, route, &topology));
    }

    #[test]
    fn zero_bytes_cost_exactly_the_route_latency(seed: u64) {
        let mut r = rng(seed);
        let topology = random_topology(&mut r, &TopologyShape::default());
        for route in topology.routes() {
            let sum = route.links.iter().map(|id| topology.link(id).unwrap().latency_s).fold(0.0, |a, b| a + b);
            prop_assert_eq!(transfer_time(0, route, &topology), sum);
        }
    }

    #[test]
    fn route_sampling_is_reproducible(seed: u64, draw_seed: u64) {
        let mut r = rng(seed);
        let topology = random_topology(&mut r, &TopologyShape::default());
        let class = topology.client_classes()[0].clone();
        let node = topology.nodes()[0].node_id.clone();
        let draws = |s| {
            let mut g = rng(s);
            (0..20).map(|_| sample_route(&topology, &class, &node, &mut g).unwrap().route_id.clone()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draws(draw_seed), draws(draw_seed));
    }

    // ---- datamodel ----

    #[test]
    fn footprints_conserve_cpu_and_bytes(seed: u64) {
        let inst = instance(seed, &TopologyShape::default(), 0);
        for t in &inst.catalog.templates {
            let fp = query_footprint(t, &inst.placement);
            let cpu: f64 = fp.values().map(|s| s.cpu_work).sum();
            let bytes: u64 = fp.values().map(|s| s.bytes_out).sum();
            prop_assert!((cpu - t.cpu_work).abs() <= 1e-12 * t.cpu_work);
            prop_assert_eq!(bytes, t.total_result_bytes());
        }
    }

    #[test]
    fn placement_validation_matches_naive_checker(seed: u64) {
        let inst = instance(seed, &TopologyShape::default(), 0);
        let mut r = rng(seed ^ 0x5eed);
        let mut placement = inst.placement.clone();
        let ids: Vec<String> = placement.assignment.keys().cloned().collect();
        for _ in 0..r.random_range(0..4) {
            let f = ids.choose(&mut r).unwrap().clone();
            match r.random_range(0..4) {
                0 => { placement.assignment.remove(&f); }
                1 => { placement.assignment.insert(format!("ghost{}", r.random_range(0..3)), "n0".into()); }
                2 => { placement.assignment.insert(f, "nowhere".into()); }
                _ => {
                    let node = inst.topology.nodes().choose(&mut r).unwrap().node_id.clone();
                    placement.assignment.insert(f, node);
                }
            }
        }
        let got: BTreeSet<(String, String)> = validate_placement(&placement, &inst.catalog, &inst.topology)
            .into_iter()
            .map(|v| match v {
                Violation::UnassignedFragment { fragment_id } => ("unassigned_fragment".to_string(), fragment_id),
                Violation::UnknownFragment { fragment_id } => ("unknown_fragment".to_string(), fragment_id),
                Violation::UnknownNode { fragment_id, .. } => ("unknown_node".to_string(), fragment_id),
                Violation::PinnedTier { fragment_id, .. } => ("pinned_tier".to_string(), fragment_id),
            })
            .collect();
        prop_assert_eq!(got, naive_violations(&placement, &inst.catalog, &inst.topology));
    }

    // ---- workload ----

    #[test]
    fn workloads_are_deterministic_sorted_and_bounded(seed: u64) {
        let mut r = rng(seed);
        let topology = random_topology(&mut r, &TopologyShape::default());
        let catalog = random_catalog(&mut r, &CatalogShape::default());
        let horizon_s = r.random_range(1.0..1000.0);
        let arrival = if r.random_bool(0.5) {
            Arrival::Poisson { rate_per_s: r.random_range(0.001..0.2) }
        } else {
            Arrival::FixedCount { n: r.random_range(1..60) }
        };
        let bursts = (0..r.random_range(0..3))
            .map(|_| {
                let start_s = r.random_range(0.0..horizon_s);
                Burst {
                    start_s,
                    duration_s: r.random_range(0.0..=(horizon_s - start_s)),
                    extra_queries: r.random_range(1..20),
                    template_id: None,
                }
            })
            .collect();
        let spec = WorkloadSpec { horizon_s, arrival, bursts, seed };
        let a = generate_workload(&spec, &catalog, topology.client_classes()).unwrap();
        let b = generate_workload(&spec, &catalog, topology.client_classes()).unwrap();
        prop_assert_eq!(&a, &b);
        for (i, q) in a.iter().enumerate() {
            prop_assert_eq!(q.instance_id, i as u64);
            prop_assert!(q.arrival_s >= 0.0 && q.arrival_s <= horizon_s);
        }
        prop_assert!(a.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
    }

    // ---- engine ----

    #[test]
    fn engine_conserves_queries_and_respects_bounds(seed: u64) {
        let inst = instance(seed, &TopologyShape::default(), 30);
        let trace = simulate(inst.input(seed), &[]).unwrap();
        prop_assert_eq!(trace.records.len(), inst.workload.len());
        let ids: BTreeSet<u64> = trace.records.iter().map(|r| r.instance_id).collect();
        prop_assert_eq!(ids.len(), inst.workload.len());
        for (rec, q) in trace.records.iter().zip(&inst.workload) {
            prop_assert_eq!(rec.instance_id, q.instance_id);
            let template = inst.catalog.template(&q.template_id).unwrap();
            let fp = query_footprint(template, &inst.placement);
            let service_lb = fp
                .iter()
                .map(|(n, s)| s.cpu_work / inst.topology.node(n).unwrap().service_rate)
                .fold(0.0, f64::max);
            let route_lb = fp
                .keys()
                .flat_map(|n| inst.topology.routes_between(&q.client_class, n))
                .map(|r| transfer_time(0, r, &inst.topology))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(rec.latency_s >= service_lb + route_lb - 1e-9, "latency {} below bound", rec.latency_s);
            let parts = rec.queue_wait_s + rec.service_s + rec.network_s;
            prop_assert!((parts - rec.latency_s).abs() <= 1e-9 * rec.completion_s.max(1.0));
        }
    }

    #[test]
    fn no_server_is_oversubscribed(seed: u64) {
        let inst = instance(seed, &TopologyShape { vm_count: (1, 2), ..TopologyShape::default() }, 30);
        let mut sim = Simulation::new(inst.input(seed)).unwrap().with_log();
        sim.advance_to(f64::INFINITY);
        let mut busy = vec![0u32; inst.topology.nodes().len()];
        let mut cap: Vec<u32> = inst.topology.nodes().iter().map(|n| n.vm_count).collect();
        for entry in sim.log().unwrap() {
            match *entry {
                LogEntry::Start { node, .. } => {
                    prop_assert!(busy[node] < cap[node]);
                    busy[node] += 1;
                }
                LogEntry::Finish { node, .. } => busy[node] -= 1,
                LogEntry::Capacity { node, vm_count, .. } => cap[node] = vm_count,
            }
        }
        prop_assert!(busy.iter().all(|&b| b == 0));
    }

    #[test]
    fn engine_is_deterministic(seed: u64) {
        let inst = instance(seed, &TopologyShape::default(), 30);
        let a = simulate(inst.input(seed), &[]).unwrap();
        let b = simulate(inst.input(seed), &[]).unwrap();
        prop_assert_eq!(csv(&a), csv(&b));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn doubling_work_never_speeds_a_query_up(seed: u64) {
        let inst = instance(seed, &single_route(), 30);
        let before = simulate(inst.input(seed), &[]).unwrap();
        let mut heavier = inst.catalog.clone();
        for t in &mut heavier.templates {
            t.cpu_work *= 2.0;
        }
        let after = simulate(SimInput { catalog: &heavier, ..inst.input(seed) }, &[]).unwrap();
        for (a, b) in before.records.iter().zip(&after.records) {
            prop_assert!(b.latency_s >= a.latency_s - 1e-9, "instance {}: {} -> {}", a.instance_id, a.latency_s, b.latency_s);
        }
    }

    #[test]
    fn engine_matches_reference_replay(seed: u64) {
        let inst = instance(seed, &single_route(), 12);
        let trace = simulate(inst.input(seed), &[]).unwrap();
        let expected = replay_latencies(&inst.topology, &inst.catalog, &inst.placement, &inst.workload);
        for (rec, want) in trace.records.iter().zip(expected) {
            prop_assert!((rec.latency_s - want).abs() <= 1e-9, "instance {}: {} vs {}", rec.instance_id, rec.latency_s, want);
        }
    }

    // ---- placement ----

    #[test]
    fn brute_force_le_greedy_le_initial(seed: u64) {
        let mut r = rng(seed);
        let topology = random_topology(&mut r, &TopologyShape { nodes: (2, 4), ..TopologyShape::default() });
        let catalog = random_catalog(&mut r, &CatalogShape { fragments: (1, 6), ..CatalogShape::default() });
        let initial = random_placement(&mut r, &catalog, &topology);
        let model = CostModel::new(&catalog, &topology).unwrap();
        let greedy = greedy_improve_with(&model, &initial, 1000).unwrap();
        let (optimal, best) = brute_force_optimal_with(&model).unwrap();
        let tol = 1e-12 * greedy.initial_cost_s.max(1.0);
        prop_assert!(best <= greedy.final_cost_s + tol);
        prop_assert!(greedy.final_cost_s <= greedy.initial_cost_s + tol);
        prop_assert!(validate_placement(&greedy.placement, &catalog, &topology).is_empty());
        prop_assert!(validate_placement(&optimal, &catalog, &topology).is_empty());
        let again = greedy_improve_with(&model, &greedy.placement, 1000).unwrap();
        prop_assert!(again.final_cost_s <= greedy.final_cost_s + tol);
        // From the optimum no single move improves.
        let from_best = greedy_improve_with(&model, &optimal, 1000).unwrap();
        prop_assert!(from_best.moves.is_empty());
    }

    #[test]
    fn cost_is_invariant_under_node_relabeling(seed: u64) {
        let inst = instance(seed, &TopologyShape::default(), 0);
        let mut r = rng(seed ^ 0xabc);
        let mut perm: Vec<usize> = (0..inst.topology.nodes().len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let rename = |id: &str| format!("m{}", perm[id[1..].parse::<usize>().unwrap()]);
        let nodes = inst.topology.nodes().iter().map(|n| hybridsim_core::topology::NodeSpec { node_id: rename(&n.node_id), ..n.clone() }).collect();
        let routes = inst.topology.routes().iter().map(|x| Route { target_node: rename(&x.target_node), ..x.clone() }).collect();
        let relabeled = Topology::new(nodes, inst.topology.links().to_vec(), routes).unwrap();
        let placement: Placement = inst.placement.assignment.iter().map(|(f, n)| (f.clone(), rename(n))).collect();
        let a = CostModel::new(&inst.catalog, &inst.topology).unwrap().evaluate(&inst.placement).unwrap();
        let b = CostModel::new(&inst.catalog, &relabeled).unwrap().evaluate(&placement).unwrap();
        prop_assert!((a.expected_latency_s - b.expected_latency_s).abs() <= 1e-12 * a.expected_latency_s.max(1.0));
    }

    // ---- control ----

    #[test]
    fn controller_output_stays_within_bounds(k in -10.0f64..10.0, r in -50.0f64..50.0, y in -1e4f64..1e4, s in -100.0f64..100.0, lo in -20.0f64..20.0, width in 0.0f64..40.0) {
        let cfg = ControllerConfig {
            gain: dmatrix![k],
            setpoint: DVector::from_element(1, r),
            u_min: DVector::from_element(1, lo),
            u_max: DVector::from_element(1, lo + width),
            sample_interval_s: 1.0,
            lambda: 0.0,
            controlled_nodes: vec![],
            outputs: vec![Output::MeanLatency],
        };
        let step = step_controller(&cfg, &DVector::from_element(1, s), &DVector::from_element(1, y));
        prop_assert!(step.u[0] >= lo && step.u[0] <= lo + width);
        prop_assert!(step.integrator[0] >= s.min(lo) && step.integrator[0] <= s.max(lo + width));
    }

    #[test]
    fn zero_error_holds_u_constant(k in -10.0f64..10.0, r in -50.0f64..50.0, s in -5.0f64..5.0) {
        let cfg = ControllerConfig {
            gain: dmatrix![k],
            setpoint: DVector::from_element(1, r),
            u_min: DVector::from_element(1, -10.0),
            u_max: DVector::from_element(1, 10.0),
            sample_interval_s: 1.0,
            lambda: 0.0,
            controlled_nodes: vec![],
            outputs: vec![Output::MeanLatency],
        };
        let mut state = DVector::from_element(1, s);
        let first = step_controller(&cfg, &state, &cfg.setpoint).u;
        for _ in 0..50 {
            let step = step_controller(&cfg, &state, &cfg.setpoint);
            prop_assert_eq!(&step.u, &first);
            state = step.integrator;
        }
    }

    #[test]
    fn zero_gain_closed_loop_is_transparent(seed: u64) {
        let inst = instance(seed, &TopologyShape::default(), 30);
        let node = &inst.topology.nodes()[0];
        let cfg = ControllerConfig {
            gain: dmatrix![0.0],
            setpoint: DVector::from_element(1, 1.0),
            u_min: DVector::from_element(1, node.vm_min as f64),
            u_max: DVector::from_element(1, node.vm_max as f64),
            sample_interval_s: 5.0,
            lambda: 0.1,
            controlled_nodes: vec![node.node_id.clone()],
            outputs: vec![Output::MeanLatency],
        };
        let model = LinearModel::new(dmatrix![0.5], dmatrix![1.0], dmatrix![1.0], 5.0).unwrap();
        let (controlled, control) = run_closed_loop(inst.input(seed), &model, &cfg).unwrap();
        let plain = simulate(inst.input(seed), &[]).unwrap();
        prop_assert_eq!(csv(&controlled), csv(&plain));
        prop_assert_eq!(controlled.records, plain.records);
        prop_assert!(control.steps.iter().all(|s| s.applied == vec![node.vm_count]));
    }
}
