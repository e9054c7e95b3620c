//! Hybrid-cloud infrastructure: nodes in a private or public tier, network
//! links with fixed latency and bandwidth, and weighted routes from client
//! classes to nodes.
//!
//! Delay and bandwidth vary per query only through random route choice; each
//! link's parameters are fixed.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Private,
    Public,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::Private => "private",
            Tier::Public => "public",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub node_id: String,
    pub tier: Tier,
    /// Parallel servers (VMs) at the node.
    pub vm_count: u32,
    /// CPU-work units per second per VM.
    pub service_rate: f64,
    pub vm_min: u32,
    pub vm_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub link_id: String,
    pub latency_s: f64,
    #[serde(rename = "bandwidth_Bps")]
    pub bandwidth_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub route_id: String,
    pub client_class: String,
    pub target_node: String,
    pub links: Vec<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyDocument {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkSpec>,
    routes: Vec<Route>,
}

/// A validated topology. Immutable once built.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkSpec>,
    routes: Vec<Route>,
    node_index: HashMap<String, usize>,
    link_index: HashMap<String, usize>,
    /// (client_class, target_node) -> route indices in document order.
    routes_by_pair: BTreeMap<(String, String), Vec<usize>>,
    client_classes: Vec<String>,
}

impl Serialize for Topology {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View<'a> {
            nodes: &'a [NodeSpec],
            links: &'a [LinkSpec],
            routes: &'a [Route],
        }
        View {
            nodes: &self.nodes,
            links: &self.links,
            routes: &self.routes,
        }
        .serialize(serializer)
    }
}

/// Parses and validates a topology JSON document.
pub fn load_topology(document: &str) -> Result<Topology> {
    let doc: TopologyDocument = serde_json::from_str(document)?;
    Topology::new(doc.nodes, doc.links, doc.routes)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl Topology {
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<LinkSpec>, routes: Vec<Route>) -> Result<Self> {
        let mut node_index = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if node_index.insert(node.node_id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate node id `{}`", node.node_id)));
            }
            check_node(node)?;
        }
        let mut link_index = HashMap::new();
        for (i, link) in links.iter().enumerate() {
            if link_index.insert(link.link_id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate link id `{}`", link.link_id)));
            }
            if !(link.latency_s >= 0.0 && link.latency_s.is_finite()) {
                return Err(invalid(format!(
                    "link `{}`: latency must be nonnegative",
                    link.link_id
                )));
            }
            if !(link.bandwidth_bps > 0.0 && link.bandwidth_bps.is_finite()) {
                return Err(invalid(format!(
                    "link `{}`: bandwidth must be positive",
                    link.link_id
                )));
            }
        }

        let mut route_ids = BTreeSet::new();
        let mut routes_by_pair: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, route) in routes.iter().enumerate() {
            if !route_ids.insert(route.route_id.as_str()) {
                return Err(invalid(format!("duplicate route id `{}`", route.route_id)));
            }
            if route.links.is_empty() {
                return Err(invalid(format!("route `{}` has no links", route.route_id)));
            }
            if let Some(missing) = route.links.iter().find(|l| !link_index.contains_key(*l)) {
                return Err(invalid(format!(
                    "route `{}` references unknown link `{missing}`",
                    route.route_id
                )));
            }
            if !node_index.contains_key(&route.target_node) {
                return Err(invalid(format!(
                    "route `{}` targets unknown node `{}`",
                    route.route_id, route.target_node
                )));
            }
            if !(route.weight > 0.0 && route.weight.is_finite()) {
                return Err(invalid(format!(
                    "route `{}`: weight must be positive",
                    route.route_id
                )));
            }
            routes_by_pair
                .entry((route.client_class.clone(), route.target_node.clone()))
                .or_default()
                .push(i);
        }

        for tier in [Tier::Private, Tier::Public] {
            if !nodes.iter().any(|n| n.tier == tier) {
                return Err(invalid(format!("topology needs at least one {tier} node")));
            }
        }

        let client_classes: Vec<String> = routes
            .iter()
            .map(|r| r.client_class.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if client_classes.is_empty() {
            return Err(invalid("topology has no routes"));
        }
        // Any client class may query any node, so coverage must be total.
        for class in &client_classes {
            for node in &nodes {
                if !routes_by_pair.contains_key(&(class.clone(), node.node_id.clone())) {
                    return Err(invalid(format!(
                        "no route from client class `{class}` to node `{}`",
                        node.node_id
                    )));
                }
            }
        }

        Ok(Self {
            nodes,
            links,
            routes,
            node_index,
            link_index,
            routes_by_pair,
            client_classes,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn node(&self, node_id: &str) -> Option<&NodeSpec> {
        self.node_index.get(node_id).map(|&i| &self.nodes[i])
    }

    pub fn node_position(&self, node_id: &str) -> Option<usize> {
        self.node_index.get(node_id).copied()
    }

    pub fn link(&self, link_id: &str) -> Option<&LinkSpec> {
        self.link_index.get(link_id).map(|&i| &self.links[i])
    }

    /// Sorted, distinct client classes appearing in routes.
    pub fn client_classes(&self) -> &[String] {
        &self.client_classes
    }

    /// Routes for the pair in document order.
    pub fn routes_between<'a>(
        &'a self,
        client_class: &str,
        target_node: &str,
    ) -> impl Iterator<Item = &'a Route> + 'a {
        self.routes_by_pair
            .get(&(client_class.to_owned(), target_node.to_owned()))
            .into_iter()
            .flatten()
            .map(|&i| &self.routes[i])
    }

    /// Returns a copy with one node's capacity replaced. Used to derive
    /// what-if topologies; bounds are enforced.
    pub fn with_vm_count(&self, node_id: &str, vm_count: u32) -> Result<Self> {
        let mut next = self.clone();
        let i = *self
            .node_index
            .get(node_id)
            .ok_or_else(|| invalid(format!("unknown node `{node_id}`")))?;
        next.nodes[i].vm_count = vm_count;
        check_node(&next.nodes[i])?;
        Ok(next)
    }
}

fn check_node(node: &NodeSpec) -> Result<()> {
    if node.vm_min < 1 {
        return Err(invalid(format!("node `{}`: vm_min must be at least 1", node.node_id)));
    }
    if !(node.vm_min <= node.vm_count && node.vm_count <= node.vm_max) {
        return Err(invalid(format!(
            "node `{}`: vm_count {} outside [{}, {}]",
            node.node_id, node.vm_count, node.vm_min, node.vm_max
        )));
    }
    if !(node.service_rate > 0.0 && node.service_rate.is_finite()) {
        return Err(invalid(format!(
            "node `{}`: service_rate must be positive",
            node.node_id
        )));
    }
    Ok(())
}

/// Picks a route for the pair with probability proportional to its weight.
pub fn sample_route<'a, R: Rng + ?Sized>(
    topology: &'a Topology,
    client_class: &str,
    target_node: &str,
    rng: &mut R,
) -> Result<&'a Route> {
    let candidates: Vec<&Route> = topology.routes_between(client_class, target_node).collect();
    match candidates.as_slice() {
        [] => Err(Error::NoRoute {
            client_class: client_class.to_owned(),
            target_node: target_node.to_owned(),
        }),
        // A lone route consumes no randomness.
        [only] => Ok(only),
        many => {
            let dist = WeightedIndex::new(many.iter().map(|r| r.weight))
                .expect("weights validated positive");
            Ok(many[dist.sample(rng)])
        }
    }
}

/// End-to-end transfer time: latencies add up, the payload moves at the
/// bottleneck bandwidth.
pub fn transfer_time(bytes: u64, route: &Route, topology: &Topology) -> f64 {
    let mut latency = 0.0;
    let mut bottleneck = f64::INFINITY;
    for link_id in &route.links {
        let link = topology.link(link_id).expect("route links validated");
        latency += link.latency_s;
        bottleneck = bottleneck.min(link.bandwidth_bps);
    }
    if bytes == 0 {
        latency
    } else {
        latency + bytes as f64 / bottleneck
    }
}

/// Route-averaged transfer parameters for one node: expected latency sum and
/// expected inverse bottleneck bandwidth. Routes are weighted within a client
/// class and classes are averaged uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteProfile {
    pub mean_latency_s: f64,
    pub mean_inverse_bandwidth: f64,
}

impl RouteProfile {
    pub fn expected_transfer_time(&self, bytes: u64) -> f64 {
        if bytes == 0 {
            self.mean_latency_s
        } else {
            self.mean_latency_s + bytes as f64 * self.mean_inverse_bandwidth
        }
    }
}

pub fn route_profile(node_id: &str, topology: &Topology) -> RouteProfile {
    let classes = topology.client_classes();
    let (mut latency, mut inverse) = (0.0, 0.0);
    for class in classes {
        let (mut lat, mut inv, mut weight_sum) = (0.0, 0.0, 0.0);
        for route in topology.routes_between(class, node_id) {
            let mut bottleneck = f64::INFINITY;
            for link_id in &route.links {
                let link = topology.link(link_id).expect("route links validated");
                lat += route.weight * link.latency_s;
                bottleneck = bottleneck.min(link.bandwidth_bps);
            }
            inv += route.weight / bottleneck;
            weight_sum += route.weight;
        }
        latency += lat / weight_sum;
        inverse += inv / weight_sum;
    }
    let n = classes.len() as f64;
    RouteProfile { mean_latency_s: latency / n, mean_inverse_bandwidth: inverse / n }
}

/// Expected transfer time of `bytes` from `node_id` over a random route of a
/// uniformly chosen client class.
pub fn expected_transfer_time(bytes: u64, node_id: &str, topology: &Topology) -> f64 {
    route_profile(node_id, topology).expected_transfer_time(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn minimal_doc(bandwidth: f64) -> String {
        format!(
            r#"{{
              "nodes": [
                {{"node_id": "priv", "tier": "private", "vm_count": 1, "service_rate": 1.0, "vm_min": 1, "vm_max": 1}},
                {{"node_id": "pub", "tier": "public", "vm_count": 1, "service_rate": 1.0, "vm_min": 1, "vm_max": 4}}
              ],
              "links": [{{"link_id": "l1", "latency_s": 0.01, "bandwidth_Bps": {bandwidth}}}],
              "routes": [
                {{"route_id": "r1", "client_class": "c", "target_node": "priv", "links": ["l1"], "weight": 1.0}},
                {{"route_id": "r2", "client_class": "c", "target_node": "pub", "links": ["l1"], "weight": 1.0}}
              ]
            }}"#
        )
    }

    fn two_link_topology(lat: [f64; 2], bw: [f64; 2]) -> Topology {
        let nodes = vec![
            NodeSpec {
                node_id: "a".into(),
                tier: Tier::Private,
                vm_count: 1,
                service_rate: 1.0,
                vm_min: 1,
                vm_max: 1,
            },
            NodeSpec {
                node_id: "b".into(),
                tier: Tier::Public,
                vm_count: 1,
                service_rate: 1.0,
                vm_min: 1,
                vm_max: 1,
            },
        ];
        let links = vec![
            LinkSpec { link_id: "x".into(), latency_s: lat[0], bandwidth_bps: bw[0] },
            LinkSpec { link_id: "y".into(), latency_s: lat[1], bandwidth_bps: bw[1] },
        ];
        let route = |id: &str, node: &str, links: &[&str], w: f64| Route {
            route_id: id.into(),
            client_class: "c".into(),
            target_node: node.into(),
            links: links.iter().map(|s| s.to_string()).collect(),
            weight: w,
        };
        let routes = vec![
            route("both", "a", &["x", "y"], 1.0),
            route("bx", "b", &["x"], 1.0),
            route("by", "b", &["y"], 3.0),
        ];
        Topology::new(nodes, links, routes).unwrap()
    }

    #[test]
    fn loads_minimal_document() {
        let topo = load_topology(&minimal_doc(1e6)).unwrap();
        assert_eq!(topo.nodes().len(), 2);
        assert_eq!(topo.client_classes(), ["c".to_string()]);
    }

    #[test]
    fn rejects_zero_bandwidth() {
        let err = load_topology(&minimal_doc(0.0)).unwrap_err();
        assert!(err.to_string().contains("bandwidth must be positive"), "{err}");
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(matches!(load_topology("{ nodes: "), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_duplicate_ids_and_missing_coverage() {
        let dup = minimal_doc(1e6).replace("\"r2\"", "\"r1\"");
        assert!(load_topology(&dup).unwrap_err().to_string().contains("duplicate route id"));

        let uncovered = minimal_doc(1e6).replace(
            r#"{"route_id": "r2", "client_class": "c", "target_node": "pub", "links": ["l1"], "weight": 1.0}"#,
            r#"{"route_id": "r2", "client_class": "d", "target_node": "pub", "links": ["l1"], "weight": 1.0}"#,
        );
        let err = load_topology(&uncovered).unwrap_err().to_string();
        assert!(err.contains("no route from client class"), "{err}");
    }

    #[test]
    fn rejects_single_tier() {
        let doc = minimal_doc(1e6).replace("\"public\"", "\"private\"");
        assert!(load_topology(&doc).unwrap_err().to_string().contains("public"));
    }

    #[test]
    fn transfer_time_examples() {
        let topo = two_link_topology([0.01, 0.02], [1e7, 1e6]);
        let both = &topo.routes()[0];
        assert_eq!(transfer_time(0, both, &topo), 0.01 + 0.02);

        let single = two_link_topology([0.01, 0.0], [1e7, 1e7]);
        let bx = &single.routes()[1];
        assert!((transfer_time(1_000_000, bx, &single) - 0.11).abs() < 1e-12);

        let bottleneck = two_link_topology([0.0, 0.0], [1e7, 1e6]);
        assert_eq!(transfer_time(1_000_000, &bottleneck.routes()[0], &bottleneck), 1.0);
    }

    #[test]
    fn singleton_route_is_always_chosen() {
        let topo = two_link_topology([0.0, 0.0], [1.0, 1.0]);
        let mut rng = stream(3, Stream::Routes);
        for _ in 0..100 {
            assert_eq!(sample_route(&topo, "c", "a", &mut rng).unwrap().route_id, "both");
        }
    }

    #[test]
    fn unknown_pair_is_no_route() {
        let topo = two_link_topology([0.0, 0.0], [1.0, 1.0]);
        let mut rng = stream(3, Stream::Routes);
        assert!(matches!(
            sample_route(&topo, "zzz", "a", &mut rng),
            Err(Error::NoRoute { .. })
        ));
    }

    #[test]
    fn weighted_frequencies_follow_weights() {
        let topo = two_link_topology([0.0, 0.0], [1.0, 1.0]);
        let mut rng = stream(11, Stream::Routes);
        let n = 10_000;
        let heavy = (0..n)
            .filter(|_| sample_route(&topo, "c", "b", &mut rng).unwrap().route_id == "by")
            .count();
        let observed = [(n - heavy) as f64, heavy as f64];
        let expected = [0.25 * n as f64, 0.75 * n as f64];
        assert!((observed[1] / n as f64 - 0.75).abs() <= 0.02);
        // Chi-square, 1 dof, critical value at alpha = 0.01.
        let chi2: f64 = observed
            .iter()
            .zip(expected)
            .map(|(o, e)| (o - e).powi(2) / e)
            .sum();
        assert!(chi2 < 6.635, "chi2 = {chi2}");
    }

    #[test]
    fn same_seed_same_route_sequence() {
        let topo = two_link_topology([0.0, 0.0], [1.0, 1.0]);
        let draw = |seed| {
            let mut rng = stream(seed, Stream::Routes);
            (0..200)
                .map(|_| sample_route(&topo, "c", "b", &mut rng).unwrap().route_id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn expected_transfer_weights_routes() {
        let topo = two_link_topology([1.0, 2.0], [1.0, 1.0]);
        // 0.25 * 1.0 + 0.75 * 2.0
        assert!((expected_transfer_time(0, "b", &topo) - 1.75).abs() < 1e-12);
    }
}
