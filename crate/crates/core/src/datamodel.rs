//! Fragments, query templates and placements.
//!
//! A query template reads a set of fragments. Its CPU work is split evenly
//! across the distinct nodes hosting those fragments, and each fragment ships
//! a fixed number of result bytes back to the client.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::{Tier, Topology};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fragment {
    pub fragment_id: String,
    pub table: String,
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_tier: Option<Tier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryTemplate {
    pub template_id: String,
    pub fragments_read: BTreeSet<String>,
    pub cpu_work: f64,
    #[serde(default)]
    pub result_bytes_per_fragment: BTreeMap<String, u64>,
    pub frequency_weight: f64,
}

impl QueryTemplate {
    pub fn result_bytes(&self, fragment_id: &str) -> u64 {
        self.result_bytes_per_fragment
            .get(fragment_id)
            .copied()
            .unwrap_or(0)
    }

    pub fn total_result_bytes(&self) -> u64 {
        self.fragments_read.iter().map(|f| self.result_bytes(f)).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub fragments: Vec<Fragment>,
    pub templates: Vec<QueryTemplate>,
}

pub fn load_catalog(document: &str) -> Result<Catalog> {
    let catalog: Catalog = serde_json::from_str(document)?;
    catalog.validate()?;
    Ok(catalog)
}

impl Catalog {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for fragment in &self.fragments {
            if !ids.insert(fragment.fragment_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate fragment id `{}`",
                    fragment.fragment_id
                )));
            }
            if fragment.size_bytes == 0 {
                return Err(Error::Validation(format!(
                    "fragment `{}`: size_bytes must be positive",
                    fragment.fragment_id
                )));
            }
        }
        let mut template_ids = BTreeSet::new();
        for t in &self.templates {
            let id = &t.template_id;
            if !template_ids.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate template id `{id}`")));
            }
            if t.fragments_read.is_empty() {
                return Err(Error::Validation(format!("template `{id}` reads no fragments")));
            }
            if let Some(f) = t.fragments_read.iter().find(|f| !ids.contains(f.as_str())) {
                return Err(Error::Validation(format!(
                    "template `{id}` references unknown fragment `{f}`"
                )));
            }
            if let Some(f) = t
                .result_bytes_per_fragment
                .keys()
                .find(|f| !t.fragments_read.contains(*f))
            {
                return Err(Error::Validation(format!(
                    "template `{id}` has result bytes for unread fragment `{f}`"
                )));
            }
            if !(t.cpu_work > 0.0 && t.cpu_work.is_finite()) {
                return Err(Error::Validation(format!("template `{id}`: cpu_work must be positive")));
            }
            if !(t.frequency_weight > 0.0 && t.frequency_weight.is_finite()) {
                return Err(Error::Validation(format!(
                    "template `{id}`: frequency_weight must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn fragment(&self, fragment_id: &str) -> Option<&Fragment> {
        self.fragments.iter().find(|f| f.fragment_id == fragment_id)
    }

    pub fn template(&self, template_id: &str) -> Option<&QueryTemplate> {
        self.templates.iter().find(|t| t.template_id == template_id)
    }
}

/// Total assignment of fragments to nodes. Serializes as a plain JSON map.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Placement {
    pub assignment: BTreeMap<String, String>,
}

impl Placement {
    pub fn node_of(&self, fragment_id: &str) -> Option<&str> {
        self.assignment.get(fragment_id).map(String::as_str)
    }

    /// Every fragment on `node_id`.
    pub fn all_on(catalog: &Catalog, node_id: &str) -> Self {
        Self {
            assignment: catalog
                .fragments
                .iter()
                .map(|f| (f.fragment_id.clone(), node_id.to_owned()))
                .collect(),
        }
    }
}

impl FromIterator<(String, String)> for Placement {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self {
            assignment: iter.into_iter().collect(),
        }
    }
}

pub fn load_placement(document: &str) -> Result<Placement> {
    Ok(serde_json::from_str(document)?)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    UnassignedFragment { fragment_id: String },
    UnknownFragment { fragment_id: String },
    UnknownNode { fragment_id: String, node_id: String },
    PinnedTier { fragment_id: String, pinned: Tier, node_id: String, node_tier: Tier },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnassignedFragment { fragment_id } => {
                write!(f, "unassigned fragment `{fragment_id}`")
            }
            Violation::UnknownFragment { fragment_id } => {
                write!(f, "placement names unknown fragment `{fragment_id}`")
            }
            Violation::UnknownNode { fragment_id, node_id } => {
                write!(f, "fragment `{fragment_id}` assigned to unknown node `{node_id}`")
            }
            Violation::PinnedTier { fragment_id, pinned, node_id, node_tier } => write!(
                f,
                "fragment `{fragment_id}` is pinned to the {pinned} tier but node `{node_id}` is {node_tier}"
            ),
        }
    }
}

/// Checks totality, id resolution and tier pins. An empty result means valid.
pub fn validate_placement(placement: &Placement, catalog: &Catalog, topology: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    for fragment in &catalog.fragments {
        let id = &fragment.fragment_id;
        let Some(node_id) = placement.node_of(id) else {
            out.push(Violation::UnassignedFragment { fragment_id: id.clone() });
            continue;
        };
        let Some(node) = topology.node(node_id) else {
            out.push(Violation::UnknownNode {
                fragment_id: id.clone(),
                node_id: node_id.to_owned(),
            });
            continue;
        };
        if let Some(pinned) = fragment.pinned_tier {
            if pinned != node.tier {
                out.push(Violation::PinnedTier {
                    fragment_id: id.clone(),
                    pinned,
                    node_id: node_id.to_owned(),
                    node_tier: node.tier,
                });
            }
        }
    }
    for id in placement.assignment.keys() {
        if catalog.fragment(id).is_none() {
            out.push(Violation::UnknownFragment { fragment_id: id.clone() });
        }
    }
    out
}

pub fn ensure_valid(placement: &Placement, catalog: &Catalog, topology: &Topology) -> Result<()> {
    let violations = validate_placement(placement, catalog, topology);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidPlacement(violations))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeShare {
    pub cpu_work: f64,
    pub bytes_out: u64,
}

/// Per-node work of one query: CPU split equally over the distinct hosting
/// nodes, result bytes summed per node. Keyed by node id.
///
/// Fragments missing from the placement are skipped; callers validate first.
pub fn query_footprint(template: &QueryTemplate, placement: &Placement) -> BTreeMap<String, NodeShare> {
    let mut shares: BTreeMap<String, NodeShare> = BTreeMap::new();
    for fragment_id in &template.fragments_read {
        if let Some(node) = placement.node_of(fragment_id) {
            shares.entry(node.to_owned()).or_default().bytes_out += template.result_bytes(fragment_id);
        }
    }
    let per_node = template.cpu_work / shares.len().max(1) as f64;
    for share in shares.values_mut() {
        share.cpu_work = per_node;
    }
    shares
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{LinkSpec, NodeSpec, Route};

    pub(crate) fn topo() -> Topology {
        let node = |id: &str, tier| NodeSpec {
            node_id: id.into(),
            tier,
            vm_count: 1,
            service_rate: 1.0,
            vm_min: 1,
            vm_max: 2,
        };
        let nodes = vec![node("p", Tier::Private), node("q", Tier::Public)];
        let links = vec![LinkSpec { link_id: "l".into(), latency_s: 0.0, bandwidth_bps: 1.0 }];
        let routes = ["p", "q"]
            .iter()
            .map(|n| Route {
                route_id: format!("r{n}"),
                client_class: "c".into(),
                target_node: n.to_string(),
                links: vec!["l".into()],
                weight: 1.0,
            })
            .collect();
        Topology::new(nodes, links, routes).unwrap()
    }

    fn catalog() -> Catalog {
        let frag = |id: &str, pin| Fragment {
            fragment_id: id.into(),
            table: "t".into(),
            size_bytes: 10,
            pinned_tier: pin,
        };
        Catalog {
            fragments: vec![frag("f1", None), frag("f2", Some(Tier::Private))],
            templates: vec![QueryTemplate {
                template_id: "T".into(),
                fragments_read: ["f1", "f2"].iter().map(|s| s.to_string()).collect(),
                cpu_work: 4.0,
                result_bytes_per_fragment: [("f1".to_string(), 1000), ("f2".to_string(), 3000)].into(),
                frequency_weight: 1.0,
            }],
        }
    }

    fn placement(pairs: &[(&str, &str)]) -> Placement {
        pairs.iter().map(|(f, n)| (f.to_string(), n.to_string())).collect()
    }

    #[test]
    fn all_private_is_valid() {
        let c = catalog();
        assert!(validate_placement(&Placement::all_on(&c, "p"), &c, &topo()).is_empty());
    }

    #[test]
    fn pinned_fragment_on_public_node_is_reported() {
        let c = catalog();
        let v = validate_placement(&placement(&[("f1", "p"), ("f2", "q")]), &c, &topo());
        assert_eq!(v.len(), 1);
        let msg = v[0].to_string();
        assert!(msg.contains("f2") && msg.contains("pinned"), "{msg}");
    }

    #[test]
    fn missing_fragment_is_unassigned() {
        let c = catalog();
        let v = validate_placement(&placement(&[("f2", "p")]), &c, &topo());
        assert_eq!(v, vec![Violation::UnassignedFragment { fragment_id: "f1".into() }]);
        assert!(v[0].to_string().starts_with("unassigned fragment"));
    }

    #[test]
    fn unknown_ids_are_reported() {
        let c = catalog();
        let v = validate_placement(&placement(&[("f1", "zz"), ("f2", "p"), ("f9", "p")]), &c, &topo());
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn footprint_single_node_takes_everything() {
        let c = catalog();
        let fp = query_footprint(&c.templates[0], &Placement::all_on(&c, "p"));
        assert_eq!(fp.len(), 1);
        assert_eq!(fp["p"], NodeShare { cpu_work: 4.0, bytes_out: 4000 });
    }

    #[test]
    fn footprint_splits_cpu_evenly() {
        let c = catalog();
        let fp = query_footprint(&c.templates[0], &placement(&[("f1", "q"), ("f2", "p")]));
        assert_eq!(fp["p"], NodeShare { cpu_work: 2.0, bytes_out: 3000 });
        assert_eq!(fp["q"], NodeShare { cpu_work: 2.0, bytes_out: 1000 });
    }

    #[test]
    fn catalog_validation_catches_bad_references() {
        let mut c = catalog();
        c.templates[0].result_bytes_per_fragment.insert("f3".into(), 1);
        assert!(c.validate().is_err());
        let mut c = catalog();
        c.fragments[0].size_bytes = 0;
        assert!(c.validate().is_err());
        let mut c = catalog();
        c.templates[0].fragments_read.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn placement_is_a_plain_json_map() {
        let p = placement(&[("f1", "p")]);
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"f1":"p"}"#);
        assert_eq!(load_placement(r#"{"f1":"p"}"#).unwrap(), p);
    }
}
