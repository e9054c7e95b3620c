//! Seeded query streams over a finite horizon.
//!
//! Base arrivals are either a fixed number of instants drawn uniformly over
//! the horizon or a Poisson process. Bursts add extra queries uniformly inside
//! their windows. Templates are drawn in proportion to their frequency weight
//! and client classes uniformly.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::datamodel::Catalog;
use crate::rng::{stream, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrival {
    Poisson { rate_per_s: f64 },
    FixedCount { n: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub start_s: f64,
    pub duration_s: f64,
    pub extra_queries: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

impl Burst {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t <= self.end_s()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub horizon_s: f64,
    pub arrival: Arrival,
    #[serde(default)]
    pub bursts: Vec<Burst>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(Error::Validation("workload horizon_s must be positive".into()));
        }
        match self.arrival {
            Arrival::Poisson { rate_per_s } if !(rate_per_s > 0.0 && rate_per_s.is_finite()) => {
                return Err(Error::Validation("poisson rate_per_s must be positive".into()))
            }
            Arrival::FixedCount { n: 0 } => {
                return Err(Error::Validation("fixed_count n must be positive".into()))
            }
            _ => {}
        }
        for (i, b) in self.bursts.iter().enumerate() {
            if !(b.duration_s > 0.0) {
                return Err(Error::Validation(format!("burst {i}: duration_s must be positive")));
            }
            if b.extra_queries == 0 {
                return Err(Error::Validation(format!("burst {i}: extra_queries must be at least 1")));
            }
            if !(b.start_s >= 0.0 && b.end_s() <= self.horizon_s) {
                return Err(Error::Validation(format!(
                    "burst {i}: window [{}, {}] outside [0, {}]",
                    b.start_s,
                    b.end_s(),
                    self.horizon_s
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub instance_id: u64,
    pub template_id: String,
    pub client_class: String,
    pub arrival_s: f64,
}

/// Draws template ids by frequency weight and client classes uniformly.
pub struct InstanceSampler<'a> {
    template_ids: Vec<&'a str>,
    templates: WeightedIndex<f64>,
    client_classes: &'a [String],
}

impl<'a> InstanceSampler<'a> {
    pub fn new(catalog: &'a Catalog, client_classes: &'a [String]) -> Result<Self> {
        if catalog.templates.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        if client_classes.is_empty() {
            return Err(Error::Validation("no client classes to draw from".into()));
        }
        let templates = WeightedIndex::new(catalog.templates.iter().map(|t| t.frequency_weight))
            .map_err(|e| Error::Validation(format!("template weights: {e}")))?;
        Ok(Self {
            template_ids: catalog.templates.iter().map(|t| t.template_id.as_str()).collect(),
            templates,
            client_classes,
        })
    }

    pub fn template<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a str {
        self.template_ids[self.templates.sample(rng)]
    }

    pub fn client<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a str {
        &self.client_classes[rng.random_range(0..self.client_classes.len())]
    }
}

/// Generates the full, arrival-ordered query stream for `spec`.
pub fn generate_workload(
    spec: &WorkloadSpec,
    catalog: &Catalog,
    client_classes: &[String],
) -> Result<Vec<QueryInstance>> {
    spec.validate()?;
    let sampler = InstanceSampler::new(catalog, client_classes)?;

    let mut arrivals_rng = stream(spec.seed, Stream::Arrivals);
    let mut arrivals: Vec<f64> = match spec.arrival {
        Arrival::FixedCount { n } => (0..n)
            .map(|_| arrivals_rng.random_range(0.0..=spec.horizon_s))
            .collect(),
        Arrival::Poisson { rate_per_s } => {
            let gap = Exp::new(rate_per_s).expect("rate validated positive");
            let mut out = Vec::new();
            let mut t = 0.0;
            loop {
                t += gap.sample(&mut arrivals_rng);
                if t > spec.horizon_s {
                    break out;
                }
                out.push(t);
            }
        }
    };
    arrivals.sort_by(f64::total_cmp);

    let mut template_rng = stream(spec.seed, Stream::Templates);
    let mut client_rng = stream(spec.seed, Stream::Clients);
    let base: Vec<QueryInstance> = arrivals
        .into_iter()
        .zip(0u64..)
        .map(|(arrival_s, instance_id)| QueryInstance {
            instance_id,
            template_id: sampler.template(&mut template_rng).to_owned(),
            client_class: sampler.client(&mut client_rng).to_owned(),
            arrival_s,
        })
        .collect();

    let mut burst_rng = stream(spec.seed, Stream::Bursts);
    Ok(merge_bursts(base, &spec.bursts, &sampler, &mut burst_rng))
}

/// Adds each burst's extra queries, uniform over its window, then re-sorts by
/// arrival (stable, base instances first on ties) and renumbers instance ids.
pub fn merge_bursts<R: Rng + ?Sized>(
    base: Vec<QueryInstance>,
    bursts: &[Burst],
    sampler: &InstanceSampler<'_>,
    rng: &mut R,
) -> Vec<QueryInstance> {
    if bursts.is_empty() {
        return base;
    }
    let mut all = base;
    for burst in bursts {
        for _ in 0..burst.extra_queries {
            let arrival_s = rng.random_range(burst.start_s..=burst.end_s());
            let template_id = match &burst.template_id {
                Some(id) => id.clone(),
                None => sampler.template(rng).to_owned(),
            };
            all.push(QueryInstance {
                instance_id: 0,
                template_id,
                client_class: sampler.client(rng).to_owned(),
                arrival_s,
            });
        }
    }
    all.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    for (i, q) in all.iter_mut().enumerate() {
        q.instance_id = i as u64;
    }
    all
}

pub const WORKLOAD_CSV_HEADER: [&str; 4] = ["instance_id", "template_id", "client_class", "arrival_s"];

pub fn write_workload_csv<W: Write>(instances: &[QueryInstance], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WORKLOAD_CSV_HEADER)?;
    for q in instances {
        w.write_record([
            q.instance_id.to_string(),
            q.template_id.clone(),
            q.client_class.clone(),
            q.arrival_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a workload exported by [`write_workload_csv`]. The result must be
/// sorted by arrival with strictly increasing ids.
pub fn read_workload_csv<R: Read>(input: R) -> Result<Vec<QueryInstance>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Validation(format!("workload csv: {e}")))?;
    if header.iter().ne(WORKLOAD_CSV_HEADER) {
        return Err(Error::Validation("workload csv: unexpected header".into()));
    }
    let mut out: Vec<QueryInstance> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Validation(format!("workload csv: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let bad = |what: &str| Error::Validation(format!("workload csv row {}: bad {what}", line + 1));
        let q = QueryInstance {
            instance_id: field(0).parse().map_err(|_| bad("instance_id"))?,
            template_id: field(1).to_owned(),
            client_class: field(2).to_owned(),
            arrival_s: field(3).parse().map_err(|_| bad("arrival_s"))?,
        };
        if let Some(prev) = out.last() {
            if q.instance_id <= prev.instance_id || q.arrival_s < prev.arrival_s {
                return Err(Error::Validation(format!(
                    "workload csv row {}: not sorted by arrival",
                    line + 1
                )));
            }
        }
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Fragment, QueryTemplate};

    fn catalog(weights: &[f64]) -> Catalog {
        Catalog {
            fragments: vec![Fragment {
                fragment_id: "f".into(),
                table: "t".into(),
                size_bytes: 1,
                pinned_tier: None,
            }],
            templates: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| QueryTemplate {
                    template_id: format!("T{i}"),
                    fragments_read: ["f".to_string()].into(),
                    cpu_work: 1.0,
                    result_bytes_per_fragment: Default::default(),
                    frequency_weight: w,
                })
                .collect(),
        }
    }

    fn classes() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn spec(arrival: Arrival, horizon_s: f64, bursts: Vec<Burst>, seed: u64) -> WorkloadSpec {
        WorkloadSpec { horizon_s, arrival, bursts, seed }
    }

    #[test]
    fn fixed_count_matches_experiment_size() {
        let s = spec(Arrival::FixedCount { n: 2194 }, 108_000.0, vec![], 1);
        let w = generate_workload(&s, &catalog(&[1.0, 2.0]), &classes()).unwrap();
        assert_eq!(w.len(), 2194);
        assert!(w.iter().all(|q| (0.0..=108_000.0).contains(&q.arrival_s)));
        assert!(w.windows(2).all(|p| p[0].arrival_s <= p[1].arrival_s));
        assert!(w.iter().enumerate().all(|(i, q)| q.instance_id == i as u64));
    }

    #[test]
    fn singleton_workload() {
        let s = spec(Arrival::FixedCount { n: 1 }, 10.0, vec![], 1);
        let w = generate_workload(&s, &catalog(&[1.0]), &classes()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].template_id, "T0");
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let s = spec(Arrival::FixedCount { n: 1 }, 10.0, vec![], 1);
        let c = Catalog { fragments: vec![], templates: vec![] };
        assert!(matches!(generate_workload(&s, &c, &classes()), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn poisson_counts_stay_within_three_sigma() {
        let expected = 2000.0_f64;
        let band = 3.0 * expected.sqrt();
        let c = catalog(&[1.0]);
        let trials = 1000;
        let inside = (0..trials)
            .filter(|&seed| {
                let s = spec(Arrival::Poisson { rate_per_s: 0.02 }, 1e5, vec![], seed);
                let n = generate_workload(&s, &c, &classes()).unwrap().len() as f64;
                (n - expected).abs() <= band
            })
            .count();
        assert!(inside as f64 >= 0.99 * trials as f64, "{inside}/{trials}");
    }

    #[test]
    fn no_bursts_is_identity() {
        let c = catalog(&[1.0]);
        let cl = classes();
        let s = spec(Arrival::FixedCount { n: 20 }, 100.0, vec![], 4);
        let base = generate_workload(&s, &c, &cl).unwrap();
        let sampler = InstanceSampler::new(&c, &cl).unwrap();
        let merged = merge_bursts(base.clone(), &[], &sampler, &mut stream(0, Stream::Bursts));
        assert_eq!(merged, base);
    }

    #[test]
    fn burst_adds_queries_inside_window() {
        let c = catalog(&[1.0, 1.0]);
        let burst = Burst { start_s: 100.0, duration_s: 10.0, extra_queries: 50, template_id: Some("T1".into()) };
        let plain = generate_workload(&spec(Arrival::FixedCount { n: 30 }, 1000.0, vec![], 9), &c, &classes()).unwrap();
        let with = generate_workload(
            &spec(Arrival::FixedCount { n: 30 }, 1000.0, vec![burst.clone()], 9),
            &c,
            &classes(),
        )
        .unwrap();
        assert_eq!(with.len(), plain.len() + 50);
        // Base draws are unaffected by the extra burst stream.
        let base_times: Vec<f64> = plain.iter().map(|q| q.arrival_s).collect();
        let extras: Vec<&QueryInstance> = with.iter().filter(|q| !base_times.contains(&q.arrival_s)).collect();
        assert_eq!(extras.len(), 50);
        assert!(extras.iter().all(|q| burst.contains(q.arrival_s) && q.template_id == "T1"));
    }

    #[test]
    fn overlapping_bursts_are_additive() {
        let c = catalog(&[1.0]);
        let bursts = vec![
            Burst { start_s: 10.0, duration_s: 20.0, extra_queries: 7, template_id: None },
            Burst { start_s: 15.0, duration_s: 20.0, extra_queries: 11, template_id: None },
        ];
        let w = generate_workload(&spec(Arrival::FixedCount { n: 5 }, 50.0, bursts, 2), &c, &classes()).unwrap();
        assert_eq!(w.len(), 5 + 7 + 11);
        let mut resorted = w.clone();
        resorted.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
        assert_eq!(resorted, w);
    }

    #[test]
    fn template_frequencies_follow_weights() {
        let c = catalog(&[1.0, 3.0]);
        let w = generate_workload(&spec(Arrival::FixedCount { n: 20_000 }, 1.0, vec![], 8), &c, &classes()).unwrap();
        let heavy = w.iter().filter(|q| q.template_id == "T1").count() as f64 / w.len() as f64;
        assert!((heavy - 0.75).abs() < 0.02, "{heavy}");
    }

    #[test]
    fn rejects_out_of_horizon_burst() {
        let s = spec(
            Arrival::FixedCount { n: 1 },
            10.0,
            vec![Burst { start_s: 5.0, duration_s: 10.0, extra_queries: 1, template_id: None }],
            0,
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = catalog(&[1.0, 2.0]);
        let w = generate_workload(&spec(Arrival::FixedCount { n: 50 }, 100.0, vec![], 3), &c, &classes()).unwrap();
        let mut buf = Vec::new();
        write_workload_csv(&w, &mut buf).unwrap();
        assert!(buf.starts_with(b"instance_id,template_id,client_class,arrival_s\n"));
        assert_eq!(read_workload_csv(buf.as_slice()).unwrap(), w);
    }
}
