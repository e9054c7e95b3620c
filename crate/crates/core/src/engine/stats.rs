use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    pub count: usize,
    pub mean_latency_s: f64,
    /// Nearest-rank 95th percentile.
    pub p95_latency_s: f64,
    pub max_latency_s: f64,
}

pub fn per_template_stats(trace: &Trace) -> BTreeMap<String, TemplateStats> {
    let mut latencies: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &trace.records {
        latencies.entry(r.template_id.as_str()).or_default().push(r.latency_s);
    }
    latencies
        .into_iter()
        .map(|(id, values)| {
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let mut sorted = values;
            sorted.sort_by(f64::total_cmp);
            let rank = ((0.95 * count as f64).ceil() as usize).clamp(1, count);
            (
                id.to_owned(),
                TemplateStats {
                    count,
                    mean_latency_s: mean,
                    p95_latency_s: sorted[rank - 1],
                    max_latency_s: sorted[count - 1],
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub peak_concurrency: usize,
}

/// Maximal runs of aligned windows `[k·w, (k+1)·w)` whose peak in-flight count
/// reaches `concurrency_threshold`. A query is in flight on
/// `[arrival, completion)`.
///
/// # Panics
///
/// If `window_s` is not positive.
pub fn detect_overload(trace: &Trace, window_s: f64, concurrency_threshold: usize) -> Vec<OverloadInterval> {
    assert!(window_s > 0.0, "window_s must be positive");
    // (time, delta): departures sort before arrivals at the same instant.
    let mut edges: Vec<(f64, i64)> = Vec::with_capacity(trace.records.len() * 2);
    for r in &trace.records {
        if r.completion_s > r.arrival_s {
            edges.push((r.arrival_s, 1));
            edges.push((r.completion_s, -1));
        }
    }
    if edges.is_empty() {
        return Vec::new();
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out: Vec<OverloadInterval> = Vec::new();
    let mut open: Option<OverloadInterval> = None;
    let mut level: i64 = 0;
    let mut i = 0;
    let mut k = (edges[0].0 / window_s).floor().max(0.0) as u64;
    loop {
        let start = k as f64 * window_s;
        let end = (k + 1) as f64 * window_s;
        while i < edges.len() && edges[i].0 <= start {
            level += edges[i].1;
            i += 1;
        }
        let mut peak = level;
        while i < edges.len() && edges[i].0 < end {
            level += edges[i].1;
            peak = peak.max(level);
            i += 1;
        }
        let peak = peak.max(0) as usize;
        if peak >= concurrency_threshold {
            match &mut open {
                Some(run) => {
                    run.end_s = end;
                    run.peak_concurrency = run.peak_concurrency.max(peak);
                }
                None => {
                    open = Some(OverloadInterval { start_s: start, end_s: end, peak_concurrency: peak })
                }
            }
        } else if let Some(run) = open.take() {
            out.push(run);
        }
        if i >= edges.len() {
            break;
        }
        // Skip empty windows with nothing changing; level stays constant.
        let next = (edges[i].0 / window_s).floor() as u64;
        if next > k + 1 && (level.max(0) as usize) < concurrency_threshold {
            if let Some(run) = open.take() {
                out.push(run);
            }
            k = next;
        } else {
            k += 1;
        }
    }
    out.extend(open);
    out
}

/// Top `k` templates by total latency contribution (count × mean),
/// descending, ties broken by template id.
pub fn rank_demanding_templates(trace: &Trace, k: usize) -> Vec<String> {
    let mut totals: Vec<(String, f64)> = per_template_stats(trace)
        .into_iter()
        .map(|(id, s)| (id, s.count as f64 * s.mean_latency_s))
        .collect();
    totals.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    totals.into_iter().take(k).map(|(id, _)| id).collect()
}
