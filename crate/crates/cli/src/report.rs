//! Per-template duration table and run summary.

use std::collections::BTreeMap;

use hybridsim_core::engine::{
    detect_overload, per_template_stats, rank_demanding_templates, OverloadInterval, TemplateStats, Trace,
};
use hybridsim_core::workload::Burst;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub template_id: String,
    pub count: usize,
    pub mean_latency_s: f64,
    pub p95_latency_s: f64,
    pub max_latency_s: f64,
}

/// One row per template, slowest mean first; ties keep template id order.
pub fn emit_fig2_table(trace: &Trace) -> Vec<Fig2Row> {
    let mut rows: Vec<Fig2Row> = per_template_stats(trace)
        .into_iter()
        .map(|(template_id, s)| Fig2Row {
            template_id,
            count: s.count,
            mean_latency_s: s.mean_latency_s,
            p95_latency_s: s.p95_latency_s,
            max_latency_s: s.max_latency_s,
        })
        .collect();
    rows.sort_by(|a, b| b.mean_latency_s.total_cmp(&a.mean_latency_s));
    rows
}

pub const FIG2_CSV_HEADER: &str = "template_id,count,mean_latency_s,p95_latency_s,max_latency_s";

pub fn fig2_csv(rows: &[Fig2Row]) -> String {
    let mut out = String::from(FIG2_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.template_id, r.count, r.mean_latency_s, r.p95_latency_s, r.max_latency_s
        ));
    }
    out
}

/// Fixed-width rendering for the terminal.
pub fn fig2_text(rows: &[Fig2Row]) -> String {
    let width = rows.iter().map(|r| r.template_id.len()).max().unwrap_or(0).max("template".len());
    let mut out = format!("{:<width$}  {:>6}  {:>10}  {:>10}  {:>10}\n", "template", "count", "mean_s", "p95_s", "max_s");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>10.3}  {:>10.3}  {:>10.3}\n",
            r.template_id, r.count, r.mean_latency_s, r.p95_latency_s, r.max_latency_s
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstComparison {
    pub inside_count: usize,
    pub inside_mean_latency_s: Option<f64>,
    pub outside_count: usize,
    pub outside_mean_latency_s: Option<f64>,
    /// inside / outside mean latency.
    pub ratio: Option<f64>,
}

/// Splits queries by whether they arrived inside any burst window.
pub fn compare_bursts(trace: &Trace, bursts: &[Burst]) -> BurstComparison {
    let (mut inside, mut outside) = ((0usize, 0.0), (0usize, 0.0));
    for r in &trace.records {
        let bucket = if bursts.iter().any(|b| b.contains(r.arrival_s)) { &mut inside } else { &mut outside };
        bucket.0 += 1;
        bucket.1 += r.latency_s;
    }
    let mean = |(n, sum): (usize, f64)| (n > 0).then(|| sum / n as f64);
    let (im, om) = (mean(inside), mean(outside));
    BurstComparison {
        inside_count: inside.0,
        inside_mean_latency_s: im,
        outside_count: outside.0,
        outside_mean_latency_s: om,
        ratio: im.zip(om).filter(|(_, o)| *o > 0.0).map(|(i, o)| i / o),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub inputs_digest: String,
    pub query_count: usize,
    pub mean_latency_s: f64,
    pub per_template: BTreeMap<String, TemplateStats>,
    pub overload_window_s: f64,
    pub overload_threshold: usize,
    pub overload_intervals: Vec<OverloadInterval>,
    pub top_demanding: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bursts: Option<BurstComparison>,
}

pub fn summarize(trace: &Trace, analysis: &AnalysisConfig, bursts: &[Burst], inputs_digest: &str) -> Summary {
    Summary {
        inputs_digest: inputs_digest.to_owned(),
        query_count: trace.records.len(),
        mean_latency_s: trace.mean_latency(),
        per_template: per_template_stats(trace),
        overload_window_s: analysis.overload_window_s,
        overload_threshold: analysis.overload_threshold,
        overload_intervals: detect_overload(trace, analysis.overload_window_s, analysis.overload_threshold),
        top_demanding: rank_demanding_templates(trace, analysis.top_k),
        bursts: (!bursts.is_empty()).then(|| compare_bursts(trace, bursts)),
    }
}
