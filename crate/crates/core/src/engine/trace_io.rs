use std::io::{Read, Write};

use super::Trace;
use crate::{Error, Result};

pub const TRACE_CSV_HEADER: [&str; 8] = [
    "instance_id",
    "template_id",
    "arrival_s",
    "completion_s",
    "latency_s",
    "queue_wait_s",
    "service_s",
    "network_s",
];

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub instance_id: u64,
    pub template_id: String,
    pub arrival_s: f64,
    pub completion_s: f64,
    pub latency_s: f64,
    pub queue_wait_s: f64,
    pub service_s: f64,
    pub network_s: f64,
}

/// Floats use the shortest round-trip representation, so the export is
/// byte-stable and lossless.
pub fn write_trace_csv<W: Write>(trace: &Trace, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.instance_id.to_string(),
            r.template_id.clone(),
            r.arrival_s.to_string(),
            r.completion_s.to_string(),
            r.latency_s.to_string(),
            r.queue_wait_s.to_string(),
            r.service_s.to_string(),
            r.network_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Validation(format!("trace csv: {e}")))?;
    if header.iter().ne(TRACE_CSV_HEADER) {
        return Err(Error::Validation("trace csv: unexpected header".into()));
    }
    reader
        .records()
        .enumerate()
        .map(|(line, record)| {
            let record = record.map_err(|e| Error::Validation(format!("trace csv: {e}")))?;
            let bad = || Error::Validation(format!("trace csv row {}: malformed", line + 1));
            let float = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad);
            Ok(TraceRow {
                instance_id: record.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                template_id: record.get(1).ok_or_else(bad)?.to_owned(),
                arrival_s: float(2)?,
                completion_s: float(3)?,
                latency_s: float(4)?,
                queue_wait_s: float(5)?,
                service_s: float(6)?,
                network_s: float(7)?,
            })
        })
        .collect()
}
