//! Per-round records and their on-disk forms.
//!
//! `records.jsonl` holds one JSON object per round, keys in declaration order,
//! every float written with 17 significant digits so the file parses back to
//! the exact same bits. `summary.csv` is a narrow companion table.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggregationWeights, ClientId, Fallback};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FINAL_MODEL_FILE: &str = "final_model.fpv";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u64,
    /// Ascending ids of the clients that trained and were aggregated.
    pub selected_ids: Vec<ClientId>,
    pub total_clients: usize,
    pub weights: AggregationWeights,
    /// Latest cost of every client, participating or not.
    pub per_client_cost: BTreeMap<ClientId, f64>,
    /// Clients whose cost entry this round was carried forward.
    pub carried_forward_ids: Vec<ClientId>,
    /// Cost of the new global model over the pooled data of all clients.
    pub global_cost: f64,
    pub participation_fraction: f64,
    pub fallback_applied: Fallback,
    /// Every client was an outlier and selection kept all of them.
    pub selection_anomaly: bool,
    pub wall_ms: u64,
}

/// Mean participation fraction over all rounds.
///
/// When every record has the same client total the mean is computed from
/// integer counts with a single rounding.
pub fn comm_cost_summary(records: &[RoundRecord]) -> Result<f64, MetricsError> {
    let first = records.first().ok_or(MetricsError::EmptyInput)?;
    if records.iter().all(|r| r.total_clients == first.total_clients && r.total_clients > 0) {
        let selected: u64 = records.iter().map(|r| r.selected_ids.len() as u64).sum();
        let slots = first.total_clients as u64 * records.len() as u64;
        return Ok(selected as f64 / slots as f64);
    }
    Ok(records.iter().map(|r| r.participation_fraction).sum::<f64>() / records.len() as f64)
}

/// JSON formatter writing floats as `d.dddddddddddddddde±x`.
struct SigDigitsFormatter;

impl serde_json::ser::Formatter for SigDigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn record_to_json_line(record: &RoundRecord) -> Result<String, MetricsError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitsFormatter);
    record.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn write_jsonl<W: Write>(records: &[RoundRecord], mut out: W) -> Result<(), MetricsError> {
    for record in records {
        writeln!(out, "{}", record_to_json_line(record)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RoundRecord>, MetricsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

pub fn write_summary_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "global_cost", "participation_fraction", "fallback"])?;
    for r in records {
        w.write_record([
            r.round_index.to_string(),
            format_float(r.global_cost),
            format_float(r.participation_fraction),
            r.fallback_applied.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `records.jsonl` and `summary.csv` into `dir`, creating it if needed.
pub fn write_records(records: &[RoundRecord], dir: impl AsRef<Path>) -> Result<(), MetricsError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_jsonl(records, BufWriter::new(File::create(dir.join(RECORDS_FILE))?))?;
    write_summary_csv(records, BufWriter::new(File::create(dir.join(SUMMARY_FILE))?))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64, selected: usize, total: usize) -> RoundRecord {
        let ids: Vec<ClientId> = (0..selected as u64).collect();
        RoundRecord {
            round_index: round,
            selected_ids: ids.clone(),
            total_clients: total,
            weights: AggregationWeights {
                client_ids: ids.clone(),
                weights: vec![1.0 / selected as f64; selected],
                fallback_applied: Fallback::None,
            },
            per_client_cost: (0..total as u64).map(|i| (i, 0.1 * (i + 1) as f64)).collect(),
            carried_forward_ids: (selected as u64..total as u64).collect(),
            global_cost: 1.0 / 3.0,
            participation_fraction: selected as f64 / total as f64,
            fallback_applied: Fallback::None,
            selection_anomaly: false,
            wall_ms: 0,
        }
    }

    #[test]
    fn comm_cost_examples() {
        let full: Vec<_> = (0..3).map(|r| record(r, 4, 4)).collect();
        assert_eq!(comm_cost_summary(&full).unwrap(), 1.0);

        let mut mixed: Vec<_> = (0..4).map(|r| record(r, 9, 10)).collect();
        mixed.push(record(4, 10, 10));
        assert_eq!(comm_cost_summary(&mixed).unwrap(), 0.92);

        assert_eq!(comm_cost_summary(&[record(0, 3, 6)]).unwrap(), 0.5);
        assert!(matches!(comm_cost_summary(&[]), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn comm_cost_varying_totals_uses_mean() {
        let recs = [record(0, 1, 2), record(1, 3, 3)];
        assert_eq!(comm_cost_summary(&recs).unwrap(), 0.75);
    }

    #[test]
    fn json_line_layout() {
        let line = record_to_json_line(&record(7, 1, 2)).unwrap();
        assert!(line.starts_with("{\"round_index\":7,\"selected_ids\":[0],\"total_clients\":2,\"weights\":"));
        assert!(line.contains("\"global_cost\":3.3333333333333331e-1"), "{line}");
        assert!(line.contains("\"fallback_applied\":\"none\""));
        assert!(line.contains("\"per_client_cost\":{\"0\":1.0000000000000001e-1,\"1\":2.0000000000000001e-1}"));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn empty_records_create_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        write_records(&[], dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(RECORDS_FILE)).unwrap(), b"");
        let csv = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(csv, "round,global_cost,participation_fraction,fallback\n");
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..5).map(|r| record(r, 2 + r as usize % 2, 4)).collect();
        write_records(&recs, dir.path()).unwrap();
        assert_eq!(read_jsonl(dir.path().join(RECORDS_FILE)).unwrap(), recs);
        let csv = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,3.3333333333333331e-1,5.0000000000000000e-1,none");
    }
}
