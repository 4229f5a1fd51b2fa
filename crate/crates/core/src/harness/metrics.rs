use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{MetricSink, RoundRecord};

/// One line of a run's metric stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub run_id: String,
    #[serde(flatten)]
    pub record: RoundRecord,
}

/// Collects records in memory and optionally streams them as JSON lines.
pub struct RecordingSink {
    run_id: String,
    records: Vec<RoundRecord>,
    out: Option<(PathBuf, BufWriter<File>)>,
}

impl RecordingSink {
    pub fn in_memory(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            records: Vec::new(),
            out: None,
        }
    }

    pub fn to_file(run_id: impl Into<String>, path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            run_id: run_id.into(),
            records: Vec::new(),
            out: Some((path.to_path_buf(), BufWriter::new(file))),
        })
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Flush the stream and hand back the collected records.
    pub fn finish(mut self) -> Result<Vec<RoundRecord>> {
        if let Some((path, w)) = self.out.as_mut() {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(std::mem::take(&mut self.records))
    }
}

fn all_numbers_finite(rec: &RoundRecord) -> bool {
    let scalars = [
        rec.global_loss_f1,
        rec.penalty_f2,
        rec.grad_estimate_norm,
        rec.step_size,
    ];
    let eval_ok = rec.eval.as_ref().is_none_or(|e| {
        e.f1_loss.is_finite() && e.implicit_loss.is_finite() && e.test_accuracy.is_none_or(f64::is_finite)
    });
    scalars.iter().all(|v| v.is_finite())
        && rec.pm_gaps.iter().all(|v| v.is_finite())
        && rec.init_offsets.iter().all(|(a, b)| a.is_finite() && b.is_finite())
        && eval_ok
}

impl MetricSink for RecordingSink {
    fn record(&mut self, rec: &RoundRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.round <= last.round {
                return Err(Error::param(format!(
                    "rounds must increase: {} after {}",
                    rec.round, last.round
                )));
            }
        }
        if !all_numbers_finite(rec) {
            return Err(Error::Numerics(format!("non-finite metric in round {}", rec.round)));
        }
        if let Some((path, w)) = self.out.as_mut() {
            let event = MetricEvent {
                run_id: self.run_id.clone(),
                record: rec.clone(),
            };
            serde_json::to_writer(&mut *w, &event)?;
            w.write_all(b"\n").map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.records.push(rec.clone());
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricEvent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Per-round wall times, kept apart from the reproducible metric stream.
pub fn write_timing(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["round", "wall_time"])?;
    for r in records {
        w.write_record([r.round.to_string(), r.wall_time.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub method: String,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub wall_time: f64,
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "run_id",
    "method",
    "alpha",
    "beta",
    "tau",
    "final_loss",
    "final_accuracy",
    "wall_time",
];

/// Summary table sorted by `run_id`; header only when `rows` is empty.
pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for row in sorted {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn save_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_summary(BufWriter::new(file), rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::EvalRecord;

    fn record(round: usize) -> RoundRecord {
        RoundRecord {
            round,
            global_loss_f1: 0.5 / (round + 1) as f64,
            penalty_f2: 0.1,
            grad_estimate_norm: 1.0 / 3.0,
            step_size: 0.01,
            participants: vec![0, 2],
            budgets: vec![5, 5],
            pm_gaps: vec![0.1, 0.2],
            init_offsets: vec![(0.0, 0.0), (0.0, 0.0)],
            client_grad_evals: 20,
            eval: (round == 1).then_some(EvalRecord {
                f1_loss: 0.25,
                implicit_loss: 0.3,
                test_accuracy: Some(0.9),
            }),
            wall_time: 0.5,
        }
    }

    fn row(id: &str) -> SummaryRow {
        SummaryRow {
            run_id: id.into(),
            method: "ZO-HFL".into(),
            alpha: 0.1,
            beta: 0.1,
            tau: 5.0,
            final_loss: 0.2,
            final_accuracy: Some(0.8),
            wall_time: 1.0,
        }
    }

    #[test]
    fn jsonl_round_trip_without_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut sink = RecordingSink::to_file("r1", &path).unwrap();
        for r in 0..3 {
            sink.record(&record(r)).unwrap();
        }
        let kept = sink.finish().unwrap();
        assert_eq!(kept.len(), 3);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(!text.contains("wall_time"));
        let events = read_metrics(&path).unwrap();
        assert_eq!(events[1].run_id, "r1");
        assert_eq!(events[1].record.eval, record(1).eval);
        assert_eq!(events[2].record.global_loss_f1, record(2).global_loss_f1);
    }

    #[test]
    fn sink_rejects_bad_streams() {
        let mut sink = RecordingSink::in_memory("r");
        sink.record(&record(1)).unwrap();
        assert!(sink.record(&record(1)).is_err());
        let mut bad = record(2);
        bad.penalty_f2 = f64::NAN;
        assert!(matches!(sink.record(&bad), Err(Error::Numerics(_))));
    }

    #[test]
    fn summary_tables() {
        let mut buf = Vec::new();
        write_summary(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run_id,method,alpha,beta,tau,final_loss,final_accuracy,wall_time\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_summary(&path, &[row("b"), row("a")]).unwrap();
        let rows = read_summary(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].run_id, "a");
        assert_eq!(rows[1], row("b"));
    }
}
