//! Deterministic JSON and CSV output.
//!
//! JSON objects are written with sorted keys and floats rounded to six
//! significant digits, so two runs with the same configuration produce
//! byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::{ProbeReport, Stat};
use crate::sampler::EmbeddingVector;

/// Round to six significant digits.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn canonical(value: Value) -> Value {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => n
            .as_f64()
            .and_then(|f| serde_json::Number::from_f64(round6(f)))
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        // serde_json's default map is ordered by key
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and rounded floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&canonical(serde_json::to_value(value)?))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_canonical_json(value)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One plotted line: x strictly increasing, one y and error bar per x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub label: String,
    pub x: Vec<usize>,
    pub y: Vec<f64>,
    pub yerr: Vec<f64>,
}

impl CurveSeries {
    pub fn new(label: impl Into<String>, x: Vec<usize>, y: Vec<f64>, yerr: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() != yerr.len() {
            return Err(Error::Config("curve x, y and yerr lengths differ".into()));
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("curve x values must be strictly increasing".into()));
        }
        Ok(CurveSeries {
            label: label.into(),
            x,
            y,
            yerr,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse("csv", e.to_string())
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::parse("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(x: f64) -> String {
    round6(x).to_string()
}

/// Row of the long-format report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub relation_id: String,
    pub metric: String,
    /// Empty for metrics without a cutoff.
    pub k: Option<usize>,
    pub mean: f64,
    pub stddev: f64,
    pub n_facts: usize,
}

/// Aggregate rows use this relation id.
pub const ALL_RELATIONS: &str = "ALL";

pub fn report_rows(report: &ProbeReport) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let mut push = |relation: &str, metric: &str, k: Option<usize>, s: &Stat, n_facts: usize| {
        rows.push(ReportRow {
            relation_id: relation.to_string(),
            metric: metric.to_string(),
            k,
            mean: round6(s.mean),
            stddev: round6(s.stddev),
            n_facts,
        })
    };
    for (relation, r) in &report.per_relation {
        for (k, s) in &r.p_at_k {
            push(relation, "p_at_k", Some(*k), s, r.n_facts);
        }
        push(relation, "mrr", None, &r.mrr, r.n_facts);
        push(relation, "mean_gold_prob", None, &r.mean_gold_prob, r.n_facts);
    }
    let total: usize = report.per_relation.values().map(|r| r.n_facts).sum();
    let a = &report.aggregate;
    for (k, s) in &a.p_at_k {
        push(ALL_RELATIONS, "p_at_k", Some(*k), s, total);
    }
    push(ALL_RELATIONS, "mrr", None, &a.mrr, total);
    push(ALL_RELATIONS, "mean_gold_prob", None, &a.mean_gold_prob, total);
    rows
}

pub fn report_csv(report: &ProbeReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["relation_id", "metric", "k", "mean", "stddev", "n_facts"])
        .map_err(csv_err)?;
    for r in report_rows(report) {
        w.write_record([
            r.relation_id,
            r.metric,
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            num(r.mean),
            num(r.stddev),
            r.n_facts.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Long-format curves: one row per (label, x).
pub fn curves_csv(curves: &[CurveSeries]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "n_demos", "mean", "stddev"])
        .map_err(csv_err)?;
    for c in curves {
        for i in 0..c.x.len() {
            w.write_record([c.label.clone(), c.x[i].to_string(), num(c.y[i]), num(c.yerr[i])])
                .map_err(csv_err)?;
        }
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub query_id: String,
    pub relation_id: String,
    pub vector: EmbeddingVector,
}

/// Wide table `query_id, relation_id, dim_0 … dim_{d-1}`; vectors keep full precision.
pub fn embeddings_csv(rows: &[EmbeddingRow]) -> Result<String> {
    let dim = rows.first().map_or(0, |r| r.vector.dimension());
    if rows.iter().any(|r| r.vector.dimension() != dim) {
        return Err(Error::InvalidEmbedding("rows have different dimensions".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["query_id".to_string(), "relation_id".to_string()];
    header.extend((0..dim).map(|i| format!("dim_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut record = vec![r.query_id.clone(), r.relation_id.clone()];
        record.extend(r.vector.values().iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round6(1.0 / 3.0), 0.333333);
        assert_eq!(round6(123456789.0), 123457000.0);
        assert_eq!(round6(0.0), 0.0);
        assert_eq!(round6(-2.5e-9), -2.5e-9);
    }

    #[test]
    fn canonical_json_sorts_and_rounds() {
        let v = serde_json::json!({"b": 0.1234567891, "a": [1, 2.0000001]});
        let text = to_canonical_json(&v).unwrap();
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        assert!(text.contains("0.123457"));
        assert!(text.contains("2.0"));
    }

    #[test]
    fn json_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/curve.json");
        let c = CurveSeries::new("c", vec![0, 1], vec![0.5, 0.25], vec![0.0, 0.125]).unwrap();
        write_json(&path, &c).unwrap();
        assert_eq!(read_json::<CurveSeries>(&path).unwrap(), c);
    }

    #[test]
    fn curve_validation() {
        assert!(CurveSeries::new("c", vec![0, 1], vec![0.0], vec![0.0]).is_err());
        assert!(CurveSeries::new("c", vec![1, 1], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(CurveSeries::new("c", vec![0, 3], vec![0.0; 2], vec![0.0; 2]).is_ok());
    }

    #[test]
    fn empty_curves_are_header_only() {
        assert_eq!(curves_csv(&[]).unwrap(), "label,n_demos,mean,stddev\n");
    }

    #[test]
    fn embeddings_table() {
        let rows = vec![EmbeddingRow {
            query_id: "q0".into(),
            relation_id: "P1".into(),
            vector: EmbeddingVector::new(vec![0.5, -0.25]).unwrap(),
        }];
        assert_eq!(
            embeddings_csv(&rows).unwrap(),
            "query_id,relation_id,dim_0,dim_1\nq0,P1,0.5,-0.25\n"
        );
    }
}
