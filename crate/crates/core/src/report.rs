//! Run artifacts: the per-round summary CSV and the run manifest.
//!
//! rounds.csv columns, in order:
//!
//! ```text
//! round,global_val_loss,global_val_accuracy,global_test_loss,global_test_accuracy,
//! f1_macro,f1_weighted,auroc,jfi,edge0_accuracy,...,edgeN_accuracy,edge0_loss,...,edgeN_loss
//! ```
//!
//! `auroc` is empty when the test split holds a single class.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{EdgeMetrics, RoundRecord, TestMetrics, ValMetrics};
use crate::orchestrator::SimulationConfig;

pub const FIXED_COLUMNS: [&str; 9] = [
    "round",
    "global_val_loss",
    "global_val_accuracy",
    "global_test_loss",
    "global_test_accuracy",
    "f1_macro",
    "f1_weighted",
    "auroc",
    "jfi",
];

pub fn rounds_header(n_edges: usize) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend((0..n_edges).map(|e| format!("edge{e}_accuracy")));
    h.extend((0..n_edges).map(|e| format!("edge{e}_loss")));
    h
}

/// Renders records as rounds.csv text. Every record must cover edges
/// `0..n_edges`.
pub fn rounds_csv(records: &[RoundRecord], n_edges: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv {
        path: PathBuf::from("rounds.csv"),
        reason: e.to_string(),
    };
    w.write_record(rounds_header(n_edges)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.round.to_string(),
            r.global_val.loss.to_string(),
            r.global_val.accuracy.to_string(),
            r.global_test.loss.to_string(),
            r.global_test.accuracy.to_string(),
            r.global_test.f1_macro.to_string(),
            r.global_test.f1_weighted.to_string(),
            r.global_test.auroc.map(|a| a.to_string()).unwrap_or_default(),
            r.jfi.to_string(),
        ];
        let edge = |e: usize| {
            r.per_edge.get(&e).ok_or_else(|| Error::Csv {
                path: PathBuf::from("rounds.csv"),
                reason: format!("round {} has no metrics for edge {e}", r.round),
            })
        };
        for e in 0..n_edges {
            row.push(edge(e)?.accuracy.to_string());
        }
        for e in 0..n_edges {
            row.push(edge(e)?.loss.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv {
        path: PathBuf::from("rounds.csv"),
        reason: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads rounds.csv back into records.
pub fn parse_rounds_csv<R: Read>(reader: R, name: &str) -> Result<Vec<RoundRecord>> {
    let err = |reason: String| Error::Csv {
        path: PathBuf::from(name),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(err(format!("header must start with {}", FIXED_COLUMNS.join(","))));
    }
    let edge_cols = header.len() - FIXED_COLUMNS.len();
    if !edge_cols.is_multiple_of(2) {
        return Err(err("edge columns must come in accuracy/loss pairs".into()));
    }
    let n_edges = edge_cols / 2;
    if header != rounds_header(n_edges) {
        return Err(err(format!("expected header {}", rounds_header(n_edges).join(","))));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let num = |col: usize| -> Result<f64> {
            let s = rec.get(col).unwrap_or("").trim();
            let v: f64 = s
                .parse()
                .map_err(|_| err(format!("line {line}, column {}: `{s}` is not a number", header[col])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("line {line}, column {}: non-finite value", header[col])))
            }
        };
        let round_s = rec.get(0).unwrap_or("").trim();
        let round: usize = round_s
            .parse()
            .map_err(|_| err(format!("line {line}, column round: `{round_s}` is not a round number")))?;
        let auroc_s = rec.get(7).unwrap_or("").trim();
        let auroc = if auroc_s.is_empty() { None } else { Some(num(7)?) };
        let mut per_edge = BTreeMap::new();
        for e in 0..n_edges {
            per_edge.insert(
                e,
                EdgeMetrics {
                    accuracy: num(FIXED_COLUMNS.len() + e)?,
                    loss: num(FIXED_COLUMNS.len() + n_edges + e)?,
                },
            );
        }
        out.push(RoundRecord {
            round,
            per_edge,
            global_val: ValMetrics {
                loss: num(1)?,
                accuracy: num(2)?,
            },
            global_test: TestMetrics {
                loss: num(3)?,
                accuracy: num(4)?,
                f1_macro: num(5)?,
                f1_weighted: num(6)?,
                auroc,
            },
            jfi: num(8)?,
        });
    }
    if out.is_empty() {
        return Err(err("no data rows".into()));
    }
    Ok(out)
}

/// SHA-256 over the config's canonical JSON form (keys sorted).
pub fn config_hash(config: &SimulationConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<String>,
    /// The fully resolved config the run used.
    pub config: SimulationConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize, auroc: Option<f64>) -> RoundRecord {
        RoundRecord {
            round,
            per_edge: (0..2)
                .map(|e| {
                    (
                        e,
                        EdgeMetrics {
                            accuracy: 0.5 + e as f64 / 10.0,
                            loss: 0.7 - e as f64 / 10.0,
                        },
                    )
                })
                .collect(),
            global_val: ValMetrics {
                loss: 0.61,
                accuracy: 0.7,
            },
            global_test: TestMetrics {
                loss: 0.62,
                accuracy: 0.71,
                f1_macro: 0.6,
                f1_weighted: 0.65,
                auroc,
            },
            jfi: 0.99,
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            rounds_header(2).join(","),
            "round,global_val_loss,global_val_accuracy,global_test_loss,global_test_accuracy,\
             f1_macro,f1_weighted,auroc,jfi,edge0_accuracy,edge1_accuracy,edge0_loss,edge1_loss"
        );
    }

    #[test]
    fn csv_roundtrip() {
        let recs = vec![record(1, Some(0.9)), record(2, None)];
        let text = rounds_csv(&recs, 2).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",,"));
        let back = parse_rounds_csv(text.as_bytes(), "t").unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_rounds_csv("a,b\n1,2\n".as_bytes(), "t").is_err());
        let header = rounds_header(1).join(",");
        assert!(parse_rounds_csv(format!("{header}\n").as_bytes(), "t").is_err());
        assert!(parse_rounds_csv(format!("{header}\n1,x,1,1,1,1,1,,1,1,1\n").as_bytes(), "t").is_err());
        assert!(parse_rounds_csv(format!("{header}\n1,1,1,1,1,1,1,,1,1,1\n").as_bytes(), "t").is_ok());
    }

    #[test]
    fn config_hash_is_stable() {
        let a = SimulationConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
