//! Datasets, synthetic non-IID generation, Dirichlet partitioning across
//! edges and clients, stratified splitting and CSV ingestion.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Binary-labelled tabular data stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    n_features: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, n_features: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if n_features == 0 {
            return Err(invalid("n_features", "must be positive"));
        }
        if features.len() != n_features * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: n_features * labels.len(),
                found: features.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(invalid("labels", "must be 0 or 1"));
        }
        Ok(Self {
            name: name.into(),
            n_features,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positive_fraction(&self) -> f64 {
        positive_fraction(&self.labels, 0..self.len())
    }

    /// Copies the given rows into a new dataset, in the order given.
    pub fn subset(&self, name: impl Into<String>, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            name: name.into(),
            n_features: self.n_features,
            features,
            labels,
        }
    }

    /// Adds `offset` to every feature of the listed rows.
    pub fn shift_rows(&mut self, rows: &[usize], offset: f64) {
        for &r in rows {
            for x in &mut self.features[r * self.n_features..(r + 1) * self.n_features] {
                *x += offset;
            }
        }
    }

    /// Per-column (mean, population std).
    pub fn column_stats(&self) -> Vec<(f64, f64)> {
        column_stats(&self.features, self.n_features)
    }
}

fn positive_fraction(labels: &[u8], rows: impl Iterator<Item = usize>) -> f64 {
    let (mut pos, mut n) = (0usize, 0usize);
    for r in rows {
        pos += labels[r] as usize;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        pos as f64 / n as f64
    }
}

fn column_stats(features: &[f64], n_features: usize) -> Vec<(f64, f64)> {
    let n = features.len() / n_features;
    (0..n_features)
        .map(|c| {
            let mean = (0..n).map(|r| features[r * n_features + c]).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|r| (features[r * n_features + c] - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            (mean, var.sqrt())
        })
        .collect()
}

fn zscore_in_place(features: &mut [f64], n_features: usize) {
    let stats = column_stats(features, n_features);
    for row in features.chunks_mut(n_features) {
        for (x, &(mean, std)) in row.iter_mut().zip(&stats) {
            *x -= mean;
            if std > 0.0 {
                *x /= std;
            }
        }
    }
}

fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

/// Class-conditional Gaussian data separated along a random direction.
///
/// The positive count is exactly `round(n_samples * class_imbalance)`. Each
/// row is `x = z + (2y - 1) * margin * u` with `z ~ N(0, I)` and `u` a random
/// unit vector; the columns are then z-scored.
pub fn generate_synthetic(
    n_samples: usize,
    n_features: usize,
    class_imbalance: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples < 100 {
        return Err(invalid("n_samples", format!("must be at least 100, got {n_samples}")));
    }
    if n_features == 0 {
        return Err(invalid("n_features", "must be positive"));
    }
    if !(class_imbalance > 0.0 && class_imbalance < 1.0) {
        return Err(invalid("class_imbalance", format!("must lie in (0, 1), got {class_imbalance}")));
    }
    const MARGIN: f64 = 1.5;

    let mut rng = rng_for(seed, &[stream::GENERATE]);
    let mut direction: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    direction.iter_mut().for_each(|v| *v /= norm);

    let n_pos = ((n_samples as f64) * class_imbalance).round() as usize;
    let mut labels: Vec<u8> = (0..n_samples).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n_samples * n_features);
    for &y in &labels {
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for u in &direction {
            let z: f64 = rng.sample(StandardNormal);
            features.push(z + sign * MARGIN * u);
        }
    }
    zscore_in_place(&mut features, n_features);
    Dataset::new(format!("synthetic-{seed}"), n_features, features, labels)
}

/// Row indices per client, grouped by edge. Client ids are global:
/// edge `e`, local slot `c` maps to `e * clients_per_edge + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<Vec<Vec<usize>>>,
    /// N_i, indexed `[edge][client]`.
    pub client_counts: Vec<Vec<usize>>,
    /// n_j per edge.
    pub edge_counts: Vec<usize>,
    /// N across all edges.
    pub total: usize,
}

impl Partition {
    pub fn from_assignments(assignments: Vec<Vec<Vec<usize>>>) -> Self {
        let client_counts: Vec<Vec<usize>> = assignments
            .iter()
            .map(|e| e.iter().map(Vec::len).collect())
            .collect();
        let edge_counts: Vec<usize> = client_counts.iter().map(|c| c.iter().sum()).collect();
        let total = edge_counts.iter().sum();
        Self {
            assignments,
            client_counts,
            edge_counts,
            total,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.assignments.len()
    }

    pub fn clients_per_edge(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    pub fn client_rows(&self, edge: usize, slot: usize) -> &[usize] {
        &self.assignments[edge][slot]
    }
}

/// Label-skew partition: each client draws its label mix from
/// `Dirichlet(alpha, alpha)`; every class's rows are then dealt out in
/// proportion to the clients' demand for that class.
pub fn partition_noniid(
    d: &Dataset,
    n_edges: usize,
    clients_per_edge: usize,
    dirichlet_alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if n_edges == 0 || clients_per_edge == 0 {
        return Err(Error::InfeasiblePartition(
            "n_edges and clients_per_edge must be positive".into(),
        ));
    }
    if !(dirichlet_alpha > 0.0 && dirichlet_alpha.is_finite()) {
        return Err(invalid("dirichlet_alpha", format!("must be positive, got {dirichlet_alpha}")));
    }
    let n_clients = n_edges * clients_per_edge;
    if d.len() < 2 * n_clients {
        return Err(Error::InfeasiblePartition(format!(
            "{} samples cannot give {n_clients} clients at least 2 samples each",
            d.len()
        )));
    }

    let mut rng = rng_for(seed, &[stream::PARTITION]);
    let gamma = Gamma::new(dirichlet_alpha, 1.0).map_err(|e| invalid("dirichlet_alpha", e.to_string()))?;
    let mixes: Vec<[f64; 2]> = (0..n_clients)
        .map(|_| {
            let g0: f64 = gamma.sample(&mut rng);
            let g1: f64 = gamma.sample(&mut rng);
            let s = g0 + g1;
            if s > 0.0 && s.is_finite() {
                [g0 / s, g1 / s]
            } else {
                [0.5, 0.5]
            }
        })
        .collect();

    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..2u8 {
        let mut rows: Vec<usize> = (0..d.len()).filter(|&r| d.label(r) == class).collect();
        rows.shuffle(&mut rng);
        let demand: Vec<f64> = mixes.iter().map(|m| m[class as usize]).collect();
        let counts = apportion(rows.len(), &demand);
        let mut start = 0;
        for (client, &count) in counts.iter().enumerate() {
            per_client[client].extend_from_slice(&rows[start..start + count]);
            start += count;
        }
    }

    for (client, rows) in per_client.iter_mut().enumerate() {
        rows.sort_unstable();
        let pos = rows.iter().filter(|&&r| d.label(r) == 1).count();
        if pos.max(rows.len() - pos) < 2 {
            return Err(Error::InfeasiblePartition(format!(
                "client {client} received fewer than 2 samples of every class"
            )));
        }
    }

    let mut it = per_client.into_iter();
    let assignments = (0..n_edges)
        .map(|_| it.by_ref().take(clients_per_edge).collect())
        .collect();
    Ok(Partition::from_assignments(assignments))
}

/// Largest-remainder apportionment of `total` items proportional to `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified split into (train, val, test). Each split keeps the original
/// row order.
pub fn split(d: &Dataset, train: f64, val: f64, test: f64, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(invalid(
            "fractions",
            format!("must be in [0, 1] and sum to 1, got ({train}, {val}, {test})"),
        ));
    }
    let mut rng = rng_for(seed, &[stream::SPLIT]);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in 0..2u8 {
        let mut rows: Vec<usize> = (0..d.len()).filter(|&r| d.label(r) == class).collect();
        rows.shuffle(&mut rng);
        let n = rows.len() as f64;
        let n_train = ((n * train).round() as usize).min(rows.len());
        let n_val = ((n * val).round() as usize).min(rows.len() - n_train);
        parts[0].extend_from_slice(&rows[..n_train]);
        parts[1].extend_from_slice(&rows[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&rows[n_train + n_val..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((
        d.subset(format!("{}-train", d.name), &parts[0]),
        d.subset(format!("{}-val", d.name), &parts[1]),
        d.subset(format!("{}-test", d.name), &parts[2]),
    ))
}

/// Result of reading a CSV file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub dropped_rows: usize,
    pub feature_names: Vec<String>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || ["na", "nan", "null", "none", "?"].contains(&f.to_ascii_lowercase().as_str())
}

/// Reads a headered CSV file, drops rows with missing values and z-scores
/// every feature column.
pub fn ingest_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_csv(file, label_column, &path.display().to_string()).map_err(|e| match e {
        Error::Csv { reason, .. } => Error::Csv {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

/// Parses CSV content from any reader; `name` labels the resulting dataset.
pub fn parse_csv<R: Read>(reader: R, label_column: &str, name: &str) -> Result<Ingested> {
    let err = |reason: String| Error::Csv {
        path: name.into(),
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| err(format!("label column `{label_column}` not found")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(err("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    let mut row_buf = Vec::with_capacity(feature_names.len());
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        row_buf.clear();
        let mut label = None;
        for (i, field) in record.iter().enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(format!("row {}: column {} is not numeric: `{field}`", line + 2, i + 1)))?;
            if !value.is_finite() {
                return Err(err(format!("row {}: non-finite value", line + 2)));
            }
            if i == label_idx {
                label = Some(value);
            } else {
                row_buf.push(value);
            }
        }
        let label = match label {
            Some(0.0) => 0u8,
            Some(1.0) => 1u8,
            Some(v) => return Err(err(format!("row {}: label `{v}` is not binary", line + 2))),
            None => return Err(err(format!("row {}: missing label", line + 2))),
        };
        features.extend_from_slice(&row_buf);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(err("no usable rows".into()));
    }
    zscore_in_place(&mut features, feature_names.len());
    Ok(Ingested {
        dataset: Dataset::new(name, feature_names.len(), features, labels)?,
        dropped_rows: dropped,
        feature_names,
    })
}
