//! Simulation configuration: one TOML document with nested sections.
//!
//! ```toml
//! seed = 7
//! baseline_mode = "fedselect_me"
//! rounds_max = 30
//! patience = 3
//!
//! [topology]
//! n_edges = 5
//! clients_per_edge = 10
//!
//! [selection]
//! capacity_k = 50
//!
//! [[adversaries]]
//! client = 3
//! behavior = "inflate_utility"
//! factor = 5.0
//!
//! [[edge_failures]]
//! edge = 2
//! round = 3
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregation::CrossEdgeConfig;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::secagg::{DpConfig, DEFAULT_SCALE};
use crate::selection::SelectionConfig;
use crate::trainer::{Behavior, EnergyModel, LocalModelSpec, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Multi-edge with verified scoring-based selection.
    #[default]
    FedselectMe,
    /// One virtual edge holding every client, uniform client sampling,
    /// plain sample-weighted averaging.
    FedavgSingle,
    /// Multi-edge, every client aggregated, no verification or scoring.
    NoSelection,
}

impl BaselineMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FedselectMe => "fedselect_me",
            Self::FedavgSingle => "fedavg_single",
            Self::NoSelection => "no_selection",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "fedselect_me" => Ok(Self::FedselectMe),
            "fedavg_single" => Ok(Self::FedavgSingle),
            "no_selection" => Ok(Self::NoSelection),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected fedselect_me, fedavg_single or no_selection)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_samples: usize,
    pub n_features: usize,
    pub class_imbalance: f64,
    pub csv_path: Option<PathBuf>,
    pub label_column: String,
    pub dirichlet_alpha: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Fraction of each client's rows held out into its edge's test shard.
    pub edge_test_fraction: f64,
    /// Edge whose features get a constant offset (an "unknown" region).
    pub shift_edge: Option<usize>,
    pub shift_offset: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            n_samples: 5000,
            n_features: 10,
            class_imbalance: 0.3,
            csv_path: None,
            label_column: "label".into(),
            dirichlet_alpha: 0.5,
            train_fraction: 0.7,
            val_fraction: 0.15,
            test_fraction: 0.15,
            edge_test_fraction: 0.2,
            shift_edge: None,
            shift_offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_edges: usize,
    pub clients_per_edge: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_edges: 5,
            clients_per_edge: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub model_kind: ModelKind,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub energy_alpha: f64,
    pub energy_beta: f64,
    /// S_i for clients without an explicit entry in `security`.
    pub security_index: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let energy = EnergyModel::default();
        Self {
            model_kind: ModelKind::LogisticRegression,
            local_epochs: 5,
            learning_rate: 0.1,
            batch_size: 16,
            energy_alpha: energy.alpha,
            energy_beta: energy.beta,
            security_index: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeighting {
    /// Updates weighted by client sample count.
    #[default]
    Samples,
    /// Plain mean over participants.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecaggConfig {
    /// When false, updates are summed in plaintext; clipping and noise still apply.
    pub encryption: bool,
    pub key_bits: u64,
    pub scale: u64,
    pub weighting: EdgeWeighting,
    pub dp: DpConfig,
}

impl Default for SecaggConfig {
    fn default() -> Self {
        Self {
            encryption: true,
            key_bits: 1024,
            scale: DEFAULT_SCALE,
            weighting: EdgeWeighting::Samples,
            dp: DpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub client: usize,
    #[serde(flatten)]
    pub behavior: Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFailureSpec {
    pub edge: usize,
    pub round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityOverride {
    pub client: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub baseline_mode: BaselineMode,
    pub rounds_max: usize,
    /// Consecutive non-improving validation rounds before stopping; 0 disables.
    pub patience: usize,
    pub min_delta: f64,
    pub decision_threshold: f64,
    pub data: DataConfig,
    pub topology: TopologyConfig,
    pub training: TrainingConfig,
    pub selection: SelectionConfig,
    pub secagg: SecaggConfig,
    pub aggregation: CrossEdgeConfig,
    pub adversaries: Vec<AdversarySpec>,
    pub edge_failures: Vec<EdgeFailureSpec>,
    pub security: Vec<SecurityOverride>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            baseline_mode: BaselineMode::FedselectMe,
            rounds_max: 30,
            patience: 3,
            min_delta: 1e-4,
            decision_threshold: 0.5,
            data: DataConfig::default(),
            topology: TopologyConfig::default(),
            training: TrainingConfig::default(),
            selection: SelectionConfig::default(),
            secagg: SecaggConfig::default(),
            aggregation: CrossEdgeConfig::default(),
            adversaries: Vec::new(),
            edge_failures: Vec::new(),
            security: Vec::new(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

impl SimulationConfig {
    pub fn n_clients(&self) -> usize {
        self.topology.n_edges * self.topology.clients_per_edge
    }

    pub fn model_spec(&self) -> LocalModelSpec {
        LocalModelSpec {
            model_kind: self.training.model_kind,
            input_dim: self.data.n_features,
            local_epochs: self.training.local_epochs,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
        }
    }

    pub fn energy_model(&self) -> EnergyModel {
        EnergyModel {
            alpha: self.training.energy_alpha,
            beta: self.training.energy_beta,
        }
    }

    pub fn security_index(&self, client: usize) -> f64 {
        self.security
            .iter()
            .rev()
            .find(|s| s.client == client)
            .map_or(self.training.security_index, |s| s.value)
    }

    pub fn behaviors(&self, client: usize) -> Vec<Behavior> {
        self.adversaries
            .iter()
            .filter(|a| a.client == client)
            .map(|a| a.behavior)
            .collect()
    }

    /// Adds an edge failure after checking the edge exists.
    pub fn with_edge_failure(mut self, edge: usize, round: usize) -> Result<Self> {
        if edge >= self.topology.n_edges {
            return Err(Error::UnknownEdge { edge });
        }
        self.edge_failures.push(EdgeFailureSpec { edge, round });
        Ok(self)
    }

    /// Semantic checks beyond what the types enforce. Messages start with the
    /// dotted path of the offending field.
    pub fn validate(&self) -> Result<(), String> {
        check(self.rounds_max >= 1, || "rounds_max: must be at least 1".into())?;
        check(self.min_delta >= 0.0, || "min_delta: must be nonnegative".into())?;
        check((0.0..=1.0).contains(&self.decision_threshold), || {
            "decision_threshold: must lie in [0, 1]".into()
        })?;

        let d = &self.data;
        if d.source == DataSource::Csv {
            check(d.csv_path.is_some(), || "data.csv_path: required when data.source = \"csv\"".into())?;
        } else {
            check(d.n_samples >= 100, || "data.n_samples: must be at least 100".into())?;
            check(d.class_imbalance > 0.0 && d.class_imbalance < 1.0, || {
                "data.class_imbalance: must lie in (0, 1)".into()
            })?;
        }
        check(d.n_features >= 1, || "data.n_features: must be at least 1".into())?;
        check(d.dirichlet_alpha > 0.0 && d.dirichlet_alpha.is_finite(), || {
            "data.dirichlet_alpha: must be positive".into()
        })?;
        let fractions = [d.train_fraction, d.val_fraction, d.test_fraction];
        check(fractions.iter().all(|f| (0.0..=1.0).contains(f)), || {
            "data.train_fraction: split fractions must lie in [0, 1]".into()
        })?;
        check((fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-9, || {
            "data.train_fraction: train, val and test fractions must sum to 1".into()
        })?;
        check(d.val_fraction > 0.0 && d.test_fraction > 0.0, || {
            "data.val_fraction: validation and test splits must be nonempty".into()
        })?;
        check(d.edge_test_fraction > 0.0 && d.edge_test_fraction < 1.0, || {
            "data.edge_test_fraction: must lie in (0, 1)".into()
        })?;
        if let Some(e) = d.shift_edge {
            check(e < self.topology.n_edges, || format!("data.shift_edge: edge {e} does not exist"))?;
        }
        check(d.shift_offset.is_finite(), || "data.shift_offset: must be finite".into())?;

        check(self.topology.n_edges >= 1, || "topology.n_edges: must be at least 1".into())?;
        check(self.topology.clients_per_edge >= 1, || {
            "topology.clients_per_edge: must be at least 1".into()
        })?;

        let t = &self.training;
        check(t.local_epochs >= 1, || "training.local_epochs: must be at least 1".into())?;
        check(t.batch_size >= 1, || "training.batch_size: must be at least 1".into())?;
        check(t.learning_rate >= 0.0 && t.learning_rate.is_finite(), || {
            "training.learning_rate: must be finite and nonnegative".into()
        })?;
        check(t.energy_alpha >= 0.0 && t.energy_beta >= 0.0, || {
            "training.energy_alpha: energy constants must be nonnegative".into()
        })?;
        check((0.0..=1.0).contains(&t.security_index), || {
            "training.security_index: must lie in [0, 1]".into()
        })?;

        self.selection.validate()?;
        check(self.secagg.key_bits >= 128 && self.secagg.key_bits.is_multiple_of(2), || {
            "secagg.key_bits: must be an even number of at least 128".into()
        })?;
        check(self.secagg.scale >= 1, || "secagg.scale: must be positive".into())?;
        self.secagg.dp.validate()?;
        self.aggregation.validate()?;

        let n_clients = self.n_clients();
        for (i, a) in self.adversaries.iter().enumerate() {
            check(a.client < n_clients, || format!("adversaries[{i}].client: client {} does not exist", a.client))?;
            let ok = match a.behavior {
                Behavior::InflateUtility { factor } | Behavior::DeflateEnergy { factor } => {
                    factor > 0.0 && factor.is_finite()
                }
                Behavior::NoiseWeights { scale } => scale >= 0.0 && scale.is_finite(),
            };
            check(ok, || format!("adversaries[{i}]: factor/scale must be positive and finite"))?;
        }
        for (i, f) in self.edge_failures.iter().enumerate() {
            check(f.edge < self.topology.n_edges, || {
                format!("edge_failures[{i}].edge: edge {} does not exist", f.edge)
            })?;
            check(f.round >= 1, || format!("edge_failures[{i}].round: rounds start at 1"))?;
        }
        for (i, s) in self.security.iter().enumerate() {
            check(s.client < n_clients, || format!("security[{i}].client: client {} does not exist", s.client))?;
            check((0.0..=1.0).contains(&s.value), || format!("security[{i}].value: must lie in [0, 1]"))?;
        }
        Ok(())
    }

    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    /// Deserializes a parsed TOML table, reporting the dotted path of any
    /// field that fails, then validates.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let config: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.inner()))
        })?;
        config.validate().map_err(Error::Config)?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Produces the dataset this config describes.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.data.source {
            DataSource::Synthetic => data::generate_synthetic(
                self.data.n_samples,
                self.data.n_features,
                self.data.class_imbalance,
                self.seed,
            ),
            DataSource::Csv => {
                let path = self
                    .data
                    .csv_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.csv_path: missing".into()))?;
                let ingested = data::ingest_csv(path, &self.data.label_column)?;
                if ingested.dataset.n_features() != self.data.n_features {
                    return Err(Error::Config(format!(
                        "data.n_features: config says {}, csv has {}",
                        self.data.n_features,
                        ingested.dataset.n_features()
                    )));
                }
                Ok(ingested.dataset)
            }
        }
    }
}

/// Splits a `key=value` override. The value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(|p| p.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{s}` has an empty key segment")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

/// Writes `value` at the dotted `path`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{}`: `{p}` is not a table", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = SimulationConfig::default();
        c.validate().unwrap();
        assert_eq!(c.patience, 3);
        assert_eq!(c.topology.n_edges, 5);
        assert_eq!(c.selection.capacity_k, 50);
        assert_eq!(c.training.local_epochs, 5);
        let back = SimulationConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parses_nested_sections_and_adversaries() {
        let text = r#"
            seed = 11
            baseline_mode = "no_selection"
            [topology]
            n_edges = 2
            clients_per_edge = 3
            [[adversaries]]
            client = 4
            behavior = "inflate_utility"
            factor = 5.0
            [[adversaries]]
            client = 4
            behavior = "noise_weights"
            scale = 1.5
            [[edge_failures]]
            edge = 1
            round = 2
        "#;
        let c = SimulationConfig::from_toml_str(text).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.baseline_mode, BaselineMode::NoSelection);
        assert_eq!(
            c.behaviors(4),
            vec![Behavior::InflateUtility { factor: 5.0 }, Behavior::NoiseWeights { scale: 1.5 }]
        );
        assert_eq!(c.edge_failures, vec![EdgeFailureSpec { edge: 1, round: 2 }]);
    }

    #[test]
    fn negative_patience_names_the_field() {
        let err = SimulationConfig::from_toml_str("patience = -1").unwrap_err().to_string();
        assert!(err.contains("patience"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = SimulationConfig::from_toml_str("[selection]\ncapacity_k = 0").unwrap_err().to_string();
        assert!(err.contains("selection.capacity_k"), "{err}");
        let err = SimulationConfig::from_toml_str("[topology]\nn_edges = 2\n[[edge_failures]]\nedge = 5\nround = 1")
            .unwrap_err()
            .to_string();
        assert!(err.contains("edge_failures[0].edge"), "{err}");
        let err = SimulationConfig::from_toml_str("bogus = 1").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn overrides() {
        let (path, v) = parse_override("selection.capacity_k=10").unwrap();
        assert_eq!(path, vec!["selection", "capacity_k"]);
        assert_eq!(v, toml::Value::Integer(10));
        let (_, v) = parse_override("baseline_mode=fedavg_single").unwrap();
        assert_eq!(v, toml::Value::String("fedavg_single".into()));
        assert!(parse_override("nokey").is_err());
        assert!(parse_override("a..b=1").is_err());

        let mut t = toml::Table::new();
        let (path, v) = parse_override("selection.capacity_k=10").unwrap();
        apply_override(&mut t, &path, v).unwrap();
        let c = SimulationConfig::from_table(t).unwrap();
        assert_eq!(c.selection.capacity_k, 10);

        let mut t: toml::Table = "rounds_max = 4".parse().unwrap();
        assert!(apply_override(&mut t, &["rounds_max".into(), "x".into()], toml::Value::Integer(1)).is_err());
    }

    #[test]
    fn edge_failure_builder_checks_edge() {
        let c = SimulationConfig::default();
        assert!(matches!(c.clone().with_edge_failure(9, 1), Err(Error::UnknownEdge { edge: 9 })));
        assert_eq!(c.with_edge_failure(2, 3).unwrap().edge_failures.len(), 1);
    }
}
