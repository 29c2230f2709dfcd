//! Local training and client-side report construction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::{l2_diff_norm, ParamVector};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    LogisticRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModelSpec {
    pub model_kind: ModelKind,
    pub input_dim: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl LocalModelSpec {
    pub fn logistic(input_dim: usize) -> Self {
        Self {
            model_kind: ModelKind::LogisticRegression,
            input_dim,
            local_epochs: 5,
            learning_rate: 0.1,
            batch_size: 16,
        }
    }

    /// P, the number of parameters of the model this spec describes.
    pub fn param_dim(&self) -> usize {
        match self.model_kind {
            ModelKind::LogisticRegression => self.input_dim + 1,
        }
    }
}

/// A client's rows within a dataset.
#[derive(Debug, Clone, Copy)]
pub struct ClientData<'a> {
    pub dataset: &'a Dataset,
    pub rows: &'a [usize],
}

/// A model family the simulator can train locally and evaluate.
pub trait LocalTrainer: Sync {
    fn param_dim(&self) -> usize;

    fn init_params(&self) -> ParamVector {
        ParamVector::zeros(self.param_dim())
    }

    fn predict_proba(&self, params: &ParamVector, features: &[f64]) -> f64;

    fn train(&self, start: &ParamVector, data: ClientData<'_>, seed: u64) -> Result<ParamVector>;
}

/// Binary logistic regression; parameters are the feature weights followed
/// by the bias.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub spec: LocalModelSpec,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const PROB_CLAMP: f64 = 1e-12;

impl LogisticRegression {
    pub fn new(spec: LocalModelSpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.local_epochs == 0 || spec.batch_size == 0 {
            return Err(Error::InvalidArgument {
                name: "spec",
                reason: "input_dim, local_epochs and batch_size must be positive".into(),
            });
        }
        if !(spec.learning_rate >= 0.0 && spec.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "learning_rate",
                reason: format!("must be finite and nonnegative, got {}", spec.learning_rate),
            });
        }
        Ok(Self { spec })
    }

    fn logit(&self, w: &[f64], x: &[f64]) -> f64 {
        let f = self.spec.input_dim;
        w[..f].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[f]
    }

    /// Mean binary cross-entropy over the given rows.
    pub fn loss(&self, params: &ParamVector, data: ClientData<'_>) -> f64 {
        let w = params.as_slice();
        let total: f64 = data
            .rows
            .iter()
            .map(|&r| {
                let p = sigmoid(self.logit(w, data.dataset.row(r))).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if data.dataset.label(r) == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        total / data.rows.len() as f64
    }

    /// Gradient of [`Self::loss`] with respect to the parameters.
    pub fn gradient(&self, params: &ParamVector, data: ClientData<'_>) -> Vec<f64> {
        let mut grad = vec![0.0; self.spec.param_dim()];
        self.accumulate_gradient(params.as_slice(), data.dataset, data.rows, &mut grad);
        grad
    }

    fn accumulate_gradient(&self, w: &[f64], d: &Dataset, rows: &[usize], grad: &mut [f64]) {
        let f = self.spec.input_dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &r in rows {
            let x = d.row(r);
            let err = sigmoid(self.logit(w, x)) - f64::from(d.label(r));
            for (g, xi) in grad[..f].iter_mut().zip(x) {
                *g += err * xi;
            }
            grad[f] += err;
        }
        let n = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
    }

    /// Trains and also returns the full-data loss after each epoch.
    pub fn train_with_history(
        &self,
        start: &ParamVector,
        data: ClientData<'_>,
        seed: u64,
    ) -> Result<(ParamVector, Vec<f64>)> {
        if data.rows.is_empty() {
            return Err(Error::Empty("client data"));
        }
        if start.dim() != self.spec.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.param_dim(),
                found: start.dim(),
            });
        }
        if data.dataset.n_features() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                found: data.dataset.n_features(),
            });
        }
        let mut rng = rng_for(seed, &[]);
        let mut w = start.as_slice().to_vec();
        let mut grad = vec![0.0; w.len()];
        let mut order = data.rows.to_vec();
        let mut history = Vec::with_capacity(self.spec.local_epochs);
        let lr = self.spec.learning_rate;
        for _ in 0..self.spec.local_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.spec.batch_size) {
                self.accumulate_gradient(&w, data.dataset, batch, &mut grad);
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= lr * gi;
                }
            }
            history.push(self.loss(&ParamVector::new(w.clone())?, data));
        }
        Ok((ParamVector::new(w)?, history))
    }
}

impl LocalTrainer for LogisticRegression {
    fn param_dim(&self) -> usize {
        self.spec.param_dim()
    }

    fn predict_proba(&self, params: &ParamVector, features: &[f64]) -> f64 {
        sigmoid(self.logit(params.as_slice(), features))
    }

    fn train(&self, start: &ParamVector, data: ClientData<'_>, seed: u64) -> Result<ParamVector> {
        self.train_with_history(start, data, seed).map(|(w, _)| w)
    }
}

/// Constants of the energy surrogate `E = alpha * N + beta * P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.001,
        }
    }
}

impl EnergyModel {
    pub fn energy(&self, sample_count: usize, param_dim: usize) -> f64 {
        self.alpha * sample_count as f64 + self.beta * param_dim as f64
    }
}

/// Ways a client may misbehave. A client may carry several.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum Behavior {
    /// Reports `factor` times its true utility.
    InflateUtility { factor: f64 },
    /// Reports its true energy divided by `factor`.
    DeflateEnergy { factor: f64 },
    /// Adds N(0, scale^2) noise to every weight it sends.
    NoiseWeights { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: usize,
    pub weights: ParamVector,
    pub reported_utility: f64,
    pub reported_energy: f64,
    pub security_index: f64,
    pub sample_count: usize,
}

/// Builds what a client sends to its edge. Reported metrics always describe
/// the weights the client trained; `NoiseWeights` corrupts only the upload,
/// so the edge's own estimate no longer matches the report.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    client_id: usize,
    trained: &ParamVector,
    received: &ParamVector,
    energy: &EnergyModel,
    sample_count: usize,
    security_index: f64,
    behaviors: &[Behavior],
    seed: u64,
) -> Result<ClientReport> {
    if trained.dim() != received.dim() {
        return Err(Error::DimensionMismatch {
            expected: received.dim(),
            found: trained.dim(),
        });
    }
    if sample_count == 0 {
        return Err(Error::Empty("client samples"));
    }
    if !(0.0..=1.0).contains(&security_index) {
        return Err(Error::InvalidArgument {
            name: "security_index",
            reason: format!("must lie in [0, 1], got {security_index}"),
        });
    }
    let mut weights = trained.clone();
    for b in behaviors {
        if let Behavior::NoiseWeights { scale } = *b {
            let mut rng = rng_for(seed, &[client_id as u64]);
            let noisy: Vec<f64> = weights
                .as_slice()
                .iter()
                .map(|w| w + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            weights = ParamVector::new(noisy)?;
        }
    }
    let mut reported_utility = l2_diff_norm(trained, received)?;
    let mut reported_energy = energy.energy(sample_count, trained.dim());
    for b in behaviors {
        match *b {
            Behavior::InflateUtility { factor } => reported_utility *= factor,
            Behavior::DeflateEnergy { factor } => reported_energy /= factor,
            Behavior::NoiseWeights { .. } => {}
        }
    }
    Ok(ClientReport {
        client_id,
        weights,
        reported_utility,
        reported_energy,
        security_index,
        sample_count,
    })
}
