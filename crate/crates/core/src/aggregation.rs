//! Cross-edge model exchange and sample-weighted central aggregation.
//!
//! Both operations sort their inputs by edge id before reducing, so the
//! output never depends on the order edges arrive in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{clip_elementwise, weighted_sum, ParamVector};

/// What an edge hands upward: its aggregated model and how many samples
/// stand behind it. The central server sees nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeUpdate {
    pub edge_id: usize,
    pub local_model: ParamVector,
    pub sample_count: usize,
}

/// Denominator for the sample weights of the other edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossNormalization {
    /// `n_j / sum_{m != i} n_m`; the other-edge weights sum to one.
    #[default]
    LeaveOneOut,
    /// `n_j / N` over all edges, as the formula is literally written.
    GlobalTotal,
}

/// Whether other edges contribute their full model or their change against
/// a reference (previous global) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeMode {
    #[default]
    FullModel,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossEdgeConfig {
    /// Self-weight of each edge's own model, in `[0, 1]`.
    pub alpha: f64,
    pub clip_val: f64,
    pub normalization: CrossNormalization,
    pub exchange: ExchangeMode,
}

impl Default for CrossEdgeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            clip_val: 5.0,
            normalization: CrossNormalization::LeaveOneOut,
            exchange: ExchangeMode::FullModel,
        }
    }
}

impl CrossEdgeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err("aggregation.alpha: must lie in [0, 1]".into());
        }
        if !(self.clip_val > 0.0 && self.clip_val.is_finite()) {
            return Err("aggregation.clip_val: must be a positive finite number".into());
        }
        Ok(())
    }
}

fn sorted_checked(updates: &[EdgeUpdate]) -> Result<Vec<&EdgeUpdate>> {
    let first = updates.first().ok_or(Error::Empty("edge updates"))?;
    let mut sorted: Vec<&EdgeUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.edge_id);
    for u in &sorted {
        if u.local_model.dim() != first.local_model.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.local_model.dim(),
                found: u.local_model.dim(),
            });
        }
    }
    if sorted.iter().map(|u| u.sample_count).sum::<usize>() == 0 {
        return Err(Error::ZeroSamples);
    }
    Ok(sorted)
}

/// Blends every edge's model with the other edges' models. Full-model mode.
pub fn cross_edge_exchange(updates: &[EdgeUpdate], config: &CrossEdgeConfig) -> Result<Vec<EdgeUpdate>> {
    cross_edge_exchange_inner(updates, config, None)
}

/// Exchange in which other edges contribute `w_j - reference` instead of
/// their full model.
pub fn cross_edge_exchange_delta(
    updates: &[EdgeUpdate],
    config: &CrossEdgeConfig,
    reference: &ParamVector,
) -> Result<Vec<EdgeUpdate>> {
    cross_edge_exchange_inner(updates, config, Some(reference))
}

fn cross_edge_exchange_inner(
    updates: &[EdgeUpdate],
    config: &CrossEdgeConfig,
    reference: Option<&ParamVector>,
) -> Result<Vec<EdgeUpdate>> {
    config.validate().map_err(|reason| Error::InvalidArgument { name: "cross-edge config", reason })?;
    let sorted = sorted_checked(updates)?;
    let contributions: Vec<ParamVector> = match reference {
        None => sorted.iter().map(|u| u.local_model.clone()).collect(),
        Some(r) => sorted.iter().map(|u| u.local_model.sub(r)).collect::<Result<_>>()?,
    };
    let total: usize = sorted.iter().map(|u| u.sample_count).sum();

    sorted
        .iter()
        .enumerate()
        .map(|(i, own)| {
            let others_total = total - own.sample_count;
            let denom = match config.normalization {
                CrossNormalization::LeaveOneOut => others_total,
                CrossNormalization::GlobalTotal => total,
            };
            let mut terms: Vec<(f64, &ParamVector)> = vec![(config.alpha, &own.local_model)];
            if sorted.len() > 1 && denom > 0 {
                for (j, other) in sorted.iter().enumerate() {
                    if j != i {
                        let c = (1.0 - config.alpha) * other.sample_count as f64 / denom as f64;
                        terms.push((c, &contributions[j]));
                    }
                }
            } else {
                // nothing to blend with: the edge keeps its own model
                terms[0].0 = 1.0;
            }
            let blended = weighted_sum(&terms)?;
            Ok(EdgeUpdate {
                edge_id: own.edge_id,
                local_model: clip_elementwise(&blended, config.clip_val)?,
                sample_count: own.sample_count,
            })
        })
        .collect()
}

/// Sample-weighted mean of the edges' models.
pub fn central_aggregate(models: &[EdgeUpdate]) -> Result<ParamVector> {
    let sorted = sorted_checked(models)?;
    let total: usize = sorted.iter().map(|u| u.sample_count).sum();
    let terms: Vec<(f64, &ParamVector)> = sorted
        .iter()
        .map(|u| (u.sample_count as f64 / total as f64, &u.local_model))
        .collect();
    weighted_sum(&terms)
}
