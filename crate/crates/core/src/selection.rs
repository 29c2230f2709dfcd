//! Edge-side client evaluation and selection.
//!
//! The edge recomputes each client's utility and energy itself, compares the
//! recomputed values with what the client reported, drops clients whose
//! reports disagree, scores the rest, drops score outliers and keeps the top
//! `k` by score.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{l2_diff_norm, ParamVector};
use crate::trainer::{ClientReport, EnergyModel};

/// Priority weights for utility, energy and security. Always on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_utility: f64,
    pub w_energy: f64,
    pub w_security: f64,
}

impl ScoreWeights {
    pub fn new(w_utility: f64, w_energy: f64, w_security: f64) -> Result<Self> {
        let w = Self {
            w_utility,
            w_energy,
            w_security,
        };
        let in_range = [w_utility, w_energy, w_security]
            .iter()
            .all(|v| (-1e-12..=1.0 + 1e-12).contains(v));
        if !in_range || (w.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument {
                name: "score weights",
                reason: format!("({w_utility}, {w_energy}, {w_security}) is not on the simplex"),
            });
        }
        Ok(w)
    }

    pub fn uniform() -> Self {
        Self {
            w_utility: 1.0 / 3.0,
            w_energy: 1.0 / 3.0,
            w_security: 1.0 / 3.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.w_utility + self.w_energy + self.w_security
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w_utility, self.w_energy, self.w_security]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Inconsistent,
    ScoreOutlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEvaluation {
    pub client_id: usize,
    pub estimated_utility: f64,
    pub estimated_energy: f64,
    pub security_index: f64,
    pub delta_u: f64,
    pub delta_e: f64,
    /// `None` for clients excluded before scoring.
    pub score: Option<f64>,
    pub flags: BTreeSet<Flag>,
}

impl ClientEvaluation {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            utility: self.estimated_utility,
            energy: self.estimated_energy,
            security: self.security_index,
        }
    }
}

/// An (U, E, S) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub utility: f64,
    pub energy: f64,
    pub security: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub capacity_k: usize,
    pub consistency_threshold: f64,
    pub outlier_z_threshold: f64,
    /// Surviving pools smaller than this skip the outlier filter.
    pub outlier_min_pool: usize,
    pub eta: f64,
    pub grid_step: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            capacity_k: 50,
            consistency_threshold: 0.15,
            outlier_z_threshold: 2.5,
            outlier_min_pool: 4,
            eta: 0.1,
            grid_step: 0.1,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity_k == 0 {
            return Err("selection.capacity_k: must be at least 1".into());
        }
        if !(self.consistency_threshold > 0.0 && self.consistency_threshold < 1.0) {
            return Err("selection.consistency_threshold: must lie in (0, 1)".into());
        }
        if !(self.outlier_z_threshold > 0.0) {
            return Err("selection.outlier_z_threshold: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err("selection.eta: must lie in [0, 1]".into());
        }
        lattice_size(self.grid_step).map_err(|e| format!("selection.grid_step: {e}"))?;
        Ok(())
    }
}

/// Edge-side recomputation of (U_i, E_i) from what the client sent.
pub fn estimate_metrics(report: &ClientReport, edge_weights: &ParamVector, energy: &EnergyModel) -> Result<(f64, f64)> {
    let u = l2_diff_norm(&report.weights, edge_weights)?;
    let e = energy.energy(report.sample_count, report.weights.dim());
    Ok((u, e))
}

/// Discrepancy between a reported and an estimated nonnegative metric after
/// squashing both through `x / (1 + x)`. Always in `[0, 1)`.
pub fn consistency_check(reported: f64, estimated: f64) -> Result<f64> {
    if !(reported >= 0.0) || !(estimated >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "metric",
            reason: format!("metrics must be nonnegative, got reported={reported}, estimated={estimated}"),
        });
    }
    let squash = |x: f64| if x.is_infinite() { 1.0 } else { x / (1.0 + x) };
    Ok((squash(reported) - squash(estimated)).abs())
}

pub fn score(m: Metrics, w: &ScoreWeights) -> f64 {
    w.w_utility * m.utility - w.w_energy * m.energy + w.w_security * m.security
}

fn lattice_size(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument {
            name: "grid_step",
            reason: format!("must lie in (0, 1], got {step}"),
        });
    }
    let m = (1.0 / step).round();
    if (m * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument {
            name: "grid_step",
            reason: format!("{step} does not divide 1 evenly"),
        });
    }
    Ok(m as usize)
}

/// All simplex points whose components are multiples of `step`, in
/// lexicographic order.
pub fn simplex_lattice(step: f64) -> Result<Vec<ScoreWeights>> {
    let m = lattice_size(step)?;
    let mut out = Vec::with_capacity((m + 1) * (m + 2) / 2);
    for i in 0..=m {
        for j in 0..=(m - i) {
            let k = m - i - j;
            let mf = m as f64;
            out.push(ScoreWeights {
                w_utility: i as f64 / mf,
                w_energy: j as f64 / mf,
                w_security: k as f64 / mf,
            });
        }
    }
    Ok(out)
}

/// Mean score minus the population standard deviation of scores.
pub fn balance_objective(metrics: &[Metrics], w: &ScoreWeights) -> f64 {
    let scores: Vec<f64> = metrics.iter().map(|m| score(*m, w)).collect();
    let (mean, std) = mean_std(&scores);
    mean - std
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Initial weights: the lattice point with the best balance objective.
/// Ties keep the lexicographically smallest point.
pub fn grid_search_init(metrics: &[Metrics], grid_step: f64) -> Result<ScoreWeights> {
    if metrics.is_empty() {
        return Err(Error::Empty("grid search evaluations"));
    }
    let mut best: Option<(f64, ScoreWeights)> = None;
    for w in simplex_lattice(grid_step)? {
        let obj = balance_objective(metrics, &w);
        if best.is_none_or(|(b, _)| obj > b) {
            best = Some((obj, w));
        }
    }
    Ok(best.expect("lattice is never empty").1)
}

/// Per-round means of (U, E, S) over the given clients.
pub fn round_means(metrics: &[Metrics]) -> Option<Metrics> {
    if metrics.is_empty() {
        return None;
    }
    let n = metrics.len() as f64;
    Some(Metrics {
        utility: metrics.iter().map(|m| m.utility).sum::<f64>() / n,
        energy: metrics.iter().map(|m| m.energy).sum::<f64>() / n,
        security: metrics.iter().map(|m| m.security).sum::<f64>() / n,
    })
}

/// Moves the weights a step `eta` toward the normalised round means. Returns
/// `prev` unchanged when the means sum to zero.
pub fn update_weights(prev: &ScoreWeights, means: Metrics, eta: f64) -> Result<ScoreWeights> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument {
            name: "eta",
            reason: format!("must lie in [0, 1], got {eta}"),
        });
    }
    let total = means.utility + means.energy + means.security;
    if !(total > 0.0 && total.is_finite()) {
        return Ok(*prev);
    }
    let step = |w: f64, x: f64| (1.0 - eta) * w + eta * (x / total);
    Ok(ScoreWeights {
        w_utility: step(prev.w_utility, means.utility),
        w_energy: step(prev.w_energy, means.energy),
        w_security: step(prev.w_security, means.security),
    })
}

/// Estimation and consistency verification for every report.
pub fn evaluate_clients(
    reports: &[ClientReport],
    edge_weights: &ParamVector,
    energy: &EnergyModel,
    consistency_threshold: f64,
) -> Result<Vec<ClientEvaluation>> {
    reports
        .iter()
        .map(|r| {
            let (u, e) = estimate_metrics(r, edge_weights, energy)?;
            let delta_u = consistency_check(r.reported_utility, u)?;
            let delta_e = consistency_check(r.reported_energy, e)?;
            let mut flags = BTreeSet::new();
            if delta_u.max(delta_e) > consistency_threshold {
                flags.insert(Flag::Inconsistent);
            }
            Ok(ClientEvaluation {
                client_id: r.client_id,
                estimated_utility: u,
                estimated_energy: e,
                security_index: r.security_index,
                delta_u,
                delta_e,
                score: None,
                flags,
            })
        })
        .collect()
}

/// Scores consistent clients, flags score outliers and returns the top-k ids
/// ranked by score (ties to the smaller id). `evals` is updated in place.
pub fn rank_and_filter(evals: &mut [ClientEvaluation], weights: &ScoreWeights, config: &SelectionConfig) -> Vec<usize> {
    let survivors: Vec<usize> = (0..evals.len())
        .filter(|&i| !evals[i].flags.contains(&Flag::Inconsistent))
        .collect();
    for &i in &survivors {
        evals[i].score = Some(score(evals[i].metrics(), weights));
    }
    if survivors.len() >= config.outlier_min_pool.max(1) {
        let scores: Vec<f64> = survivors.iter().map(|&i| evals[i].score.unwrap()).collect();
        let (mean, std) = mean_std(&scores);
        if std > 0.0 {
            for &i in &survivors {
                let z = (evals[i].score.unwrap() - mean) / std;
                if z.abs() > config.outlier_z_threshold {
                    evals[i].flags.insert(Flag::ScoreOutlier);
                }
            }
        }
    }
    let mut ranked: Vec<(f64, usize)> = survivors
        .iter()
        .filter(|&&i| evals[i].flags.is_empty())
        .map(|&i| (evals[i].score.unwrap(), evals[i].client_id))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(config.capacity_k);
    ranked.into_iter().map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<usize>,
    pub evaluations: Vec<ClientEvaluation>,
}

/// Full two-step selection over one edge's reports.
pub fn select_clients(
    reports: &[ClientReport],
    edge_weights: &ParamVector,
    weights: &ScoreWeights,
    energy: &EnergyModel,
    config: &SelectionConfig,
) -> Result<Selection> {
    if reports.is_empty() {
        return Err(Error::Empty("client reports"));
    }
    let mut evaluations = evaluate_clients(reports, edge_weights, energy, config.consistency_threshold)?;
    let selected = rank_and_filter(&mut evaluations, weights, config);
    Ok(Selection { selected, evaluations })
}
