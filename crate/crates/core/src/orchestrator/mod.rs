//! The round loop: distribute, train, report, select, securely aggregate,
//! exchange across edges, aggregate centrally, evaluate.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{central_aggregate, cross_edge_exchange, cross_edge_exchange_delta, EdgeUpdate, ExchangeMode};
use crate::data::{partition_noniid, split, Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::{binary_metrics, jain_fairness, EdgeMetrics, RoundRecord, TestMetrics, ValMetrics};
use crate::params::{weighted_sum, ParamVector};
use crate::rng::{derive_seed, rng_for, stream};
use crate::secagg::{self, clip_and_noise, FixedPointCodec, PrivateKey, PublicKey};
use crate::selection::{
    evaluate_clients, grid_search_init, rank_and_filter, round_means, update_weights, ClientEvaluation, Flag,
    Metrics, ScoreWeights,
};
use crate::trainer::{build_report, ClientData, ClientReport, LocalTrainer, LogisticRegression};

pub use config::{BaselineMode, EdgeWeighting, SimulationConfig};

/// What `SimulationResult::events` records as JFI input.
pub const JFI_QUANTITY: &str = "edge_test_accuracy";

/// Who was selected and who was flagged in one round, across all edges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundSelection {
    pub round: usize,
    pub selected: BTreeSet<usize>,
    pub flags: BTreeMap<usize, BTreeSet<Flag>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeStatus {
    /// Produced a model this round.
    Aggregated,
    /// Injected failure; contributed nothing.
    Failed,
    /// Every client was excluded; contributed nothing.
    NoParticipants,
}

/// One line of the JSONL event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        mode: BaselineMode,
        seed: u64,
        n_edges: usize,
        clients_per_edge: usize,
        param_dim: usize,
        jfi_quantity: String,
    },
    EdgeRound {
        round: usize,
        edge: usize,
        status: EdgeStatus,
        /// Weights used to score this round; absent when no scoring ran.
        score_weights: Option<[f64; 3]>,
        evaluations: Vec<ClientEvaluation>,
        selected: Vec<usize>,
        sample_count: usize,
    },
    Round {
        round: usize,
        participating_edges: Vec<usize>,
        record: RoundRecord,
        /// Weights each edge will score with next round.
        next_score_weights: BTreeMap<usize, [f64; 3]>,
        global_model: ParamVector,
    },
    RunEnd {
        rounds: usize,
        stopped_early: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub rounds: Vec<RoundRecord>,
    pub final_global: ParamVector,
    pub stopped_early: bool,
    pub excluded_clients_log: Vec<RoundSelection>,
    pub events: Vec<Event>,
}

impl SimulationResult {
    /// The event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// The global model at the end of each round, in round order.
    pub fn global_models(&self) -> Vec<&ParamVector> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Round { global_model, .. } => Some(global_model),
                _ => None,
            })
            .collect()
    }

    pub fn final_record(&self) -> &RoundRecord {
        self.rounds.last().expect("a run has at least one round")
    }
}

/// Stops once the monitored loss has failed to improve by more than
/// `min_delta` for `patience` consecutive observations. Patience 0 never stops.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records a loss and reports whether training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }

    pub fn stale_rounds(&self) -> usize {
        self.stale
    }
}

/// Data layout derived once per run: splits, the client partition of the
/// training split, and each edge's held-out test rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Training rows per client, after the edge test holdout.
    pub partition: Partition,
    /// Rows of `train` each edge keeps for testing.
    pub edge_test: Vec<Vec<usize>>,
}

pub fn prepare(config: &SimulationConfig, dataset: &Dataset) -> Result<Prepared> {
    config.validate().map_err(Error::Config)?;
    let d = &config.data;
    let (mut train, val, test) = split(dataset, d.train_fraction, d.val_fraction, d.test_fraction, config.seed)?;
    let full = partition_noniid(
        &train,
        config.topology.n_edges,
        config.topology.clients_per_edge,
        d.dirichlet_alpha,
        config.seed,
    )?;
    let cpe = config.topology.clients_per_edge;
    let mut assignments = Vec::with_capacity(full.n_edges());
    let mut edge_test = Vec::with_capacity(full.n_edges());
    for (e, clients) in full.assignments.iter().enumerate() {
        let mut held = Vec::new();
        let mut kept_clients = Vec::with_capacity(clients.len());
        for (slot, rows) in clients.iter().enumerate() {
            let client = e * cpe + slot;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng_for(config.seed, &[stream::HOLDOUT, client as u64]));
            let n_hold = (d.edge_test_fraction * rows.len() as f64).floor() as usize;
            let (h, k) = shuffled.split_at(n_hold);
            held.extend_from_slice(h);
            let mut k = k.to_vec();
            k.sort_unstable();
            kept_clients.push(k);
        }
        held.sort_unstable();
        if held.is_empty() {
            return Err(Error::InfeasiblePartition(format!(
                "edge {e} has no rows left for its test shard; raise data.edge_test_fraction or data.n_samples"
            )));
        }
        if d.shift_edge == Some(e) {
            let all: Vec<usize> = clients.iter().flatten().copied().collect();
            train.shift_rows(&all, d.shift_offset);
        }
        assignments.push(kept_clients);
        edge_test.push(held);
    }
    Ok(Prepared {
        train,
        val,
        test,
        partition: Partition::from_assignments(assignments),
        edge_test,
    })
}

/// Runs a simulation with the logistic-regression trainer the config describes.
pub fn run(config: &SimulationConfig, dataset: &Dataset) -> Result<SimulationResult> {
    let trainer = LogisticRegression::new(config.model_spec())?;
    run_with_trainer(config, dataset, &trainer)
}

/// Same as [`run`]; the mode comes from `config.baseline_mode`.
pub fn run_baseline(config: &SimulationConfig, dataset: &Dataset) -> Result<SimulationResult> {
    run(config, dataset)
}

struct Group {
    edge_id: usize,
    /// (global client id, training rows)
    clients: Vec<(usize, Vec<usize>)>,
}

fn groups(config: &SimulationConfig, partition: &Partition) -> Vec<Group> {
    let cpe = config.topology.clients_per_edge;
    let per_edge: Vec<Group> = partition
        .assignments
        .iter()
        .enumerate()
        .map(|(e, clients)| Group {
            edge_id: e,
            clients: clients.iter().enumerate().map(|(s, r)| (e * cpe + s, r.clone())).collect(),
        })
        .collect();
    match config.baseline_mode {
        BaselineMode::FedavgSingle => vec![Group {
            edge_id: 0,
            clients: per_edge.into_iter().flat_map(|g| g.clients).collect(),
        }],
        _ => per_edge,
    }
}

struct Evaluated {
    record: RoundRecord,
}

fn evaluate<T: LocalTrainer + ?Sized>(
    trainer: &T,
    model: &ParamVector,
    prepared: &Prepared,
    threshold: f64,
    round: usize,
) -> Result<Evaluated> {
    let probs = |d: &Dataset, rows: &[usize]| -> Vec<f64> {
        rows.par_iter().map(|&r| trainer.predict_proba(model, d.row(r))).collect()
    };
    let labels = |d: &Dataset, rows: &[usize]| -> Vec<u8> { rows.iter().map(|&r| d.label(r)).collect() };

    let mut per_edge = BTreeMap::new();
    for (e, rows) in prepared.edge_test.iter().enumerate() {
        let m = binary_metrics(&probs(&prepared.train, rows), &labels(&prepared.train, rows), threshold)?;
        per_edge.insert(
            e,
            EdgeMetrics {
                accuracy: m.accuracy,
                loss: m.loss,
            },
        );
    }
    let val_rows: Vec<usize> = (0..prepared.val.len()).collect();
    let val = binary_metrics(&probs(&prepared.val, &val_rows), prepared.val.labels(), threshold)?;
    let test_rows: Vec<usize> = (0..prepared.test.len()).collect();
    let test = binary_metrics(&probs(&prepared.test, &test_rows), prepared.test.labels(), threshold)?;
    let accs: Vec<f64> = per_edge.values().map(|m| m.accuracy).collect();
    // every edge at zero accuracy is still perfectly even
    let jfi = jain_fairness(&accs).unwrap_or(1.0);
    Ok(Evaluated {
        record: RoundRecord {
            round,
            per_edge,
            global_val: ValMetrics {
                loss: val.loss,
                accuracy: val.accuracy,
            },
            global_test: TestMetrics::from(&test),
            jfi,
        },
    })
}

/// Outcome of one edge's work in a round.
struct EdgeOutcome {
    update: Option<EdgeUpdate>,
    event: Event,
    selected: Vec<usize>,
    flags: BTreeMap<usize, BTreeSet<Flag>>,
    /// Means of the consistency survivors, for the weight update.
    survivor_means: Option<Metrics>,
}

struct Runner<'a, T: LocalTrainer + ?Sized> {
    config: &'a SimulationConfig,
    trainer: &'a T,
    prepared: &'a Prepared,
    codec: FixedPointCodec,
    keys: BTreeMap<usize, (PublicKey, PrivateKey)>,
}

impl<T: LocalTrainer + ?Sized> Runner<'_, T> {
    fn reports(&self, group: &Group, edge_model: &ParamVector, round: usize) -> Result<Vec<ClientReport>> {
        let config = self.config;
        let energy = config.energy_model();
        let adversary_seed = derive_seed(config.seed, &[stream::ADVERSARY, round as u64]);
        group
            .clients
            .par_iter()
            .map(|(client, rows)| {
                let data = ClientData {
                    dataset: &self.prepared.train,
                    rows,
                };
                let seed = derive_seed(config.seed, &[stream::TRAIN, round as u64, *client as u64]);
                let trained = self.trainer.train(edge_model, data, seed)?;
                build_report(
                    *client,
                    &trained,
                    edge_model,
                    &energy,
                    rows.len(),
                    config.security_index(*client),
                    &config.behaviors(*client),
                    adversary_seed,
                )
            })
            .collect()
    }

    /// Secure aggregation of the chosen reports into the edge's new model.
    fn aggregate(&self, edge: usize, chosen: &[&ClientReport], edge_model: &ParamVector, round: usize, headroom: usize) -> Result<ParamVector> {
        let config = &self.config.secagg;
        let weight_of = |r: &ClientReport| match config.weighting {
            EdgeWeighting::Samples => r.sample_count as f64,
            EdgeWeighting::Uniform => 1.0,
        };
        let weight_total: f64 = chosen.iter().map(|r| weight_of(r)).sum();
        let deltas = chosen
            .iter()
            .map(|r| r.weights.sub(edge_model).and_then(|d| d.scale(weight_of(r))))
            .collect::<Result<Vec<_>>>()?;
        let noise_seed = derive_seed(self.config.seed, &[stream::NOISE, round as u64, edge as u64]);
        let step = if config.encryption {
            let (pk, sk) = &self.keys[&edge];
            let ciphers = deltas
                .iter()
                .zip(chosen)
                .map(|(d, r)| {
                    let seed = derive_seed(self.config.seed, &[stream::ENCRYPT, round as u64, r.client_id as u64]);
                    secagg::encrypt_update(d, &self.codec, pk, headroom, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let agg = secagg::aggregate_encrypted(&ciphers, pk, headroom)?;
            secagg::finalize_weighted(&agg, sk, &self.codec, chosen.len(), weight_total, &config.dp, noise_seed)?
        } else {
            let terms: Vec<(f64, &ParamVector)> = deltas.iter().map(|d| (1.0 / weight_total, d)).collect();
            clip_and_noise(&weighted_sum(&terms)?, &config.dp, chosen.len(), noise_seed)?
        };
        edge_model.add(&step)
    }

    fn edge_round(
        &self,
        group: &Group,
        global: &ParamVector,
        round: usize,
        weights: &mut BTreeMap<usize, ScoreWeights>,
    ) -> Result<EdgeOutcome> {
        let config = self.config;
        let edge = group.edge_id;
        let reports = self.reports(group, global, round)?;
        let energy = config.energy_model();
        let mut evaluations = evaluate_clients(&reports, global, &energy, config.selection.consistency_threshold)?;
        let survivors: Vec<Metrics> = evaluations
            .iter()
            .filter(|e| !e.flags.contains(&Flag::Inconsistent))
            .map(ClientEvaluation::metrics)
            .collect();

        let (selected, used_weights) = match config.baseline_mode {
            BaselineMode::FedselectMe => {
                let w = match weights.get(&edge) {
                    Some(w) => *w,
                    None if survivors.is_empty() => ScoreWeights::uniform(),
                    None => grid_search_init(&survivors, config.selection.grid_step)?,
                };
                let selected = rank_and_filter(&mut evaluations, &w, &config.selection);
                (selected, Some(w))
            }
            BaselineMode::NoSelection => {
                for e in &mut evaluations {
                    e.flags.clear();
                }
                (reports.iter().map(|r| r.client_id).collect(), None)
            }
            BaselineMode::FedavgSingle => {
                for e in &mut evaluations {
                    e.flags.clear();
                }
                let k = config.selection.capacity_k.min(reports.len());
                let mut rng = rng_for(config.seed, &[stream::SAMPLING, round as u64]);
                let mut picked: Vec<usize> = sample(&mut rng, reports.len(), k)
                    .into_iter()
                    .map(|i| reports[i].client_id)
                    .collect();
                picked.sort_unstable();
                (picked, None)
            }
        };

        let flags: BTreeMap<usize, BTreeSet<Flag>> = evaluations
            .iter()
            .filter(|e| !e.flags.is_empty())
            .map(|e| (e.client_id, e.flags.clone()))
            .collect();

        // aggregate in client id order whatever order selection ranked them in
        let chosen_ids: BTreeSet<usize> = selected.iter().copied().collect();
        let chosen: Vec<&ClientReport> = reports.iter().filter(|r| chosen_ids.contains(&r.client_id)).collect();
        let sample_count: usize = chosen.iter().map(|r| r.sample_count).sum();
        let (update, status) = if chosen.is_empty() {
            (None, EdgeStatus::NoParticipants)
        } else {
            let model = self.aggregate(edge, &chosen, global, round, group.clients.len())?;
            (
                Some(EdgeUpdate {
                    edge_id: edge,
                    local_model: model,
                    sample_count,
                }),
                EdgeStatus::Aggregated,
            )
        };
        if let Some(w) = used_weights {
            weights.insert(edge, w);
        }
        Ok(EdgeOutcome {
            update,
            event: Event::EdgeRound {
                round,
                edge,
                status,
                score_weights: used_weights.map(|w| w.as_array()),
                evaluations,
                selected,
                sample_count,
            },
            selected: chosen_ids.into_iter().collect(),
            flags,
            survivor_means: round_means(&survivors),
        })
    }
}

/// Runs a simulation with any local trainer.
pub fn run_with_trainer<T: LocalTrainer + ?Sized>(
    config: &SimulationConfig,
    dataset: &Dataset,
    trainer: &T,
) -> Result<SimulationResult> {
    let prepared = prepare(config, dataset)?;
    let groups = groups(config, &prepared.partition);
    let keys = if config.secagg.encryption {
        groups
            .par_iter()
            .map(|g| {
                secagg::keygen(config.secagg.key_bits, derive_seed(config.seed, &[stream::KEYGEN, g.edge_id as u64]))
                    .map(|k| (g.edge_id, k))
            })
            .collect::<Result<BTreeMap<_, _>>>()?
    } else {
        BTreeMap::new()
    };
    let runner = Runner {
        config,
        trainer,
        prepared: &prepared,
        codec: FixedPointCodec::new(config.secagg.scale)?,
        keys,
    };

    let mut global = trainer.init_params();
    let mut events = vec![Event::RunStart {
        mode: config.baseline_mode,
        seed: config.seed,
        n_edges: config.topology.n_edges,
        clients_per_edge: config.topology.clients_per_edge,
        param_dim: global.dim(),
        jfi_quantity: JFI_QUANTITY.into(),
    }];
    let mut rounds = Vec::new();
    let mut log = Vec::new();
    let mut weights: BTreeMap<usize, ScoreWeights> = BTreeMap::new();
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut stopped_early = false;
    let multi_edge = config.baseline_mode != BaselineMode::FedavgSingle;

    for round in 1..=config.rounds_max {
        let failed: BTreeSet<usize> = if multi_edge {
            config.edge_failures.iter().filter(|f| f.round == round).map(|f| f.edge).collect()
        } else {
            BTreeSet::new()
        };
        if groups.iter().all(|g| failed.contains(&g.edge_id)) {
            return Err(Error::AllEdgesFailed { round });
        }

        let mut updates = Vec::new();
        let mut selection = RoundSelection {
            round,
            ..Default::default()
        };
        let mut means: BTreeMap<usize, Metrics> = BTreeMap::new();
        for g in &groups {
            if failed.contains(&g.edge_id) {
                events.push(Event::EdgeRound {
                    round,
                    edge: g.edge_id,
                    status: EdgeStatus::Failed,
                    score_weights: None,
                    evaluations: Vec::new(),
                    selected: Vec::new(),
                    sample_count: 0,
                });
                continue;
            }
            let out = runner.edge_round(g, &global, round, &mut weights)?;
            selection.selected.extend(out.selected);
            selection.flags.extend(out.flags);
            if let Some(m) = out.survivor_means {
                means.insert(g.edge_id, m);
            }
            updates.extend(out.update);
            events.push(out.event);
        }

        let participating: Vec<usize> = updates.iter().map(|u| u.edge_id).collect();
        if !updates.is_empty() {
            let mixed = if multi_edge {
                match config.aggregation.exchange {
                    ExchangeMode::FullModel => cross_edge_exchange(&updates, &config.aggregation)?,
                    ExchangeMode::Delta => cross_edge_exchange_delta(&updates, &config.aggregation, &global)?,
                }
            } else {
                updates
            };
            global = central_aggregate(&mixed)?;
        }

        let record = evaluate(trainer, &global, &prepared, config.decision_threshold, round)?.record;

        if config.baseline_mode == BaselineMode::FedselectMe {
            for (edge, w) in weights.iter_mut() {
                if let Some(m) = means.get(edge) {
                    *w = update_weights(w, *m, config.selection.eta)?;
                }
            }
        }
        events.push(Event::Round {
            round,
            participating_edges: participating,
            record: record.clone(),
            next_score_weights: weights.iter().map(|(e, w)| (*e, w.as_array())).collect(),
            global_model: global.clone(),
        });
        let stop = stopper.observe(record.global_val.loss);
        rounds.push(record);
        log.push(selection);
        if stop && round < config.rounds_max {
            stopped_early = true;
            break;
        }
    }

    events.push(Event::RunEnd {
        rounds: rounds.len(),
        stopped_early,
    });
    Ok(SimulationResult {
        rounds,
        final_global: global,
        stopped_early,
        excluded_clients_log: log,
        events,
    })
}
