use fedmesh::data::Dataset;
use fedmesh::orchestrator::config::AdversarySpec;
use fedmesh::orchestrator::{run, run_baseline, run_with_trainer, BaselineMode, EdgeStatus, Event, SimulationConfig};
use fedmesh::params::ParamVector;
use fedmesh::trainer::{Behavior, ClientData, LocalTrainer, LogisticRegression};
use fedmesh::Result;

fn config(seed: u64) -> SimulationConfig {
    let mut c = SimulationConfig {
        seed,
        rounds_max: 6,
        ..Default::default()
    };
    c.data.n_samples = 2000;
    c.secagg.key_bits = 256;
    c
}

fn data(c: &SimulationConfig) -> Dataset {
    c.load_dataset().unwrap()
}

/// Never moves the model, so validation loss is frozen.
struct Frozen(LogisticRegression);

impl LocalTrainer for Frozen {
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }

    fn predict_proba(&self, params: &ParamVector, features: &[f64]) -> f64 {
        self.0.predict_proba(params, features)
    }

    fn train(&self, start: &ParamVector, _data: ClientData<'_>, _seed: u64) -> Result<ParamVector> {
        Ok(start.clone())
    }
}

#[test]
fn frozen_validation_loss_stops_after_patience_plus_one_rounds() {
    let mut c = config(1);
    c.rounds_max = 20;
    c.secagg.dp.noise_multiplier = 0.0;
    let trainer = Frozen(LogisticRegression::new(c.model_spec()).unwrap());
    let r = run_with_trainer(&c, &data(&c), &trainer).unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.rounds.len(), c.patience + 1);
    let first = r.rounds[0].global_val.loss;
    assert!(r.rounds.iter().all(|x| x.global_val.loss == first));
}

#[test]
fn no_early_stop_when_the_last_round_is_reached() {
    let mut c = config(1);
    c.rounds_max = 2;
    let r = run(&c, &data(&c)).unwrap();
    assert_eq!(r.rounds.len(), 2);
    assert!(!r.stopped_early);
}

fn participating(events: &[Event], round: usize) -> Vec<usize> {
    events
        .iter()
        .find_map(|e| match e {
            Event::Round {
                round: r,
                participating_edges,
                ..
            } if *r == round => Some(participating_edges.clone()),
            _ => None,
        })
        .unwrap()
}

#[test]
fn failed_edge_drops_out_for_one_round_only() {
    let c = config(2);
    let d = data(&c);
    let clean = run(&c, &d).unwrap();
    let failed = run(&c.clone().with_edge_failure(2, 3).unwrap(), &d).unwrap();
    assert_eq!(participating(&failed.events, 3), vec![0, 1, 3, 4]);
    for round in [1, 2, 4, 5, 6] {
        assert_eq!(participating(&failed.events, round), vec![0, 1, 2, 3, 4]);
    }
    assert!(failed.events.iter().any(|e| matches!(
        e,
        Event::EdgeRound {
            round: 3,
            edge: 2,
            status: EdgeStatus::Failed,
            ..
        }
    )));
    // identical before the failure, different from it onward
    assert_eq!(clean.rounds[..2], failed.rounds[..2]);
    assert_ne!(clean.rounds[2], failed.rounds[2]);
    assert!(failed.final_global.is_finite());
}

#[test]
fn four_of_five_failed_edges_still_produce_a_model() {
    let mut c = config(3);
    for e in [0, 1, 3, 4] {
        c = c.with_edge_failure(e, 2).unwrap();
    }
    let r = run(&c, &data(&c)).unwrap();
    assert_eq!(participating(&r.events, 2), vec![2]);
    assert!(r.final_global.is_finite());
}

#[test]
fn failing_every_edge_names_the_round() {
    let mut c = config(3);
    for e in 0..5 {
        c = c.with_edge_failure(e, 4).unwrap();
    }
    let err = run(&c, &data(&c)).unwrap_err();
    assert_eq!(err.to_string(), "all edges failed in round 4");
}

#[test]
fn baselines_are_deterministic_and_share_a_schema() {
    for mode in [BaselineMode::FedselectMe, BaselineMode::FedavgSingle, BaselineMode::NoSelection] {
        let mut c = config(4);
        c.rounds_max = 3;
        c.baseline_mode = mode;
        let d = data(&c);
        let a = run_baseline(&c, &d).unwrap();
        let b = run_baseline(&c, &d).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.rounds[0].per_edge.len(), 5, "{mode:?}");
    }
}

#[test]
fn fedavg_single_samples_capacity_k_clients() {
    let mut c = config(5);
    c.baseline_mode = BaselineMode::FedavgSingle;
    c.selection.capacity_k = 7;
    c.rounds_max = 3;
    let r = run(&c, &data(&c)).unwrap();
    let picks: Vec<_> = r.excluded_clients_log.iter().map(|s| s.selected.clone()).collect();
    assert!(picks.iter().all(|p| p.len() == 7));
    assert!(picks.windows(2).any(|w| w[0] != w[1]), "sampling should vary by round");
}

#[test]
fn liar_enters_no_selection_but_not_fedselect_me() {
    let mut c = config(6);
    c.rounds_max = 3;
    c.adversaries.push(AdversarySpec {
        client: 12,
        behavior: Behavior::InflateUtility { factor: 10.0 },
    });
    let d = data(&c);
    let me = run(&c, &d).unwrap();
    c.baseline_mode = BaselineMode::NoSelection;
    let none = run(&c, &d).unwrap();
    for (a, b) in me.excluded_clients_log.iter().zip(&none.excluded_clients_log) {
        assert!(!a.selected.contains(&12));
        assert!(b.selected.contains(&12));
        assert_eq!(b.selected.len(), 50);
    }
}

#[test]
fn noisy_uploads_are_flagged() {
    let mut c = config(7);
    c.rounds_max = 3;
    c.adversaries.push(AdversarySpec {
        client: 8,
        behavior: Behavior::NoiseWeights { scale: 2.0 },
    });
    let r = run(&c, &data(&c)).unwrap();
    assert!(r.excluded_clients_log.iter().all(|s| s.flags.contains_key(&8)));
}

#[test]
fn sample_weighted_edge_mean_matches_plaintext_with_encryption() {
    // encrypted and plaintext pipelines agree up to quantization
    let mut c = config(8);
    c.rounds_max = 2;
    c.secagg.dp.noise_multiplier = 0.0;
    let d = data(&c);
    let enc = run(&c, &d).unwrap();
    c.secagg.encryption = false;
    let plain = run(&c, &d).unwrap();
    for (a, b) in enc.global_models().iter().zip(plain.global_models()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn feature_shifted_edge_still_trains() {
    let mut c = config(9);
    c.data.shift_edge = Some(4);
    c.data.shift_offset = 1.5;
    let r = run(&c, &data(&c)).unwrap();
    assert!(r.final_global.is_finite());
    assert!(r.final_record().jfi > 0.5 && r.final_record().jfi <= 1.0);
}

#[test]
fn infeasible_partition_is_reported() {
    let mut c = config(10);
    c.data.n_samples = 100;
    c.topology.clients_per_edge = 20;
    assert!(matches!(run(&c, &data(&c)), Err(fedmesh::Error::InfeasiblePartition(_))));
}
