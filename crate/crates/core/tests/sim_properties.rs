use alarm_hmm::diagnoser::{evaluate_prefix_accuracy, train_diagnoser, DiagnoserConfig, FaultId};
use alarm_hmm::extraction::AlarmSymbolCodebook;
use alarm_hmm::sim::{
    default_graph, generate_scenario_set, reference_counts, simulate_alarm_sequence, FaultPath,
    MagnitudeRange, NoiseConfig, PropagationGraph, ScenarioSpec, Stage, DEFAULT_MEASUREMENTS,
};
use proptest::prelude::*;

fn quiet_graph() -> PropagationGraph {
    PropagationGraph {
        n_symbols: 10,
        faults: vec![FaultPath {
            name: "quiet".into(),
            stages: vec![
                Stage {
                    symbols: vec![4, 1],
                    delay_s: 10.0,
                    jitter_s: 0.0,
                },
                Stage {
                    symbols: vec![7],
                    delay_s: 40.0,
                    jitter_s: 0.0,
                },
                Stage {
                    symbols: vec![0, 9],
                    delay_s: 90.0,
                    jitter_s: 0.0,
                },
            ],
            depth_thresholds: vec![0.0, 0.5, 0.8],
        }],
    }
}

fn spec(fault: usize, magnitude: f64, seed: u64, noise: NoiseConfig) -> ScenarioSpec {
    ScenarioSpec {
        fault: FaultId(fault),
        magnitude,
        seed,
        swap_prob: noise.swap_prob,
        drop_prob: noise.drop_prob,
    }
}

const SILENT: NoiseConfig = NoiseConfig {
    swap_prob: 0.0,
    drop_prob: 0.0,
};

#[test]
fn noiseless_full_magnitude_follows_nominal_order() {
    let seq = simulate_alarm_sequence(&quiet_graph(), &spec(0, 1.0, 3, SILENT)).unwrap();
    // Equal onsets are ordered by symbol.
    assert_eq!(seq.symbols, vec![1, 4, 7, 0, 9]);
    assert_eq!(seq.activation_times, vec![10.0, 10.0, 40.0, 90.0, 90.0]);
    assert_eq!(seq.fault_label, Some(0));
}

#[test]
fn small_magnitude_reaches_only_the_first_stage() {
    let seq = simulate_alarm_sequence(&quiet_graph(), &spec(0, 0.1, 3, SILENT)).unwrap();
    assert_eq!(seq.symbols, vec![1, 4]);
}

#[test]
fn magnitude_outside_unit_interval_is_rejected() {
    for m in [0.0, -0.5, 1.5] {
        assert!(simulate_alarm_sequence(&quiet_graph(), &spec(0, m, 1, SILENT)).is_err());
    }
}

#[test]
fn reference_shape_has_sixty_five_and_forty_two_sequences() {
    let graph = default_graph();
    assert_eq!(graph.n_symbols, 2 * DEFAULT_MEASUREMENTS);
    assert_eq!(graph.faults.len(), 10);
    let (train, test) = generate_scenario_set(
        &graph,
        &reference_counts(),
        MagnitudeRange::default(),
        NoiseConfig::default(),
        1,
    )
    .unwrap();
    assert_eq!(train.len(), 65);
    assert_eq!(test.len(), 42);
    let max_len = test
        .scenarios
        .iter()
        .map(|s| s.sequence.len())
        .max()
        .unwrap();
    assert!(max_len <= 82);
}

#[test]
fn train_and_test_seeds_are_disjoint() {
    let (train, test) = generate_scenario_set(
        &default_graph(),
        &reference_counts(),
        MagnitudeRange::default(),
        NoiseConfig::default(),
        9,
    )
    .unwrap();
    let mut seeds: Vec<u64> = train
        .scenarios
        .iter()
        .chain(&test.scenarios)
        .map(|s| s.spec.seed)
        .collect();
    let total = seeds.len();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), total);
}

#[test]
fn one_training_sequence_and_no_test_data() {
    let (train, test) = generate_scenario_set(
        &quiet_graph(),
        &[(1, 0)],
        MagnitudeRange::default(),
        NoiseConfig::default(),
        4,
    )
    .unwrap();
    assert_eq!(train.len(), 1);
    assert!(test.is_empty());
    assert_eq!(train.labeled()[0].fault, FaultId(0));
}

#[test]
fn empty_magnitude_range_is_rejected() {
    let range = MagnitudeRange {
        low: 0.6,
        high: 0.6,
    };
    assert!(generate_scenario_set(&quiet_graph(), &[(1, 1)], range, SILENT, 0).is_err());
}

#[test]
fn graph_json_round_trips() {
    let graph = default_graph();
    let back = PropagationGraph::from_json(&graph.to_json().unwrap()).unwrap();
    assert_eq!(back, graph);
}

#[test]
fn shared_prefixes_are_resolved_by_longer_sequences() {
    let graph = default_graph();
    let (train, test) = generate_scenario_set(
        &graph,
        &reference_counts(),
        MagnitudeRange::default(),
        NoiseConfig::default(),
        1,
    )
    .unwrap();
    let model = train_diagnoser::<f64>(
        &train.labeled(),
        AlarmSymbolCodebook::with_measurements(DEFAULT_MEASUREMENTS),
        Some(graph.fault_names()),
        None,
        &DiagnoserConfig::default(),
    )
    .unwrap();
    let curve = evaluate_prefix_accuracy(&model, &test.labeled(), 38).unwrap();
    assert!(curve.at(1).accuracy < curve.at(38).accuracy);
    assert!(curve.at(3).accuracy < curve.at(38).accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let graph = default_graph();
        let run = || generate_scenario_set(&graph, &reference_counts(), MagnitudeRange::default(), NoiseConfig::default(), seed).unwrap();
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn sequences_are_valid(seed in any::<u64>(), fault in 0usize..10, magnitude in 0.01f64..=1.0, swap in 0.0f64..=1.0, drop in 0.0f64..=1.0) {
        let graph = default_graph();
        let noise = NoiseConfig { swap_prob: swap, drop_prob: drop };
        let seq = simulate_alarm_sequence(&graph, &spec(fault, magnitude, seed, noise)).unwrap();
        prop_assert!(seq.validate().is_ok());
        prop_assert!(!seq.is_empty());
        let reachable: Vec<usize> = graph.faults[fault].stages.iter().flat_map(|s| s.symbols.clone()).collect();
        prop_assert!(seq.symbols.iter().all(|s| reachable.contains(s)));
        prop_assert!(seq.symbols.contains(&graph.faults[fault].stages[0].symbols[0]));
    }

    #[test]
    fn noiseless_replicates_agree(seed_a in any::<u64>(), seed_b in any::<u64>(), magnitude in 0.01f64..=1.0) {
        let graph = quiet_graph();
        let a = simulate_alarm_sequence(&graph, &spec(0, magnitude, seed_a, SILENT)).unwrap();
        let b = simulate_alarm_sequence(&graph, &spec(0, magnitude, seed_b, SILENT)).unwrap();
        prop_assert_eq!(a, b);
    }
}
