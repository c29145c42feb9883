use alarm_hmm::diagnoser::FaultId;
use alarm_hmm::extraction::{
    extract_sequence, fit_limits, AlarmLimits, AlarmSymbolCodebook, Direction, MeasurementTrace,
};
use alarm_hmm::sim::ScenarioSpec;
use alarm_hmm::sim::{default_graph, normal_operation_trace, simulate_trace};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn trace(period: f64, columns: &[Vec<f64>]) -> MeasurementTrace {
    let n = columns[0].len();
    let values = Array2::from_shape_fn((n, columns.len()), |(t, j)| columns[j][t]);
    let ids = (0..columns.len()).map(|j| format!("x{}", j + 1)).collect();
    MeasurementTrace::new(period, values, ids).unwrap()
}

fn unit_limits(m: usize) -> AlarmLimits {
    AlarmLimits {
        mean: vec![0.0; m],
        std_dev: vec![1.0; m],
        kappa: 3.0,
    }
}

/// Direct scan over time intervals: sample `i` covers `[i·P, (i+1)·P)`; an
/// excursion is a maximal union of covered intervals beyond the limit.
/// Returns `(activation_time, symbol)` for the first excursion of each
/// (measurement, direction) lasting at least `persist` seconds.
fn interval_scan(
    tr: &MeasurementTrace,
    limits: &AlarmLimits,
    codebook: &AlarmSymbolCodebook,
    persist: f64,
) -> Vec<(f64, usize)> {
    let p = tr.sample_period();
    let mut out = Vec::new();
    for j in 0..tr.n_measurements() {
        for dir in [Direction::High, Direction::Low] {
            let beyond = |v: f64| match dir {
                Direction::High => v > limits.high(j),
                Direction::Low => v < limits.low(j),
            };
            let mut intervals: Vec<(f64, f64)> = Vec::new();
            for (i, &v) in tr.values().column(j).iter().enumerate() {
                if !beyond(v) {
                    continue;
                }
                let (s, e) = (i as f64 * p, (i + 1) as f64 * p);
                match intervals.last_mut() {
                    Some(last) if (last.1 - s).abs() < 1e-9 * p => last.1 = e,
                    _ => intervals.push((s, e)),
                }
            }
            let tol = 1e-9 * p;
            if let Some(&(s, _)) = intervals.iter().find(|(s, e)| e - s >= persist - tol) {
                out.push((s, codebook.encode(j, dir).unwrap()));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

fn extracted(
    tr: &MeasurementTrace,
    limits: &AlarmLimits,
    codebook: &AlarmSymbolCodebook,
    persist: f64,
) -> Vec<(f64, usize)> {
    let seq = extract_sequence(tr, limits, codebook, persist).unwrap();
    seq.activation_times
        .iter()
        .copied()
        .zip(seq.symbols.iter().copied())
        .collect()
}

/// Measurement 0 alternates 200 s below and 200 s above its high limit,
/// starting below; measurement 1 stays quiet.
fn square_wave() -> MeasurementTrace {
    let period = 10.0;
    let wave: Vec<f64> = (0..200)
        .map(|i| if (i / 20) % 2 == 1 { 4.0 } else { 0.0 })
        .collect();
    trace(period, &[wave, vec![0.0; 200]])
}

#[test]
fn square_wave_dwell_shorter_than_persistence_never_alarms() {
    let tr = square_wave();
    let cb = AlarmSymbolCodebook::with_measurements(2);
    let limits = unit_limits(2);
    assert!(extracted(&tr, &limits, &cb, 300.0).is_empty());
    assert_eq!(
        extracted(&tr, &limits, &cb, 300.0),
        interval_scan(&tr, &limits, &cb, 300.0)
    );
}

#[test]
fn square_wave_alarms_once_at_first_excursion() {
    let tr = square_wave();
    let cb = AlarmSymbolCodebook::with_measurements(2);
    let limits = unit_limits(2);
    let got = extracted(&tr, &limits, &cb, 150.0);
    assert_eq!(got, vec![(200.0, 0)]);
    assert_eq!(got, interval_scan(&tr, &limits, &cb, 150.0));
}

#[test]
fn persistence_equal_to_dwell_qualifies() {
    let tr = square_wave();
    let cb = AlarmSymbolCodebook::with_measurements(2);
    let limits = unit_limits(2);
    assert_eq!(extracted(&tr, &limits, &cb, 200.0), vec![(200.0, 0)]);
    assert!(extracted(&tr, &limits, &cb, 210.0).is_empty());
}

#[test]
fn step_at_100_seconds() {
    let col: Vec<f64> = (0..100).map(|i| if i >= 10 { 5.0 } else { 0.0 }).collect();
    let tr = trace(10.0, &[vec![0.0; 100], col]);
    let cb = AlarmSymbolCodebook::with_measurements(2);
    let seq = extract_sequence(&tr, &unit_limits(2), &cb, 300.0).unwrap();
    assert_eq!(seq.symbols, vec![1]);
    assert_eq!(seq.activation_times, vec![100.0]);
}

#[test]
fn low_excursions_use_offset_symbols() {
    let col: Vec<f64> = (0..50).map(|i| if i >= 5 { -5.0 } else { 0.0 }).collect();
    let tr = trace(10.0, &[col, vec![0.0; 50], vec![0.0; 50]]);
    let cb = AlarmSymbolCodebook::with_measurements(3);
    let seq = extract_sequence(&tr, &unit_limits(3), &cb, 300.0).unwrap();
    assert_eq!(seq.symbols, vec![3]);
}

#[test]
fn limits_of_unit_noise_around_ten() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let noise = Normal::new(10.0, 1.0).unwrap();
    let col: Vec<f64> = (0..20_000).map(|_| noise.sample(&mut rng)).collect();
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let limits = fit_limits(&[trace(1.0, &[col])], 3.0).unwrap();
    assert!((limits.mean[0] - mean).abs() < 1e-9);
    assert!((limits.std_dev[0] - sd).abs() < 1e-9);
    assert!((limits.low(0) - 7.0).abs() < 0.1);
    assert!((limits.high(0) - 13.0).abs() < 0.1);
}

#[test]
fn generated_normal_traces_raise_no_alarms_at_default_settings() {
    let normal: Vec<_> = (0..3)
        .map(|s| normal_operation_trace(41, 10.0, 500, s).unwrap())
        .collect();
    let limits = fit_limits(&normal, 3.0).unwrap();
    let cb = AlarmSymbolCodebook::with_measurements(41);
    let fresh = normal_operation_trace(41, 10.0, 500, 99).unwrap();
    assert!(extract_sequence(&fresh, &limits, &cb, 300.0)
        .unwrap()
        .is_empty());
}

#[test]
fn simulated_trace_round_trips_through_extraction() {
    let graph = default_graph();
    let normal: Vec<_> = (0..4)
        .map(|s| normal_operation_trace(41, 10.0, 400, 1000 + s).unwrap())
        .collect();
    let limits = fit_limits(&normal, 3.0).unwrap();
    let cb = AlarmSymbolCodebook::with_measurements(41);
    for fault in 0..graph.faults.len() {
        let spec = ScenarioSpec {
            fault: FaultId(fault),
            magnitude: 1.0,
            seed: 17 + fault as u64,
            swap_prob: 0.0,
            drop_prob: 0.0,
        };
        let (tr, truth) = simulate_trace(&graph, &spec, 10.0, 4000.0, 8.0).unwrap();
        let got = extract_sequence(&tr, &limits, &cb, 300.0).unwrap();
        let mut a = got.symbols.clone();
        let mut b = truth.symbols.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "fault {fault}");
        // Onsets are quantized to samples, so only alarms starting within one
        // period of each other may change order.
        let onset =
            |s: usize| truth.activation_times[truth.symbols.iter().position(|&x| x == s).unwrap()];
        for (i, (&s, &t)) in got.symbols.iter().zip(&got.activation_times).enumerate() {
            assert!(
                (t - onset(s)).abs() <= 10.0 + 1e-9,
                "fault {fault}: symbol {s}"
            );
            for &later in &got.symbols[i + 1..] {
                assert!(
                    onset(later) >= onset(s) - 10.0,
                    "fault {fault}: {s} before {later}"
                );
            }
        }
    }
}

#[test]
fn csv_round_trip_preserves_extraction() {
    let tr = square_wave();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let back = MeasurementTrace::read_csv(buf.as_slice()).unwrap();
    let cb = AlarmSymbolCodebook::with_measurements(2);
    let limits = unit_limits(2);
    assert_eq!(
        extracted(&back, &limits, &cb, 150.0),
        extracted(&tr, &limits, &cb, 150.0)
    );
}

fn random_trace(seed: u64) -> MeasurementTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4);
    let n = rng.random_range(1..=120);
    let period = [1.0, 5.0, 10.0, 30.0][rng.random_range(0..4)];
    // Sticky random walk between quiet, high and low regimes.
    let columns: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut level = 0.0;
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < 0.15 {
                        level = [0.0, 4.0, -4.0][rng.random_range(0..3)];
                    }
                    level + rng.random_range(-0.5..0.5)
                })
                .collect()
        })
        .collect();
    trace(period, &columns)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn extraction_matches_interval_scan(seed in any::<u64>(), persist in 0.0f64..600.0) {
        let tr = random_trace(seed);
        let m = tr.n_measurements();
        let cb = AlarmSymbolCodebook::with_measurements(m);
        let limits = unit_limits(m);
        prop_assert_eq!(extracted(&tr, &limits, &cb, persist), interval_scan(&tr, &limits, &cb, persist));
    }

    #[test]
    fn longer_persistence_yields_a_subset(seed in any::<u64>(), a in 0.0f64..600.0, b in 0.0f64..600.0) {
        let (short, long) = if a <= b { (a, b) } else { (b, a) };
        let tr = random_trace(seed);
        let m = tr.n_measurements();
        let cb = AlarmSymbolCodebook::with_measurements(m);
        let limits = unit_limits(m);
        let small = extract_sequence(&tr, &limits, &cb, short).unwrap();
        let large = extract_sequence(&tr, &limits, &cb, long).unwrap();
        prop_assert!(large.symbols.iter().all(|s| small.symbols.contains(s)));
    }

    #[test]
    fn extracted_sequences_are_well_formed(seed in any::<u64>(), persist in 0.0f64..600.0) {
        let tr = random_trace(seed);
        let m = tr.n_measurements();
        let cb = AlarmSymbolCodebook::with_measurements(m);
        let seq = extract_sequence(&tr, &unit_limits(m), &cb, persist).unwrap();
        prop_assert!(seq.validate().is_ok());
        let mut seen = seq.symbols.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), seq.symbols.len());
        prop_assert!(seq.activation_times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn codebook_round_trips(m in 1usize..100) {
        let cb = AlarmSymbolCodebook::with_measurements(m);
        prop_assert_eq!(cb.n_symbols(), 2 * m);
        for s in 0..2 * m {
            let (j, d) = cb.decode(s).unwrap();
            prop_assert_eq!(cb.encode(j, d), Some(s));
        }
        prop_assert_eq!(cb.decode(2 * m), None);
    }
}
