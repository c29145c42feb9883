//! Synthetic fault-propagation generator.
//!
//! Each fault propagates through an ordered list of stages; every stage is a
//! set of alarm symbols with a nominal onset delay and a jitter scale. The fault
//! magnitude decides how many stages are reached. Generation is a pure function
//! of the graph and the scenario seed.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnoser::{FaultId, LabeledSequence};
use crate::error::{domain, Error, Result};
use crate::extraction::{
    AlarmSequence, AlarmSymbolCodebook, Direction, MeasurementTrace, SequenceRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub symbols: Vec<usize>,
    pub delay_s: f64,
    pub jitter_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPath {
    pub name: String,
    pub stages: Vec<Stage>,
    /// Stage `s` is reached when the magnitude is at least `depth_thresholds[s]`.
    /// The first stage is always reached.
    pub depth_thresholds: Vec<f64>,
}

impl FaultPath {
    /// Number of stages reached at `magnitude`.
    pub fn depth(&self, magnitude: f64) -> usize {
        self.depth_thresholds
            .iter()
            .take_while(|&&th| magnitude >= th)
            .count()
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationGraph {
    pub n_symbols: usize,
    pub faults: Vec<FaultPath>,
}

impl PropagationGraph {
    pub fn validate(&self) -> Result<()> {
        if self.faults.is_empty() {
            return domain("propagation graph has no faults");
        }
        for (f, path) in self.faults.iter().enumerate() {
            let ctx = |msg: String| Error::Domain(format!("fault {f} (`{}`): {msg}", path.name));
            if path.stages.is_empty() {
                return Err(ctx("no stages".into()));
            }
            if path.depth_thresholds.len() != path.stages.len() {
                return Err(ctx(format!(
                    "{} depth thresholds for {} stages",
                    path.depth_thresholds.len(),
                    path.stages.len()
                )));
            }
            if path.depth_thresholds.windows(2).any(|w| w[1] < w[0]) {
                return Err(ctx("depth thresholds must be non-decreasing".into()));
            }
            if path
                .stages
                .windows(2)
                .any(|w| !(w[1].delay_s > w[0].delay_s))
            {
                return Err(ctx("stage delays must strictly increase".into()));
            }
            let mut seen = std::collections::HashSet::new();
            for stage in &path.stages {
                if stage.symbols.is_empty() {
                    return Err(ctx("empty stage".into()));
                }
                if !(stage.jitter_s >= 0.0) {
                    return Err(ctx("negative jitter".into()));
                }
                for &s in &stage.symbols {
                    if s >= self.n_symbols {
                        return Err(ctx(format!(
                            "symbol {s} outside {} symbols",
                            self.n_symbols
                        )));
                    }
                    if !seen.insert(s) {
                        return Err(ctx(format!("symbol {s} listed twice")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn fault_names(&self) -> Vec<String> {
        self.faults.iter().map(|f| f.name.clone()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let graph: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub fault: FaultId,
    pub magnitude: f64,
    pub seed: u64,
    pub swap_prob: f64,
    pub drop_prob: f64,
}

/// Generates the alarm sequence of one scenario.
///
/// Onsets are `delay + U(-jitter, jitter)`. Symbols of stages after the first
/// are then dropped with `drop_prob`; after sorting by onset each adjacent pair
/// exchanges places with `swap_prob` (pairs with identical onsets are left alone).
pub fn simulate_alarm_sequence(
    graph: &PropagationGraph,
    spec: &ScenarioSpec,
) -> Result<AlarmSequence> {
    let path = graph
        .faults
        .get(spec.fault.0)
        .ok_or_else(|| Error::Domain(format!("fault {} is not in the graph", spec.fault)))?;
    if !(spec.magnitude > 0.0 && spec.magnitude <= 1.0) {
        return domain(format!(
            "magnitude must be in (0, 1], got {}",
            spec.magnitude
        ));
    }
    for (name, p) in [("swap_prob", spec.swap_prob), ("drop_prob", spec.drop_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return domain(format!("{name} must be in [0, 1], got {p}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let depth = path.depth(spec.magnitude);

    let mut events: Vec<(f64, usize)> = Vec::new();
    for (s, stage) in path.stages.iter().take(depth).enumerate() {
        for &symbol in &stage.symbols {
            let u: f64 = rng.random();
            let onset = (stage.delay_s + stage.jitter_s * (2.0 * u - 1.0)).max(0.0);
            let drop_draw: f64 = rng.random();
            if s > 0 && drop_draw < spec.drop_prob {
                continue;
            }
            events.push((onset, symbol));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut symbols: Vec<usize> = events.iter().map(|e| e.1).collect();
    let times: Vec<f64> = events.iter().map(|e| e.0).collect();
    for i in 0..symbols.len().saturating_sub(1) {
        let draw: f64 = rng.random();
        if draw < spec.swap_prob && times[i] < times[i + 1] {
            symbols.swap(i, i + 1);
        }
    }

    Ok(AlarmSequence {
        symbols,
        activation_times: times,
        fault_label: Some(spec.fault.0),
    })
}

/// Magnitude interval `(low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRange {
    pub low: f64,
    pub high: f64,
}

impl Default for MagnitudeRange {
    fn default() -> Self {
        Self {
            low: 0.2,
            high: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub swap_prob: f64,
    pub drop_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            swap_prob: 0.1,
            drop_prob: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub sequence: AlarmSequence,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn labeled(&self) -> Vec<LabeledSequence> {
        self.scenarios
            .iter()
            .filter(|s| !s.sequence.is_empty())
            .map(|s| LabeledSequence {
                sequence: s.sequence.clone(),
                fault: s.spec.fault,
            })
            .collect()
    }

    pub fn to_records(&self, graph: &PropagationGraph, split: &str) -> Vec<SequenceRecord> {
        self.scenarios
            .iter()
            .map(|s| {
                let mut meta = BTreeMap::new();
                meta.insert(
                    "fault_name".into(),
                    graph.faults[s.spec.fault.0].name.clone().into(),
                );
                meta.insert("magnitude".into(), s.spec.magnitude.into());
                meta.insert("seed".into(), s.spec.seed.into());
                meta.insert("split".into(), split.into());
                meta.insert("n_symbols".into(), graph.n_symbols.into());
                SequenceRecord::from_sequence(&s.sequence, meta)
            })
            .collect()
    }
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const TEST_STREAM: u64 = 0x7465_7374_0000_0000;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one scenario; distinct streams for the training and test splits.
pub fn scenario_seed(base_seed: u64, test_split: bool, fault: usize, replicate: usize) -> u64 {
    let stream = if test_split {
        TEST_STREAM
    } else {
        TRAIN_STREAM
    };
    splitmix64(splitmix64(splitmix64(base_seed ^ stream) ^ fault as u64) ^ replicate as u64)
}

/// Generates training and test scenarios. `per_fault_counts[f] = (n_train, n_test)`.
pub fn generate_scenario_set(
    graph: &PropagationGraph,
    per_fault_counts: &[(usize, usize)],
    magnitude_range: MagnitudeRange,
    noise: NoiseConfig,
    base_seed: u64,
) -> Result<(ScenarioSet, ScenarioSet)> {
    graph.validate()?;
    let MagnitudeRange { low, high } = magnitude_range;
    if !(high > low) || low < 0.0 || high > 1.0 {
        return domain(format!(
            "magnitude range ({low}, {high}] is empty or outside (0, 1]"
        ));
    }
    if per_fault_counts.len() > graph.faults.len() {
        return domain(format!(
            "counts given for {} faults, graph has {}",
            per_fault_counts.len(),
            graph.faults.len()
        ));
    }

    let mut train = ScenarioSet::default();
    let mut test = ScenarioSet::default();
    for (fault, &(n_train, n_test)) in per_fault_counts.iter().enumerate() {
        for (set, n, is_test) in [(&mut train, n_train, false), (&mut test, n_test, true)] {
            for replicate in 0..n {
                let seed = scenario_seed(base_seed, is_test, fault, replicate);
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6d61_676e));
                let u: f64 = rng.random();
                let magnitude = high - (high - low) * u;
                let spec = ScenarioSpec {
                    fault: FaultId(fault),
                    magnitude,
                    seed,
                    swap_prob: noise.swap_prob,
                    drop_prob: noise.drop_prob,
                };
                let sequence = simulate_alarm_sequence(graph, &spec)?;
                set.scenarios.push(Scenario { spec, sequence });
            }
        }
    }
    Ok((train, test))
}

/// Per-fault (train, test) counts of the ten-fault reference dataset.
pub fn reference_counts() -> Vec<(usize, usize)> {
    vec![
        (5, 4),
        (8, 4),
        (7, 4),
        (7, 4),
        (6, 4),
        (6, 5),
        (6, 5),
        (6, 4),
        (6, 4),
        (8, 4),
    ]
}

/// Alarm-symbol layout of the bundled graph: 41 measurements.
pub const DEFAULT_MEASUREMENTS: usize = 41;

/// Ten-fault graph over 82 symbols.
///
/// Every alarm is its own stage, 50 s after the previous one with ±35 s jitter,
/// so neighbouring alarms occasionally trade places. Alarms are listed in
/// phases; a phase is reached when the magnitude meets its threshold. Faults 1,
/// 2 and 3 share their early reactor temperature/pressure/level alarms, 2 and 8
/// share their first five alarms, and so do 5 and 9; the remaining faults have
/// distinctive onsets.
pub fn default_graph() -> PropagationGraph {
    const M: usize = DEFAULT_MEASUREMENTS;
    const FIRST_DELAY: f64 = 60.0;
    const SPACING: f64 = 50.0;
    const JITTER: f64 = 35.0;
    let h = |m: usize| m;
    let l = |m: usize| m + M;
    let phased = |name: &str, phases: Vec<(Vec<usize>, f64)>| {
        let mut stages = Vec::new();
        let mut depth_thresholds = Vec::new();
        for (symbols, threshold) in phases {
            for symbol in symbols {
                stages.push(Stage {
                    symbols: vec![symbol],
                    delay_s: FIRST_DELAY + SPACING * stages.len() as f64,
                    jitter_s: JITTER,
                });
                depth_thresholds.push(threshold);
            }
        }
        FaultPath {
            name: name.into(),
            stages,
            depth_thresholds,
        }
    };

    let faults = vec![
        phased(
            "reactor temperature gauge drift",
            vec![
                (vec![h(8)], 0.0),
                (vec![h(6), h(12), h(15)], 0.0),
                (vec![l(7), l(11), l(14)], 0.0),
                (vec![h(20), l(21), h(22), h(17)], 0.0),
                (vec![h(9), l(30), h(31)], 0.45),
                (vec![l(38), h(39), h(40), h(19)], 0.75),
            ],
        ),
        phased(
            "C feed valve stuck",
            vec![
                (vec![h(1), l(2)], 0.0),
                (vec![h(6), h(12), h(15)], 0.0),
                (vec![h(8), l(7), l(11)], 0.0),
                (vec![l(23), h(24), l(25), h(26)], 0.0),
                (vec![h(9), l(14), h(27), l(28)], 0.3),
                (vec![h(29), l(31), h(32), l(33), h(34)], 0.5),
                (vec![l(35), h(36), l(37), h(38), l(39), h(40), l(10)], 0.7),
                (vec![h(0), l(3), h(4), l(5), h(11), l(16), l(17)], 0.85),
            ],
        ),
        phased(
            "E feed valve stuck",
            vec![
                (vec![h(8)], 0.0),
                (vec![h(6), h(12), h(15)], 0.0),
                (vec![l(7), l(11), l(14)], 0.0),
                (vec![h(3), l(4), h(10), h(24)], 0.0),
                (vec![h(9), h(16), h(18), l(19), h(25)], 0.0),
                (vec![l(26), h(27), h(28), l(29), h(32)], 0.0),
                (vec![h(33), l(34), h(35), l(36), h(37)], 0.35),
                (vec![l(0), l(1), h(5), l(13), h(30), h(34)], 0.6),
            ],
        ),
        phased(
            "D feed valve stuck",
            vec![
                (vec![h(0), l(3)], 0.0),
                (vec![h(4), l(5), h(7)], 0.0),
                (vec![l(8), h(11), l(12), h(13)], 0.0),
                (vec![h(14), l(15), h(16), l(17), h(18)], 0.0),
                (vec![l(19), h(20), l(21), h(22), l(23)], 0.0),
                (vec![h(24), l(25), h(26), l(27), h(28)], 0.0),
                (vec![l(29), h(30), l(31), h(32), l(33)], 0.0),
                (vec![h(34), l(35), h(36), l(37), h(38), l(39), h(40)], 0.5),
            ],
        ),
        phased(
            "reactor pressure gauge negative drift",
            vec![
                (vec![l(6)], 0.0),
                (vec![l(12), l(15), h(5)], 0.0),
                (vec![l(9), h(10), l(27)], 0.0),
                (vec![h(30), l(31), h(34), l(35), h(0)], 0.0),
            ],
        ),
        phased(
            "separator level gauge negative drift",
            vec![
                (vec![l(13), h(19)], 0.0),
                (vec![l(20), h(23), l(24)], 0.0),
                (vec![h(25), l(26), h(27), l(28)], 0.0),
                (vec![h(29), l(30), h(31)], 0.3),
                (vec![l(32), h(33), l(34), h(35), l(36)], 0.45),
                (vec![h(37), l(38), h(39), l(40), h(0), l(1)], 0.6),
                (vec![h(2), l(3), h(4), l(5), h(6), l(7)], 0.75),
                (vec![h(8), l(9), h(10), l(11), h(12)], 0.9),
            ],
        ),
        phased(
            "condenser cooling water gauge",
            vec![
                (vec![h(16), l(18)], 0.0),
                (vec![h(21), l(22), h(23)], 0.0),
                (vec![l(24), h(25), l(27), h(29)], 0.0),
                (vec![l(30), h(32), l(33), h(34)], 0.0),
                (vec![l(35), h(37), l(39), h(40), l(0)], 0.0),
                (vec![h(1), h(3)], 0.5),
            ],
        ),
        phased(
            "A feed valve stuck",
            vec![
                (vec![h(1), l(2)], 0.0),
                (vec![h(6), h(12), h(15)], 0.0),
                (vec![l(16), h(17), l(18)], 0.0),
                (vec![h(3), l(4), h(5), l(9)], 0.0),
                (vec![h(10), h(13), l(20), h(21), l(22)], 0.0),
                (vec![l(24), h(25), l(26), h(28), l(29)], 0.0),
                (vec![h(30), l(32), h(33), l(34), h(35), l(36)], 0.3),
                (vec![h(37), l(38), h(39), l(40), h(0), l(1), h(2)], 0.55),
            ],
        ),
        phased(
            "purge valve stuck",
            vec![
                (vec![l(6)], 0.0),
                (vec![l(12), l(15), h(5)], 0.0),
                (vec![h(9), l(10), h(26)], 0.0),
                (vec![h(36), l(37), h(38)], 0.4),
                (vec![l(39), h(40), l(3)], 0.7),
            ],
        ),
        phased(
            "reactor coolant valve stuck",
            vec![
                (vec![l(8), h(9)], 0.0),
                (vec![h(11), l(14), h(18)], 0.0),
                (vec![l(20), h(22), l(23), h(26)], 0.0),
                (vec![l(25), h(28), l(29), h(31)], 0.25),
                (vec![l(32), h(33), l(36), h(38)], 0.4),
                (vec![h(39), l(40), h(0), l(2), h(3)], 0.55),
                (vec![l(4), h(5), l(7), h(10), l(11)], 0.7),
                (vec![h(13), l(15), h(17), l(19), h(20), l(21)], 0.85),
            ],
        ),
    ];
    PropagationGraph {
        n_symbols: 2 * M,
        faults,
    }
}

/// Fault groups of the bundled graph whose early alarms coincide
/// (0-based fault indices).
pub fn default_confusable_groups() -> Vec<Vec<usize>> {
    vec![vec![1, 7], vec![4, 8], vec![0, 1, 2]]
}

/// Nominal operating point of measurement `m` in generated traces.
fn nominal(m: usize) -> (f64, f64) {
    (50.0 + m as f64, 1.0 + 0.1 * m as f64)
}

/// Gaussian noise around the nominal operating point of every measurement.
pub fn normal_operation_trace(
    n_measurements: usize,
    sample_period: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MeasurementTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array2::from_shape_fn((n_samples, n_measurements), |(_, m)| {
        let (mu, sigma) = nominal(m);
        mu + sigma * sample_standard_normal(&mut rng)
    });
    let codebook = AlarmSymbolCodebook::with_measurements(n_measurements);
    MeasurementTrace::new(sample_period, values, codebook.meas_ids().to_vec())
}

fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Measurement trace of one scenario: every scheduled alarm becomes a step of
/// `step_sigmas` standard deviations (up for high alarms, down for low alarms)
/// starting at its onset and lasting to the end of the trace. When a
/// measurement carries both directions the later onset wins from then on.
/// Returns the trace and the simulated alarm sequence it encodes.
pub fn simulate_trace(
    graph: &PropagationGraph,
    spec: &ScenarioSpec,
    sample_period: f64,
    duration_s: f64,
    step_sigmas: f64,
) -> Result<(MeasurementTrace, AlarmSequence)> {
    if !graph.n_symbols.is_multiple_of(2) {
        return domain("trace mode needs an even symbol count (high/low pairs)");
    }
    let sequence = simulate_alarm_sequence(graph, spec)?;
    let n_meas = graph.n_symbols / 2;
    let codebook = AlarmSymbolCodebook::with_measurements(n_meas);
    let n_samples = (duration_s / sample_period).ceil() as usize;
    let mut trace =
        normal_operation_trace(n_meas, sample_period, n_samples, spec.seed ^ 0x7472_6163)?;

    let mut schedule: Vec<(f64, usize, Direction)> = sequence
        .symbols
        .iter()
        .zip(&sequence.activation_times)
        .map(|(&s, &t)| {
            let (m, d) = codebook.decode(s).expect("graph symbols fit the codebook");
            (t, m, d)
        })
        .collect();
    schedule.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut values = trace.values().clone();
    for (onset, m, dir) in schedule {
        let (mu, sigma) = nominal(m);
        let level = match dir {
            Direction::High => mu + step_sigmas * sigma,
            Direction::Low => mu - step_sigmas * sigma,
        };
        let first = (onset / sample_period).ceil() as usize;
        for t in first..n_samples {
            let noise = values[[t, m]] - mu;
            values[[t, m]] = level + 0.25 * noise;
        }
    }
    trace = MeasurementTrace::new(sample_period, values, codebook.meas_ids().to_vec())?;
    Ok((trace, sequence))
}
