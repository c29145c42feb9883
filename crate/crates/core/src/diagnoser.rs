//! Single-HMM fault diagnoser: one hidden state per fault, one observation
//! symbol per alarm.
//!
//! Training seeds the model from the labeled data (diagonal-dominant
//! transitions, per-fault symbol frequencies for the emissions, uniform or
//! user-supplied priors) and then runs unsupervised Baum-Welch on all sequences
//! pooled. State `i` stays identified with fault `i`. Diagnosis decodes the most
//! probable state path and reports its most frequent state.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{AlarmSequence, AlarmSymbolCodebook};
use crate::hmm::{self, FitConfig, Hmm, HmmDocument, ObservationSequence, StatePath};
use crate::scalar::Scalar;

/// Dense fault index in `[0, n_faults)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultId(pub usize);

impl std::fmt::Display for FaultId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInfo {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sequence: AlarmSequence,
    pub fault: FaultId,
}

impl LabeledSequence {
    pub fn new(sequence: AlarmSequence, fault: FaultId) -> Result<Self> {
        if sequence.is_empty() {
            return Err(Error::Domain(format!(
                "labeled sequence for fault {fault} is empty"
            )));
        }
        Ok(Self { sequence, fault })
    }
}

/// Initialization and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoserConfig {
    pub fit: FitConfig,
    /// Initial self-transition probability of every fault state.
    pub self_transition: f64,
    /// Additive count added to every symbol when seeding emissions.
    pub emission_pseudocount: f64,
}

impl Default for DiagnoserConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            self_transition: 0.9,
            emission_pseudocount: 0.1,
        }
    }
}

/// Self-transition mass below which a trained state is reported as unstable.
pub const LOW_SELF_TRANSITION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoserModel<F: Scalar> {
    pub hmm: Hmm<F>,
    pub faults: Vec<FaultInfo>,
    pub codebook: AlarmSymbolCodebook,
    pub config: DiagnoserConfig,
    /// Log-likelihood trace of the Baum-Welch run.
    pub training_trace: Vec<f64>,
}

impl<F: Scalar> DiagnoserModel<F> {
    pub fn n_faults(&self) -> usize {
        self.faults.len()
    }

    /// Fault states whose trained self-transition fell below [`LOW_SELF_TRANSITION`].
    pub fn unstable_states(&self) -> Vec<FaultId> {
        let a = self.hmm.transition();
        (0..self.n_faults())
            .filter(|&i| a[[i, i]].as_f64() < LOW_SELF_TRANSITION)
            .map(FaultId)
            .collect()
    }

    pub fn to_document(&self) -> DiagnoserDocument {
        DiagnoserDocument {
            hmm: self.hmm.to_document(),
            faults: self.faults.clone(),
            codebook: self.codebook.clone(),
            training: TrainingEcho {
                config: self.config.clone(),
                log_likelihoods: self.training_trace.clone(),
            },
        }
    }

    pub fn from_document(doc: DiagnoserDocument) -> Result<Self> {
        let hmm = Hmm::from_document(&doc.hmm)?;
        if doc.faults.len() != hmm.n_states() {
            return Err(Error::InvalidModel(format!(
                "{} faults listed for a model with {} states",
                doc.faults.len(),
                hmm.n_states()
            )));
        }
        if doc.faults.iter().enumerate().any(|(i, f)| f.index != i) {
            return Err(Error::InvalidModel(
                "fault indices must be 0..N in order".into(),
            ));
        }
        if doc.codebook.n_symbols() != hmm.n_symbols() {
            return Err(Error::InvalidModel(format!(
                "codebook has {} symbols, model has {}",
                doc.codebook.n_symbols(),
                hmm.n_symbols()
            )));
        }
        Ok(Self {
            hmm,
            faults: doc.faults,
            codebook: doc.codebook,
            config: doc.training.config,
            training_trace: doc.training.log_likelihoods,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DiagnoserDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Model file: the plain HMM document plus fault names, codebook and training echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoserDocument {
    #[serde(flatten)]
    pub hmm: HmmDocument,
    pub faults: Vec<FaultInfo>,
    pub codebook: AlarmSymbolCodebook,
    pub training: TrainingEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEcho {
    pub config: DiagnoserConfig,
    pub log_likelihoods: Vec<f64>,
}

/// Builds the initial model from labeled data without running EM.
pub fn initial_model<F: Scalar>(
    training: &[LabeledSequence],
    n_faults: usize,
    n_symbols: usize,
    priors: Option<&[f64]>,
    config: &DiagnoserConfig,
) -> Result<Hmm<F>> {
    let n = n_faults;
    let stay = config.self_transition;
    if !(0.0..=1.0).contains(&stay) {
        return Err(Error::Domain(format!(
            "self_transition must be in [0, 1], got {stay}"
        )));
    }
    if !(config.emission_pseudocount >= 0.0) {
        return Err(Error::Domain(
            "emission_pseudocount must be non-negative".into(),
        ));
    }
    let transition = if n == 1 {
        Array2::from_elem((1, 1), F::one())
    } else {
        let off = (1.0 - stay) / (n - 1) as f64;
        Array2::from_shape_fn((n, n), |(i, j)| F::lit(if i == j { stay } else { off }))
    };

    let mut counts = Array2::<f64>::from_elem((n, n_symbols), config.emission_pseudocount);
    for ls in training {
        for &s in &ls.sequence.symbols {
            counts[[ls.fault.0, s]] += 1.0;
        }
    }
    let mut emission = Array2::<F>::zeros((n, n_symbols));
    for i in 0..n {
        let total: f64 = counts.row(i).sum();
        if !(total > 0.0) {
            return Err(Error::Domain(format!(
                "fault {i} emits no symbols and no pseudocount is configured"
            )));
        }
        for k in 0..n_symbols {
            emission[[i, k]] = F::lit(counts[[i, k]] / total);
        }
    }

    let initial = match priors {
        Some(p) => {
            if p.len() != n {
                return Err(Error::Domain(format!(
                    "{} priors given for {n} faults",
                    p.len()
                )));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-6 || p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Domain(format!(
                    "priors must be non-negative and sum to 1, got sum {total}"
                )));
            }
            Array1::from_iter(p.iter().map(|&x| F::lit(x / total)))
        }
        None => Array1::from_elem(n, F::one() / F::lit(n as f64)),
    };

    Hmm::new(transition, emission, initial)
}

/// Trains the diagnoser on labeled sequences. Fault `i` becomes state `i`;
/// `fault_names` (if given) must list one name per fault.
pub fn train_diagnoser<F: Scalar>(
    training: &[LabeledSequence],
    codebook: AlarmSymbolCodebook,
    fault_names: Option<Vec<String>>,
    priors: Option<&[f64]>,
    config: &DiagnoserConfig,
) -> Result<DiagnoserModel<F>> {
    if training.is_empty() {
        return Err(Error::Domain("no training sequences".into()));
    }
    let n_faults = training.iter().map(|l| l.fault.0).max().unwrap_or(0) + 1;
    let mut per_fault = vec![0usize; n_faults];
    for l in training {
        per_fault[l.fault.0] += 1;
    }
    if let Some(f) = per_fault.iter().position(|&c| c == 0) {
        return Err(Error::Domain(format!(
            "fault {f} has no training sequences"
        )));
    }
    let n_symbols = codebook.n_symbols();
    let sequences: Vec<ObservationSequence> = training
        .iter()
        .map(|l| ObservationSequence::new(l.sequence.symbols.clone()))
        .collect::<Result<_>>()?;

    let names = match fault_names {
        Some(names) if names.len() != n_faults => {
            return Err(Error::Domain(format!(
                "{} fault names for {n_faults} faults",
                names.len()
            )))
        }
        Some(names) => names,
        None => (0..n_faults).map(|i| format!("fault-{}", i + 1)).collect(),
    };

    let init = initial_model::<F>(training, n_faults, n_symbols, priors, config)?;
    for obs in &sequences {
        init.check_observations(obs)?;
    }
    let outcome = hmm::fit(&init, &sequences, &config.fit)?;

    Ok(DiagnoserModel {
        hmm: outcome.model,
        faults: names
            .into_iter()
            .enumerate()
            .map(|(index, name)| FaultInfo { index, name })
            .collect(),
        codebook,
        config: config.clone(),
        training_trace: outcome.log_likelihoods.iter().map(|x| x.as_f64()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis<F: Scalar> {
    pub primary_fault: FaultId,
    pub secondary_fault: Option<FaultId>,
    pub path: StatePath<F>,
    pub second_path: Option<StatePath<F>>,
}

/// Occurrence count of every state in `states`.
fn state_counts(states: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for &s in states {
        counts[s] += 1;
    }
    counts
}

/// Most frequent state, lowest index on ties.
pub fn modal_state(states: &[usize], n_states: usize) -> usize {
    let counts = state_counts(states, n_states);
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub fn diagnose<F: Scalar>(model: &DiagnoserModel<F>, sequence: &[usize]) -> Result<Diagnosis<F>> {
    let obs = ObservationSequence::new(sequence.to_vec())?;
    let n = model.n_faults();
    let mut paths = hmm::k_best_paths(&model.hmm, &obs, 2)?.into_iter();
    let path = paths.next().expect("k-best returns the best path");
    let second_path = paths.next();

    let primary = modal_state(&path.states, n);
    let secondary = second_path
        .as_ref()
        .map(|p| modal_state(&p.states, n))
        .filter(|&s| s != primary)
        .or_else(|| {
            // Runner-up state of the best path, if it visits more than one state.
            let counts = state_counts(&path.states, n);
            (0..n).filter(|&i| i != primary && counts[i] > 0).fold(
                None,
                |best: Option<usize>, i| match best {
                    Some(b) if counts[b] >= counts[i] => Some(b),
                    _ => Some(i),
                },
            )
        });

    Ok(Diagnosis {
        primary_fault: FaultId(primary),
        secondary_fault: secondary.map(FaultId),
        path,
        second_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyPoint {
    pub prefix_length: usize,
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
}

/// Accuracy and confusion counts per input prefix length `1..=L_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub points: Vec<AccuracyPoint>,
    /// `confusion[p - 1][[true, diagnosed]]`.
    pub confusion: Vec<Array2<usize>>,
    /// `predictions[p - 1][s]`: diagnosis of test sequence `s` at prefix length `p`.
    pub predictions: Vec<Vec<FaultId>>,
}

impl AccuracyCurve {
    pub fn at(&self, prefix_length: usize) -> &AccuracyPoint {
        &self.points[prefix_length - 1]
    }

    pub fn last(&self) -> &AccuracyPoint {
        self.points.last().expect("curve has at least one point")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["prefix_length", "accuracy", "n_correct", "n_total"])?;
        for p in &self.points {
            w.write_record([
                p.prefix_length.to_string(),
                p.accuracy.to_string(),
                p.n_correct.to_string(),
                p.n_total.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Full matrix (zeros included) at one prefix length.
    pub fn write_confusion_csv<W: Write>(&self, prefix_length: usize, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["true_fault", "diagnosed_fault", "count"])?;
        for ((t, d), c) in self.confusion[prefix_length - 1].indexed_iter() {
            w.write_record([t.to_string(), d.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Diagnoses every prefix of every test sequence. A sequence shorter than the
/// requested prefix is diagnosed on its full length.
pub fn evaluate_prefix_accuracy<F: Scalar>(
    model: &DiagnoserModel<F>,
    test: &[LabeledSequence],
    max_prefix: usize,
) -> Result<AccuracyCurve> {
    if max_prefix < 1 {
        return Err(Error::Domain("L_max must be at least 1".into()));
    }
    if test.is_empty() {
        return Err(Error::Domain("test set is empty".into()));
    }
    let n = model.n_faults();
    if let Some(l) = test.iter().find(|l| l.fault.0 >= n) {
        return Err(Error::Domain(format!(
            "test label {} is not a fault of the model ({n} faults)",
            l.fault
        )));
    }

    let mut by_sequence: Vec<Vec<FaultId>> = Vec::with_capacity(test.len());
    for ls in test {
        let len = ls.sequence.len();
        let mut preds = Vec::with_capacity(max_prefix);
        for p in 1..=max_prefix.min(len) {
            preds.push(diagnose(model, &ls.sequence.symbols[..p])?.primary_fault);
        }
        let full = *preds.last().expect("non-empty sequence");
        preds.resize(max_prefix, full);
        by_sequence.push(preds);
    }

    let mut points = Vec::with_capacity(max_prefix);
    let mut confusion = Vec::with_capacity(max_prefix);
    let mut predictions = Vec::with_capacity(max_prefix);
    for p in 0..max_prefix {
        let mut matrix = Array2::<usize>::zeros((n, n));
        let mut correct = 0;
        let mut column = Vec::with_capacity(test.len());
        for (ls, preds) in test.iter().zip(&by_sequence) {
            let d = preds[p];
            matrix[[ls.fault.0, d.0]] += 1;
            correct += usize::from(d == ls.fault);
            column.push(d);
        }
        points.push(AccuracyPoint {
            prefix_length: p + 1,
            accuracy: correct as f64 / test.len() as f64,
            n_correct: correct,
            n_total: test.len(),
        });
        confusion.push(matrix);
        predictions.push(column);
    }
    Ok(AccuracyCurve {
        points,
        confusion,
        predictions,
    })
}
