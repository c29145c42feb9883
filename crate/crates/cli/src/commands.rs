use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use alarm_hmm::baseline::{write_predictions_csv, ClusterClassifier};
use alarm_hmm::diagnoser::{
    diagnose, evaluate_prefix_accuracy, train_diagnoser, DiagnoserConfig, FaultId, LabeledSequence,
};
use alarm_hmm::extraction::{
    extract_sequence, fit_limits, load_jsonl, save_jsonl, AlarmSymbolCodebook, MeasurementTrace,
    SequenceRecord,
};
use alarm_hmm::hmm::FitConfig;
use alarm_hmm::sim::{
    default_graph, generate_scenario_set, normal_operation_trace, reference_counts, simulate_trace,
    MagnitudeRange, NoiseConfig, PropagationGraph, ScenarioSet,
};
use alarm_hmm::{Diagnoser64, Diagnosis64};

use crate::error::{CliError, CliResult};
use crate::{
    BaselineArgs, Command, DiagnoseArgs, EvaluateArgs, ExtractArgs, ReportArgs, SimulateArgs,
    TrainArgs,
};

/// Version of every file layout written by this tool (CSV layouts are
/// recorded in the `manifest.json` next to them).
pub const FORMAT_VERSION: &str = "1";

const TRACE_STEP_SIGMAS: f64 = 8.0;
const NORMAL_TRACES: u64 = 3;
const NORMAL_SAMPLES: usize = 500;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Baseline(a) => baseline(a),
        Command::Report(a) => report(a),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    command: String,
    params: Value,
    files: BTreeMap<String, String>,
    summary: Value,
}

impl Manifest {
    fn new(command: &str, params: Value) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            command: command.into(),
            params,
            files: BTreeMap::new(),
            summary: Value::Null,
        }
    }

    fn file(&mut self, name: &str, layout: &str) {
        self.files.insert(name.into(), layout.into());
    }

    fn save(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("manifest.json"), self)
    }

    fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| {
            CliError::Core(alarm_hmm::Error::Schema(format!("{}: {e}", path.display())))
        })?;
        if m.format_version != FORMAT_VERSION {
            return Err(schema(format!(
                "{} has format_version {}, expected {FORMAT_VERSION}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}

fn schema(msg: String) -> CliError {
    CliError::Core(alarm_hmm::Error::Schema(msg))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Core(alarm_hmm::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        ))))
    }
}

fn load_records(path: &Path) -> CliResult<Vec<SequenceRecord>> {
    require_file(path)?;
    Ok(load_jsonl(path)?)
}

/// Labeled non-empty sequences; returns them with the number of empty records skipped.
fn labeled(records: &[SequenceRecord], path: &Path) -> CliResult<(Vec<LabeledSequence>, usize)> {
    let mut out = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for (i, r) in records.iter().enumerate() {
        let fault = r.fault.ok_or_else(|| {
            schema(format!(
                "{} line {}: record has no fault label",
                path.display(),
                i + 1
            ))
        })?;
        let seq = r.to_sequence()?;
        if seq.is_empty() {
            skipped += 1;
            continue;
        }
        out.push(LabeledSequence::new(seq, FaultId(fault))?);
    }
    if skipped > 0 {
        eprintln!(
            "warning: skipped {skipped} empty sequence(s) in {}",
            path.display()
        );
    }
    Ok((out, skipped))
}

/// Alphabet size recorded in the records' `n_symbols` metadata, if consistent.
fn recorded_symbols(records: &[SequenceRecord]) -> CliResult<Option<usize>> {
    let sizes: BTreeSet<u64> = records
        .iter()
        .filter_map(|r| r.meta.get("n_symbols").and_then(Value::as_u64))
        .collect();
    match sizes.len() {
        0 => Ok(None),
        1 => Ok(sizes.first().map(|&s| s as usize)),
        _ => Err(schema(format!("records disagree on n_symbols: {sizes:?}"))),
    }
}

fn inferred_symbols(records: &[SequenceRecord]) -> usize {
    let max = records
        .iter()
        .flat_map(|r| r.symbols.iter().copied())
        .max()
        .unwrap_or(0);
    // High/low pairs: round up to an even alphabet.
    (max + 2) / 2 * 2
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let graph = match &a.graph {
        Some(path) => {
            require_file(path)?;
            PropagationGraph::load(path)?
        }
        None => default_graph(),
    };
    graph.validate()?;
    let counts = match (a.n_train, a.n_test, &a.graph) {
        (None, None, None) => reference_counts(),
        (train, test, _) => vec![(train.unwrap_or(6), test.unwrap_or(4)); graph.faults.len()],
    };
    let range = MagnitudeRange {
        low: a.mag_low,
        high: a.mag_high,
    };
    let noise = NoiseConfig {
        swap_prob: a.swap_prob,
        drop_prob: a.drop_prob,
    };
    if !(0.0..=1.0).contains(&noise.swap_prob) || !(0.0..=1.0).contains(&noise.drop_prob) {
        return Err(CliError::Usage(
            "swap and drop probabilities must lie in [0, 1]".into(),
        ));
    }
    let (train, test) = generate_scenario_set(&graph, &counts, range, noise, a.seed)?;

    ensure_dir(&a.out)?;
    save_jsonl(
        a.out.join("train.jsonl"),
        &train.to_records(&graph, "train"),
    )?;
    save_jsonl(a.out.join("test.jsonl"), &test.to_records(&graph, "test"))?;
    fs::write(a.out.join("graph.json"), graph.to_json()? + "\n")?;

    let mut manifest = Manifest::new(
        "simulate",
        json!({
            "seed": a.seed,
            "counts": counts,
            "magnitude_range": [range.low, range.high],
            "swap_prob": noise.swap_prob,
            "drop_prob": noise.drop_prob,
            "graph": if a.graph.is_some() { "file" } else { "default" },
        }),
    );
    manifest.file("train.jsonl", "alarm sequences");
    manifest.file("test.jsonl", "alarm sequences");
    manifest.file("graph.json", "propagation graph");

    if a.traces {
        write_traces(
            &a,
            &graph,
            &[("train", &train), ("test", &test)],
            &mut manifest,
        )?;
    }
    manifest.summary = json!({ "n_train": train.len(), "n_test": test.len() });
    manifest.save(&a.out)
}

fn write_traces(
    a: &SimulateArgs,
    graph: &PropagationGraph,
    splits: &[(&str, &ScenarioSet)],
    manifest: &mut Manifest,
) -> CliResult<()> {
    let dir = a.out.join("traces");
    ensure_dir(&dir)?;
    let n_meas = graph.n_symbols / 2;
    let horizon = graph
        .faults
        .iter()
        .flat_map(|f| f.stages.iter().map(|s| s.delay_s + s.jitter_s))
        .fold(0.0, f64::max);
    let duration = horizon + 2.0 * alarm_hmm::extraction::DEFAULT_PERSIST_SECONDS;

    for k in 0..NORMAL_TRACES {
        let seed = a.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        let trace = normal_operation_trace(n_meas, a.sample_period, NORMAL_SAMPLES, seed)?;
        let name = format!("normal-{k}.csv");
        trace.write_csv(create_file(&dir.join(&name))?)?;
        manifest.file(&format!("traces/{name}"), "measurement trace");
    }
    for (split, set) in splits {
        for (i, scenario) in set.scenarios.iter().enumerate() {
            let (trace, _) = simulate_trace(
                graph,
                &scenario.spec,
                a.sample_period,
                duration,
                TRACE_STEP_SIGMAS,
            )?;
            let name = format!("{split}-{i:03}-f{}.csv", scenario.spec.fault.0);
            trace.write_csv(create_file(&dir.join(&name))?)?;
            manifest.file(&format!("traces/{name}"), "measurement trace");
        }
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult<()> {
    let load = |p: &Path| -> CliResult<MeasurementTrace> {
        require_file(p)?;
        Ok(MeasurementTrace::load_csv(p)?)
    };
    let normal: Vec<MeasurementTrace> =
        a.normal.iter().map(|p| load(p)).collect::<CliResult<_>>()?;
    let limits = fit_limits(&normal, a.kappa)?;
    let codebook = AlarmSymbolCodebook::new(normal[0].meas_ids().to_vec());

    let mut records = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let trace = load(path)?;
        if trace.meas_ids() != codebook.meas_ids() {
            return Err(schema(format!(
                "{} does not have the measurement columns of the normal traces",
                path.display()
            )));
        }
        let mut seq = extract_sequence(&trace, &limits, &codebook, a.persist_t)?;
        seq.fault_label = a.fault;
        let mut meta = BTreeMap::new();
        let source = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        meta.insert("source".to_string(), Value::from(source));
        meta.insert("n_symbols".to_string(), Value::from(codebook.n_symbols()));
        records.push(SequenceRecord::from_sequence(&seq, meta));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_jsonl(&a.out, &records)?;
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let records = load_records(&a.input)?;
    let (training, _) = labeled(&records, &a.input)?;
    let n_symbols = match a.measurements {
        Some(m) => 2 * m,
        None => recorded_symbols(&records)?.unwrap_or_else(|| inferred_symbols(&records)),
    };
    if n_symbols % 2 != 0 {
        return Err(schema(format!(
            "alphabet of {n_symbols} symbols is not made of high/low pairs"
        )));
    }
    let codebook = AlarmSymbolCodebook::with_measurements(n_symbols / 2);

    // Fault names from simulator metadata, when every fault has one.
    let n_faults = training
        .iter()
        .map(|l| l.fault.0)
        .max()
        .map_or(0, |m| m + 1);
    let mut names: Vec<Option<String>> = vec![None; n_faults];
    for r in &records {
        if let (Some(f), Some(name)) = (r.fault, r.meta.get("fault_name").and_then(Value::as_str)) {
            if f < n_faults {
                names[f].get_or_insert_with(|| name.to_string());
            }
        }
    }
    let names: Option<Vec<String>> = names.into_iter().collect();

    let config = DiagnoserConfig {
        fit: FitConfig {
            max_iterations: a.fit.max_iters,
            rel_tol: a.fit.rel_tol,
            emission_floor: a.fit.floor,
            seed: a.seed,
            fixed_off_diagonal: a.hard_mask,
        },
        self_transition: a.self_transition,
        emission_pseudocount: a.pseudocount,
    };
    config.fit.validate()?;
    let model: Diagnoser64 =
        train_diagnoser(&training, codebook, names, a.priors.as_deref(), &config)?;
    for f in model.unstable_states() {
        eprintln!(
            "warning: state {f} ({}) has self-transition below {}",
            model.faults[f.0].name,
            alarm_hmm::diagnoser::LOW_SELF_TRANSITION
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    model.save(&a.out)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<Diagnoser64> {
    require_file(path)?;
    Ok(Diagnoser64::load(path)?)
}

fn diagnosis_json(
    model: &Diagnoser64,
    index: usize,
    d: &Diagnosis64,
    truth: Option<usize>,
) -> Value {
    let name = |f: FaultId| model.faults[f.0].name.clone();
    json!({
        "index": index,
        "primary_fault": d.primary_fault.0,
        "primary_name": name(d.primary_fault),
        "secondary_fault": d.secondary_fault.map(|f| f.0),
        "secondary_name": d.secondary_fault.map(name),
        "path": d.path.states,
        "log_prob": d.path.log_prob,
        "second_path": d.second_path.as_ref().map(|p| json!({ "states": p.states, "log_prob": p.log_prob })),
        "true_fault": truth,
    })
}

fn diagnose_cmd(a: DiagnoseArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let inputs: Vec<(Vec<usize>, Option<usize>)> = match (&a.sequence, &a.input) {
        (Some(seq), _) => vec![(seq.clone(), None)],
        (None, Some(path)) => load_records(path)?
            .into_iter()
            .map(|r| (r.symbols, r.fault))
            .collect(),
        (None, None) => return Err(CliError::Usage("give --in or --sequence".into())),
    };
    let mut out = Vec::with_capacity(inputs.len());
    for (i, (symbols, truth)) in inputs.iter().enumerate() {
        if symbols.is_empty() {
            return Err(CliError::Core(alarm_hmm::Error::Domain(format!(
                "sequence {i} is empty"
            ))));
        }
        let d = diagnose(&model, symbols)?;
        out.push(diagnosis_json(&model, i, &d, *truth));
    }
    let doc = json!({ "format_version": FORMAT_VERSION, "diagnoses": out });
    match &a.out {
        Some(path) => write_json(path, &doc),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &doc)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let records = load_records(&a.input)?;
    let (test, skipped) = labeled(&records, &a.input)?;
    let longest = test.iter().map(|l| l.sequence.len()).max().unwrap_or(0);
    let lmax = a.lmax.unwrap_or(longest);
    let curve = evaluate_prefix_accuracy(&model, &test, lmax)?;
    let confusion_at = a.confusion_at.unwrap_or(lmax);
    if confusion_at < 1 || confusion_at > lmax {
        return Err(CliError::Usage(format!(
            "--confusion-at must lie in 1..={lmax}"
        )));
    }

    ensure_dir(&a.out)?;
    curve.write_csv(create_file(&a.out.join("accuracy.csv"))?)?;
    curve.write_confusion_csv(confusion_at, create_file(&a.out.join("confusion.csv"))?)?;
    {
        let mut w = csv::Writer::from_writer(create_file(&a.out.join("predictions.csv"))?);
        w.write_record([
            "sequence_id",
            "true_fault",
            "prefix_length",
            "diagnosed_fault",
        ])?;
        for (p, preds) in curve.predictions.iter().enumerate() {
            for (s, (pred, l)) in preds.iter().zip(&test).enumerate() {
                w.write_record([
                    s.to_string(),
                    l.fault.to_string(),
                    (p + 1).to_string(),
                    pred.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    let mut manifest = Manifest::new(
        "evaluate",
        json!({ "lmax": lmax, "confusion_at": confusion_at }),
    );
    manifest.file("accuracy.csv", "prefix_length,accuracy,n_correct,n_total");
    manifest.file("confusion.csv", "true_fault,diagnosed_fault,count");
    manifest.file(
        "predictions.csv",
        "sequence_id,true_fault,prefix_length,diagnosed_fault",
    );
    let last = curve.last();
    manifest.summary = json!({
        "n_test": test.len(),
        "skipped_empty": skipped,
        "longest_sequence": longest,
        "final_accuracy": last.accuracy,
        "final_n_correct": last.n_correct,
    });
    manifest.save(&a.out)
}

fn baseline(a: BaselineArgs) -> CliResult<()> {
    let train_records = load_records(&a.train)?;
    let test_records = load_records(&a.input)?;
    let (training, _) = labeled(&train_records, &a.train)?;
    let all: Vec<SequenceRecord> = train_records.iter().chain(&test_records).cloned().collect();
    let n_symbols = match a.symbols {
        Some(m) => m,
        None => recorded_symbols(&all)?.unwrap_or_else(|| inferred_symbols(&all)),
    };
    let n_faults = training
        .iter()
        .map(|l| l.fault)
        .collect::<BTreeSet<_>>()
        .len();
    let n_clusters = a.clusters.unwrap_or(n_faults);
    let clf = ClusterClassifier::fit(&training, n_clusters, n_symbols)?;

    let truth: Vec<Option<FaultId>> = test_records.iter().map(|r| r.fault.map(FaultId)).collect();
    let predicted: Vec<FaultId> = test_records
        .iter()
        .map(|r| clf.classify(&r.symbols))
        .collect::<Result<_, _>>()?;

    ensure_dir(&a.out)?;
    write_predictions_csv(
        create_file(&a.out.join("baseline_predictions.csv"))?,
        &truth,
        &predicted,
    )?;
    clf.dendrogram
        .write_csv(create_file(&a.out.join("dendrogram.csv"))?)?;

    let scored: Vec<bool> = truth
        .iter()
        .zip(&predicted)
        .filter_map(|(t, p)| t.map(|t| t == *p))
        .collect();
    let n_correct = scored.iter().filter(|&&c| c).count();
    let accuracy = (!scored.is_empty()).then(|| n_correct as f64 / scored.len() as f64);

    let mut manifest = Manifest::new(
        "baseline",
        json!({ "n_clusters": n_clusters, "n_symbols": n_symbols }),
    );
    manifest.file(
        "baseline_predictions.csv",
        "sequence_id,true_fault,predicted_fault",
    );
    manifest.file("dendrogram.csv", "step,cluster_a,cluster_b,distance");
    manifest.summary = json!({
        "n_test": test_records.len(),
        "accuracy": accuracy,
        "n_correct": n_correct,
        "n_scored": scored.len(),
        "cluster_labels": clf.cluster_labels.iter().map(|f| f.0).collect::<Vec<_>>(),
    });
    manifest.save(&a.out)
}

#[derive(Debug, Deserialize)]
struct AccuracyRow {
    prefix_length: usize,
    accuracy: f64,
    n_correct: usize,
    n_total: usize,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    #[allow(dead_code)]
    sequence_id: usize,
    true_fault: Option<usize>,
    predicted_fault: usize,
}

fn report(a: ReportArgs) -> CliResult<()> {
    let eval = Manifest::load(&a.evaluate)?;
    let base = Manifest::load(&a.baseline)?;
    if eval.command != "evaluate" || base.command != "baseline" {
        return Err(schema(
            "report needs an evaluate and a baseline output directory".into(),
        ));
    }
    let read_csv = |path: &Path| -> CliResult<csv::Reader<File>> {
        require_file(path)?;
        Ok(csv::Reader::from_path(path)?)
    };

    let mut w = csv::Writer::from_writer(create_file(&a.out)?);
    w.write_record([
        "method",
        "prefix_length",
        "accuracy",
        "n_correct",
        "n_total",
    ])?;
    for row in read_csv(&a.evaluate.join("accuracy.csv"))?.deserialize() {
        let row: AccuracyRow = row?;
        w.write_record([
            "hmm".to_string(),
            row.prefix_length.to_string(),
            row.accuracy.to_string(),
            row.n_correct.to_string(),
            row.n_total.to_string(),
        ])?;
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for row in read_csv(&a.baseline.join("baseline_predictions.csv"))?.deserialize() {
        let row: PredictionRow = row?;
        if let Some(t) = row.true_fault {
            total += 1;
            correct += usize::from(t == row.predicted_fault);
        }
    }
    if total > 0 {
        w.write_record([
            "baseline".to_string(),
            "full".to_string(),
            (correct as f64 / total as f64).to_string(),
            correct.to_string(),
            total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
