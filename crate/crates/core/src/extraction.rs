//! Turning measurement traces into ordered alarm-symbol sequences.
//!
//! A measurement is in alarm while its reading is strictly beyond `μ ± κσ`
//! (statistics taken at normal operation). It counts as affected by the fault
//! once it stays in alarm for at least the persistence time; the symbol is then
//! emitted once, stamped with the start of that excursion.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default persistence time in seconds.
pub const DEFAULT_PERSIST_SECONDS: f64 = 300.0;
/// Default limit multiplier in standard deviations.
pub const DEFAULT_KAPPA: f64 = 3.0;

/// Uniformly sampled readings, one column per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTrace {
    sample_period: f64,
    values: Array2<f64>,
    meas_ids: Vec<String>,
}

impl MeasurementTrace {
    pub fn new(sample_period: f64, values: Array2<f64>, meas_ids: Vec<String>) -> Result<Self> {
        if !(sample_period > 0.0) || !sample_period.is_finite() {
            return domain(format!(
                "sample period must be positive, got {sample_period}"
            ));
        }
        if values.nrows() == 0 {
            return domain("trace has no samples");
        }
        if values.ncols() != meas_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "trace has {} columns but {} measurement ids",
                values.ncols(),
                meas_ids.len()
            )));
        }
        if let Some(((t, m), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return domain(format!(
                "non-finite reading {v} for `{}` at sample {t}",
                meas_ids[m]
            ));
        }
        Ok(Self {
            sample_period,
            values,
            meas_ids,
        })
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn meas_ids(&self) -> &[String] {
        &self.meas_ids
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_measurements(&self) -> usize {
        self.values.ncols()
    }

    /// Reads a CSV with header `time,<meas_id>...`. Times must be evenly spaced.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("time") {
            return Err(Error::Schema(
                "trace CSV must start with a `time` column".into(),
            ));
        }
        let meas_ids: Vec<String> = headers
            .iter()
            .skip(1)
            .map(|h| h.trim().to_string())
            .collect();
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("row {}: `{s}` is not a number", line + 2)))
            };
            times.push(parse(&record[0])?);
            for field in record.iter().skip(1) {
                flat.push(parse(field)?);
            }
        }
        if times.len() < 2 {
            return domain("trace CSV needs at least two samples to infer the sample period");
        }
        let period = times[1] - times[0];
        let uniform = times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - period).abs() <= 1e-6 * period.abs().max(1.0));
        if !uniform {
            return domain("trace CSV times are not evenly spaced");
        }
        let values = Array2::from_shape_vec((times.len(), meas_ids.len()), flat)
            .map_err(|e| Error::Schema(e.to_string()))?;
        Self::new(period, values, meas_ids)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.meas_ids.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![(t as f64 * self.sample_period).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Alarm limits `μ ± κσ` per measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmLimits {
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub kappa: f64,
}

impl AlarmLimits {
    pub fn high(&self, m: usize) -> f64 {
        self.mean[m] + self.kappa * self.std_dev[m]
    }

    pub fn low(&self, m: usize) -> f64 {
        self.mean[m] - self.kappa * self.std_dev[m]
    }

    pub fn n_measurements(&self) -> usize {
        self.mean.len()
    }
}

/// Estimates per-measurement mean and sample standard deviation over all
/// samples of the normal-operation traces pooled together.
pub fn fit_limits(normal_traces: &[MeasurementTrace], kappa: f64) -> Result<AlarmLimits> {
    let first = normal_traces
        .first()
        .ok_or_else(|| Error::Domain("fit_limits needs at least one trace".into()))?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return domain(format!(
            "kappa must be finite and non-negative, got {kappa}"
        ));
    }
    let m = first.n_measurements();
    if let Some(t) = normal_traces.iter().find(|t| t.n_measurements() != m) {
        return Err(Error::DimensionMismatch(format!(
            "normal traces disagree on measurement count ({m} vs {})",
            t.n_measurements()
        )));
    }
    let n: usize = normal_traces.iter().map(MeasurementTrace::n_samples).sum();
    if n < 2 {
        return domain("fit_limits needs at least two pooled samples");
    }

    let mut mean = vec![0.0; m];
    for trace in normal_traces {
        for row in trace.values.rows() {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);

    let mut var = vec![0.0; m];
    for trace in normal_traces {
        for row in trace.values.rows() {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    let std_dev: Vec<f64> = var.iter().map(|v| (v / (n - 1) as f64).sqrt()).collect();
    if let Some(j) = std_dev.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroVariance(first.meas_ids[j].clone()));
    }
    Ok(AlarmLimits {
        mean,
        std_dev,
        kappa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

/// Bijection between `(measurement, direction)` and symbol indices: the high
/// alarm of measurement `m` is symbol `m`, its low alarm is `m + M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmSymbolCodebook {
    meas_ids: Vec<String>,
}

impl AlarmSymbolCodebook {
    pub fn new(meas_ids: Vec<String>) -> Self {
        Self { meas_ids }
    }

    /// Codebook with ids `x1..xM`.
    pub fn with_measurements(n_measurements: usize) -> Self {
        Self::new((1..=n_measurements).map(|i| format!("x{i}")).collect())
    }

    pub fn n_measurements(&self) -> usize {
        self.meas_ids.len()
    }

    pub fn n_symbols(&self) -> usize {
        2 * self.meas_ids.len()
    }

    pub fn meas_ids(&self) -> &[String] {
        &self.meas_ids
    }

    pub fn encode(&self, measurement: usize, direction: Direction) -> Option<usize> {
        (measurement < self.n_measurements()).then(|| match direction {
            Direction::High => measurement,
            Direction::Low => measurement + self.n_measurements(),
        })
    }

    pub fn decode(&self, symbol: usize) -> Option<(usize, Direction)> {
        let m = self.n_measurements();
        if symbol < m {
            Some((symbol, Direction::High))
        } else if symbol < 2 * m {
            Some((symbol - m, Direction::Low))
        } else {
            None
        }
    }

    /// Human-readable label such as `x7.high`.
    pub fn label(&self, symbol: usize) -> Option<String> {
        let (m, dir) = self.decode(symbol)?;
        let suffix = match dir {
            Direction::High => "high",
            Direction::Low => "low",
        };
        Some(format!("{}.{suffix}", self.meas_ids[m]))
    }
}

/// Distinct alarm symbols in activation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlarmSequence {
    pub symbols: Vec<usize>,
    /// Seconds from trace start (or fault onset for simulated data).
    pub activation_times: Vec<f64>,
    pub fault_label: Option<usize>,
}

impl AlarmSequence {
    /// Sequence from bare symbols, with activation times `0, 1, 2, ...`.
    pub fn from_symbols(symbols: Vec<usize>) -> Self {
        let activation_times = (0..symbols.len()).map(|i| i as f64).collect();
        Self {
            symbols,
            activation_times,
            fault_label: None,
        }
    }

    pub fn with_label(mut self, fault: usize) -> Self {
        self.fault_label = Some(fault);
        self
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbols.len() != self.activation_times.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} symbols but {} activation times",
                self.symbols.len(),
                self.activation_times.len()
            )));
        }
        if self.activation_times.windows(2).any(|w| w[1] < w[0]) {
            return domain("activation times are not sorted");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(s) = self.symbols.iter().find(|s| !seen.insert(**s)) {
            return domain(format!("symbol {s} appears more than once"));
        }
        Ok(())
    }
}

/// Extracts the alarm sequence of one trace.
///
/// A run of `n` consecutive samples beyond a limit lasts `n · sample_period`
/// seconds; the first run lasting at least `persist_seconds` emits the symbol.
pub fn extract_sequence(
    trace: &MeasurementTrace,
    limits: &AlarmLimits,
    codebook: &AlarmSymbolCodebook,
    persist_seconds: f64,
) -> Result<AlarmSequence> {
    if !(persist_seconds >= 0.0) {
        return domain(format!(
            "persistence time must be non-negative, got {persist_seconds}"
        ));
    }
    let m = trace.n_measurements();
    if limits.n_measurements() != m || codebook.n_measurements() != m {
        return Err(Error::DimensionMismatch(format!(
            "trace has {m} measurements, limits {} and codebook {}",
            limits.n_measurements(),
            codebook.n_measurements()
        )));
    }
    // Smallest run length (in samples) that satisfies the persistence time.
    let needed = ((persist_seconds / trace.sample_period) - 1e-9)
        .ceil()
        .max(1.0) as usize;

    let mut events: Vec<(usize, usize)> = Vec::new();
    for j in 0..m {
        let column = trace.values.column(j);
        let (high, low) = (limits.high(j), limits.low(j));
        for (direction, beyond) in [
            (
                Direction::High,
                &(|v: f64| v > high) as &dyn Fn(f64) -> bool,
            ),
            (Direction::Low, &(|v: f64| v < low) as &dyn Fn(f64) -> bool),
        ] {
            if let Some(start) = first_persistent_run(column.iter().map(|&v| beyond(v)), needed) {
                let symbol = codebook
                    .encode(j, direction)
                    .expect("measurement in codebook");
                events.push((start, symbol));
            }
        }
    }
    events.sort_unstable();
    Ok(AlarmSequence {
        symbols: events.iter().map(|&(_, s)| s).collect(),
        activation_times: events
            .iter()
            .map(|&(t, _)| t as f64 * trace.sample_period)
            .collect(),
        fault_label: None,
    })
}

/// Start index of the first run of `true` of at least `needed` samples.
fn first_persistent_run(flags: impl Iterator<Item = bool>, needed: usize) -> Option<usize> {
    let mut start = 0;
    let mut len = 0;
    for (t, flag) in flags.enumerate() {
        if flag {
            if len == 0 {
                start = t;
            }
            len += 1;
            if len >= needed {
                return Some(start);
            }
        } else {
            len = 0;
        }
    }
    None
}

/// One line of the alarm-sequence JSON Lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub fault: Option<usize>,
    pub symbols: Vec<usize>,
    pub times: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl SequenceRecord {
    pub fn from_sequence(seq: &AlarmSequence, meta: BTreeMap<String, serde_json::Value>) -> Self {
        Self {
            fault: seq.fault_label,
            symbols: seq.symbols.clone(),
            times: seq.activation_times.clone(),
            meta,
        }
    }

    pub fn to_sequence(&self) -> Result<AlarmSequence> {
        let seq = AlarmSequence {
            symbols: self.symbols.clone(),
            activation_times: self.times.clone(),
            fault_label: self.fault,
        };
        seq.validate()?;
        Ok(seq)
    }
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[SequenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<SequenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        if rec.symbols.len() != rec.times.len() {
            return Err(Error::Schema(format!(
                "line {}: {} symbols but {} times",
                i + 1,
                rec.symbols.len(),
                rec.times.len()
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[SequenceRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_jsonl(std::io::BufWriter::new(file), records)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SequenceRecord>> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn one_column(values: Vec<f64>, period: f64) -> MeasurementTrace {
        let n = values.len();
        MeasurementTrace::new(
            period,
            Array2::from_shape_vec((n, 1), values).unwrap(),
            vec!["x1".into()],
        )
        .unwrap()
    }

    fn unit_limits(m: usize) -> AlarmLimits {
        AlarmLimits {
            mean: vec![0.0; m],
            std_dev: vec![1.0; m],
            kappa: 3.0,
        }
    }

    #[test]
    fn quiet_trace_gives_empty_sequence() {
        let trace = one_column(vec![0.5; 100], 10.0);
        let seq = extract_sequence(
            &trace,
            &unit_limits(1),
            &AlarmSymbolCodebook::with_measurements(1),
            300.0,
        )
        .unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn step_alarm_is_stamped_at_excursion_start() {
        let values: Vec<f64> = (0..100).map(|t| if t >= 10 { 5.0 } else { 0.0 }).collect();
        let trace = one_column(values, 10.0);
        let seq = extract_sequence(
            &trace,
            &unit_limits(1),
            &AlarmSymbolCodebook::with_measurements(1),
            300.0,
        )
        .unwrap();
        assert_eq!(seq.symbols, vec![0]);
        assert_eq!(seq.activation_times, vec![100.0]);
    }

    #[test]
    fn reading_on_the_limit_is_not_an_alarm() {
        let trace = one_column(vec![3.0; 50], 10.0);
        let seq = extract_sequence(
            &trace,
            &unit_limits(1),
            &AlarmSymbolCodebook::with_measurements(1),
            0.0,
        )
        .unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn short_persistence_accepts_single_samples() {
        let mut values = vec![0.0; 20];
        values[7] = -4.0;
        let trace = one_column(values, 10.0);
        let seq = extract_sequence(
            &trace,
            &unit_limits(1),
            &AlarmSymbolCodebook::with_measurements(1),
            2.0,
        )
        .unwrap();
        assert_eq!(seq.symbols, vec![1]);
        assert_eq!(seq.activation_times, vec![70.0]);
    }

    #[test]
    fn ties_order_by_symbol() {
        let col: Vec<f64> = (0..40).map(|t| if t >= 5 { 9.0 } else { 0.0 }).collect();
        let neg: Vec<f64> = col.iter().map(|v| -v).collect();
        let mut flat = Vec::new();
        for t in 0..40 {
            flat.extend([col[t], neg[t]]);
        }
        let trace = MeasurementTrace::new(
            10.0,
            Array2::from_shape_vec((40, 2), flat).unwrap(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let seq = extract_sequence(
            &trace,
            &unit_limits(2),
            &AlarmSymbolCodebook::with_measurements(2),
            100.0,
        )
        .unwrap();
        // a.high = 0, b.low = 3, same activation time
        assert_eq!(seq.symbols, vec![0, 3]);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let trace = one_column(vec![0.0; 5], 1.0);
        assert!(matches!(
            extract_sequence(
                &trace,
                &unit_limits(2),
                &AlarmSymbolCodebook::with_measurements(2),
                1.0
            ),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_variance_names_measurement() {
        let trace = one_column(vec![4.0; 10], 1.0);
        match fit_limits(&[trace], 3.0) {
            Err(Error::ZeroVariance(id)) => assert_eq!(id, "x1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kappa_zero_collapses_limits_to_mean() {
        let trace = one_column(vec![1.0, 2.0, 3.0, 4.0], 1.0);
        let limits = fit_limits(&[trace], 0.0).unwrap();
        assert_eq!(limits.high(0), 2.5);
        assert_eq!(limits.low(0), 2.5);
    }

    #[test]
    fn pooling_identical_traces_keeps_limits() {
        let trace = one_column(vec![1.0, 2.0, 4.0, 8.0, 3.0], 1.0);
        let one = fit_limits(std::slice::from_ref(&trace), 3.0).unwrap();
        let two = fit_limits(&[trace.clone(), trace], 3.0).unwrap();
        assert!((one.mean[0] - two.mean[0]).abs() < 1e-12);
        // sample std with n-1 shifts slightly when n doubles: compare population form
        let pop = |l: &AlarmLimits, n: f64| l.std_dev[0] * ((n - 1.0) / n).sqrt();
        assert!((pop(&one, 5.0) - pop(&two, 10.0)).abs() < 1e-12);
    }

    #[test]
    fn codebook_numbering() {
        let cb = AlarmSymbolCodebook::with_measurements(41);
        assert_eq!(cb.n_symbols(), 82);
        assert_eq!(cb.encode(0, Direction::High), Some(0));
        assert_eq!(cb.encode(0, Direction::Low), Some(41));
        assert_eq!(cb.decode(81), Some((40, Direction::Low)));
        assert_eq!(cb.decode(82), None);
        assert_eq!(cb.label(41).unwrap(), "x1.low");
    }

    #[test]
    fn csv_round_trip() {
        let values: Vec<f64> = (0..6).map(|x| x as f64 * 0.5).collect();
        let trace = MeasurementTrace::new(
            2.0,
            Array2::from_shape_vec((3, 2), values).unwrap(),
            vec!["p".into(), "q".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = MeasurementTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn csv_requires_time_column_and_even_spacing() {
        assert!(matches!(
            MeasurementTrace::read_csv("t,a\n0,1\n1,2\n".as_bytes()),
            Err(Error::Schema(_))
        ));
        assert!(MeasurementTrace::read_csv("time,a\n0,1\n1,2\n3,2\n".as_bytes()).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_schema_errors() {
        let seq = AlarmSequence::from_symbols(vec![3, 1, 4]).with_label(2);
        let rec = SequenceRecord::from_sequence(&seq, BTreeMap::new());
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), vec![rec]);
        assert!(matches!(
            read_jsonl(r#"{"fault":null,"symbols":[1],"times":[]}"#.as_bytes()),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            read_jsonl(r#"{"symbols":"x"}"#.as_bytes()),
            Err(Error::Schema(_))
        ));
    }
}
