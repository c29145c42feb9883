//! Discrete first-order hidden Markov models.
//!
//! A model is the triple `(A, B, π)` over `N` hidden states and `M` observation
//! symbols. Inference is exposed as free functions over an immutable [`Hmm`]:
//!
//! - [`forward_backward`] and [`posteriors`] compute scaled trellises and the
//!   state/transition posteriors,
//! - [`fit`] runs multi-sequence Baum-Welch,
//! - [`viterbi`] and [`k_best_paths`] decode in log space.

mod fit;
mod forward_backward;
mod viterbi;

pub use fit::{fit, FitConfig, FitOutcome};
pub use forward_backward::{forward_backward, posteriors, Posteriors, TrellisResult};
pub use viterbi::{k_best_paths, viterbi, StatePath};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Version tag written into every serialized model.
pub const MODEL_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Hmm<F: Scalar> {
    transition: Array2<F>,
    emission: Array2<F>,
    initial: Array1<F>,
}

impl<F: Scalar> Hmm<F> {
    /// Builds a model after checking shapes and that every distribution is
    /// non-negative and sums to one.
    pub fn new(transition: Array2<F>, emission: Array2<F>, initial: Array1<F>) -> Result<Self> {
        let model = Self {
            transition,
            emission,
            initial,
        };
        model.validate()?;
        Ok(model)
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(transition: &[Vec<F>], emission: &[Vec<F>], initial: &[F]) -> Result<Self> {
        Self::new(
            rows_to_array(transition, "transition")?,
            rows_to_array(emission, "emission")?,
            Array1::from(initial.to_vec()),
        )
    }

    /// Model whose transition, emission and initial distributions are all uniform.
    pub fn uniform(n_states: usize, n_symbols: usize) -> Result<Self> {
        if n_states == 0 || n_symbols == 0 {
            return Err(Error::InvalidModel(
                "a model needs at least one state and one symbol".into(),
            ));
        }
        let ps = F::one() / F::lit(n_states as f64);
        let ks = F::one() / F::lit(n_symbols as f64);
        Self::new(
            Array2::from_elem((n_states, n_states), ps),
            Array2::from_elem((n_states, n_symbols), ks),
            Array1::from_elem(n_states, ps),
        )
    }

    /// Model with every distribution drawn uniformly from the simplex interior
    /// (normalized uniform(0.05, 1) weights).
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_symbols: usize, rng: &mut R) -> Result<Self> {
        if n_states == 0 || n_symbols == 0 {
            return Err(Error::InvalidModel(
                "a model needs at least one state and one symbol".into(),
            ));
        }
        let mut row = |len: usize| -> Vec<F> {
            let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| F::lit(x / total)).collect()
        };
        let transition: Vec<Vec<F>> = (0..n_states).map(|_| row(n_states)).collect();
        let emission: Vec<Vec<F>> = (0..n_states).map(|_| row(n_symbols)).collect();
        let initial = row(n_states);
        Self::from_rows(&transition, &emission, &initial)
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.emission.ncols()
    }

    pub fn transition(&self) -> &Array2<F> {
        &self.transition
    }

    pub fn emission(&self) -> &Array2<F> {
        &self.emission
    }

    pub fn initial(&self) -> &Array1<F> {
        &self.initial
    }

    /// Checks that `obs` only uses symbols of this model.
    pub fn check_observations(&self, obs: &ObservationSequence) -> Result<()> {
        let m = self.n_symbols();
        match obs.symbols().iter().position(|&s| s >= m) {
            Some(position) => Err(Error::SymbolOutOfRange {
                position,
                symbol: obs.symbols()[position],
                n_symbols: m,
            }),
            None => Ok(()),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        if n == 0 {
            return Err(Error::InvalidModel("model has no states".into()));
        }
        if self.transition.dim() != (n, n) {
            return Err(Error::InvalidModel(format!(
                "transition matrix is {:?}, expected ({n}, {n})",
                self.transition.dim()
            )));
        }
        if self.emission.nrows() != n || self.emission.ncols() == 0 {
            return Err(Error::InvalidModel(format!(
                "emission matrix is {:?}, expected ({n}, M) with M >= 1",
                self.emission.dim()
            )));
        }
        check_distribution(self.initial.view(), "initial distribution")?;
        for (i, row) in self.transition.rows().into_iter().enumerate() {
            check_distribution(row, &format!("transition row {i}"))?;
        }
        for (i, row) in self.emission.rows().into_iter().enumerate() {
            check_distribution(row, &format!("emission row {i}"))?;
        }
        Ok(())
    }

    pub fn to_document(&self) -> HmmDocument {
        HmmDocument {
            format_version: MODEL_FORMAT_VERSION.to_string(),
            n_states: self.n_states(),
            n_symbols: self.n_symbols(),
            transition: array_to_rows(&self.transition),
            emission: array_to_rows(&self.emission),
            initial: self.initial.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn from_document(doc: &HmmDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format_version `{}` (expected `{MODEL_FORMAT_VERSION}`)",
                doc.format_version
            )));
        }
        let cast = |rows: &[Vec<f64>]| -> Vec<Vec<F>> {
            rows.iter()
                .map(|r| r.iter().map(|&x| F::lit(x)).collect())
                .collect()
        };
        let initial: Vec<F> = doc.initial.iter().map(|&x| F::lit(x)).collect();
        let model = Self::from_rows(&cast(&doc.transition), &cast(&doc.emission), &initial)?;
        if model.n_states() != doc.n_states || model.n_symbols() != doc.n_symbols {
            return Err(Error::InvalidModel(format!(
                "declared shape ({}, {}) does not match matrices ({}, {})",
                doc.n_states,
                doc.n_symbols,
                model.n_states(),
                model.n_symbols()
            )));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: HmmDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Serialized form of an [`Hmm`]. Probabilities are stored as `f64`, which
/// `serde_json` prints with shortest round-trip precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmDocument {
    pub format_version: String,
    pub n_states: usize,
    pub n_symbols: usize,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

/// Ordered symbol indices observed from a model. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationSequence(Vec<usize>);

impl ObservationSequence {
    pub fn new(symbols: Vec<usize>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Domain("observation sequence is empty".into()));
        }
        Ok(Self(symbols))
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The first `len` symbols (clamped to the full length).
    pub fn prefix(&self, len: usize) -> Self {
        Self(self.0[..len.clamp(1, self.0.len())].to_vec())
    }
}

impl TryFrom<Vec<usize>> for ObservationSequence {
    type Error = Error;

    fn try_from(symbols: Vec<usize>) -> Result<Self> {
        Self::new(symbols)
    }
}

fn check_distribution<F: Scalar>(row: ArrayView1<'_, F>, what: &str) -> Result<()> {
    if let Some(x) = row.iter().find(|x| !x.is_finite() || **x < F::zero()) {
        return Err(Error::InvalidModel(format!(
            "{what} has an invalid entry {x}"
        )));
    }
    let total = row.iter().copied().sum::<F>().as_f64();
    if (total - 1.0).abs() > F::ROW_SUM_TOL {
        return Err(Error::InvalidModel(format!(
            "{what} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn rows_to_array<F: Scalar>(rows: &[Vec<F>], what: &str) -> Result<Array2<F>> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::InvalidModel(format!(
            "{what} rows have unequal lengths"
        )));
    }
    let flat: Vec<F> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((n_rows, n_cols), flat)
        .map_err(|e| Error::InvalidModel(format!("{what}: {e}")))
}

fn array_to_rows<F: Scalar>(a: &Array2<F>) -> Vec<Vec<f64>> {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect()
}

/// Raises every entry of `row` to at least `floor` and rescales the remaining
/// entries proportionally so the row sums to one. Entries pushed below the floor
/// by the rescaling are clamped in turn, so the result is the closest row (in the
/// multinomial likelihood sense) that respects the floor.
pub(crate) fn floor_and_normalize<F: Scalar>(row: &mut [F], floor: F) {
    let total: F = row.iter().copied().sum();
    if total > F::zero() {
        row.iter_mut().for_each(|x| *x /= total);
    }
    if floor <= F::zero() {
        return;
    }
    let n = row.len();
    let mut clamped = vec![false; n];
    loop {
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        let free_mass = F::one() - floor * F::lit(n_clamped as f64);
        let free_total: F = row
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| !c)
            .map(|(&x, _)| x)
            .sum();
        let mut changed = false;
        for i in 0..n {
            if clamped[i] {
                row[i] = floor;
            } else {
                let scaled = if free_total > F::zero() {
                    row[i] * free_mass / free_total
                } else {
                    F::zero()
                };
                if scaled < floor {
                    clamped[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            for i in 0..n {
                if !clamped[i] {
                    row[i] = row[i] * free_mass / free_total;
                }
            }
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rows_that_do_not_sum_to_one() {
        let err = Hmm::<f64>::from_rows(
            &[vec![0.5, 0.4], vec![0.5, 0.5]],
            &[vec![1.0], vec![1.0]],
            &[0.5, 0.5],
        )
        .unwrap_err();
        assert!(err.to_string().contains("transition row 0"), "{err}");
    }

    #[test]
    fn rejects_negative_entries() {
        let err = Hmm::<f64>::from_rows(&[vec![1.0]], &[vec![1.2, -0.2]], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let model = Hmm::<f64>::random(3, 5, &mut rng).unwrap();
        let text = model.to_json().unwrap();
        let back = Hmm::<f64>::from_json(&text).unwrap();
        assert_eq!(model, back);
        assert_eq!(text, back.to_json().unwrap());
    }

    #[test]
    fn json_rejects_unknown_version() {
        let mut doc = Hmm::<f64>::uniform(2, 2).unwrap().to_document();
        doc.format_version = "99".into();
        assert!(matches!(
            Hmm::<f64>::from_document(&doc),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn observation_sequence_rejects_empty() {
        assert!(ObservationSequence::new(vec![]).is_err());
    }

    #[test]
    fn out_of_range_symbol_names_its_position() {
        let model = Hmm::<f64>::uniform(2, 3).unwrap();
        let obs = ObservationSequence::new(vec![0, 2, 3, 1]).unwrap();
        match model.check_observations(&obs) {
            Err(Error::SymbolOutOfRange {
                position, symbol, ..
            }) => {
                assert_eq!((position, symbol), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn floor_keeps_every_entry_at_or_above_floor() {
        let mut row = vec![0.0, 0.0, 0.3, 0.7];
        floor_and_normalize(&mut row, 1e-3);
        assert!(row.iter().all(|&x| x >= 1e-3));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // free entries keep their ratio
        assert!((row[3] / row[2] - 0.7 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn floor_cascades_when_rescaling_pushes_entries_under() {
        let mut row = vec![0.0, 0.1005, 0.8995];
        floor_and_normalize(&mut row, 0.1);
        assert!(row.iter().all(|&x| x >= 0.1 - 1e-15), "{row:?}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    use rand::SeedableRng;
}
