use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{floor_and_normalize, forward_backward, posteriors, Hmm, ObservationSequence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stopping and smoothing settings for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once `|ΔLL| / |LL|` between consecutive iterations drops below this.
    pub rel_tol: f64,
    /// Lower bound applied to every emission and transition entry after each
    /// M-step. Zero disables smoothing.
    pub emission_floor: f64,
    /// Seed for randomized initialization by callers; [`fit`] itself is deterministic.
    pub seed: u64,
    /// When set, every off-diagonal transition entry is pinned to this value and
    /// the diagonal takes the remaining mass; only `B` and `π` are re-estimated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_off_diagonal: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tol: 1e-6,
            emission_floor: 1e-10,
            seed: 0,
            fixed_off_diagonal: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Domain(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.emission_floor >= 0.0) {
            return Err(Error::Domain(format!(
                "emission_floor must be non-negative, got {}",
                self.emission_floor
            )));
        }
        if let Some(c) = self.fixed_off_diagonal {
            if !(c >= 0.0) {
                return Err(Error::Domain(format!(
                    "fixed_off_diagonal must be non-negative, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<F: Scalar> {
    pub model: Hmm<F>,
    /// Total log-likelihood of the training set under the model at the start
    /// of each iteration.
    pub log_likelihoods: Vec<F>,
    pub converged: bool,
}

impl<F: Scalar> FitOutcome<F> {
    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len()
    }
}

/// Expected sufficient statistics pooled over all sequences.
struct Accumulators<F: Scalar> {
    initial: Array1<F>,
    trans_num: Array2<F>,
    trans_den: Array1<F>,
    emit_num: Array2<F>,
    emit_den: Array1<F>,
    log_likelihood: F,
}

impl<F: Scalar> Accumulators<F> {
    fn new(n: usize, m: usize) -> Self {
        Self {
            initial: Array1::zeros(n),
            trans_num: Array2::zeros((n, n)),
            trans_den: Array1::zeros(n),
            emit_num: Array2::zeros((n, m)),
            emit_den: Array1::zeros(n),
            log_likelihood: F::zero(),
        }
    }
}

/// Multi-sequence Baum-Welch.
///
/// Sequences are processed in order and time steps in order, so the pooled
/// sums (and therefore the result) are bit-reproducible.
pub fn fit<F: Scalar>(
    initial_model: &Hmm<F>,
    sequences: &[ObservationSequence],
    config: &FitConfig,
) -> Result<FitOutcome<F>> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Domain("fit needs at least one sequence".into()));
    }
    let n = initial_model.n_states();
    let m = initial_model.n_symbols();
    let floor = F::lit(config.emission_floor);
    if config.emission_floor * (m.max(n) as f64) > 1.0 {
        return Err(Error::Domain(format!(
            "emission_floor {} is too large for {} symbols",
            config.emission_floor, m
        )));
    }
    for obs in sequences {
        initial_model.check_observations(obs)?;
    }

    let mut model = initial_model.clone();
    if let Some(c) = config.fixed_off_diagonal {
        model.transition = pinned_transition(n, F::lit(c))?;
    }

    let mut trace: Vec<F> = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iterations {
        let acc = expectation(&model, sequences)?;
        let ll = acc.log_likelihood;
        if let Some(&prev) = trace.last() {
            let rel = ((ll - prev) / prev.abs().max(F::min_positive_value())).abs();
            if rel < F::lit(config.rel_tol) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        model = maximization(&model, &acc, sequences.len(), floor, config)?;
    }

    Ok(FitOutcome {
        model,
        log_likelihoods: trace,
        converged,
    })
}

fn expectation<F: Scalar>(
    model: &Hmm<F>,
    sequences: &[ObservationSequence],
) -> Result<Accumulators<F>> {
    let n = model.n_states();
    let mut acc = Accumulators::new(n, model.n_symbols());
    for obs in sequences {
        let trellis = forward_backward(model, obs)?;
        let post = posteriors(model, obs, &trellis)?;
        acc.log_likelihood += trellis.log_likelihood;

        acc.initial += &post.gamma.row(0);
        for (t, row) in post.gamma.axis_iter(Axis(0)).enumerate() {
            let o = obs.symbols()[t];
            for i in 0..n {
                acc.emit_num[[i, o]] += row[i];
                acc.emit_den[i] += row[i];
                if t + 1 < obs.len() {
                    acc.trans_den[i] += row[i];
                }
            }
        }
        for slice in post.xi.axis_iter(Axis(0)) {
            acc.trans_num += &slice;
        }
    }
    Ok(acc)
}

fn maximization<F: Scalar>(
    prev: &Hmm<F>,
    acc: &Accumulators<F>,
    n_sequences: usize,
    floor: F,
    config: &FitConfig,
) -> Result<Hmm<F>> {
    let n = prev.n_states();

    let mut initial = &acc.initial / F::lit(n_sequences as f64);
    let total: F = initial.sum();
    initial.mapv_inplace(|x| x / total);

    let transition = match config.fixed_off_diagonal {
        Some(c) => pinned_transition(n, F::lit(c))?,
        None => {
            let mut a = prev.transition.clone();
            for i in 0..n {
                // A state never left (or never visited) keeps its previous row.
                if acc.trans_den[i] > F::zero() {
                    let mut row: Vec<F> = acc
                        .trans_num
                        .row(i)
                        .iter()
                        .map(|&x| x / acc.trans_den[i])
                        .collect();
                    floor_and_normalize(&mut row, floor);
                    a.row_mut(i).assign(&Array1::from(row));
                }
            }
            a
        }
    };

    let mut b = prev.emission.clone();
    for i in 0..n {
        if acc.emit_den[i] > F::zero() {
            let mut row: Vec<F> = acc
                .emit_num
                .row(i)
                .iter()
                .map(|&x| x / acc.emit_den[i])
                .collect();
            floor_and_normalize(&mut row, floor);
            b.row_mut(i).assign(&Array1::from(row));
        }
    }

    Hmm::new(transition, b, initial)
}

fn pinned_transition<F: Scalar>(n: usize, off: F) -> Result<Array2<F>> {
    let diag = F::one() - off * F::lit(n.saturating_sub(1) as f64);
    if diag < F::zero() {
        return Err(Error::Domain(format!(
            "fixed off-diagonal {off} leaves negative self-transition mass for {n} states"
        )));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            diag
        } else {
            off
        }
    }))
}
