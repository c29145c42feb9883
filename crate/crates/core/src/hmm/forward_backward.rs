use ndarray::{Array2, Array3, Axis};

use super::{Hmm, ObservationSequence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-step normalized forward/backward trellis.
///
/// `scale_factors[t]` is the sum of the unnormalized forward row at step `t`
/// (the divisor that makes `scaled_alpha[t]` sum to one), so
/// `log_likelihood = Σ_t ln scale_factors[t]`. The backward rows are divided by
/// the same factors, one step ahead, which makes `Σ_i α̂_t(i) β̂_t(i) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrellisResult<F: Scalar> {
    pub scaled_alpha: Array2<F>,
    pub scaled_beta: Array2<F>,
    pub scale_factors: Vec<F>,
    pub log_likelihood: F,
}

impl<F: Scalar> TrellisResult<F> {
    pub fn len(&self) -> usize {
        self.scale_factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale_factors.is_empty()
    }

    /// `ln α_t(i) = ln P(O_0..O_t, q_t = i)` recovered from the scaled trellis.
    pub fn log_alpha(&self, t: usize, state: usize) -> F {
        let prefix: F = self.scale_factors[..=t].iter().map(|c| c.ln()).sum();
        self.scaled_alpha[[t, state]].ln() + prefix
    }

    /// `ln β_t(i) = ln P(O_{t+1}..O_T | q_t = i)` recovered from the scaled trellis.
    pub fn log_beta(&self, t: usize, state: usize) -> F {
        let suffix: F = self.scale_factors[t + 1..].iter().map(|c| c.ln()).sum();
        self.scaled_beta[[t, state]].ln() + suffix
    }
}

/// Smoothed state and transition posteriors of one observation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors<F: Scalar> {
    /// `gamma[[t, i]] = P(q_t = i | O)`.
    pub gamma: Array2<F>,
    /// `xi[[t, i, j]] = P(q_t = i, q_{t+1} = j | O)`, shape `(T - 1, N, N)`.
    pub xi: Array3<F>,
}

pub fn forward_backward<F: Scalar>(
    model: &Hmm<F>,
    obs: &ObservationSequence,
) -> Result<TrellisResult<F>> {
    model.check_observations(obs)?;
    let symbols = obs.symbols();
    let t_len = symbols.len();
    let n = model.n_states();
    let a = model.transition();
    let b = model.emission();

    let mut alpha = Array2::<F>::zeros((t_len, n));
    let mut scale = Vec::with_capacity(t_len);

    for i in 0..n {
        alpha[[0, i]] = model.initial()[i] * b[[i, symbols[0]]];
    }
    scale.push(normalize_row(&mut alpha, 0)?);

    for t in 1..t_len {
        let o = symbols[t];
        for j in 0..n {
            let mut acc = F::zero();
            for i in 0..n {
                acc += alpha[[t - 1, i]] * a[[i, j]];
            }
            alpha[[t, j]] = acc * b[[j, o]];
        }
        scale.push(normalize_row(&mut alpha, t)?);
    }

    let mut beta = Array2::<F>::zeros((t_len, n));
    beta.row_mut(t_len - 1).fill(F::one());
    for t in (0..t_len - 1).rev() {
        let o = symbols[t + 1];
        for i in 0..n {
            let mut acc = F::zero();
            for j in 0..n {
                acc += a[[i, j]] * b[[j, o]] * beta[[t + 1, j]];
            }
            beta[[t, i]] = acc / scale[t + 1];
        }
    }

    let log_likelihood = scale.iter().map(|c| c.ln()).sum();
    Ok(TrellisResult {
        scaled_alpha: alpha,
        scaled_beta: beta,
        scale_factors: scale,
        log_likelihood,
    })
}

fn normalize_row<F: Scalar>(alpha: &mut Array2<F>, t: usize) -> Result<F> {
    let mut row = alpha.row_mut(t);
    let total: F = row.iter().copied().sum();
    if !(total > F::zero()) || !total.is_finite() {
        return Err(Error::ZeroProbability { step: t });
    }
    row.mapv_inplace(|x| x / total);
    Ok(total)
}

pub fn posteriors<F: Scalar>(
    model: &Hmm<F>,
    obs: &ObservationSequence,
    trellis: &TrellisResult<F>,
) -> Result<Posteriors<F>> {
    let t_len = obs.len();
    let n = model.n_states();
    if trellis.len() != t_len
        || trellis.scaled_alpha.dim() != (t_len, n)
        || trellis.scaled_beta.dim() != (t_len, n)
    {
        return Err(Error::DimensionMismatch(format!(
            "trellis covers {} steps x {} states, observations have {} steps and the model {} states",
            trellis.len(),
            trellis.scaled_alpha.ncols(),
            t_len,
            n
        )));
    }
    model.check_observations(obs)?;
    let symbols = obs.symbols();
    let a = model.transition();
    let b = model.emission();

    let mut gamma = &trellis.scaled_alpha * &trellis.scaled_beta;
    for mut row in gamma.axis_iter_mut(Axis(0)) {
        let total: F = row.iter().copied().sum();
        row.mapv_inplace(|x| x / total);
    }

    let mut xi = Array3::<F>::zeros((t_len.saturating_sub(1), n, n));
    for t in 0..t_len.saturating_sub(1) {
        let o = symbols[t + 1];
        let mut total = F::zero();
        for i in 0..n {
            let ai = trellis.scaled_alpha[[t, i]];
            for j in 0..n {
                let v = ai * a[[i, j]] * b[[j, o]] * trellis.scaled_beta[[t + 1, j]];
                xi[[t, i, j]] = v;
                total += v;
            }
        }
        xi.index_axis_mut(Axis(0), t).mapv_inplace(|x| x / total);
    }

    Ok(Posteriors { gamma, xi })
}
