use std::cmp::Ordering;

use super::{Hmm, ObservationSequence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A decoded hidden-state path and its joint log-probability with the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath<F: Scalar> {
    pub states: Vec<usize>,
    pub log_prob: F,
}

impl<F: Scalar> StatePath<F> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Log-space tables shared by both decoders.
struct LogModel<F> {
    n: usize,
    log_a: Vec<F>,
    log_b: Vec<F>,
    log_pi: Vec<F>,
    m: usize,
}

impl<F: Scalar> LogModel<F> {
    fn new(model: &Hmm<F>) -> Self {
        Self {
            n: model.n_states(),
            m: model.n_symbols(),
            log_a: model.transition().iter().map(|x| x.ln()).collect(),
            log_b: model.emission().iter().map(|x| x.ln()).collect(),
            log_pi: model.initial().iter().map(|x| x.ln()).collect(),
        }
    }

    fn a(&self, i: usize, j: usize) -> F {
        self.log_a[i * self.n + j]
    }

    fn b(&self, j: usize, o: usize) -> F {
        self.log_b[j * self.m + o]
    }
}

/// Most probable state path. Every argmax tie goes to the lowest state index.
pub fn viterbi<F: Scalar>(model: &Hmm<F>, obs: &ObservationSequence) -> Result<StatePath<F>> {
    model.check_observations(obs)?;
    let lm = LogModel::new(model);
    let symbols = obs.symbols();
    let n = lm.n;
    let t_len = symbols.len();

    let mut delta: Vec<F> = (0..n).map(|i| lm.log_pi[i] + lm.b(i, symbols[0])).collect();
    ensure_reachable(&delta, 0)?;
    let mut psi = vec![0usize; t_len * n];
    let mut next = vec![F::neg_infinity(); n];
    let mut cands = Vec::with_capacity(n);

    for t in 1..t_len {
        let o = symbols[t];
        for j in 0..n {
            cands.clear();
            cands.extend(delta.iter().enumerate().map(|(i, &d)| d + lm.a(i, j)));
            let (arg, best) = argmax(&cands);
            next[j] = best + lm.b(j, o);
            psi[t * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
        ensure_reachable(&delta, t)?;
    }

    let (mut state, log_prob) = argmax(&delta);
    let mut states = vec![0; t_len];
    states[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = psi[t * n + state];
        states[t - 1] = state;
    }
    Ok(StatePath { states, log_prob })
}

/// Two log-scores closer than this are the same path probability up to rounding:
/// products of the same factors in a different order land a few ulps apart.
fn tied<F: Scalar>(x: F, y: F) -> bool {
    if x == y {
        return true;
    }
    if !x.is_finite() || !y.is_finite() {
        return false;
    }
    let scale = F::one().max(x.abs()).max(y.abs());
    (x - y).abs() <= F::epsilon() * F::lit(256.0) * scale
}

/// Largest value and the lowest index whose value ties it.
fn argmax<F: Scalar>(v: &[F]) -> (usize, F) {
    let best = v.iter().copied().fold(F::neg_infinity(), F::max);
    let arg = v.iter().position(|&x| tied(x, best)).unwrap_or(0);
    (arg, best)
}

/// Sorts best-first; runs of tied scores are then ordered by `key`.
fn rank<T, F: Scalar>(items: &mut [T], score: impl Fn(&T) -> F, key: impl Fn(&T, &T) -> Ordering) {
    items.sort_by(|x, y| score(y).partial_cmp(&score(x)).unwrap_or(Ordering::Equal));
    let mut start = 0;
    while start < items.len() {
        let lead = score(&items[start]);
        let mut end = start + 1;
        while end < items.len() && tied(lead, score(&items[end])) {
            end += 1;
        }
        items[start..end].sort_by(&key);
        start = end;
    }
}

fn ensure_reachable<F: Scalar>(delta: &[F], step: usize) -> Result<()> {
    if delta.iter().all(|&d| d == F::neg_infinity()) {
        return Err(Error::ZeroProbability { step });
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Entry<F> {
    score: F,
    prev_state: usize,
    prev_rank: usize,
}

/// The `k` most probable state paths in descending order of joint probability.
///
/// List Viterbi: every `(t, state)` cell keeps its `k` best partial paths.
/// Zero-probability paths are never returned, so fewer than `k` paths come back
/// when fewer than `k` paths have positive probability.
pub fn k_best_paths<F: Scalar>(
    model: &Hmm<F>,
    obs: &ObservationSequence,
    k: usize,
) -> Result<Vec<StatePath<F>>> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    model.check_observations(obs)?;
    let lm = LogModel::new(model);
    let symbols = obs.symbols();
    let n = lm.n;
    let t_len = symbols.len();

    // cells[t][j] holds up to k entries sorted best-first.
    let mut cells: Vec<Vec<Vec<Entry<F>>>> = Vec::with_capacity(t_len);
    let first: Vec<Vec<Entry<F>>> = (0..n)
        .map(|i| {
            let score = lm.log_pi[i] + lm.b(i, symbols[0]);
            if score == F::neg_infinity() {
                Vec::new()
            } else {
                vec![Entry {
                    score,
                    prev_state: 0,
                    prev_rank: 0,
                }]
            }
        })
        .collect();
    if first.iter().all(Vec::is_empty) {
        return Err(Error::ZeroProbability { step: 0 });
    }
    cells.push(first);

    let mut candidates = Vec::with_capacity(n * k);
    for t in 1..t_len {
        let o = symbols[t];
        let prev = &cells[t - 1];
        let mut column = Vec::with_capacity(n);
        for j in 0..n {
            candidates.clear();
            for (i, list) in prev.iter().enumerate() {
                for (r, e) in list.iter().enumerate() {
                    let score = e.score + lm.a(i, j) + lm.b(j, o);
                    if score != F::neg_infinity() {
                        candidates.push(Entry {
                            score,
                            prev_state: i,
                            prev_rank: r,
                        });
                    }
                }
            }
            rank(
                &mut candidates,
                |e: &Entry<F>| e.score,
                |x, y| {
                    x.prev_state
                        .cmp(&y.prev_state)
                        .then(x.prev_rank.cmp(&y.prev_rank))
                },
            );
            candidates.truncate(k);
            column.push(candidates.clone());
        }
        if column.iter().all(Vec::is_empty) {
            return Err(Error::ZeroProbability { step: t });
        }
        cells.push(column);
    }

    let mut finals: Vec<(F, usize, usize)> = cells[t_len - 1]
        .iter()
        .enumerate()
        .flat_map(|(j, list)| list.iter().enumerate().map(move |(r, e)| (e.score, j, r)))
        .collect();
    rank(
        &mut finals,
        |f| f.0,
        |x, y| x.1.cmp(&y.1).then(x.2.cmp(&y.2)),
    );

    let mut paths: Vec<StatePath<F>> = Vec::with_capacity(k);
    for (score, mut state, mut rank) in finals {
        if paths.len() == k {
            break;
        }
        let mut states = vec![0; t_len];
        for t in (0..t_len).rev() {
            states[t] = state;
            let e = cells[t][state][rank];
            state = e.prev_state;
            rank = e.prev_rank;
        }
        if paths.iter().all(|p| p.states != states) {
            paths.push(StatePath {
                states,
                log_prob: score,
            });
        }
    }
    Ok(paths)
}
