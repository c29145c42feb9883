#![allow(dead_code)]

use alarm_hmm::hmm::Hmm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every state path with its joint probability `P(path, obs)` and the log of
/// that probability summed factor by factor.
pub struct Enumerated {
    pub path: Vec<usize>,
    pub prob: f64,
    pub log_prob: f64,
}

pub fn enumerate_paths(model: &Hmm<f64>, obs: &[usize]) -> Vec<Enumerated> {
    let n = model.n_states();
    let t_len = obs.len();
    let a = model.transition();
    let b = model.emission();
    let pi = model.initial();
    let total = n.pow(t_len as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = vec![0; t_len];
        let mut c = code;
        for t in (0..t_len).rev() {
            path[t] = c % n;
            c /= n;
        }
        let mut factors = vec![pi[path[0]], b[[path[0], obs[0]]]];
        for t in 1..t_len {
            factors.push(a[[path[t - 1], path[t]]]);
            factors.push(b[[path[t], obs[t]]]);
        }
        let prob = factors.iter().product();
        let log_prob = factors.iter().map(|f| f.ln()).sum();
        out.push(Enumerated {
            path,
            prob,
            log_prob,
        });
    }
    out
}

/// Paths by descending probability. Paths whose log-probabilities agree within
/// 1e-12 are tied and ordered by lowest state index from the last step
/// backwards, which is how back-pointer decoding resolves ties.
pub fn ranked_paths(model: &Hmm<f64>, obs: &[usize]) -> Vec<Enumerated> {
    let mut all = enumerate_paths(model, obs);
    all.sort_by(|x, y| y.log_prob.total_cmp(&x.log_prob));
    let mut out = Vec::with_capacity(all.len());
    let mut rest = all.into_iter().peekable();
    while let Some(head) = rest.next() {
        let mut group = vec![head];
        while let Some(next) = rest.peek() {
            if (group[0].log_prob - next.log_prob).abs() > 1e-12 {
                break;
            }
            group.push(rest.next().unwrap());
        }
        group.sort_by(|x, y| x.path.iter().rev().cmp(y.path.iter().rev()));
        out.extend(group);
    }
    out
}

pub fn total_probability(model: &Hmm<f64>, obs: &[usize]) -> f64 {
    enumerate_paths(model, obs).iter().map(|e| e.prob).sum()
}

/// `P(q_t = i | obs)` by enumeration.
pub fn state_marginals(model: &Hmm<f64>, obs: &[usize]) -> Vec<Vec<f64>> {
    let all = enumerate_paths(model, obs);
    let total: f64 = all.iter().map(|e| e.prob).sum();
    let mut g = vec![vec![0.0; model.n_states()]; obs.len()];
    for e in &all {
        for (t, &s) in e.path.iter().enumerate() {
            g[t][s] += e.prob;
        }
    }
    for row in &mut g {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    g
}

/// Random instance from the oracle family: `N ∈ 1..=4`, `M ∈ 2..=5`, `T ∈ 1..=8`.
pub fn random_instance(seed: u64) -> (Hmm<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let m = rng.random_range(2..=5);
    let t = rng.random_range(1..=8);
    let model = Hmm::random(n, m, &mut rng).unwrap();
    let obs = (0..t).map(|_| rng.random_range(0..m)).collect();
    (model, obs)
}

/// Samples `count` observation sequences of length `len` from `model`.
pub fn sample_sequences(model: &Hmm<f64>, count: usize, len: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |row: ndarray::ArrayView1<f64>, rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        row.len() - 1
    };
    (0..count)
        .map(|_| {
            let mut state = draw(model.initial().view(), &mut rng);
            let mut obs = Vec::with_capacity(len);
            for t in 0..len {
                if t > 0 {
                    state = draw(model.transition().row(state), &mut rng);
                }
                obs.push(draw(model.emission().row(state), &mut rng));
            }
            obs
        })
        .collect()
}
