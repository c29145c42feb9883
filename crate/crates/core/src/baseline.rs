//! Similarity-clustering baseline: successor-count feature matrices compared by
//! Euclidean distance, average-linkage agglomerative clustering, majority-vote
//! cluster labels and nearest-centroid assignment of new sequences.

use std::io::Write;

use crate::diagnoser::{FaultId, LabeledSequence};
use crate::error::{Error, Result};

/// Collapses runs of the same symbol into one occurrence.
pub fn dechatter(symbols: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(symbols.len());
    for &s in symbols {
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

/// `counts[i * M + j]` = how often alarm `j` immediately follows alarm `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    n_symbols: usize,
    counts: Vec<u32>,
}

impl FeatureMatrix {
    pub fn from_sequence(symbols: &[usize], n_symbols: usize) -> Result<Self> {
        if let Some(position) = symbols.iter().position(|&s| s >= n_symbols) {
            return Err(Error::SymbolOutOfRange {
                position,
                symbol: symbols[position],
                n_symbols,
            });
        }
        let mut counts = vec![0u32; n_symbols * n_symbols];
        for w in dechatter(symbols).windows(2) {
            counts[w[0] * n_symbols + w[1]] += 1;
        }
        Ok(Self { n_symbols, counts })
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn get(&self, from: usize, to: usize) -> u32 {
        self.counts[from * self.n_symbols + to]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.counts
            .iter()
            .zip(&other.counts)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance: f64,
    pub size: usize,
}

/// Merge history of average-linkage clustering. Leaves are `0..n`; the cluster
/// formed at step `s` gets id `n + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Flat assignment into `n_clusters` clusters, numbered by their smallest member.
    pub fn cut(&self, n_clusters: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves;
        if n_clusters < 1 || n_clusters > n {
            return Err(Error::Domain(format!(
                "cannot cut {n} leaves into {n_clusters} clusters"
            )));
        }
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (step, m) in self.merges.iter().take(n - n_clusters).enumerate() {
            let id = n + step;
            let ra = find(&mut parent, m.cluster_a);
            let rb = find(&mut parent, m.cluster_b);
            parent[ra] = id;
            parent[rb] = id;
        }
        let mut root_label: Vec<Option<usize>> = vec![None; 2 * n];
        let mut next = 0;
        let mut labels = Vec::with_capacity(n);
        for leaf in 0..n {
            let r = find(&mut parent, leaf);
            let label = *root_label[r].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            labels.push(label);
        }
        Ok(labels)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "cluster_a", "cluster_b", "distance"])?;
        for (step, m) in self.merges.iter().enumerate() {
            w.write_record([
                step.to_string(),
                m.cluster_a.to_string(),
                m.cluster_b.to_string(),
                m.distance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Average-linkage agglomerative clustering over a full distance matrix.
///
/// Each step merges the closest pair of active clusters; ties go to the pair
/// with the smallest `(a, b)` ids.
pub fn average_linkage(distances: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = distances.len();
    if n == 0 {
        return Err(Error::Domain("nothing to cluster".into()));
    }
    if distances.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(
            "distance matrix is not square".into(),
        ));
    }
    let total = 2 * n - 1;
    let mut dist = vec![vec![f64::INFINITY; total]; total];
    for i in 0..n {
        dist[i][..n].copy_from_slice(&distances[i]);
    }
    let mut size = vec![0usize; total];
    size[..n].fill(1);
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let d = dist[a][b];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (d, a, b) = best.expect("at least two active clusters");
        let id = n + step;
        size[id] = size[a] + size[b];
        active.retain(|&c| c != a && c != b);
        let (wa, wb) = (size[a] as f64, size[b] as f64);
        for &c in &active {
            let v = (wa * dist[a][c] + wb * dist[b][c]) / (wa + wb);
            dist[id][c] = v;
            dist[c][id] = v;
        }
        active.push(id);
        merges.push(Merge {
            cluster_a: a,
            cluster_b: b,
            distance: d,
            size: size[id],
        });
    }
    Ok(Dendrogram {
        n_leaves: n,
        merges,
    })
}

/// Fitted baseline classifier.
#[derive(Debug, Clone)]
pub struct ClusterClassifier {
    pub dendrogram: Dendrogram,
    /// Flat cluster of each training sequence.
    pub assignments: Vec<usize>,
    pub cluster_labels: Vec<FaultId>,
    centroids: Vec<Vec<f64>>,
    n_symbols: usize,
}

impl ClusterClassifier {
    pub fn fit(training: &[LabeledSequence], n_clusters: usize, n_symbols: usize) -> Result<Self> {
        if n_clusters < 1 || n_clusters > training.len() {
            return Err(Error::Domain(format!(
                "n_clusters must be between 1 and {}, got {n_clusters}",
                training.len()
            )));
        }
        let features: Vec<FeatureMatrix> = training
            .iter()
            .map(|l| FeatureMatrix::from_sequence(&l.sequence.symbols, n_symbols))
            .collect::<Result<_>>()?;
        let distances: Vec<Vec<f64>> = features
            .iter()
            .map(|a| features.iter().map(|b| a.distance(b)).collect())
            .collect();
        let dendrogram = average_linkage(&distances)?;
        let assignments = dendrogram.cut(n_clusters)?;

        let n_faults = training.iter().map(|l| l.fault.0).max().unwrap_or(0) + 1;
        let width = n_symbols * n_symbols;
        let mut votes = vec![vec![0usize; n_faults]; n_clusters];
        let mut centroids = vec![vec![0.0; width]; n_clusters];
        let mut members = vec![0usize; n_clusters];
        for ((l, f), &c) in training.iter().zip(&features).zip(&assignments) {
            votes[c][l.fault.0] += 1;
            members[c] += 1;
            for (acc, &x) in centroids[c].iter_mut().zip(f.as_slice()) {
                *acc += f64::from(x);
            }
        }
        for (centroid, &count) in centroids.iter_mut().zip(&members) {
            centroid.iter_mut().for_each(|x| *x /= count as f64);
        }
        let cluster_labels = votes
            .iter()
            .map(|v| {
                let mut best = 0;
                for (f, &c) in v.iter().enumerate() {
                    if c > v[best] {
                        best = f;
                    }
                }
                FaultId(best)
            })
            .collect();

        Ok(Self {
            dendrogram,
            assignments,
            cluster_labels,
            centroids,
            n_symbols,
        })
    }

    /// Index of the nearest centroid, lowest cluster id on ties.
    pub fn nearest_cluster(&self, symbols: &[usize]) -> Result<usize> {
        let f = FeatureMatrix::from_sequence(symbols, self.n_symbols)?;
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = centroid
                .iter()
                .zip(f.as_slice())
                .map(|(&m, &x)| {
                    let d = m - f64::from(x);
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            if d < best.0 {
                best = (d, c);
            }
        }
        Ok(best.1)
    }

    pub fn classify(&self, symbols: &[usize]) -> Result<FaultId> {
        Ok(self.cluster_labels[self.nearest_cluster(symbols)?])
    }
}

/// Clusters the training sequences and labels each test sequence.
pub fn cluster_and_classify(
    training: &[LabeledSequence],
    test: &[Vec<usize>],
    n_clusters: usize,
    n_symbols: usize,
) -> Result<Vec<FaultId>> {
    let clf = ClusterClassifier::fit(training, n_clusters, n_symbols)?;
    test.iter().map(|s| clf.classify(s)).collect()
}

/// Writes `sequence_id,true_fault,predicted_fault`; unknown truth is left empty.
pub fn write_predictions_csv<W: Write>(
    writer: W,
    truth: &[Option<FaultId>],
    predicted: &[FaultId],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sequence_id", "true_fault", "predicted_fault"])?;
    for (i, (t, p)) in truth.iter().zip(predicted).enumerate() {
        w.write_record([
            i.to_string(),
            t.map(|f| f.to_string()).unwrap_or_default(),
            p.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
