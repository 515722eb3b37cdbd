//! Deterministic k-means over dense vectors.
//!
//! Identical vectors are merged into one weighted point before clustering,
//! so exact duplicates always land in the same cluster. Each restart seeds
//! with k-means++, runs Lloyd iterations to a fixpoint, then polishes with
//! single-point (Hartigan) moves; the restart with the lowest SSE wins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KMeansError {
    #[error("no vectors to cluster")]
    Empty,
    #[error("k must be positive")]
    ZeroK,
    #[error("k = {k} exceeds the number of vectors ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("vector {0} has a non-finite component")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { seed: 0x5eed, max_iterations: 100, restarts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Cluster id per input item.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Item index of each cluster's representative.
    pub representatives: Vec<usize>,
    pub sse: f64,
    /// SSE after seeding and after every iteration of the winning restart.
    pub sse_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == cluster).collect()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances from each item to the mean of its group.
pub fn partition_sse(vectors: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let centroids = means(vectors, assignments, k);
    vectors
        .iter()
        .zip(assignments)
        .map(|(v, &c)| squared_distance(v, &centroids[c]))
        .sum()
}

fn means(vectors: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &c) in vectors.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    sums
}

/// A distinct vector and the items that share it.
struct Point {
    coords: Vec<f64>,
    items: Vec<usize>,
}

impl Point {
    fn weight(&self) -> f64 {
        self.items.len() as f64
    }
}

fn validate(vectors: &[Vec<f64>], k: usize) -> Result<(), KMeansError> {
    if vectors.is_empty() {
        return Err(KMeansError::Empty);
    }
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if k > vectors.len() {
        return Err(KMeansError::KTooLarge { k, n: vectors.len() });
    }
    let dim = vectors[0].len();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(KMeansError::DimensionMismatch { index, expected: dim, found: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(KMeansError::NonFinite(index));
        }
    }
    Ok(())
}

fn collapse(vectors: &[Vec<f64>]) -> Vec<Point> {
    let mut points: Vec<Point> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        match points.iter_mut().find(|p| p.coords == *v) {
            Some(p) => p.items.push(i),
            None => points.push(Point { coords: v.clone(), items: vec![i] }),
        }
    }
    points
}

/// Clusters `vectors` into `k` groups.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, config: &KMeansConfig) -> Result<ClusterAssignment, KMeansError> {
    validate(vectors, k)?;
    let n = vectors.len();
    let points = collapse(vectors);
    let m = points.len();

    let point_cluster: Vec<usize>;
    let mut trace = Vec::new();
    if k >= m {
        // Each distinct vector gets its own cluster; leftover clusters take
        // duplicates (SSE is zero either way).
        point_cluster = (0..m).collect();
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        for _ in 0..config.restarts.max(1) {
            let (labels, run_trace) = single_run(&points, k, config.max_iterations, &mut rng);
            let sse = *run_trace.last().expect("trace is never empty");
            // Strict improvement only, so earlier restarts win ties.
            if best.as_ref().is_none_or(|(b, _, _)| sse < *b - 1e-12) {
                best = Some((sse, labels, run_trace));
            }
        }
        let (_, labels, run_trace) = best.expect("at least one restart");
        point_cluster = labels;
        trace = run_trace;
    }

    let mut assignments = vec![0usize; n];
    for (p, &c) in points.iter().zip(&point_cluster) {
        for &i in &p.items {
            assignments[i] = c;
        }
    }
    if k > m {
        // Peel duplicates into the spare clusters.
        let mut next = m;
        'outer: for p in &points {
            for &i in p.items.iter().skip(1) {
                if next == k {
                    break 'outer;
                }
                assignments[i] = next;
                next += 1;
            }
        }
    }

    // Relabel clusters by their lowest member index so output is canonical.
    let mut order: Vec<usize> = Vec::new();
    for &c in &assignments {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    let mut relabel = vec![0usize; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    for c in assignments.iter_mut() {
        *c = relabel[*c];
    }

    let centroids = means(vectors, &assignments, k);
    let mut representatives = vec![usize::MAX; k];
    let mut best_dist = vec![f64::INFINITY; k];
    for (i, v) in vectors.iter().enumerate() {
        let c = assignments[i];
        let d = squared_distance(v, &centroids[c]);
        if d < best_dist[c] {
            best_dist[c] = d;
            representatives[c] = i;
        }
    }
    let sse = vectors
        .iter()
        .zip(&assignments)
        .map(|(v, &c)| squared_distance(v, &centroids[c]))
        .sum();
    if trace.is_empty() {
        trace.push(sse);
    }
    Ok(ClusterAssignment { k, assignments, centroids, representatives, sse, sse_trace: trace })
}

fn weighted_sse(points: &[Point], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &c)| p.weight() * squared_distance(&p.coords, &centroids[c]))
        .sum()
}

fn weighted_means(points: &[Point], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].coords.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut weights = vec![0.0; k];
    for (p, &c) in points.iter().zip(labels) {
        weights[c] += p.weight();
        for (s, x) in sums[c].iter_mut().zip(&p.coords) {
            *s += p.weight() * x;
        }
    }
    for (s, w) in sums.iter_mut().zip(&weights) {
        if *w > 0.0 {
            s.iter_mut().for_each(|x| *x /= w);
        }
    }
    sums
}

fn nearest(coords: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(coords, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let total: f64 = points.iter().map(Point::weight).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut first = points.len() - 1;
    for (i, p) in points.iter().enumerate() {
        if pick < p.weight() {
            first = i;
            break;
        }
        pick -= p.weight();
    }
    let mut chosen = vec![first];
    let mut centroids = vec![points[first].coords.clone()];
    while centroids.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(i, p)| if chosen.contains(&i) { 0.0 } else { p.weight() * nearest(&p.coords, &centroids).1 })
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let mut pick = rng.random::<f64>() * total;
            let mut idx = None;
            for (i, d) in dists.iter().enumerate() {
                if *d > 0.0 && pick < *d {
                    idx = Some(i);
                    break;
                }
                pick -= d;
            }
            idx.unwrap_or_else(|| dists.iter().rposition(|d| *d > 0.0).expect("positive total"))
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k <= distinct points")
        };
        chosen.push(next);
        centroids.push(points[next].coords.clone());
    }
    centroids
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one point.
fn fill_empty(points: &[Point], labels: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&c| sizes[c] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = squared_distance(&points[a].coords, &centroids[labels[a]]);
                let db = squared_distance(&points[b].coords, &centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= distinct points leaves a donor");
        labels[donor] = empty;
    }
}

fn single_run(points: &[Point], k: usize, max_iterations: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let seeds = plus_plus_seeds(points, k, rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(&p.coords, &seeds).0).collect();
    fill_empty(points, &mut labels, &seeds, k);
    let mut centroids = weighted_means(points, &labels, k);
    let mut trace = vec![weighted_sse(points, &labels, &centroids)];

    for _ in 0..max_iterations {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(&p.coords, &centroids).0).collect();
        // Keep the current label on exact ties so the objective cannot rise.
        for (i, p) in points.iter().enumerate() {
            let current = squared_distance(&p.coords, &centroids[labels[i]]);
            if current <= squared_distance(&p.coords, &centroids[next[i]]) {
                next[i] = labels[i];
            }
        }
        fill_empty(points, &mut next, &centroids, k);
        let changed = next != labels;
        let next_centroids = weighted_means(points, &next, k);
        let sse = weighted_sse(points, &next, &next_centroids);
        if sse > *trace.last().expect("non-empty") {
            break;
        }
        labels = next;
        centroids = next_centroids;
        trace.push(sse);
        if !changed {
            break;
        }
    }

    hartigan(points, &mut labels, &mut centroids, k, &mut trace);
    (labels, trace)
}

/// Moves single points between clusters while that strictly lowers SSE.
fn hartigan(points: &[Point], labels: &mut [usize], centroids: &mut Vec<Vec<f64>>, k: usize, trace: &mut Vec<f64>) {
    let mut weights = vec![0.0; k];
    for (p, &c) in points.iter().zip(labels.iter()) {
        weights[c] += p.weight();
    }
    let mut improved = true;
    let mut passes = 0;
    while improved && passes < 100 {
        improved = false;
        passes += 1;
        for (i, p) in points.iter().enumerate() {
            let from = labels[i];
            let w = p.weight();
            if weights[from] <= w {
                continue;
            }
            let removal = w * weights[from] / (weights[from] - w) * squared_distance(&p.coords, &centroids[from]);
            let mut best: Option<(usize, f64)> = None;
            for to in (0..k).filter(|&c| c != from) {
                let addition = w * weights[to] / (weights[to] + w) * squared_distance(&p.coords, &centroids[to]);
                let delta = addition - removal;
                if delta < -1e-12 && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, _)) = best {
                labels[i] = to;
                weights[from] -= w;
                weights[to] += w;
                *centroids = weighted_means(points, labels, k);
                improved = true;
            }
        }
        if improved {
            trace.push(weighted_sse(points, labels, centroids));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_keeps_everything() {
        let v = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.6, 0.8]];
        let a = kmeans(&v, 3, &KMeansConfig::default()).unwrap();
        let mut reps = a.representatives.clone();
        reps.sort();
        assert_eq!(reps, vec![0, 1, 2]);
        assert_eq!(a.sse, 0.0);
    }

    #[test]
    fn two_groups_recovered() {
        let v = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![5.0, 5.1],
        ];
        let a = kmeans(&v, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(a.assignments, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(a.representatives.len(), 2);
    }

    #[test]
    fn duplicates_share_a_cluster() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = kmeans(&v, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(a.assignments[0], a.assignments[1]);
        assert_ne!(a.assignments[0], a.assignments[2]);
        assert!(a.representatives.contains(&0));
        assert!(!a.representatives.contains(&1));
    }

    #[test]
    fn more_clusters_than_distinct_points() {
        let v = vec![vec![1.0], vec![1.0], vec![2.0]];
        let a = kmeans(&v, 3, &KMeansConfig::default()).unwrap();
        let mut reps = a.representatives.clone();
        reps.sort();
        assert_eq!(reps, vec![0, 1, 2]);
    }

    #[test]
    fn errors() {
        let cfg = KMeansConfig::default();
        assert_eq!(kmeans(&[], 1, &cfg).unwrap_err(), KMeansError::Empty);
        assert_eq!(kmeans(&[vec![1.0]], 2, &cfg).unwrap_err(), KMeansError::KTooLarge { k: 2, n: 1 });
        assert!(matches!(
            kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, &cfg).unwrap_err(),
            KMeansError::DimensionMismatch { index: 1, .. }
        ));
    }

    #[test]
    fn sse_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let a = kmeans(&v, 4, &KMeansConfig::default()).unwrap();
            for w in a.sse_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", a.sse_trace);
            }
            assert!((a.sse - partition_sse(&v, &a.assignments, 4)).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let cfg = KMeansConfig::default();
        assert_eq!(kmeans(&v, 3, &cfg).unwrap(), kmeans(&v, 3, &cfg).unwrap());
    }
}
