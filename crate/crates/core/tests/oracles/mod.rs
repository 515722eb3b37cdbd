//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the library's scoring code.

#![allow(dead_code)]

use rand::Rng;

/// Dimension scores written out term by term, in PDI, IDV, MAS, UAI, LTO, IVR order.
/// `m[q - 1]` is the mean answer to question `q`.
pub fn vsm_by_hand(m: &[f64; 24], c: [f64; 6]) -> [f64; 6] {
    let q = |i: usize| m[i - 1];
    [
        35.0 * (q(7) - q(2)) + 25.0 * (q(20) - q(23)) + c[0],
        35.0 * (q(4) - q(1)) + 35.0 * (q(9) - q(6)) + c[1],
        35.0 * (q(5) - q(3)) + 25.0 * (q(8) - q(10)) + c[2],
        40.0 * (q(18) - q(15)) + 25.0 * (q(21) - q(24)) + c[3],
        40.0 * (q(13) - q(14)) + 25.0 * (q(19) - q(22)) + c[4],
        35.0 * (q(12) - q(11)) + 40.0 * (q(17) - q(16)) + c[5],
    ]
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Column means computed one cell at a time.
pub fn column_means(rows: &[[u8; 24]]) -> [f64; 24] {
    let mut out = [0.0; 24];
    for (q, slot) in out.iter_mut().enumerate() {
        let mut total = 0u64;
        for r in rows {
            total += r[q] as u64;
        }
        *slot = total as f64 / rows.len() as f64;
    }
    out
}

/// Every optimal partition found by exhaustive search.
pub struct KMeansOptimum {
    pub sse: f64,
    /// Sorted representative indices of each optimal partition (ties kept).
    pub representative_sets: Vec<Vec<usize>>,
    /// Assignment vectors of the optimal partitions.
    pub partitions: Vec<Vec<usize>>,
}

fn partition_stats(points: &[Vec<f64>], labels: &[usize], k: usize) -> (f64, Vec<usize>) {
    let dim = points[0].len();
    let mut sse = 0.0;
    let mut reps = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == c).collect();
        let mut centroid = vec![0.0; dim];
        for &i in &members {
            for d in 0..dim {
                centroid[d] += points[i][d];
            }
        }
        for v in centroid.iter_mut() {
            *v /= members.len() as f64;
        }
        let dist = |i: usize| -> f64 { (0..dim).map(|d| (points[i][d] - centroid[d]).powi(2)).sum() };
        let mut best = members[0];
        for &i in &members {
            sse += dist(i);
            if dist(i) < dist(best) {
                best = i;
            }
        }
        reps.push(best);
    }
    reps.sort_unstable();
    (sse, reps)
}

/// Enumerates all partitions into exactly `k` non-empty clusters
/// (restricted growth strings, so each partition is seen once).
pub fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> KMeansOptimum {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut found: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::new();
    let mut labels = vec![0usize; n];
    fn walk(
        i: usize,
        used: usize,
        k: usize,
        labels: &mut Vec<usize>,
        points: &[Vec<f64>],
        best: &mut f64,
        found: &mut Vec<(f64, Vec<usize>, Vec<usize>)>,
    ) {
        let n = labels.len();
        if n - i < k - used {
            return;
        }
        if i == n {
            let (sse, reps) = partition_stats(points, labels, k);
            if sse < *best {
                *best = sse;
            }
            found.push((sse, reps, labels.clone()));
            return;
        }
        for c in 0..=used.min(k - 1) {
            labels[i] = c;
            walk(i + 1, used.max(c + 1), k, labels, points, best, found);
        }
    }
    walk(0, 0, k, &mut labels, points, &mut best, &mut found);
    let tol = 1e-9 * (1.0 + best);
    let optimal: Vec<_> = found.into_iter().filter(|(s, _, _)| *s <= best + tol).collect();
    KMeansOptimum {
        sse: best,
        representative_sets: optimal.iter().map(|(_, r, _)| r.clone()).collect(),
        partitions: optimal.into_iter().map(|(_, _, l)| l).collect(),
    }
}

/// Macro F1 from a dense confusion matrix. `gold[i]` indexes `classes`;
/// `pred[i]` is `None` for an unusable answer. Classes that never occur in
/// gold or predictions are left out of the mean. Summation runs in the
/// lexicographic order of the class names.
pub fn macro_f1_by_matrix(classes: &[&str], gold: &[usize], pred: &[Option<usize>]) -> f64 {
    let c = classes.len();
    // Extra column collects unusable answers.
    let mut matrix = vec![vec![0usize; c + 1]; c];
    for (&g, p) in gold.iter().zip(pred) {
        matrix[g][p.unwrap_or(c)] += 1;
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by_key(|&i| classes[i]);
    let mut scores = Vec::new();
    for i in order {
        let tp = matrix[i][i];
        let row: usize = matrix[i].iter().sum();
        let col: usize = (0..c).map(|r| matrix[r][i]).sum();
        let (fp, fn_) = (col - tp, row - tp);
        if tp + fp + fn_ > 0 {
            scores.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// A point drawn uniformly from the unit sphere in `dim` dimensions.
pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Facility-location gain written directly: one minus the best non-negative cosine.
pub fn facility_gain(set: &[Vec<f64>], x: &[f64]) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    1.0 - set.iter().map(|s| cos(s, x).max(0.0)).fold(0.0, f64::max)
}
