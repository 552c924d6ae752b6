use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansOptions {
    /// Independent seedings; the lowest objective wins.
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iter: 300,
        }
    }
}

/// A partition of the clustered rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster index per row.
    pub labels: Vec<usize>,
    /// Row indices per cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
    /// Mean of each cluster's rows.
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    /// Objective after each Lloyd assignment step of the winning restart.
    pub history: Vec<f64>,
}

pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Recomputes the within-cluster sum of squares for a labelling.
pub fn objective(points: ArrayView2<'_, f64>, labels: &[usize], centroids: ArrayView2<'_, f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points.row(i), centroids.row(c)))
        .sum()
}

fn nearest(p: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(p, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: ArrayView2<'_, f64>, m: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((m, points.ncols()));
    let mut chosen = vec![rng.random_range(0..n)];
    centroids.row_mut(0).assign(&points.row(chosen[0]));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // every point coincides with a chosen centre; take any unused row
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn means(points: ArrayView2<'_, f64>, labels: &[usize], m: usize) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((m, points.ncols()));
    let mut counts = vec![0usize; m];
    for (i, &c) in labels.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row += &points.row(i);
        counts[c] += 1;
    }
    for (c, &k) in counts.iter().enumerate() {
        if k > 0 {
            sums.row_mut(c).mapv_inplace(|v| v / k as f64);
        }
    }
    (sums, counts)
}

/// Moves the row farthest from its centroid into each empty cluster, taking
/// only from clusters that keep at least one member.
fn repair_empty(points: ArrayView2<'_, f64>, labels: &mut [usize], centroids: &mut Array2<f64>, counts: &mut [usize]) {
    while let Some(empty) = counts.iter().position(|&k| k == 0) {
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(labels[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else { break };
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] += 1;
        let (mu, _) = means(points, labels, counts.len());
        *centroids = mu;
    }
}

fn lloyd(points: ArrayView2<'_, f64>, m: usize, max_iter: usize, rng: &mut impl Rng) -> ClusterAssignment {
    let n = points.nrows();
    let mut centroids = plus_plus(points, m, rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(points.row(i), &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        history.push(objective(points, &labels, centroids.view()));
        if !changed {
            break;
        }
        let (mu, mut counts) = means(points, &labels, m);
        centroids = mu;
        repair_empty(points, &mut labels, &mut centroids, &mut counts);
    }
    let (centroids, _) = means(points, &labels, m);
    let mut clusters = vec![Vec::new(); m];
    for (i, &c) in labels.iter().enumerate() {
        clusters[c].push(i);
    }
    let objective = objective(points, &labels, centroids.view());
    ClusterAssignment {
        labels,
        clusters,
        centroids,
        objective,
        history,
    }
}

/// K-means with k-means++ seeding and farthest-point repair of empty
/// clusters; the best of `options.restarts` runs is returned.
pub fn kmeans(points: ArrayView2<'_, f64>, m: usize, seed: u64, options: &KMeansOptions) -> Result<ClusterAssignment> {
    if m == 0 || points.nrows() < m {
        return Err(Error::Config(format!("cannot form {m} clusters from {} rows", points.nrows())));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..options.restarts.max(1) {
        let run = lloyd(points, m, options.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// [`kmeans`] with default options.
pub fn cluster_embeddings(points: ArrayView2<'_, f64>, m: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans(points, m, seed, &KMeansOptions::default())
}

/// The `⌈ρ·|C|⌉` members of `cluster` nearest to its mean in `z`, ordered by
/// distance with ties broken by the smaller node index.
pub fn near_centroid(cluster: &[usize], z: ArrayView2<'_, f64>, rho: f64) -> Vec<usize> {
    if cluster.is_empty() {
        return Vec::new();
    }
    let rows = z.select(Axis(0), cluster);
    let mu: Array1<f64> = rows.mean_axis(Axis(0)).expect("non-empty cluster");
    let mut by_dist: Vec<(f64, usize)> = cluster.iter().map(|&i| (sq_dist(z.row(i), mu.view()), i)).collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = ((rho * cluster.len() as f64) - 1e-9).ceil().clamp(1.0, cluster.len() as f64) as usize;
    by_dist.into_iter().take(keep).map(|(_, i)| i).collect()
}
