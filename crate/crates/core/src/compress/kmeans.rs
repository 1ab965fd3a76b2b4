//! Scalar k-means (Lloyd) for codebook compression.

use super::bitpack::PackedCodes;
use super::{CompressedEmbedding, Payload, Rounding};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, pairwise_sum_map, DenseMatrix};
use crate::rng::stream_rng;
use rand::Rng;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_RESTARTS: usize = 10;
/// Total `N·K` seeding work allowed across restarts.
pub const RESTART_BUDGET: usize = 50_000_000;
const MAX_DESCENT_ROUNDS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Ascending.
    pub centroids: Vec<f64>,
    /// Cluster of each input value, in input order.
    pub assignments: Vec<u32>,
    /// Sum of squared distances to the assigned centroid.
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

// Linear interpolation at position q·(N−1) of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn midpoints(centroids: &[f64]) -> Vec<f64> {
    centroids
        .windows(2)
        .map(|w| w[0] + (w[1] - w[0]) / 2.0)
        .collect()
}

// Cluster j owns sorted[starts[j]..starts[j + 1]]; values equal to a midpoint go up.
fn partition(sorted: &[f64], centroids: &[f64]) -> Vec<usize> {
    let mut starts = Vec::with_capacity(centroids.len() + 1);
    starts.push(0);
    for m in midpoints(centroids) {
        let prev = *starts.last().unwrap();
        starts.push(prev + sorted[prev..].partition_point(|&v| v < m));
    }
    starts.push(sorted.len());
    starts
}

fn loss(sorted: &[f64], centroids: &[f64], starts: &[usize]) -> f64 {
    let per: Vec<f64> = centroids
        .iter()
        .enumerate()
        .map(|(j, &c)| pairwise_sum_map(&sorted[starts[j]..starts[j + 1]], &|v| (v - c) * (v - c)))
        .collect();
    pairwise_sum(&per)
}

// Best single cut of seg into two contiguous runs; returns the cut offset and its cost.
fn best_split(seg: &[f64]) -> (usize, f64) {
    let n = seg.len();
    if n == 0 {
        return (0, 0.0);
    }
    let shift = pairwise_sum(seg) / n as f64;
    let total: f64 = pairwise_sum_map(seg, &|v| v - shift);
    let total_sq: f64 = pairwise_sum_map(seg, &|v| (v - shift) * (v - shift));
    let (mut s1, mut q1) = (0.0, 0.0);
    let mut best = (0, total_sq - total * total / n as f64);
    for c in 1..=n {
        let v = seg[c - 1] - shift;
        s1 += v;
        q1 += v * v;
        let left = q1 - s1 * s1 / c as f64;
        let right = if c == n {
            0.0
        } else {
            let (s2, q2) = (total - s1, total_sq - q1);
            q2 - s2 * s2 / (n - c) as f64
        };
        let cost = left + right;
        if cost < best.1 {
            best = (c, cost);
        }
    }
    best
}

// Coordinate descent on the cut points: each boundary is moved to the exact
// optimum for its two neighbouring clusters, until nothing moves.
fn refine_cuts(sorted: &[f64], starts: &mut [usize]) -> bool {
    let k = starts.len() - 1;
    let mut moved_any = false;
    for _ in 0..100 {
        let mut moved = false;
        for j in 0..k - 1 {
            let (lo, hi) = (starts[j], starts[j + 2]);
            let seg = &sorted[lo..hi];
            let cur = starts[j + 1] - lo;
            let (cut, cost) = best_split(seg);
            let cur_cost = best_split_cost(seg, cur);
            if cut != cur && cost < cur_cost * (1.0 - 1e-12) {
                starts[j + 1] = lo + cut;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    moved_any
}

fn best_split_cost(seg: &[f64], cut: usize) -> f64 {
    let cost = |part: &[f64]| {
        if part.is_empty() {
            return 0.0;
        }
        let m = pairwise_sum(part) / part.len() as f64;
        pairwise_sum_map(part, &|v| (v - m) * (v - m))
    };
    cost(&seg[..cut]) + cost(&seg[cut..])
}

struct Run {
    centroids: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
}

// Lloyd, then cut refinement and another Lloyd pass while the refinement helps.
fn descend(sorted: &[f64], centroids: Vec<f64>, max_iter: usize, rel_tol: f64) -> Run {
    let mut run = lloyd(sorted, centroids, max_iter, rel_tol);
    for _ in 0..MAX_DESCENT_ROUNDS {
        let mut starts = partition(sorted, &run.centroids);
        if run.centroids.len() < 2 || !refine_cuts(sorted, &mut starts) {
            break;
        }
        let mut centroids = run.centroids.clone();
        for (j, c) in centroids.iter_mut().enumerate() {
            let cluster = &sorted[starts[j]..starts[j + 1]];
            if !cluster.is_empty() {
                *c = pairwise_sum(cluster) / cluster.len() as f64;
            }
        }
        let next = lloyd(sorted, centroids, max_iter, rel_tol);
        if !(next.loss < run.loss) {
            break;
        }
        run = Run {
            iterations: run.iterations + next.iterations,
            ..next
        };
    }
    run
}

fn lloyd(sorted: &[f64], mut centroids: Vec<f64>, max_iter: usize, rel_tol: f64) -> Run {
    let k = centroids.len();
    let mut prev_loss = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let starts = partition(sorted, &centroids);
        for j in 0..k {
            let cluster = &sorted[starts[j]..starts[j + 1]];
            if !cluster.is_empty() {
                centroids[j] = pairwise_sum(cluster) / cluster.len() as f64;
            }
        }
        iterations += 1;
        let cur = loss(sorted, &centroids, &starts);
        if cur == 0.0 || (prev_loss.is_finite() && (prev_loss - cur) < rel_tol * prev_loss) {
            converged = true;
            break;
        }
        prev_loss = cur;
    }
    let starts = partition(sorted, &centroids);
    Run {
        loss: loss(sorted, &centroids, &starts),
        centroids,
        iterations,
        converged,
    }
}

/// Settings for [`kmeans_1d_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Extra runs from D²-weighted seeds, on top of the quantile start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

fn validate(values: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "k-means needs at least one cluster".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "k-means needs at least one value".into(),
        ));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite value at position {pos}"
        )));
    }
    Ok(())
}

fn quantile_init(sorted: &[f64], k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| quantile(sorted, (j as f64 + 0.5) / k as f64))
        .collect()
}

// D²-weighted seeding; the chosen centroids are returned ascending.
fn plus_plus_init(sorted: &[f64], k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = sorted.len();
    let mut chosen = vec![sorted[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = sorted
        .iter()
        .map(|v| (v - chosen[0]) * (v - chosen[0]))
        .collect();
    while chosen.len() < k {
        let total = pairwise_sum(&d2);
        if total == 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if acc > target {
                pick = i;
                break;
            }
        }
        let c = sorted[pick];
        chosen.push(c);
        for (w, v) in d2.iter_mut().zip(sorted) {
            *w = w.min((v - c) * (v - c));
        }
    }
    while chosen.len() < k {
        chosen.push(chosen[chosen.len() - 1]);
    }
    chosen.sort_by(f64::total_cmp);
    chosen
}

fn finish(values: &[f64], run: Run) -> KMeansResult {
    let mids = midpoints(&run.centroids);
    let assignments = values
        .iter()
        .map(|&v| mids.partition_point(|&m| m <= v) as u32)
        .collect();
    KMeansResult {
        centroids: run.centroids,
        assignments,
        loss: run.loss,
        iterations: run.iterations,
        converged: run.converged,
    }
}

/// Scalar k-means with the default restart schedule and seed 0.
///
/// Each Lloyd run stops when the relative loss decrease drops below `rel_tol`
/// or after `max_iter` updates. A cluster that empties keeps its previous
/// centroid.
pub fn kmeans_1d(values: &[f64], k: usize, max_iter: usize, rel_tol: f64) -> Result<KMeansResult> {
    kmeans_1d_with(
        values,
        k,
        &KMeansConfig {
            max_iter,
            rel_tol,
            ..KMeansConfig::default()
        },
    )
}

/// Quantile-started Lloyd plus seeded k-means++ restarts; the lowest loss
/// wins, earlier runs winning ties. Every run is followed by exact
/// re-optimisation of each cut between neighbouring clusters. The number of
/// restarts is capped so their total `N·K` seeding work stays within
/// [`RESTART_BUDGET`].
pub fn kmeans_1d_with(values: &[f64], k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    validate(values, k)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut best = descend(
        &sorted,
        quantile_init(&sorted, k),
        cfg.max_iter,
        cfg.rel_tol,
    );
    if k > 1 && sorted.len() > k {
        let affordable = RESTART_BUDGET / (sorted.len() * k).max(1);
        for r in 0..cfg.restarts.min(affordable) {
            if best.loss == 0.0 {
                break;
            }
            let mut rng = stream_rng(cfg.seed, r as u64);
            let init = plus_plus_init(&sorted, k, &mut rng);
            let run = descend(&sorted, init, cfg.max_iter, cfg.rel_tol);
            if run.loss < best.loss {
                best = run;
            }
        }
    }
    Ok(finish(values, best))
}

/// Codebook compression with `2^bits` scalar centroids over all entries.
pub fn compress_kmeans(x: &DenseMatrix, bits: u8, seed: u64) -> Result<CompressedEmbedding> {
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "k-means bit width must be in [1, 16], got {bits}"
        )));
    }
    let cfg = KMeansConfig {
        seed,
        ..KMeansConfig::default()
    };
    let km = kmeans_1d_with(x.data(), 1usize << bits, &cfg)?;
    let codes = PackedCodes::pack(&km.assignments, x.rows(), x.cols(), bits)?;
    CompressedEmbedding::new(
        x.rows(),
        x.cols(),
        Rounding::Deterministic,
        seed,
        Payload::KMeans {
            codebook: km.centroids,
            codes,
        },
    )
}
