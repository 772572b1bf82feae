//! Lloyd clustering engines for codebook construction.
//!
//! Both engines are deterministic under a seeded rng: k-means++ init runs
//! sequentially, assignment passes reduce per-chunk partial sums (fixed chunk
//! size) in chunk order, and empty clusters are repaired by reseeding at the
//! sample farthest from its assigned centroid.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::exec;

/// Chunk size for assignment passes; fixed so reductions are
/// thread-count-independent.
const ASSIGN_CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LloydParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LloydParams {
    fn default() -> Self {
        // Matches the clustering hyperparameters used for the 2D codebooks.
        Self { max_iter: 300, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LloydTrace {
    /// Objective after each iteration, with a flag marking iterations where
    /// an empty-cluster repair fired (the objective may rise across those).
    pub history: Vec<(f64, bool)>,
    pub objective: f64,
}

impl LloydTrace {
    /// The Lloyd objective never rises between repair-free iterations.
    pub fn assert_monotone(&self) {
        for w in self.history.windows(2) {
            debug_assert!(
                w[1].1 || w[1].0 <= w[0].0 * (1.0 + 1e-12),
                "Lloyd objective rose: {} -> {}",
                w[0].0,
                w[1].0
            );
        }
    }
}

// ---------------------------------------------------------------------------
// 1D
// ---------------------------------------------------------------------------

pub(crate) struct Kmeans1d {
    /// Sorted ascending.
    pub centroids: Vec<f64>,
    pub trace: LloydTrace,
}

/// Lloyd's algorithm on pre-sorted scalar samples. Assignment boundaries are
/// centroid midpoints; samples exactly on a boundary go to the lower cluster.
pub(crate) fn kmeans_1d(
    sorted: &[f32],
    k: usize,
    rng: &mut ChaCha12Rng,
    params: LloydParams,
) -> Kmeans1d {
    assert!(k >= 1 && sorted.len() >= k);
    let n = sorted.len();
    // Prefix sums for O(1) range statistics.
    let mut pre_x = vec![0.0f64; n + 1];
    let mut pre_xx = vec![0.0f64; n + 1];
    for (i, &x) in sorted.iter().enumerate() {
        pre_x[i + 1] = pre_x[i] + x as f64;
        pre_xx[i + 1] = pre_xx[i] + (x as f64) * (x as f64);
    }

    let mut centroids = plus_plus_init_1d(sorted, k, rng);
    centroids.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut history = Vec::new();
    let mut prev_obj = f64::INFINITY;
    for _ in 0..params.max_iter {
        // Range ends per cluster: samples <= midpoint(c_i, c_{i+1}).
        let mut ends = Vec::with_capacity(k);
        for i in 0..k - 1 {
            let boundary = 0.5 * (centroids[i] + centroids[i + 1]);
            let end = sorted.partition_point(|&x| (x as f64) <= boundary);
            ends.push(end);
        }
        ends.push(n);

        let mut repaired = false;
        let mut start = 0;
        let mut new_centroids = Vec::with_capacity(k);
        for &end in &ends {
            if end > start {
                new_centroids.push((pre_x[end] - pre_x[start]) / (end - start) as f64);
            } else {
                // Reseed at the sample farthest from its centroid: in 1D the
                // extreme samples are the farthest candidates.
                repaired = true;
                let lo = sorted[0] as f64;
                let hi = sorted[n - 1] as f64;
                let d_lo = centroids.iter().map(|c| (lo - c).abs()).fold(f64::MAX, f64::min);
                let d_hi = centroids.iter().map(|c| (hi - c).abs()).fold(f64::MAX, f64::min);
                new_centroids.push(if d_lo >= d_hi { lo } else { hi });
            }
            start = end;
        }
        new_centroids.sort_by(|a, b| a.partial_cmp(b).unwrap());
        centroids = new_centroids;

        // Objective under the just-computed assignment.
        let mut obj = 0.0;
        let mut start = 0;
        for (i, &end) in ends.iter().enumerate() {
            if end > start {
                let cnt = (end - start) as f64;
                let sx = pre_x[end] - pre_x[start];
                let sxx = pre_xx[end] - pre_xx[start];
                let c = centroids[i.min(k - 1)];
                obj += sxx - 2.0 * c * sx + cnt * c * c;
            }
            start = end;
        }
        history.push((obj, repaired));
        if !repaired && prev_obj.is_finite() && (prev_obj - obj).abs() <= params.tol * prev_obj {
            break;
        }
        prev_obj = obj;
    }

    let objective = history.last().map(|&(o, _)| o).unwrap_or(0.0);
    Kmeans1d { centroids, trace: LloydTrace { history, objective } }
}

fn plus_plus_init_1d(sorted: &[f32], k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let n = sorted.len();
    let first = rng.random_range(0..n);
    let mut centers = vec![sorted[first] as f64];
    let mut min_d2: Vec<f64> =
        sorted.iter().map(|&x| (x as f64 - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = min_d2.iter().sum();
        let idx = if total > 0.0 {
            weighted_pick(&min_d2, rng.random::<f64>() * total)
        } else {
            rng.random_range(0..n)
        };
        let c = sorted[idx] as f64;
        centers.push(c);
        for (d, &x) in min_d2.iter_mut().zip(sorted) {
            *d = d.min((x as f64 - c).powi(2));
        }
    }
    centers
}

fn weighted_pick(weights: &[f64], mut u: f64) -> usize {
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

// ---------------------------------------------------------------------------
// 2D
// ---------------------------------------------------------------------------

pub(crate) struct Kmeans2d {
    pub cx: Vec<f64>,
    pub cy: Vec<f64>,
    pub trace: LloydTrace,
}

/// Nearest centroid: first pass finds the minimum squared distance (a
/// vectorizable reduction), the second finds the lowest index attaining it.
#[inline]
fn nearest(x: f32, y: f32, cx: &[f32], cy: &[f32]) -> (usize, f32) {
    let mut best = f32::INFINITY;
    for (&a, &b) in cx.iter().zip(cy) {
        let dx = x - a;
        let dy = y - b;
        let d = dx * dx + dy * dy;
        best = if d < best { d } else { best };
    }
    for (c, (&a, &b)) in cx.iter().zip(cy).enumerate() {
        let dx = x - a;
        let dy = y - b;
        if dx * dx + dy * dy == best {
            return (c, best);
        }
    }
    unreachable!("a minimum always exists")
}

struct ChunkStats {
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
    count: Vec<u64>,
    objective: f64,
}

pub(crate) fn kmeans_2d(
    xs: &[f32],
    ys: &[f32],
    k: usize,
    rng: &mut ChaCha12Rng,
    params: LloydParams,
) -> Kmeans2d {
    assert_eq!(xs.len(), ys.len());
    assert!(k >= 1 && xs.len() >= k);
    let n = xs.len();

    let (mut cx, mut cy) = plus_plus_init_2d(xs, ys, k, rng);
    let mut history = Vec::new();
    let mut prev_obj = f64::INFINITY;

    for _ in 0..params.max_iter {
        let cx32: Vec<f32> = cx.iter().map(|&c| c as f32).collect();
        let cy32: Vec<f32> = cy.iter().map(|&c| c as f32).collect();

        let partials = exec::map_chunks(n, ASSIGN_CHUNK, |range| {
            let mut stats = ChunkStats {
                sum_x: vec![0.0; k],
                sum_y: vec![0.0; k],
                count: vec![0; k],
                objective: 0.0,
            };
            for i in range {
                let (c, d2) = nearest(xs[i], ys[i], &cx32, &cy32);
                stats.sum_x[c] += xs[i] as f64;
                stats.sum_y[c] += ys[i] as f64;
                stats.count[c] += 1;
                stats.objective += d2 as f64;
            }
            stats
        });

        let mut sum_x = vec![0.0f64; k];
        let mut sum_y = vec![0.0f64; k];
        let mut count = vec![0u64; k];
        let mut obj = 0.0;
        for p in &partials {
            for c in 0..k {
                sum_x[c] += p.sum_x[c];
                sum_y[c] += p.sum_y[c];
                count[c] += p.count[c];
            }
            obj += p.objective;
        }

        let mut repaired = false;
        for c in 0..k {
            if count[c] > 0 {
                cx[c] = sum_x[c] / count[c] as f64;
                cy[c] = sum_y[c] / count[c] as f64;
            } else {
                repaired = true;
                let (fx, fy) = farthest_sample(xs, ys, &cx, &cy);
                cx[c] = fx;
                cy[c] = fy;
            }
        }

        history.push((obj, repaired));
        if !repaired && prev_obj.is_finite() && (prev_obj - obj).abs() <= params.tol * prev_obj {
            break;
        }
        prev_obj = obj;
    }

    let objective = history.last().map(|&(o, _)| o).unwrap_or(0.0);
    Kmeans2d { cx, cy, trace: LloydTrace { history, objective } }
}

/// Sample with the largest distance to its nearest centroid (lowest index on
/// ties).
fn farthest_sample(xs: &[f32], ys: &[f32], cx: &[f64], cy: &[f64]) -> (f64, f64) {
    let cx32: Vec<f32> = cx.iter().map(|&c| c as f32).collect();
    let cy32: Vec<f32> = cy.iter().map(|&c| c as f32).collect();
    let per_chunk = exec::map_chunks(xs.len(), ASSIGN_CHUNK, |range| {
        let mut best = (-1.0f32, usize::MAX);
        for i in range {
            let (_, d2) = nearest(xs[i], ys[i], &cx32, &cy32);
            if d2 > best.0 {
                best = (d2, i);
            }
        }
        best
    });
    let mut best = (-1.0f32, usize::MAX);
    for (d2, i) in per_chunk {
        if d2 > best.0 {
            best = (d2, i);
        }
    }
    (xs[best.1] as f64, ys[best.1] as f64)
}

fn plus_plus_init_2d(
    xs: &[f32],
    ys: &[f32],
    k: usize,
    rng: &mut ChaCha12Rng,
) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let first = rng.random_range(0..n);
    let mut cx = vec![xs[first] as f64];
    let mut cy = vec![ys[first] as f64];
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| (xs[i] as f64 - cx[0]).powi(2) + (ys[i] as f64 - cy[0]).powi(2))
        .collect();
    while cx.len() < k {
        let total: f64 = min_d2.iter().sum();
        let idx = if total > 0.0 {
            weighted_pick(&min_d2, rng.random::<f64>() * total)
        } else {
            rng.random_range(0..n)
        };
        let (px, py) = (xs[idx] as f64, ys[idx] as f64);
        cx.push(px);
        cy.push(py);
        for i in 0..n {
            let d = (xs[i] as f64 - px).powi(2) + (ys[i] as f64 - py).powi(2);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }
    (cx, cy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{chacha, standard_normal};

    #[test]
    fn objective_non_increasing_1d() {
        let mut samples = standard_normal(3, 20_000);
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut rng = chacha(1);
        let res = kmeans_1d(&samples, 8, &mut rng, LloydParams::default());
        let objs: Vec<f64> = res.trace.history.iter().map(|&(o, _)| o).collect();
        for w in objs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "objective rose: {} -> {}", w[0], w[1]);
        }
        assert!(res.centroids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn objective_non_increasing_2d() {
        let raw = standard_normal(4, 40_000);
        let (xs, ys): (Vec<f32>, Vec<f32>) =
            raw.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
        let mut rng = chacha(2);
        let res = kmeans_2d(&xs, &ys, 16, &mut rng, LloydParams::default());
        for w in res.trace.history.windows(2) {
            if !w[1].1 {
                assert!(w[1].0 <= w[0].0 * (1.0 + 1e-12), "objective rose: {:?}", w);
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let raw = standard_normal(9, 30_000);
        let (xs, ys): (Vec<f32>, Vec<f32>) =
            raw.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
        let a = kmeans_2d(&xs, &ys, 8, &mut chacha(5), LloydParams::default());
        let b = kmeans_2d(&xs, &ys, 8, &mut chacha(5), LloydParams::default());
        assert_eq!(a.cx, b.cx);
        assert_eq!(a.cy, b.cy);
    }

    #[test]
    fn empty_cluster_repair_reseeds() {
        // Three tight blobs, many more clusters than blobs: repairs must fire
        // without failing outward.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for b in 0..3 {
            for i in 0..50 {
                xs.push(b as f32 * 10.0 + (i as f32) * 1e-4);
                ys.push(0.0);
            }
        }
        let res = kmeans_2d(&xs, &ys, 8, &mut chacha(0), LloydParams { max_iter: 50, tol: 1e-9 });
        assert!(res.cx.iter().all(|c| c.is_finite()));
    }
}
