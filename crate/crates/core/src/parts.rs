//! Part co-segmentation: per-image K-Means and Hungarian matching of the
//! resulting clusters across a pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub channels: usize,
    /// Cluster id per token, row-major over the grid.
    pub labels: Vec<usize>,
    /// `k x channels`, row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step, initial assignment first.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.channels..(i + 1) * self.channels]
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

/// Nearest centroid per token (ties to the lower cluster id) and the distance.
fn assign(map: &FeatureMap, centroids: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let c = map.channels();
    map.tokens()
        .map(|t| {
            (0..k)
                .map(|j| (j, sq_dist(t, &centroids[j * c..(j + 1) * c])))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        })
        .unzip()
}

fn plus_plus_init(map: &FeatureMap, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = map.num_tokens();
    let c = map.channels();
    let mut centroids = Vec::with_capacity(k * c);
    let push = |centroids: &mut Vec<f64>, i: usize| {
        centroids.extend(map.token(i).iter().map(|&v| v as f64));
    };
    push(&mut centroids, rng.random_range(0..n));
    let mut d2: Vec<f64> = map.tokens().map(|t| sq_dist(t, &centroids[..c])).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            chosen.expect("positive total has a positive weight")
        } else {
            rng.random_range(0..n)
        };
        push(&mut centroids, pick);
        let newest = &centroids[j * c..(j + 1) * c];
        for (t, d) in map.tokens().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(t, newest));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when labels no longer change or after `max_iters` update steps. A
/// cluster that empties is re-seeded with the token farthest from its own
/// centroid (lowest index on ties).
pub fn kmeans(map: &FeatureMap, k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    let n = map.num_tokens();
    let c = map.channels();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside [1, {n}]")));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(map, k, &mut rng);
    let (mut labels, mut dists) = assign(map, &centroids, k);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![0.0f64; k * c];
        let mut counts = vec![0usize; k];
        for (t, &l) in map.tokens().zip(&labels) {
            counts[l] += 1;
            for (s, &v) in sums[l * c..(l + 1) * c].iter_mut().zip(t) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                for (dst, s) in centroids[j * c..(j + 1) * c].iter_mut().zip(&sums[j * c..(j + 1) * c]) {
                    *dst = s / counts[j] as f64;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n leaves an untaken token");
                taken[far] = true;
                dists[far] = 0.0;
                for (dst, &v) in centroids[j * c..(j + 1) * c].iter_mut().zip(map.token(far)) {
                    *dst = v as f64;
                }
            }
        }
        let (new_labels, new_dists) = assign(map, &centroids, k);
        let inertia: f64 = new_dists.iter().sum();
        let prev = *history.last().unwrap();
        debug_assert!(
            inertia <= prev + 1e-9 * prev.max(1.0),
            "inertia rose from {prev} to {inertia}"
        );
        history.push(inertia);
        dists = new_dists;
        let converged = new_labels == labels;
        labels = new_labels;
        if converged {
            break;
        }
    }
    Ok(Clustering {
        k,
        channels: c,
        labels,
        centroids,
        inertia: *history.last().unwrap(),
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatch {
    /// `assignment[i]` is the target cluster matched to source cluster `i`.
    pub assignment: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost perfect assignment on a square matrix (Kuhn-Munkres with
/// row potentials, O(k^3)).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<ClusterMatch> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::invalid("empty cost matrix"));
    }
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::shape(format!("cost matrix row of length {} in a {n}x{n} matrix", row.len())));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cost matrix has non-finite entries"));
    }

    // 1-based arrays; column 0 is a virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(ClusterMatch {
        assignment,
        cost: total,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Hungarian matching of centroids under `1 - cosine` cost.
pub fn match_clusters(src: &Clustering, tgt: &Clustering) -> Result<ClusterMatch> {
    if src.k != tgt.k {
        return Err(Error::shape(format!("cluster counts differ: {} vs {}", src.k, tgt.k)));
    }
    if src.channels != tgt.channels {
        return Err(Error::shape(format!(
            "centroid widths differ: {} vs {}",
            src.channels, tgt.channels
        )));
    }
    let cost: Vec<Vec<f64>> = (0..src.k)
        .map(|i| (0..tgt.k).map(|j| 1.0 - cosine(src.centroid(i), tgt.centroid(j))).collect())
        .collect();
    hungarian(&cost)
}
