use rand::Rng;

/// Lloyd iteration limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iterations: usize,
    /// Stop once `(prev_sse - sse) / prev_sse` drops below this.
    pub min_relative_improvement: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            min_relative_improvement: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k` centroids of `dim` values, stored contiguously.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub sse: f64,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties resolve to the lower index.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (e, c) in centroids.chunks_exact(dim).enumerate() {
        let dist = sq_dist(point, c);
        if dist < best.1 {
            best = (e, dist);
        }
    }
    best
}

/// k-means++ seeding: the first centre is uniform, each next one is drawn with
/// probability proportional to the squared distance to the closest centre.
fn seed_plus_plus<R: Rng>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);

    let mut closest: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                    chosen = i;
                }
            }
            chosen
        } else {
            // Every point coincides with a centre already.
            rng.random_range(0..n)
        };
        let centre = &points[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(centre);
        for (w, p) in closest.iter_mut().zip(points.chunks_exact(dim)) {
            *w = w.min(sq_dist(p, centre));
        }
    }
    centroids
}

/// Euclidean k-means over `points` (contiguous `dim`-vectors).
///
/// Empty clusters are re-seeded with the point farthest from its current
/// centre.
pub fn kmeans<R: Rng>(
    points: &[f64],
    dim: usize,
    k: usize,
    params: KMeansParams,
    rng: &mut R,
) -> KMeansResult {
    assert!(dim > 0 && k > 0, "k-means needs dim > 0 and k > 0");
    assert!(
        !points.is_empty() && points.len().is_multiple_of(dim),
        "k-means needs a non-empty whole number of points"
    );
    let n = points.len() / dim;
    let mut centroids = seed_plus_plus(points, dim, k, rng);
    let mut assignments = vec![0usize; n];
    let mut distances = vec![0f64; n];
    let mut prev_sse = f64::INFINITY;
    let mut sse = 0.0;
    let mut iterations = 0;
    let mut settled = false;

    while iterations < params.max_iterations {
        iterations += 1;
        sse = 0.0;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (e, dist) = nearest(p, &centroids, dim);
            assignments[i] = e;
            distances[i] = dist;
            sse += dist;
        }

        if sse == 0.0
            || (prev_sse.is_finite()
                && (prev_sse - sse) <= params.min_relative_improvement * prev_sse)
        {
            settled = true;
            break;
        }
        prev_sse = sse;

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &e) in points.chunks_exact(dim).zip(&assignments) {
            counts[e] += 1;
            for (s, x) in sums[e * dim..(e + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        for e in 0..k {
            let slot = &mut centroids[e * dim..(e + 1) * dim];
            if counts[e] == 0 {
                let far = distances
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                    .0;
                slot.copy_from_slice(&points[far * dim..(far + 1) * dim]);
                distances[far] = 0.0;
            } else {
                let inv = 1.0 / counts[e] as f64;
                for (c, s) in slot.iter_mut().zip(&sums[e * dim..(e + 1) * dim]) {
                    *c = s * inv;
                }
            }
        }
    }

    if !settled {
        // The last update moved the centres; refresh assignments against them.
        sse = 0.0;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (e, dist) = nearest(p, &centroids, dim);
            assignments[i] = e;
            sse += dist;
        }
    }

    KMeansResult {
        centroids,
        assignments,
        sse,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn recovers_separated_clusters() {
        let mut pts = Vec::new();
        for i in 0..40 {
            let off = (i % 4) as f64 * 0.01;
            pts.extend_from_slice(&[off, off]);
            pts.extend_from_slice(&[10.0 + off, 10.0 - off]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = kmeans(&pts, 2, 2, KMeansParams::default(), &mut rng);
        let a0 = res.assignments[0];
        for (i, &a) in res.assignments.iter().enumerate() {
            assert_eq!(a == a0, i % 2 == 0);
        }
        assert!((res.sse - 0.02).abs() < 1e-9, "{}", res.sse);
    }

    #[test]
    fn more_centres_than_distinct_points() {
        let pts = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = kmeans(&pts, 2, 4, KMeansParams::default(), &mut rng);
        assert_eq!(res.sse, 0.0);
        assert_eq!(res.centroids.len(), 8);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let pts: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let run = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            kmeans(&pts, 4, 5, KMeansParams::default(), &mut rng)
        };
        assert_eq!(run(11), run(11));
    }
}
