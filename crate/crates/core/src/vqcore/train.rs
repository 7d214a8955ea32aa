use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::{kmeans, KMeansParams};
use super::{Codebook, IndexMatrix, QuantizedLayer, VqConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Fidelity of each residual stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Whole-layer MSE after codebooks `1..=c` for each `c`.
    pub stage_mse: Vec<f64>,
}

impl TrainReport {
    pub fn final_mse(&self) -> f64 {
        self.stage_mse.last().copied().unwrap_or(0.0)
    }
}

/// Independent stream per (group, codebook) so that a run with more codebooks
/// reproduces the earlier stages exactly.
fn stage_rng(seed: u64, group: usize, codebook: usize) -> ChaCha8Rng {
    let mut z = seed
        ^ (group as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (codebook as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

pub fn train_codebooks(weights: &Matrix, config: &VqConfig, seed: u64) -> Result<QuantizedLayer> {
    train_codebooks_with_report(weights, config, seed).map(|(layer, _)| layer)
}

/// Greedy residual k-means: codebook `c` of each column group is fit to what
/// codebooks `1..c` left unexplained.
pub fn train_codebooks_with_report(
    weights: &Matrix,
    config: &VqConfig,
    seed: u64,
) -> Result<(QuantizedLayer, TrainReport)> {
    let (k, n) = weights.shape();
    let d = config.vector_dim();
    if k == 0 || n == 0 {
        return Err(Error::dim("weight matrix is empty"));
    }
    if k % d != 0 {
        return Err(Error::dim(format!("K = {k} is not divisible by d = {d}")));
    }
    if !weights.is_finite() {
        return Err(Error::domain("weight matrix contains non-finite values"));
    }

    let v = k / d;
    let size = config.codebook_size();
    let num_groups = config.num_groups(n);
    let num_codebooks = config.num_codebooks();
    let mut indices = vec![IndexMatrix::zeros(v, n, config.index_bits())?; num_codebooks];
    let mut groups = Vec::with_capacity(num_groups);
    let mut stage_sse = vec![0f64; num_codebooks];

    for g in 0..num_groups {
        let cols = (g * config.group_size())..((g + 1) * config.group_size()).min(n);
        // Residual vectors ordered (column, row block).
        let mut residual = Vec::with_capacity(cols.len() * k);
        for j in cols.clone() {
            for r in 0..v {
                residual.extend((0..d).map(|t| weights.get(r * d + t, j)));
            }
        }

        let mut set = Vec::with_capacity(num_codebooks);
        for (c, sse_slot) in stage_sse.iter_mut().enumerate() {
            let before: f64 = residual.iter().map(|x| x * x).sum();
            let mut rng = stage_rng(seed, g, c);
            let fit = kmeans(&residual, d, size, KMeansParams::default(), &mut rng);

            let (centroids, assignments, after) = if fit.sse <= before {
                (fit.centroids, fit.assignments, fit.sse)
            } else {
                // An all-zero codebook leaves the residual as is.
                (vec![0.0; size * d], vec![0; residual.len() / d], before)
            };

            for (p, &e) in assignments.iter().enumerate() {
                let (j, r) = (cols.start + p / v, p % v);
                indices[c].set(r, j, e);
                let centre = &centroids[e * d..(e + 1) * d];
                for (x, y) in residual[p * d..(p + 1) * d].iter_mut().zip(centre) {
                    *x -= y;
                }
            }
            *sse_slot += after;
            set.push(Codebook::from_centroids(d, &centroids)?);
        }
        groups.push(set);
    }

    let layer = QuantizedLayer::new(*config, (k, n), groups, indices)?;
    let elements = (k * n) as f64;
    let report = TrainReport {
        stage_mse: stage_sse.iter().map(|s| s / elements).collect(),
    };
    Ok((layer, report))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_vectors_are_exact() {
        let u = [0.5, -1.25, 3.0, 2.0];
        let w = Matrix::from_fn(16, 5, |r, _| u[r % 4]);
        let cfg = VqConfig::new(4, 3, 1, 5).unwrap();
        let layer = train_codebooks(&w, &cfg, 1).unwrap();
        assert_eq!(layer.dequantize().unwrap().mse(&w).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = VqConfig::new(8, 4, 1, 4).unwrap();
        assert!(matches!(
            train_codebooks(&Matrix::zeros(12, 4), &cfg, 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            train_codebooks(&Matrix::zeros(0, 4), &cfg, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn report_stages_are_non_increasing() {
        let w = random_matrix(64, 8, 5);
        let cfg = VqConfig::new(8, 4, 3, 8).unwrap();
        let (layer, report) = train_codebooks_with_report(&w, &cfg, 9).unwrap();
        assert!(report.stage_mse.windows(2).all(|p| p[1] <= p[0]));
        let mse = layer.dequantize().unwrap().mse(&w).unwrap();
        assert!((mse - report.final_mse()).abs() <= 1e-9 * mse.max(1e-12));
    }

    #[test]
    fn adding_codebooks_reproduces_earlier_stages() {
        let w = random_matrix(32, 6, 2);
        let one = train_codebooks(&w, &VqConfig::new(8, 3, 1, 3).unwrap(), 4).unwrap();
        let two = train_codebooks(&w, &VqConfig::new(8, 3, 2, 3).unwrap(), 4).unwrap();
        assert_eq!(one.groups()[0][0], two.groups()[0][0]);
        assert_eq!(one.indices()[0], two.indices()[0]);
    }
}
