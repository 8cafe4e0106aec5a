use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Intermediates kept from a train-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput {
    pub output: Array2<f64>,
    /// Train mode only: the cache and the batch `(mean, variance)`.
    pub cache: Option<BatchNormCache>,
    pub batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

/// Batch normalization over the rows of `batch`. Train mode standardizes by
/// the batch mean and biased variance; Infer mode by the running statistics.
/// The running statistics are not touched here; see
/// [`super::BatchNorm::update_running`].
pub fn batchnorm_forward(
    batch: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    mode: Mode,
    running_mean: ArrayView1<f64>,
    running_var: ArrayView1<f64>,
    epsilon: f64,
) -> Result<BatchNormOutput> {
    let width = gamma.len();
    if batch.ncols() != width || beta.len() != width {
        return Err(NnError::Dimension(format!(
            "batch norm over {} features with {} scales",
            batch.ncols(),
            width
        )));
    }
    match mode {
        Mode::Train => {
            let n = batch.nrows();
            if n < 2 {
                return Err(NnError::BatchTooSmall(n));
            }
            let mean = batch.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &batch - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
            let inv_std = var.mapv(|v| 1.0 / (v + epsilon).sqrt());
            let x_hat = centered * &inv_std;
            let output = &x_hat * &gamma + &beta;
            Ok(BatchNormOutput {
                output,
                cache: Some(BatchNormCache { x_hat, inv_std }),
                batch_stats: Some((mean, var)),
            })
        }
        Mode::Infer => {
            let inv_std = running_var.mapv(|v| 1.0 / (v + epsilon).sqrt());
            let scale = &gamma * &inv_std;
            let output = (&batch - &running_mean) * &scale + &beta;
            Ok(BatchNormOutput {
                output,
                cache: None,
                batch_stats: None,
            })
        }
    }
}

/// Gradients `(d_input, d_gamma, d_beta)` of a train-mode batch norm, batch
/// statistics included.
pub fn batchnorm_backward(
    d_out: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    cache: &BatchNormCache,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = d_out.nrows() as f64;
    let d_beta = d_out.sum_axis(Axis(0));
    let d_gamma = (&d_out * &cache.x_hat).sum_axis(Axis(0));
    let d_xhat = &d_out * &gamma;
    let sum_d = d_xhat.sum_axis(Axis(0));
    let sum_dx = (&d_xhat * &cache.x_hat).sum_axis(Axis(0));
    let d_in = (d_xhat * n - &sum_d - &cache.x_hat * &sum_dx) * (&cache.inv_std / n);
    (d_in, d_gamma, d_beta)
}

/// Inverted dropout mask: each unit survives with probability `1 - rate` and
/// survivors are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    if rate == 0.0 {
        return Array2::ones((rows, cols));
    }
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

pub fn dropout<R: Rng + ?Sized>(x: ArrayView2<f64>, rate: f64, mode: Mode, rng: &mut R) -> Array2<f64> {
    match mode {
        Mode::Infer => x.to_owned(),
        Mode::Train => &x * &dropout_mask(x.nrows(), x.ncols(), rate, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let mean = x.mean_axis(Axis(0)).unwrap();
        let var = (x - &mean).mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        (mean, var)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-3.0..5.0))
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-3.0, -0.5]), vec![0.0, 0.0]);
        assert_eq!(relu(&[0.5, 7.0, 0.0]), vec![0.5, 7.0, 0.0]);
    }

    #[test]
    fn train_mode_standardizes() {
        let x = random_batch(32, 6, 1);
        let ones = Array1::ones(6);
        let zeros = Array1::zeros(6);
        let out = batchnorm_forward(x.view(), ones.view(), zeros.view(), Mode::Train, zeros.view(), ones.view(), 1e-5)
            .unwrap();
        let (m, v) = column_moments(&out.output);
        assert!(m.iter().all(|m| m.abs() <= 1e-9));
        assert!(v.iter().all(|v| (v - 1.0).abs() <= 1e-5));
    }

    #[test]
    fn train_mode_affine() {
        let x = random_batch(50, 4, 2);
        let gamma = Array1::from_elem(4, 2.0);
        let beta = Array1::from_elem(4, 3.0);
        let z = Array1::zeros(4);
        let o = Array1::ones(4);
        let out = batchnorm_forward(x.view(), gamma.view(), beta.view(), Mode::Train, z.view(), o.view(), 1e-5).unwrap();
        let (m, v) = column_moments(&out.output);
        assert!(m.iter().all(|m| (m - 3.0).abs() <= 1e-9));
        assert!(v.iter().all(|v| (v - 4.0).abs() <= 1e-4));
        let (bm, bv) = out.batch_stats.unwrap();
        let (em, ev) = column_moments(&x);
        assert_eq!(bm, em);
        assert!((bv - ev).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn infer_mode_with_unit_stats_is_near_identity() {
        let x = random_batch(8, 3, 3);
        let o = Array1::ones(3);
        let z = Array1::zeros(3);
        let out = batchnorm_forward(x.view(), o.view(), z.view(), Mode::Infer, z.view(), o.view(), 1e-5).unwrap();
        assert!((&out.output - &x).iter().all(|d| d.abs() <= 1e-4));
        assert!(out.cache.is_none());
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let x = array![[1.0, 2.0]];
        let o = Array1::ones(2);
        let z = Array1::zeros(2);
        assert!(matches!(
            batchnorm_forward(x.view(), o.view(), z.view(), Mode::Train, z.view(), o.view(), 1e-5),
            Err(NnError::BatchTooSmall(1))
        ));
        // Infer mode is fine with a single row.
        batchnorm_forward(x.view(), o.view(), z.view(), Mode::Infer, z.view(), o.view(), 1e-5).unwrap();
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let x = random_batch(6, 3, 4);
        let gamma = array![1.5, -0.7, 0.3];
        let beta = array![0.1, 0.2, -0.4];
        let weights = random_batch(6, 3, 5);
        let z = Array1::zeros(3);
        let o = Array1::ones(3);
        let loss = |x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>| {
            let out = batchnorm_forward(x.view(), g.view(), b.view(), Mode::Train, z.view(), o.view(), 1e-5).unwrap();
            (&out.output * &weights).sum()
        };
        let out = batchnorm_forward(x.view(), gamma.view(), beta.view(), Mode::Train, z.view(), o.view(), 1e-5).unwrap();
        let (dx, dg, db) = batchnorm_backward(weights.view(), gamma.view(), out.cache.as_ref().unwrap());
        let h = 1e-6;
        for idx in 0..x.len() {
            let (r, c) = (idx / 3, idx % 3);
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
            assert!((fd - dx[[r, c]]).abs() < 1e-6, "dx[{r},{c}]: {fd} vs {}", dx[[r, c]]);
        }
        for j in 0..3 {
            let mut gp = gamma.clone();
            gp[j] += h;
            let mut gm = gamma.clone();
            gm[j] -= h;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!((fd - dg[j]).abs() < 1e-6);
            let mut bp = beta.clone();
            bp[j] += h;
            let mut bm = beta.clone();
            bm[j] -= h;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!((fd - db[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let x = random_batch(4, 5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout(x.view(), 0.0, Mode::Train, &mut rng), x);
        assert_eq!(dropout(x.view(), 0.0, Mode::Infer, &mut rng), x);
        assert_eq!(dropout(x.view(), 0.3, Mode::Infer, &mut rng), x);
    }

    #[test]
    fn dropout_is_unbiased() {
        let x = Array2::ones((1000, 1000));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = dropout(x.view(), 0.3, Mode::Train, &mut rng);
        let mean = y.mean().unwrap();
        assert!((0.99..=1.01).contains(&mean), "{mean}");
        let zeros = y.iter().filter(|v| **v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.3).abs() < 0.005);
        assert!(y.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.7).abs() < 1e-15));
    }
}
