use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{init_network, mse_loss, DropoutMasks, NetworkParams};
use super::{NetworkConfig, NnError, Result};

/// Infer-mode passes are chunked to bound intermediate memory.
const INFER_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Infer-mode loss on the whole training split after each iteration.
    pub train_loss_curve: Vec<f64>,
    /// Infer-mode loss on the test split after each iteration.
    pub test_loss_curve: Vec<f64>,
    pub final_params: NetworkParams,
    pub target_mean: f64,
    pub target_std: f64,
}

fn standardize(labels: &[f64]) -> Result<(f64, f64)> {
    if let Some(index) = labels.iter().position(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteLabel { index });
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std <= 1e-12 * mean.abs() {
        return Err(NnError::ZeroVarianceLabels);
    }
    Ok((mean, std))
}

/// Batch boundaries over `n` shuffled rows. A trailing batch of one row is
/// folded into its predecessor, since batch norm needs two rows.
fn batch_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut ranges: Vec<(usize, usize)> = (0..n)
        .step_by(size)
        .map(|start| (start, (start + size).min(n)))
        .collect();
    if ranges.len() > 1 && ranges.last().map(|(s, e)| e - s) == Some(1) {
        let (_, end) = ranges.pop().unwrap();
        ranges.last_mut().unwrap().1 = end;
    }
    ranges
}

pub(crate) fn infer_chunked(params: &NetworkParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    let mut out = Vec::with_capacity(x.nrows());
    for chunk in x.axis_chunks_iter(Axis(0), INFER_CHUNK) {
        out.extend(params.forward_infer(chunk)?);
    }
    Ok(Array1::from(out))
}

pub fn train(
    train_x: ArrayView2<f64>,
    train_y: &[f64],
    test_x: ArrayView2<f64>,
    test_y: &[f64],
    cfg: &NetworkConfig,
) -> Result<TrainReport> {
    train_with_progress(train_x, train_y, test_x, test_y, cfg, |_| true)
}

/// As [`train`], calling `on_iteration(done)` after every iteration; returning
/// `false` stops training with [`NnError::Cancelled`].
pub fn train_with_progress(
    train_x: ArrayView2<f64>,
    train_y: &[f64],
    test_x: ArrayView2<f64>,
    test_y: &[f64],
    cfg: &NetworkConfig,
    mut on_iteration: impl FnMut(usize) -> bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = train_x.nrows();
    if train_y.len() != n || test_y.len() != test_x.nrows() {
        return Err(NnError::Dimension(format!(
            "{n} training rows with {} labels, {} test rows with {} labels",
            train_y.len(),
            test_x.nrows(),
            test_y.len()
        )));
    }
    if n < 2 || test_y.is_empty() {
        return Err(NnError::Dimension(
            "need at least 2 training rows and 1 test row".to_string(),
        ));
    }
    for x in [train_x, test_x] {
        if x.ncols() != cfg.input_dim {
            return Err(NnError::Dimension(format!(
                "{} feature columns, config expects {}",
                x.ncols(),
                cfg.input_dim
            )));
        }
    }
    let (target_mean, target_std) = standardize(train_y)?;
    if let Some(index) = test_y.iter().position(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteLabel { index });
    }
    let z_train: Vec<f64> = train_y.iter().map(|y| (y - target_mean) / target_std).collect();
    let z_test: Vec<f64> = test_y.iter().map(|y| (y - target_mean) / target_std).collect();

    let mut params = init_network(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let ranges = batch_ranges(n, cfg.batch_size);
    let mut train_curve = Vec::with_capacity(cfg.iterations);
    let mut test_curve = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations {
        order.shuffle(&mut rng);
        for &(start, end) in &ranges {
            let idx = &order[start..end];
            let xb: Array2<f64> = train_x.select(Axis(0), idx);
            let yb: Vec<f64> = idx.iter().map(|&i| z_train[i]).collect();
            let masks = DropoutMasks::sample(&params, idx.len(), cfg.dropout_rate, &mut rng);
            let pass = params.forward_train(xb.view(), &masks)?;
            let loss = mse_loss(pass.output.as_slice().unwrap(), &yb)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { iteration });
            }
            let grads = params.backward(&pass, &yb)?;
            params.apply_gradients(&grads, cfg.learning_rate);
            params.update_running_stats(&pass.batch_stats, cfg.bn_momentum);
        }
        let train_loss = mse_loss(infer_chunked(&params, train_x)?.as_slice().unwrap(), &z_train)?;
        let test_loss = mse_loss(infer_chunked(&params, test_x)?.as_slice().unwrap(), &z_test)?;
        if !(train_loss.is_finite() && test_loss.is_finite()) {
            return Err(NnError::NonFiniteLoss { iteration });
        }
        train_curve.push(train_loss);
        test_curve.push(test_loss);
        if !on_iteration(iteration) && iteration < cfg.iterations {
            return Err(NnError::Cancelled {
                completed: iteration,
                total: cfg.iterations,
            });
        }
    }

    Ok(TrainReport {
        train_loss_curve: train_curve,
        test_loss_curve: test_curve,
        final_params: params,
        target_mean,
        target_std,
    })
}

/// Per-row predictions in label units: `raw * std + mean`.
pub fn predict(
    params: &NetworkParams,
    features: ArrayView2<f64>,
    target_mean: f64,
    target_std: f64,
) -> Result<Vec<f64>> {
    Ok(infer_chunked(params, features)?
        .iter()
        .map(|z| z * target_std + target_mean)
        .collect())
}

/// `iteration,train_mse,test_mse`, iterations counted from 1.
pub fn write_loss_curves(path: &Path, report: &TrainReport) -> Result<()> {
    let io = |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(out, "iteration,train_mse,test_mse").map_err(io)?;
    for (i, (tr, te)) in report
        .train_loss_curve
        .iter()
        .zip(&report.test_loss_curve)
        .enumerate()
    {
        writeln!(out, "{},{tr},{te}", i + 1).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(rows: usize, cols: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..1.0));
        let y = x.rows().into_iter().map(|r| r.sum()).collect();
        (x, y)
    }

    fn toy_cfg() -> NetworkConfig {
        NetworkConfig {
            input_dim: 8,
            hidden_dims: [32, 16, 8],
            dropout_rate: 0.0,
            learning_rate: 0.02,
            batch_size: 64,
            iterations: 200,
            seed: 5,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn batch_ranges_fold_singletons() {
        assert_eq!(batch_ranges(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_ranges(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_ranges(3, 64), vec![(0, 3)]);
    }

    #[test]
    fn learns_a_sum_of_features() {
        let (x, y) = toy(512, 8, 1);
        let (tx, ty) = toy(128, 8, 2);
        let report = train(x.view(), &y, tx.view(), &ty, &toy_cfg()).unwrap();
        assert_eq!(report.train_loss_curve.len(), 200);
        let last = *report.train_loss_curve.last().unwrap();
        assert!(last < 0.01, "final train MSE {last}");
        assert!(report.train_loss_curve.iter().chain(&report.test_loss_curve).all(|l| *l >= 0.0));

        // Non-increasing over every 10-iteration window after iteration 20.
        let c = &report.train_loss_curve;
        for start in 20..c.len() - 10 {
            assert!(c[start + 10] <= c[start], "window at {start}: {} -> {}", c[start], c[start + 10]);
        }

        let pred = predict(&report.final_params, x.view(), report.target_mean, report.target_std).unwrap();
        let mape = pred.iter().zip(&y).map(|(p, t)| ((p - t) / t).abs()).sum::<f64>() / y.len() as f64 * 100.0;
        assert!(mape < 2.0, "train MAPE {mape}");
    }

    #[test]
    fn same_seed_same_report() {
        let (x, y) = toy(200, 8, 3);
        let (tx, ty) = toy(50, 8, 4);
        let cfg = NetworkConfig { iterations: 5, dropout_rate: 0.3, ..toy_cfg() };
        let a = train(x.view(), &y, tx.view(), &ty, &cfg).unwrap();
        let b = train(x.view(), &y, tx.view(), &ty, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(x.view(), &y, tx.view(), &ty, &NetworkConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.train_loss_curve, c.train_loss_curve);
    }

    #[test]
    fn zero_learning_rate_freezes_learnable_parameters() {
        let (x, y) = toy(100, 8, 5);
        let (tx, ty) = toy(20, 8, 6);
        let cfg = NetworkConfig { learning_rate: 0.0, iterations: 4, dropout_rate: 0.3, ..toy_cfg() };
        let report = train(x.view(), &y, tx.view(), &ty, &cfg).unwrap();
        let init = init_network(&cfg).unwrap();
        assert_eq!(report.final_params.flat_learnable(), init.flat_learnable());

        // Full batch, no dropout, frozen running stats: the curves are constant.
        let frozen = NetworkConfig { batch_size: 100, dropout_rate: 0.0, bn_momentum: 1.0, ..cfg };
        let report = train(x.view(), &y, tx.view(), &ty, &frozen).unwrap();
        for curve in [&report.train_loss_curve, &report.test_loss_curve] {
            assert!(curve.iter().all(|l| (l - curve[0]).abs() <= 1e-12 * curve[0]));
        }
        assert_eq!(report.final_params, init_network(&frozen).unwrap());
    }

    #[test]
    fn constant_network_predicts_the_target_mean() {
        let mut p = init_network(&toy_cfg()).unwrap();
        p.output.weights.fill(0.0);
        let (x, _) = toy(10, 8, 7);
        assert!(predict(&p, x.view(), 81.5, 7.0).unwrap().iter().all(|v| *v == 81.5));
        let raw = p.forward_infer(x.view()).unwrap();
        let same = predict(&p, x.view(), 0.0, 1.0).unwrap();
        assert_eq!(raw.to_vec(), same);
    }

    #[test]
    fn training_errors() {
        let (x, y) = toy(20, 8, 8);
        let cfg = toy_cfg();
        assert!(matches!(
            train(x.view(), &[3.0; 20], x.view(), &y, &cfg),
            Err(NnError::ZeroVarianceLabels)
        ));
        let mut bad = y.clone();
        bad[4] = f64::NAN;
        assert!(matches!(
            train(x.view(), &bad, x.view(), &y, &cfg),
            Err(NnError::NonFiniteLabel { index: 4 })
        ));
        assert!(matches!(
            train(x.view(), &y[..10], x.view(), &y, &cfg),
            Err(NnError::Dimension(_))
        ));
        let diverge = NetworkConfig { learning_rate: 1e6, iterations: 50, ..cfg.clone() };
        assert!(matches!(
            train(x.view(), &y, x.view(), &y, &diverge),
            Err(NnError::NonFiniteLoss { .. })
        ));
        let mut stopped = 0;
        let err = train_with_progress(x.view(), &y, x.view(), &y, &cfg, |done| {
            stopped = done;
            done < 3
        })
        .unwrap_err();
        assert!(matches!(err, NnError::Cancelled { completed: 3, total: 200 }));
        assert_eq!(stopped, 3);
    }

    #[test]
    fn single_iteration_curves() {
        let (x, y) = toy(50, 8, 9);
        let cfg = NetworkConfig { iterations: 1, ..toy_cfg() };
        let r = train(x.view(), &y, x.view(), &y, &cfg).unwrap();
        assert_eq!(r.train_loss_curve.len(), 1);
        assert_eq!(r.test_loss_curve.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_curves(&path, &r).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,train_mse,test_mse\n1,"));
    }
}
