//! Central finite-difference oracle for network gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg::nn::{init_network, mse_loss, DropoutMasks, NetworkConfig, NetworkParams};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;
/// Points with any ReLU input closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

pub struct Case {
    pub params: NetworkParams,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub masks: DropoutMasks,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
    /// Draws rejected for sitting on a ReLU kink.
    pub redrawn: usize,
}

fn loss(params: &NetworkParams, case: &Case) -> f64 {
    let pass = params.forward_train(case.x.view(), &case.masks).unwrap();
    mse_loss(pass.output.as_slice().unwrap(), &case.y).unwrap()
}

fn near_kink(case: &Case) -> bool {
    let pass = case.params.forward_train(case.x.view(), &case.masks).unwrap();
    let kink = pass.pre_activations().any(|a| a.iter().any(|v| v.abs() < KINK_MARGIN));
    kink
}

/// A random 8 -> 5 -> 4 -> 3 -> 1 network with non-trivial biases and
/// batch-norm parameters, a random batch and frozen dropout masks.
pub fn draw_case<R: Rng>(rng: &mut R) -> Case {
    let cfg = NetworkConfig {
        input_dim: 8,
        hidden_dims: [5, 4, 3],
        seed: rng.random(),
        ..NetworkConfig::default()
    };
    let mut params = init_network(&cfg).unwrap();
    for l in &mut params.hidden {
        l.dense.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        l.norm.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        l.norm.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    params.output.bias[0] = rng.random_range(-0.5..0.5);
    let rows = rng.random_range(4..=10);
    let x = Array2::from_shape_simple_fn((rows, 8), || rng.random_range(-1.0..1.0));
    let y = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
    let rate = [0.0, 0.3, 0.5][rng.random_range(0..3)];
    let mut mask_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let masks = DropoutMasks::sample(&params, rows, rate, &mut mask_rng);
    Case { params, x, y, masks }
}

/// Draws until the point is away from every ReLU kink.
pub fn draw_smooth_case<R: Rng>(rng: &mut R, redrawn: &mut usize) -> Case {
    loop {
        let c = draw_case(rng);
        if !near_kink(&c) {
            return c;
        }
        *redrawn += 1;
    }
}

pub fn agrees(analytic: f64, numeric: f64) -> (bool, f64) {
    let abs = (analytic - numeric).abs();
    let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
    (abs <= ABS_TOL || rel <= REL_TOL, if abs <= ABS_TOL { 0.0 } else { rel })
}

/// Compares every learnable parameter's analytic gradient with a central
/// difference of the loss.
pub fn check_case(case: &Case, label: &str, out: &mut Outcome) {
    let pass = case.params.forward_train(case.x.view(), &case.masks).unwrap();
    let analytic = case.params.backward(&pass, &case.y).unwrap().flatten();
    let theta = case.params.flat_learnable();
    assert_eq!(analytic.len(), theta.len());
    let mut probe = case.params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let mut t = theta.clone();
        t[i] = theta[i] + H;
        probe.set_flat_learnable(&t);
        let up = loss(&probe, case);
        t[i] = theta[i] - H;
        probe.set_flat_learnable(&t);
        let down = loss(&probe, case);
        let numeric = (up - down) / (2.0 * H);
        let (ok, rel) = agrees(a, numeric);
        out.checked += 1;
        out.worst_rel = out.worst_rel.max(rel);
        if !ok {
            out.failures.push(format!("{label} param {i}: analytic {a:e}, numeric {numeric:e}"));
        }
    }
}

pub fn run(points: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Outcome::default();
    for p in 0..points {
        let case = draw_smooth_case(&mut rng, &mut out.redrawn);
        check_case(&case, &format!("point {p}"), &mut out);
    }
    out
}
