use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{batchnorm_backward, batchnorm_forward, dropout_mask, BatchNormCache, Mode};
use super::{NetworkConfig, NnError, Result};

/// Affine map `x W + b`, with `W` stored fan-in x fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>, momentum: f64) {
        self.running_mean.zip_mut_with(mean, |r, b| *r = momentum * *r + (1.0 - momentum) * b);
        self.running_var.zip_mut_with(var, |r, b| *r = momentum * *r + (1.0 - momentum) * b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
    pub bn_epsilon: f64,
}

/// Glorot-uniform weights from the config seed; zero biases; identity batch norm.
pub fn init_network(cfg: &NetworkConfig) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.dims();
    let mut dense: Vec<Dense> = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("positive bound");
            Dense {
                weights: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng)),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    let output = dense.pop().expect("output layer");
    let hidden = dense
        .into_iter()
        .map(|d| {
            let width = d.bias.len();
            HiddenLayer {
                dense: d,
                norm: BatchNorm::identity(width),
            }
        })
        .collect();
    Ok(NetworkParams {
        hidden,
        output,
        bn_epsilon: cfg.bn_epsilon,
    })
}

/// Pre-scaled inverted-dropout masks, one per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(params: &NetworkParams, rows: usize, rate: f64, rng: &mut R) -> Self {
        DropoutMasks(
            params
                .hidden
                .iter()
                .map(|l| dropout_mask(rows, l.dense.bias.len(), rate, rng))
                .collect(),
        )
    }

    pub fn ones(params: &NetworkParams, rows: usize) -> Self {
        DropoutMasks(
            params
                .hidden
                .iter()
                .map(|l| Array2::ones((rows, l.dense.bias.len())))
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    norm: BatchNormCache,
    /// Batch-norm output, before ReLU.
    pre_relu: Array2<f64>,
    mask: Array2<f64>,
}

/// Everything a train-mode forward pass leaves behind for [`NetworkParams::backward`].
#[derive(Debug, Clone)]
pub struct TrainPass {
    pub output: Array1<f64>,
    /// Per hidden layer batch `(mean, variance)` for the running statistics.
    pub batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
    layers: Vec<LayerCache>,
    last_hidden: Array2<f64>,
}

impl TrainPass {
    /// Batch-norm outputs (the ReLU inputs) of each hidden layer.
    pub fn pre_activations(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().map(|l| &l.pre_relu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<LayerGradients>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl Gradients {
    /// Same order as [`NetworkParams::flat_learnable`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.hidden {
            v.extend(l.weights.iter());
            v.extend(l.bias.iter());
            v.extend(l.gamma.iter());
            v.extend(l.beta.iter());
        }
        v.extend(self.output_weights.iter());
        v.extend(self.output_bias.iter());
        v
    }
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(NnError::Loss(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(NnError::Loss("empty input".to_string()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.hidden[0].dense.weights.nrows()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Dimension(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Infer-mode forward pass: running statistics, no dropout.
    pub fn forward_infer(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for layer in &self.hidden {
            let z = layer.dense.forward(a.view());
            let n = &layer.norm;
            let bn = batchnorm_forward(
                z.view(),
                n.gamma.view(),
                n.beta.view(),
                Mode::Infer,
                n.running_mean.view(),
                n.running_var.view(),
                self.bn_epsilon,
            )?;
            a = bn.output.mapv_into(|v| v.max(0.0));
        }
        Ok(self.output.forward(a.view()).column(0).to_owned())
    }

    /// Train-mode forward pass with the given (frozen) dropout masks.
    pub fn forward_train(&self, x: ArrayView2<f64>, masks: &DropoutMasks) -> Result<TrainPass> {
        self.check_input(x)?;
        if masks.0.len() != self.hidden.len() {
            return Err(NnError::Dimension("one dropout mask per hidden layer".to_string()));
        }
        let mut a = x.to_owned();
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut batch_stats = Vec::with_capacity(self.hidden.len());
        for (layer, mask) in self.hidden.iter().zip(&masks.0) {
            let z = layer.dense.forward(a.view());
            if mask.dim() != z.dim() {
                return Err(NnError::Dimension(format!(
                    "dropout mask {:?} for activations {:?}",
                    mask.dim(),
                    z.dim()
                )));
            }
            let n = &layer.norm;
            let bn = batchnorm_forward(
                z.view(),
                n.gamma.view(),
                n.beta.view(),
                Mode::Train,
                n.running_mean.view(),
                n.running_var.view(),
                self.bn_epsilon,
            )?;
            let out = bn.output.mapv(|v| v.max(0.0)) * mask;
            layers.push(LayerCache {
                input: std::mem::replace(&mut a, out),
                norm: bn.cache.expect("train mode"),
                pre_relu: bn.output,
                mask: mask.clone(),
            });
            batch_stats.push(bn.batch_stats.expect("train mode"));
        }
        let output = self.output.forward(a.view()).column(0).to_owned();
        Ok(TrainPass {
            output,
            batch_stats,
            layers,
            last_hidden: a,
        })
    }

    /// Forward pass in either mode. Train mode needs frozen masks.
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode, masks: Option<&DropoutMasks>) -> Result<Array1<f64>> {
        match mode {
            Mode::Infer => self.forward_infer(x),
            Mode::Train => {
                let ones;
                let masks = match masks {
                    Some(m) => m,
                    None => {
                        ones = DropoutMasks::ones(self, x.nrows());
                        &ones
                    }
                };
                Ok(self.forward_train(x, masks)?.output)
            }
        }
    }

    /// Exact gradients of `mse_loss(pass.output, targets)`.
    pub fn backward(&self, pass: &TrainPass, targets: &[f64]) -> Result<Gradients> {
        let n = pass.output.len();
        if targets.len() != n || pass.layers.len() != self.hidden.len() {
            return Err(NnError::Dimension(format!(
                "forward state for {n} rows, {} targets",
                targets.len()
            )));
        }
        let d_pred: Array1<f64> = pass
            .output
            .iter()
            .zip(targets)
            .map(|(p, t)| 2.0 * (p - t) / n as f64)
            .collect();
        let d_pred = d_pred.insert_axis(Axis(1));
        let output_weights = pass.last_hidden.t().dot(&d_pred);
        let output_bias = d_pred.sum_axis(Axis(0));
        let mut d_a = d_pred.dot(&self.output.weights.t());

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (layer, cache) in self.hidden.iter().zip(&pass.layers).rev() {
            let mut d_y = d_a * &cache.mask;
            d_y.zip_mut_with(&cache.pre_relu, |d, y| {
                if *y <= 0.0 {
                    *d = 0.0
                }
            });
            let (d_z, gamma, beta) = batchnorm_backward(d_y.view(), layer.norm.gamma.view(), &cache.norm);
            let weights = cache.input.t().dot(&d_z);
            let bias = d_z.sum_axis(Axis(0));
            d_a = d_z.dot(&layer.dense.weights.t());
            hidden.push(LayerGradients {
                weights,
                bias,
                gamma,
                beta,
            });
        }
        hidden.reverse();
        Ok(Gradients {
            hidden,
            output_weights,
            output_bias,
        })
    }

    /// `theta <- theta - lr * grad` on every learnable parameter.
    pub fn apply_gradients(&mut self, g: &Gradients, lr: f64) {
        for (layer, lg) in self.hidden.iter_mut().zip(&g.hidden) {
            layer.dense.weights.scaled_add(-lr, &lg.weights);
            layer.dense.bias.scaled_add(-lr, &lg.bias);
            layer.norm.gamma.scaled_add(-lr, &lg.gamma);
            layer.norm.beta.scaled_add(-lr, &lg.beta);
        }
        self.output.weights.scaled_add(-lr, &g.output_weights);
        self.output.bias.scaled_add(-lr, &g.output_bias);
    }

    pub fn update_running_stats(&mut self, stats: &[(Array1<f64>, Array1<f64>)], momentum: f64) {
        for (layer, (mean, var)) in self.hidden.iter_mut().zip(stats) {
            layer.norm.update_running(mean, var, momentum);
        }
    }

    /// Weights, biases, scales and shifts, layer by layer, output last.
    pub fn flat_learnable(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.hidden {
            v.extend(l.dense.weights.iter());
            v.extend(l.dense.bias.iter());
            v.extend(l.norm.gamma.iter());
            v.extend(l.norm.beta.iter());
        }
        v.extend(self.output.weights.iter());
        v.extend(self.output.bias.iter());
        v
    }

    pub fn set_flat_learnable(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |a: &mut dyn Iterator<Item = &mut f64>| {
            for x in a {
                *x = it.next().expect("enough values");
            }
        };
        for l in &mut self.hidden {
            fill(&mut l.dense.weights.iter_mut());
            fill(&mut l.dense.bias.iter_mut());
            fill(&mut l.norm.gamma.iter_mut());
            fill(&mut l.norm.beta.iter_mut());
        }
        fill(&mut self.output.weights.iter_mut());
        fill(&mut self.output.bias.iter_mut());
    }
}
