//! Single-file model format.
//!
//! All integers are little-endian `u32` (`u64` for the seed) and all reals
//! little-endian `f64`:
//!
//! ```text
//! "PCNN"  version=1
//! config: input_dim, hidden count H, H hidden widths, dropout_rate,
//!         learning_rate, batch_size, iterations, bn_momentum, bn_epsilon, seed
//! target_mean, target_std
//! for each hidden layer: weights (fan_in x fan_out, row-major), bias,
//!                        gamma, beta, running_mean, running_var
//! output layer: weights (H_last x 1), bias (1)
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::network::{BatchNorm, Dense, HiddenLayer, NetworkParams};
use super::{NetworkConfig, NnError, Result};

const MAGIC: &[u8; 4] = b"PCNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: NetworkConfig,
    pub params: NetworkParams,
    pub target_mean: f64,
    pub target_std: f64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn all<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| NnError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec(&mut self, n: usize) -> Result<Array1<f64>> {
        (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>().map(Array1::from)
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let v = self.vec(rows * cols)?.to_vec();
        Ok(Array2::from_shape_vec((rows, cols), v).expect("sized"))
    }
}

pub fn encode(model: &SavedModel) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(c.input_dim);
    w.u32(c.hidden_dims.len());
    for d in c.hidden_dims {
        w.u32(d);
    }
    w.f64(c.dropout_rate);
    w.f64(c.learning_rate);
    w.u32(c.batch_size);
    w.u32(c.iterations);
    w.f64(c.bn_momentum);
    w.f64(c.bn_epsilon);
    w.0.extend_from_slice(&c.seed.to_le_bytes());
    w.f64(model.target_mean);
    w.f64(model.target_std);
    for l in &model.params.hidden {
        w.all(&l.dense.weights);
        w.all(&l.dense.bias);
        w.all(&l.norm.gamma);
        w.all(&l.norm.beta);
        w.all(&l.norm.running_mean);
        w.all(&l.norm.running_var);
    }
    w.all(&model.params.output.weights);
    w.all(&model.params.output.bias);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<SavedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Format("missing PCNN magic".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let input_dim = r.u32()?;
    let count = r.u32()?;
    if count != 3 {
        return Err(NnError::Format(format!("{count} hidden layers, expected 3")));
    }
    let mut hidden_dims = [0; 3];
    for d in &mut hidden_dims {
        *d = r.u32()?;
    }
    let config = NetworkConfig {
        input_dim,
        hidden_dims,
        dropout_rate: r.f64()?,
        learning_rate: r.f64()?,
        batch_size: r.u32()?,
        iterations: r.u32()?,
        bn_momentum: r.f64()?,
        bn_epsilon: r.f64()?,
        seed: r.u64()?,
    };
    config.validate().map_err(|e| NnError::Format(e.to_string()))?;
    let target_mean = r.f64()?;
    let target_std = r.f64()?;
    let dims = config.dims();
    let mut hidden = Vec::with_capacity(3);
    for w in dims.windows(2).take(3) {
        let dense = Dense {
            weights: r.matrix(w[0], w[1])?,
            bias: r.vec(w[1])?,
        };
        let norm = BatchNorm {
            gamma: r.vec(w[1])?,
            beta: r.vec(w[1])?,
            running_mean: r.vec(w[1])?,
            running_var: r.vec(w[1])?,
        };
        hidden.push(HiddenLayer { dense, norm });
    }
    let output = Dense {
        weights: r.matrix(dims[3], 1)?,
        bias: r.vec(1)?,
    };
    if r.pos != bytes.len() {
        return Err(NnError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(SavedModel {
        params: NetworkParams {
            hidden,
            output,
            bn_epsilon: config.bn_epsilon,
        },
        config,
        target_mean,
        target_std,
    })
}

pub fn save(path: &Path, model: &SavedModel) -> Result<()> {
    fs::write(path, encode(model)).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;

    #[test]
    fn round_trip_is_bitwise() {
        let config = NetworkConfig {
            input_dim: 6,
            hidden_dims: [5, 4, 3],
            seed: 77,
            ..NetworkConfig::default()
        };
        let mut params = init_network(&config).unwrap();
        params.hidden[1].norm.running_var[2] = 0.123456789;
        let model = SavedModel {
            config,
            params,
            target_mean: 80.25,
            target_std: 11.5,
        };
        let bytes = encode(&model);
        assert_eq!(&bytes[..4], b"PCNN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), model);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        assert!(decode(b"NOPE").is_err());
    }
}
