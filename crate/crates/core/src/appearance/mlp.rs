use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fully connected ReLU network with a sigmoid RGB head.
///
/// Parameters live in one flat buffer, layer by layer, each layer stored as
/// its `out x in` weight matrix (row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMlp {
    dims: Vec<usize>,
    pub params: Vec<f64>,
}

/// Post-activation values of every layer for one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl ColorMlp {
    /// `dims` runs from input to output; the last entry must be 3. Weights and
    /// biases start uniform in `+-1/sqrt(fan_in)`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * w[0] + w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Ok(ColorMlp { dims: dims.to_vec(), params })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_dims(dims)?;
        if params.len() != param_count(dims) {
            return Err(Error::DimensionMismatch {
                what: "mlp parameters",
                expected: param_count(dims),
                got: params.len(),
            });
        }
        Ok(ColorMlp { dims: dims.to_vec(), params })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 3 {
            return Err(Error::InvalidInput(format!("bad mlp layer sizes {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn color(&self, input: &[f64]) -> Result<([f64; 3], MlpCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "mlp input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + din * dout];
            let b = &self.params[off + din * dout..off + din * dout + dout];
            let x = &acts[l];
            let mut y = Vec::with_capacity(dout);
            for o in 0..dout {
                let row = &w[o * din..(o + 1) * din];
                let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                y.push(if l + 1 == n_layers { sigmoid(z) } else { z.max(0.0) });
            }
            acts.push(y);
            off += din * dout + dout;
        }
        let out = acts.last().unwrap();
        Ok(([out[0], out[1], out[2]], MlpCache { acts }))
    }

    /// Accumulates parameter gradients into `d_params` and returns dL/dinput.
    pub fn color_backward(&self, cache: &MlpCache, d_rgb: [f64; 3], d_params: &mut [f64]) -> Result<Vec<f64>> {
        if d_params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                what: "mlp gradient buffer",
                expected: self.params.len(),
                got: d_params.len(),
            });
        }
        let n_layers = self.dims.len() - 1;
        if cache.acts.len() != n_layers + 1
            || cache.acts.iter().zip(&self.dims).any(|(a, &d)| a.len() != d)
        {
            return Err(Error::InvalidInput("mlp cache does not match this network".into()));
        }
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }

        // gradient w.r.t. pre-activation of the current layer
        let out = &cache.acts[n_layers];
        let mut dz: Vec<f64> = (0..3).map(|i| d_rgb[i] * out[i] * (1.0 - out[i])).collect();
        for l in (0..n_layers).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let off = offsets[l];
            let x = &cache.acts[l];
            let mut dx = vec![0.0; din];
            for o in 0..dout {
                let g = dz[o];
                if g == 0.0 {
                    continue;
                }
                let row = off + o * din;
                for i in 0..din {
                    d_params[row + i] += g * x[i];
                    dx[i] += g * self.params[row + i];
                }
                d_params[off + din * dout + o] += g;
            }
            if l > 0 {
                // ReLU mask of the layer below
                for (d, &a) in dx.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = dx;
        }
        Ok(dz)
    }
}
