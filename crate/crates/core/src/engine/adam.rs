use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First and second moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn check(&self, params: usize, grads: usize) -> Result<()> {
        if params != self.len() {
            return Err(Error::DimensionMismatch { what: "adam parameters", expected: self.len(), got: params });
        }
        if grads != self.len() {
            return Err(Error::DimensionMismatch { what: "adam gradients", expected: self.len(), got: grads });
        }
        Ok(())
    }

    /// Bias-corrected Adam update. Returns `Ok(false)` and leaves everything
    /// untouched when some gradient is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<bool> {
        self.check(params.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(false);
        }
        self.t += 1;
        let (c1, c2) = self.corrections();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPSILON);
        }
        Ok(true)
    }

    /// Lazy variant: only entries listed in `touched` move. Moments of the
    /// other entries are neither decayed nor applied. `grads` is dense.
    pub fn step_sparse(&mut self, params: &mut [f64], grads: &[f64], touched: &[usize], lr: f64) -> Result<bool> {
        self.check(params.len(), grads.len())?;
        if let Some(&i) = touched.iter().find(|&&i| i >= params.len()) {
            return Err(Error::IndexOutOfRange { index: i, len: params.len() });
        }
        if touched.iter().any(|&i| !grads[i].is_finite()) {
            return Ok(false);
        }
        self.t += 1;
        let (c1, c2) = self.corrections();
        for &i in touched {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPSILON);
        }
        Ok(true)
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.t as i32;
        (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t))
    }

    /// Rebuilds per-item moments after the item set changed. `sources[j]` is
    /// the old item whose `width` moments output item `j` inherits; `None`
    /// starts from zero.
    pub fn remap(&self, sources: &[Option<usize>], width: usize) -> AdamState {
        let mut out = AdamState::new(sources.len() * width);
        out.t = self.t;
        for (j, src) in sources.iter().enumerate() {
            if let Some(k) = *src {
                out.m[j * width..(j + 1) * width].copy_from_slice(&self.m[k * width..(k + 1) * width]);
                out.v[j * width..(j + 1) * width].copy_from_slice(&self.v[k * width..(k + 1) * width]);
            }
        }
        out
    }

    pub fn reset_moments(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}
