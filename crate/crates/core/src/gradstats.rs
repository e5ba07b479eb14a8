//! Per-Gaussian color-gradient statistics for variance-guided densification.
//!
//! Each Gaussian keeps three live per-channel estimators that receive the
//! color gradient of every pixel it renders during one view. At the end of the
//! view the channel variances are summed into `variance_sum`, the NDC
//! positional gradient norm into `ndc_grad_norm_sum`, and the view counter is
//! bumped. The densification criterion then compares
//! `gamma * variance_sum / M + ndc_grad_norm_sum / M` against the threshold.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which recursion feeds the live per-channel estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The biased `beta_n = 1/n` recursion, streamed in canonical
    /// (row-major) pixel order.
    #[default]
    Paper,
    /// Welford/Chan population variance; partial results merge exactly.
    Exact,
}

/// What counts as "the color gradient of a pixel" for a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradSignal {
    /// `w_kp * dL/dC_p`: the gradient reaching the Gaussian's color.
    #[default]
    Weighted,
    /// `dL/dC_p` itself.
    Raw,
}

/// Running mean/variance of a scalar stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamStat {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    /// Sum of squared deviations; only maintained by the exact update.
    pub m2: f64,
}

impl StreamStat {
    pub const EMPTY: StreamStat = StreamStat {
        n: 0,
        mean: 0.0,
        var: 0.0,
        m2: 0.0,
    };

    /// One step of
    /// `mu_{n+1} = mu_n + b_{n+1} (g - mu_n)`,
    /// `var_{n+1} = (1 - b_n) var_n + b_{n+1} (g - mu_n)^2`, `b_n = 1/n`.
    /// The first sample sets `mu = g, var = 0`.
    pub fn update_paper(&mut self, g: f64) {
        if self.n == 0 {
            self.n = 1;
            self.mean = g;
            self.var = 0.0;
            return;
        }
        let beta_n = 1.0 / self.n as f64;
        let beta_next = 1.0 / (self.n + 1) as f64;
        let delta = g - self.mean;
        self.mean += beta_next * delta;
        self.var = (1.0 - beta_n) * self.var + beta_next * delta * delta;
        self.n += 1;
    }

    /// Welford step; `var` is the population variance `m2 / n`.
    pub fn update_exact(&mut self, g: f64) {
        self.n += 1;
        let delta = g - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (g - self.mean);
        self.var = self.m2 / self.n as f64;
    }

    pub fn update(&mut self, estimator: Estimator, g: f64) {
        match estimator {
            Estimator::Paper => self.update_paper(g),
            Estimator::Exact => self.update_exact(g),
        }
    }

    /// Chan et al. pairwise combination of two exact-mode partials.
    pub fn merge_exact(&self, other: &StreamStat) -> StreamStat {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let n = self.n + other.n;
        let (na, nb, nn) = (self.n as f64, other.n as f64, n as f64);
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / nn;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / nn;
        StreamStat {
            n,
            mean,
            var: m2 / nn,
            m2,
        }
    }
}

/// Checked single-sample update.
pub fn stream_update_paper(stat: StreamStat, g: f64) -> Result<StreamStat> {
    if !g.is_finite() {
        return Err(Error::NonFinite("streamed gradient"));
    }
    let mut s = stat;
    s.update_paper(g);
    Ok(s)
}

pub fn stream_update_exact(stat: StreamStat, g: f64) -> StreamStat {
    let mut s = stat;
    s.update_exact(g);
    s
}

pub fn merge_exact(a: &StreamStat, b: &StreamStat) -> StreamStat {
    a.merge_exact(b)
}

/// Per-Gaussian accumulators over one densification interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccum {
    pub estimator: Estimator,
    pub signal: GradSignal,
    /// Sum over views of the per-view NDC gradient norm.
    pub ndc_grad_norm_sum: Vec<f64>,
    /// Views in which the Gaussian was visible.
    pub view_count: Vec<u32>,
    /// Live per-channel estimators for the view in progress.
    pub live: Vec<[StreamStat; 3]>,
    /// Sum over views of the per-channel variances.
    pub channel_var_sum: Vec<[f64; 3]>,
    /// Sum over views of `var_r + var_g + var_b`.
    pub variance_sum: Vec<f64>,
    /// Sum over views of the world-space position gradient.
    pub position_grad_sum: Vec<[f64; 3]>,
    /// Largest screen-space radius seen, in pixels.
    pub max_radius: Vec<f64>,
    finalized: Vec<bool>,
}

impl GradAccum {
    pub fn new(n: usize, estimator: Estimator, signal: GradSignal) -> Self {
        GradAccum {
            estimator,
            signal,
            ndc_grad_norm_sum: vec![0.0; n],
            view_count: vec![0; n],
            live: vec![[StreamStat::EMPTY; 3]; n],
            channel_var_sum: vec![[0.0; 3]; n],
            variance_sum: vec![0.0; n],
            position_grad_sum: vec![[0.0; 3]; n],
            max_radius: vec![0.0; n],
            finalized: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.view_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_count.is_empty()
    }

    /// Zeroes every field, resizing to `n` Gaussians.
    pub fn reset(&mut self, n: usize) {
        *self = GradAccum::new(n, self.estimator, self.signal);
    }

    /// Opens a new view: clears live estimators and finalization marks.
    pub fn begin_view(&mut self) {
        self.live.fill([StreamStat::EMPTY; 3]);
        self.finalized.fill(false);
    }

    /// Feeds one pixel's three channel gradients to Gaussian `k`.
    #[inline]
    pub fn stream(&mut self, k: usize, g: [f64; 3]) {
        let est = self.estimator;
        for (s, v) in self.live[k].iter_mut().zip(g) {
            s.update(est, v);
        }
    }

    /// Closes the view for Gaussian `k`, folding its live channel variances and
    /// the norm of `ndc_grad` into the interval sums.
    pub fn finalize_view(&mut self, k: usize, ndc_grad: [f64; 2]) -> Result<()> {
        if k >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.len(),
            });
        }
        if self.finalized[k] {
            return Err(Error::DoubleFinalize(k));
        }
        self.finalized[k] = true;
        let live = self.live[k];
        let mut total = 0.0;
        for (c, s) in live.iter().enumerate() {
            self.channel_var_sum[k][c] += s.var;
            total += s.var;
        }
        self.variance_sum[k] += total;
        self.ndc_grad_norm_sum[k] += ndc_grad[0].hypot(ndc_grad[1]);
        self.view_count[k] += 1;
        self.live[k] = [StreamStat::EMPTY; 3];
        Ok(())
    }

    /// Average NDC gradient norm over the views seen.
    pub fn mean_grad_norm(&self, k: usize) -> f64 {
        match self.view_count[k] {
            0 => 0.0,
            m => self.ndc_grad_norm_sum[k] / m as f64,
        }
    }

    /// Average summed channel variance over the views seen.
    pub fn mean_variance(&self, k: usize) -> f64 {
        match self.view_count[k] {
            0 => 0.0,
            m => self.variance_sum[k] / m as f64,
        }
    }

    /// Keeps the accumulators of `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> GradAccum {
        GradAccum {
            estimator: self.estimator,
            signal: self.signal,
            ndc_grad_norm_sum: indices.iter().map(|&k| self.ndc_grad_norm_sum[k]).collect(),
            view_count: indices.iter().map(|&k| self.view_count[k]).collect(),
            live: indices.iter().map(|&k| self.live[k]).collect(),
            channel_var_sum: indices.iter().map(|&k| self.channel_var_sum[k]).collect(),
            variance_sum: indices.iter().map(|&k| self.variance_sum[k]).collect(),
            position_grad_sum: indices.iter().map(|&k| self.position_grad_sum[k]).collect(),
            max_radius: indices.iter().map(|&k| self.max_radius[k]).collect(),
            finalized: indices.iter().map(|&k| self.finalized[k]).collect(),
        }
    }
}

/// Outcome of the densification test for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    pub grad_norm: f64,
    pub mean_variance: f64,
    pub densify: bool,
}

/// `gamma * D + g_norm > tau`, with both terms averaged over visible views.
pub fn criteria(accum: &GradAccum, k: usize, gamma: f64, tau: f64) -> Criteria {
    if accum.view_count[k] == 0 {
        return Criteria {
            grad_norm: 0.0,
            mean_variance: 0.0,
            densify: false,
        };
    }
    let grad_norm = accum.mean_grad_norm(k);
    let mean_variance = accum.mean_variance(k);
    Criteria {
        grad_norm,
        mean_variance,
        densify: gamma * mean_variance + grad_norm > tau,
    }
}

/// Writes `gaussian_id,gnorm,dbar,var_r,var_g,var_b`; the channel columns are
/// per-view averages like `dbar`.
pub fn write_stats_csv<W: Write>(accum: &GradAccum, mut out: W) -> std::io::Result<()> {
    writeln!(out, "gaussian_id,gnorm,dbar,var_r,var_g,var_b")?;
    for k in 0..accum.len() {
        let m = accum.view_count[k].max(1) as f64;
        let cv = accum.channel_var_sum[k];
        writeln!(
            out,
            "{k},{:e},{:e},{:e},{:e},{:e}",
            accum.mean_grad_norm(k),
            accum.mean_variance(k),
            cv[0] / m,
            cv[1] / m,
            cv[2] / m
        )?;
    }
    Ok(())
}
