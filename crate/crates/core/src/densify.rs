//! Adaptive density control: select, clone or split, prune, and opacity reset.

use std::io::Write;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{logit, rotation_matrix, GaussianSet};
use crate::gradstats::{criteria, GradAccum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub tau: f64,
    pub gamma: f64,
    pub interval: usize,
    pub start_step: usize,
    /// Last step at which densification may run. `None` means half of the
    /// training length.
    pub end_step: Option<usize>,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub split_factor: f64,
    pub opacity_reset_interval: usize,
    /// Prune Gaussians whose largest screen radius since the last
    /// densification exceeds this many pixels.
    pub max_screen_radius: Option<f64>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            tau: 0.0004,
            gamma: 2048.0,
            interval: 100,
            start_step: 500,
            end_step: None,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            split_factor: 1.6,
            opacity_reset_interval: 3000,
            max_screen_radius: None,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be finite and non-negative");
        }
        if self.interval == 0 {
            return bad("densify interval must be at least 1");
        }
        if !(self.percent_dense > 0.0 && self.percent_dense < 1.0) {
            return bad("percent_dense must lie in (0, 1)");
        }
        if !(self.prune_opacity >= 0.0 && self.prune_opacity < 1.0) {
            return bad("prune opacity must lie in [0, 1)");
        }
        if !(self.split_factor > 1.0) || !self.split_factor.is_finite() {
            return bad("split factor must exceed 1");
        }
        if let Some(r) = self.max_screen_radius {
            if !(r > 0.0) {
                return bad("max screen radius must be positive");
            }
        }
        Ok(())
    }

    /// Whether a densification runs after `step` (1-based) of `total` steps.
    pub fn due(&self, step: usize, total: usize) -> bool {
        let end = self.end_step.unwrap_or(total / 2);
        step > self.start_step && step <= end && step.is_multiple_of(self.interval)
    }
}

/// Indices whose criterion fires, ascending.
pub fn select(accum: &GradAccum, gamma: f64, tau: f64) -> Vec<usize> {
    (0..accum.len()).filter(|&k| criteria(accum, k, gamma, tau).densify).collect()
}

/// For each output Gaussian, the input Gaussian whose optimizer state it
/// inherits. `None` marks a newly created Gaussian.
pub type Reindex = Vec<Option<usize>>;

/// Clones small selected Gaussians and splits large ones.
///
/// Survivors keep their order and come first; clones and split children are
/// appended in selection order. A clone's copy moves by `nudge_step` against
/// `position_grads[k]`.
pub fn clone_or_split(
    set: &GaussianSet,
    indices: &[usize],
    position_grads: &[[f64; 3]],
    nudge_step: f64,
    cfg: &DensifyConfig,
    scene_extent: f64,
    seed: u64,
) -> Result<(GaussianSet, Reindex)> {
    let n = set.len();
    if position_grads.len() != n {
        return Err(Error::DimensionMismatch {
            what: "position gradients",
            expected: n,
            got: position_grads.len(),
        });
    }
    let mut split = vec![false; n];
    let mut plan = Vec::with_capacity(indices.len());
    for &k in indices {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
        let s = set.scale(k);
        let is_split = s.max() >= cfg.percent_dense * scene_extent;
        split[k] = is_split;
        plan.push((k, is_split));
    }

    let mut out = GaussianSet::empty(set.feature_dim);
    let mut reindex = Vec::with_capacity(n + indices.len());
    for k in 0..n {
        if !split[k] {
            set.push_from(k, &mut out);
            reindex.push(Some(k));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shrink = cfg.split_factor.ln();
    for (k, is_split) in plan {
        if is_split {
            let r = rotation_matrix(&set.rotations[k])?;
            let s = set.scale(k);
            let p = set.position(k);
            for _ in 0..2 {
                let z = Vector3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                let child = p + r * s.component_mul(&z);
                let ls = set.log_scales[k].map(|v| v - shrink);
                out.push(
                    [child.x, child.y, child.z],
                    ls,
                    set.rotations[k],
                    set.opacity_logits[k],
                    set.feature(k),
                );
                reindex.push(None);
            }
        } else {
            let g = Vector3::from(position_grads[k]);
            let gn = g.norm();
            let mut pos = set.positions[k];
            if gn > 0.0 && gn.is_finite() {
                for a in 0..3 {
                    pos[a] -= nudge_step * g[a] / gn;
                }
            }
            out.push(pos, set.log_scales[k], set.rotations[k], set.opacity_logits[k], set.feature(k));
            reindex.push(None);
        }
    }
    Ok((out, reindex))
}

/// Indices that survive pruning by opacity and, when given, screen radius.
pub fn prune_keep(set: &GaussianSet, prune_opacity: f64, radius: Option<(&[f64], f64)>) -> Vec<usize> {
    (0..set.len())
        .filter(|&k| set.opacity(k) >= prune_opacity)
        .filter(|&k| radius.is_none_or(|(r, max)| r.get(k).is_none_or(|&rk| rk <= max)))
        .collect()
}

/// Removes low-opacity Gaussians (and oversized ones when `radius` is given
/// as `(per-Gaussian radii, max)`), returning the survivors' old indices.
pub fn prune(set: &GaussianSet, prune_opacity: f64, radius: Option<(&[f64], f64)>) -> (GaussianSet, Vec<usize>) {
    let keep = prune_keep(set, prune_opacity, radius);
    (set.gather(&keep), keep)
}

pub fn reset_opacity(set: &mut GaussianSet, ceiling: f64) {
    let cap = logit(ceiling);
    for v in set.opacity_logits.iter_mut() {
        *v = v.min(cap);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub step: usize,
    pub n_before: usize,
    /// Selected under the configured rule but not under the gradient-only rule.
    pub n_selected_vgd_only: usize,
    pub n_selected_baseline: usize,
    pub n_after: usize,
}

pub const DENSIFY_CSV_HEADER: &str = "step,n_before,n_selected_vgd_only,n_selected_baseline,n_after";

pub fn write_densify_csv<W: Write>(events: &[DensifyEvent], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DENSIFY_CSV_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.step, e.n_before, e.n_selected_vgd_only, e.n_selected_baseline, e.n_after
        )?;
    }
    Ok(())
}

/// One full densification pass: select, clone or split, prune. The returned
/// [`Reindex`] maps output Gaussians to input Gaussians. The caller resets
/// the accumulators afterwards.
pub fn densify_step(
    set: &GaussianSet,
    accum: &GradAccum,
    cfg: &DensifyConfig,
    scene_extent: f64,
    nudge_step: f64,
    step: usize,
    seed: u64,
) -> Result<(GaussianSet, Reindex, DensifyEvent)> {
    if accum.len() != set.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient accumulator",
            expected: set.len(),
            got: accum.len(),
        });
    }
    let selected = select(accum, cfg.gamma, cfg.tau);
    let baseline = select(accum, 0.0, cfg.tau);
    let vgd_only = selected.iter().filter(|k| baseline.binary_search(k).is_err()).count();

    let (grown, reindex) = clone_or_split(
        set,
        &selected,
        &accum.position_grad_sum,
        nudge_step,
        cfg,
        scene_extent,
        seed,
    )?;
    let radii: Vec<f64> = reindex
        .iter()
        .map(|src| src.map_or(0.0, |k| accum.max_radius[k]))
        .collect();
    let (pruned, keep) = prune(&grown, cfg.prune_opacity, cfg.max_screen_radius.map(|m| (&radii[..], m)));
    let reindex: Reindex = keep.iter().map(|&i| reindex[i]).collect();
    let event = DensifyEvent {
        step,
        n_before: set.len(),
        n_selected_vgd_only: vgd_only,
        n_selected_baseline: baseline.len(),
        n_after: pruned.len(),
    };
    Ok((pruned, reindex, event))
}
