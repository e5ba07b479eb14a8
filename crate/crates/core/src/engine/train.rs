use std::io::Write;

use log::warn;
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::loss::{loss, psnr, ssim};
use super::{Checkpoint, TrainConfig};
use crate::appearance::{Appearance, DirectionNoise};
use crate::camera::{scene_extent, Camera, Scene, View};
use crate::densify::{densify_step, reset_opacity, DensifyEvent};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::gradstats::GradAccum;
use crate::image::Image;
use crate::raster::{backward, project, render, RenderOptions};

pub const METRICS_CSV_HEADER: &str = "iter,loss,psnr_train,n_gaussians";
pub const CURVES_CSV_HEADER: &str = "iter,q1_dbar,q2_dbar,q3_dbar,q4_dbar";
pub const EVAL_CSV_HEADER: &str = "view,psnr,ssim";

const OPACITY_RESET_CEILING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss: f64,
    pub psnr_train: f64,
    pub n_gaussians: usize,
}

/// Mean D̄ of each quartile of the Gaussians seen since the last reset,
/// `q[0]` lowest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub iter: usize,
    pub q: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub curves: Vec<CurveRow>,
    pub events: Vec<DensifyEvent>,
    /// Iterations whose update was dropped for non-finite gradients.
    pub skipped_steps: usize,
}

struct Optimizers {
    positions: AdamState,
    log_scales: AdamState,
    rotations: AdamState,
    opacities: AdamState,
    features: AdamState,
    mlp: AdamState,
    grid: AdamState,
}

impl Optimizers {
    fn new(n: usize, feature_dim: usize, mlp: usize, grid: usize) -> Self {
        Optimizers {
            positions: AdamState::new(3 * n),
            log_scales: AdamState::new(3 * n),
            rotations: AdamState::new(4 * n),
            opacities: AdamState::new(n),
            features: AdamState::new(feature_dim * n),
            mlp: AdamState::new(mlp),
            grid: AdamState::new(grid),
        }
    }

    fn remap(&mut self, sources: &[Option<usize>], feature_dim: usize) {
        self.positions = self.positions.remap(sources, 3);
        self.log_scales = self.log_scales.remap(sources, 3);
        self.rotations = self.rotations.remap(sources, 4);
        self.opacities = self.opacities.remap(sources, 1);
        self.features = self.features.remap(sources, feature_dim);
    }
}

/// Single-view-per-step optimizer over a [`Scene`].
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    scene: &'a Scene,
    pub gaussians: GaussianSet,
    pub appearance: Appearance,
    pub accum: GradAccum,
    pub iteration: usize,
    pub extent: f64,
    pub metrics: Vec<MetricsRow>,
    pub curves: Vec<CurveRow>,
    pub events: Vec<DensifyEvent>,
    pub skipped_steps: usize,
    opt: Optimizers,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    grid_grad: Vec<f64>,
    grid_mark: Vec<bool>,
}

fn nonfinite(xs: &[f64]) -> bool {
    xs.iter().any(|v| !v.is_finite())
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a Scene, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if scene.train.is_empty() {
            return Err(Error::InvalidInput("scene has no training views".into()));
        }
        if scene.gaussians.feature_dim != cfg.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "gaussian feature dimension",
                expected: cfg.feature_dim,
                got: scene.gaussians.feature_dim,
            });
        }
        let appearance = Appearance::new(cfg.feature_dim, cfg.lhe.then_some(cfg.grid), cfg.hidden, cfg.seed)?;
        let n = scene.gaussians.len();
        let grid_len = appearance.grid.as_ref().map_or(0, |g| g.tables.len());
        let opt = Optimizers::new(n, cfg.feature_dim, appearance.mlp.params.len(), grid_len);
        Ok(Trainer {
            accum: GradAccum::new(n, cfg.estimator, cfg.signal),
            extent: scene_extent(scene.train.iter().map(|v| &v.camera)),
            gaussians: scene.gaussians.clone(),
            appearance,
            scene,
            iteration: 0,
            metrics: Vec::new(),
            curves: Vec::new(),
            events: Vec::new(),
            skipped_steps: 0,
            opt,
            order: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            grid_grad: vec![0.0; grid_len],
            grid_mark: vec![false; grid_len],
            cfg,
        })
    }

    fn options(&self) -> RenderOptions {
        RenderOptions { background: self.cfg.background, parallel: self.cfg.parallel, ..Default::default() }
    }

    /// Learning rate of the positions at the current step, scaled by the
    /// scene extent and decayed log-linearly over the run.
    pub fn position_lr(&self) -> f64 {
        let f = if self.cfg.iterations == 0 {
            0.0
        } else {
            (self.iteration as f64 / self.cfg.iterations as f64).min(1.0)
        };
        let ln = (1.0 - f) * self.cfg.lr_position_init.ln() + f * self.cfg.lr_position_final.ln();
        ln.exp() * self.extent
    }

    fn next_view(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.scene.train.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Runs one optimization step and returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let view = &self.scene.train[self.next_view()];
        let noise = (self.cfg.lhe && self.cfg.direction_noise > 0.0).then(|| DirectionNoise {
            std: self.cfg.direction_noise,
            seed: self.cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (self.iteration as u64 + 1),
        });
        let opts = self.options();
        let subset: Vec<usize> = project(&self.gaussians, &view.camera).iter().map(|p| p.index).collect();
        let center = view.camera.center();
        let (rgb, cache) = self.appearance.colors(&self.gaussians, &center, &subset, noise, opts.parallel)?;
        let (pred, ctx) = render(&self.gaussians, &view.camera, &rgb, &opts)?;
        let (value, d_image) = loss(&pred, &view.image, self.cfg.lambda_dssim)?;
        self.iteration += 1;
        if !value.is_finite() {
            let bad = [
                self.gaussians.positions.as_flattened(),
                self.gaussians.log_scales.as_flattened(),
                self.gaussians.rotations.as_flattened(),
                &self.gaussians.opacity_logits,
                &self.gaussians.features,
            ]
            .iter()
            .map(|s| s.iter().filter(|v| !v.is_finite()).count())
            .sum::<usize>();
            return Err(Error::Diverged {
                iteration: self.iteration,
                msg: format!(
                    "loss {value} on view `{}`; {} gaussians, {bad} non-finite parameters, {} non-finite mlp weights",
                    view.name,
                    self.gaussians.len(),
                    self.appearance.mlp.params.iter().filter(|v| !v.is_finite()).count()
                ),
            });
        }
        let grads = backward(&ctx, &self.gaussians, &d_image, &mut self.accum)?;
        let app = self.appearance.colors_backward(&cache, &grads.rgb, opts.parallel)?;

        let mut touched = Vec::new();
        for &(i, g) in &app.grid {
            if !self.grid_mark[i] {
                self.grid_mark[i] = true;
                touched.push(i);
            }
            self.grid_grad[i] += g;
        }
        let finite = !(nonfinite(grads.positions.as_flattened())
            || nonfinite(grads.log_scales.as_flattened())
            || nonfinite(grads.rotations.as_flattened())
            || nonfinite(&grads.opacity_logits)
            || nonfinite(&app.features)
            || nonfinite(&app.mlp)
            || touched.iter().any(|&i| !self.grid_grad[i].is_finite()));
        if finite {
            let lr_pos = self.position_lr();
            let g = &mut self.gaussians;
            let o = &mut self.opt;
            o.positions.step(g.positions.as_flattened_mut(), grads.positions.as_flattened(), lr_pos)?;
            o.log_scales.step(g.log_scales.as_flattened_mut(), grads.log_scales.as_flattened(), self.cfg.lr_log_scale)?;
            o.rotations.step(g.rotations.as_flattened_mut(), grads.rotations.as_flattened(), self.cfg.lr_rotation)?;
            o.opacities.step(&mut g.opacity_logits, &grads.opacity_logits, self.cfg.lr_opacity)?;
            o.features.step(&mut g.features, &app.features, self.cfg.lr_feature)?;
            o.mlp.step(&mut self.appearance.mlp.params, &app.mlp, self.cfg.lr_mlp)?;
            if let Some(grid) = self.appearance.grid.as_mut() {
                o.grid.step_sparse(&mut grid.tables, &self.grid_grad, &touched, self.cfg.lr_hash)?;
            }
        } else {
            self.skipped_steps += 1;
            warn!("iteration {}: non-finite gradient, update skipped", self.iteration);
        }
        for &i in &touched {
            self.grid_grad[i] = 0.0;
            self.grid_mark[i] = false;
        }

        self.metrics.push(MetricsRow {
            iter: self.iteration,
            loss: value,
            psnr_train: psnr(&pred, &view.image)?,
            n_gaussians: self.gaussians.len(),
        });
        if self.iteration.is_multiple_of(self.cfg.stats_interval) {
            self.curves.push(CurveRow { iter: self.iteration, q: quartile_means(&self.accum) });
        }
        let dcfg = self.cfg.effective_densify();
        if dcfg.due(self.iteration, self.cfg.iterations) {
            let seed = self.cfg.seed ^ (self.iteration as u64).wrapping_mul(0xd1b5_4a32_d192_ed03);
            let (set, sources, event) = densify_step(
                &self.gaussians,
                &self.accum,
                &dcfg,
                self.extent,
                self.position_lr(),
                self.iteration,
                seed,
            )?;
            self.gaussians = set;
            self.opt.remap(&sources, self.cfg.feature_dim);
            self.accum.reset(self.gaussians.len());
            self.events.push(event);
        }
        let end = dcfg.end_step.unwrap_or(self.cfg.iterations / 2);
        if self.iteration.is_multiple_of(dcfg.opacity_reset_interval) && self.iteration <= end {
            reset_opacity(&mut self.gaussians, OPACITY_RESET_CEILING);
            self.opt.opacities.reset_moments();
        }
        Ok(value)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration as u64,
            gaussians: self.gaussians.clone(),
            appearance: self.appearance.clone(),
            config: self.cfg.clone(),
        }
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            checkpoint: self.checkpoint(),
            metrics: self.metrics,
            curves: self.curves,
            events: self.events,
            skipped_steps: self.skipped_steps,
        }
    }
}

/// Quartile means of D̄ over Gaussians with at least one finalized view.
pub fn quartile_means(accum: &GradAccum) -> [f64; 4] {
    let mut d: Vec<f64> = (0..accum.len())
        .filter(|&k| accum.view_count[k] > 0)
        .map(|k| accum.mean_variance(k))
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    std::array::from_fn(|q| {
        let (lo, hi) = (q * n / 4, (q + 1) * n / 4);
        if hi > lo {
            d[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        } else {
            0.0
        }
    })
}

pub fn train(scene: &Scene, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(scene, cfg.clone())?;
    for _ in 0..cfg.iterations {
        t.step()?;
    }
    Ok(t.finish())
}

/// Noise-free render of a model from `camera`.
pub fn render_view(
    gaussians: &GaussianSet,
    appearance: &Appearance,
    camera: &Camera,
    background: [f64; 3],
    parallel: bool,
) -> Result<Image> {
    let subset: Vec<usize> = project(gaussians, camera).iter().map(|p| p.index).collect();
    let center: Vector3<f64> = camera.center();
    let (rgb, _) = appearance.colors(gaussians, &center, &subset, None, parallel)?;
    let opts = RenderOptions { background, parallel, ..Default::default() };
    Ok(render(gaussians, camera, &rgb, &opts)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub views: Vec<(String, f64, f64)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub fn evaluate(ckpt: &Checkpoint, views: &[View]) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::InvalidInput("no views to evaluate".into()));
    }
    let mut out = Vec::with_capacity(views.len());
    for v in views {
        let img = render_view(&ckpt.gaussians, &ckpt.appearance, &v.camera, ckpt.config.background, ckpt.config.parallel)?;
        out.push((v.name.clone(), psnr(&img, &v.image)?, ssim(&img, &v.image)?));
    }
    let n = out.len() as f64;
    Ok(EvalReport {
        mean_psnr: out.iter().map(|r| r.1).sum::<f64>() / n,
        mean_ssim: out.iter().map(|r| r.2).sum::<f64>() / n,
        views: out,
    })
}

/// One accumulation pass over `views` with the model frozen.
pub fn replay_stats(ckpt: &Checkpoint, views: &[View]) -> Result<GradAccum> {
    let cfg = &ckpt.config;
    let mut accum = GradAccum::new(ckpt.gaussians.len(), cfg.estimator, cfg.signal);
    for v in views {
        let subset: Vec<usize> = project(&ckpt.gaussians, &v.camera).iter().map(|p| p.index).collect();
        let (rgb, _) = ckpt.appearance.colors(&ckpt.gaussians, &v.camera.center(), &subset, None, cfg.parallel)?;
        let opts = RenderOptions { background: cfg.background, parallel: cfg.parallel, ..Default::default() };
        let (pred, ctx) = render(&ckpt.gaussians, &v.camera, &rgb, &opts)?;
        let (_, d) = loss(&pred, &v.image, cfg.lambda_dssim)?;
        backward(&ctx, &ckpt.gaussians, &d, &mut accum)?;
    }
    Ok(accum)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iter, r.loss, r.psnr_train, r.n_gaussians)?;
    }
    Ok(())
}

pub fn write_curves_csv<W: Write>(rows: &[CurveRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CURVES_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.iter, r.q[0], r.q[1], r.q[2], r.q[3])?;
    }
    Ok(())
}

/// Per-view rows followed by a `mean` row.
pub fn write_eval_csv<W: Write>(report: &EvalReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{EVAL_CSV_HEADER}")?;
    for (name, p, s) in &report.views {
        writeln!(out, "{name},{p},{s}")?;
    }
    writeln!(out, "mean,{},{}", report.mean_psnr, report.mean_ssim)
}
