//! Built-in synthetic datasets.
//!
//! Both scenes are a wall of small flat Gaussians in the `z = 0` plane seen by
//! cameras on an arc in front of it. `texture` paints the wall with a fine
//! checkerboard and initializes from few points; `specular` adds a highlight
//! lobe around one light axis shared by the whole wall.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::CameraRecord;
use super::png_io::{to_byte, write_png};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianSet};
use crate::raster::{render, RenderOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthScene {
    Texture,
    Specular,
}

impl FromStr for SynthScene {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "texture" => Ok(SynthScene::Texture),
            "specular" => Ok(SynthScene::Specular),
            other => Err(Error::UnknownScene(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub scene: SynthScene,
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    /// Ground-truth Gaussians per wall side.
    pub grid: usize,
    /// Fraction of ground-truth centers kept as init points.
    pub init_fraction: f64,
}

impl SynthSpec {
    pub fn new(scene: SynthScene) -> Self {
        SynthSpec { scene, n_views: 24, width: 40, height: 40, grid: 48, init_fraction: 0.1 }
    }
}

/// Specular lobe parameters.
pub const LOBE_STRENGTH: f64 = 0.5;
pub const LOBE_EXPONENT: f64 = 8.0;
/// Unnormalized lobe axis; a little off the wall normal so the highlight
/// drifts across the arc of cameras.
pub const LIGHT_AXIS: [f64; 3] = [0.15, -0.1, 1.0];

/// `base + k * max(0, d . n)^s`, clamped to `[0, 1]`.
pub fn specular_color(base: [f64; 3], k: f64, s: f64, axis: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
    let lobe = k * dir.dot(axis).max(0.0).powf(s);
    base.map(|b| (b + lobe).clamp(0.0, 1.0))
}

/// Dense ground truth: Gaussians, and per-view colors as a function of the
/// camera center.
pub struct GroundTruth {
    pub gaussians: GaussianSet,
    pub base: Vec<[f64; 3]>,
    /// Lobe axes; empty for view-independent scenes.
    pub axes: Vec<Vector3<f64>>,
}

impl GroundTruth {
    pub fn colors(&self, center: &Vector3<f64>) -> Vec<[f64; 3]> {
        if self.axes.is_empty() {
            return self.base.clone();
        }
        (0..self.gaussians.len())
            .map(|k| {
                let d = (self.gaussians.position(k) - center).normalize();
                specular_color(self.base[k], LOBE_STRENGTH, LOBE_EXPONENT, &self.axes[k], &d)
            })
            .collect()
    }
}

pub fn ground_truth(spec: &SynthSpec, seed: u64) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.grid;
    let spacing = 2.0 / n as f64;
    let mut gaussians = GaussianSet::empty(1);
    let mut base = Vec::with_capacity(n * n);
    let mut axes = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let u = -1.0 + (i as f64 + 0.5) * spacing + rng.random_range(-0.15..0.15) * spacing;
            let v = -1.0 + (j as f64 + 0.5) * spacing + rng.random_range(-0.15..0.15) * spacing;
            gaussians.push(
                [u, v, 0.0],
                [(0.6 * spacing).ln(), (0.6 * spacing).ln(), (0.05 * spacing).ln()],
                [1.0, 0.0, 0.0, 0.0],
                logit(0.95),
                &[0.0],
            );
            match spec.scene {
                SynthScene::Texture => {
                    // checker cells of 0.2 with a slow hue drift
                    let odd = ((u / 0.2).floor() as i64 + (v / 0.2).floor() as i64).rem_euclid(2) == 1;
                    let t = 0.5 + 0.25 * (u + v);
                    base.push(if odd { [0.9 * t, 0.2, 0.9 * (1.0 - t)] } else { [0.1, 0.8 * t + 0.1, 0.3] });
                }
                SynthScene::Specular => {
                    base.push([0.25 + 0.15 * u, 0.3, 0.25 - 0.15 * v]);
                    axes.push(Vector3::from(LIGHT_AXIS).normalize());
                }
            }
        }
    }
    GroundTruth { gaussians, base, axes }
}

/// Cameras on an arc in front of the wall, all looking at its center.
pub fn synth_cameras(spec: &SynthSpec) -> Result<Vec<Camera>> {
    let n = spec.n_views;
    (0..n)
        .map(|i| {
            let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let az = (-50.0 + 100.0 * f).to_radians();
            let el = (15.0 * (2.0 * std::f64::consts::PI * 3.0 * f).sin()).to_radians();
            let r = 3.0;
            let eye = Vector3::new(r * az.sin() * el.cos(), r * el.sin(), -r * az.cos() * el.cos());
            Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 1.3 * spec.width as f64, spec.width, spec.height)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub n_views: usize,
    pub n_points: usize,
}

/// Writes `cameras.json`, `images/view_XXX.png` and `points3D.txt` into
/// `out`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64, out: &Path) -> Result<SynthSummary> {
    if spec.n_views == 0 || spec.width == 0 || spec.height == 0 || spec.grid == 0 {
        return Err(Error::InvalidInput("synthetic dataset dimensions must be positive".into()));
    }
    if !(spec.init_fraction > 0.0 && spec.init_fraction <= 1.0) {
        return Err(Error::InvalidInput("init fraction must lie in (0, 1]".into()));
    }
    let gt = ground_truth(spec, seed);
    let cameras = synth_cameras(spec)?;
    let img_dir = out.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let mut records = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let rgb = gt.colors(&cam.center());
        let (img, _) = render(&gt.gaussians, cam, &rgb, &RenderOptions::default().sequential())?;
        let rel = format!("images/view_{i:03}.png");
        write_png(&out.join(&rel), &img)?;
        records.push(CameraRecord::from_camera(cam, rel));
    }
    let json = serde_json::to_string_pretty(&records).expect("records serialize");
    let cam_path = out.join("cameras.json");
    std::fs::write(&cam_path, json + "\n").map_err(|e| Error::io(&cam_path, e))?;

    let n_gt = gt.gaussians.len();
    let m = (spec.init_fraction * n_gt as f64 + 1e-9).floor() as usize;
    // independent stream so the subsample does not shift with the wall jitter
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut pick = rand::seq::index::sample(&mut rng, n_gt, m).into_vec();
    pick.sort_unstable();
    let mut text = String::from("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for (id, &k) in pick.iter().enumerate() {
        let p = gt.gaussians.positions[k];
        let c = gt.base[k].map(to_byte);
        writeln!(text, "{} {:?} {:?} {:?} {} {} {} 0", id + 1, p[0], p[1], p[2], c[0], c[1], c[2]).unwrap();
    }
    let pts_path = out.join("points3D.txt");
    std::fs::write(&pts_path, text).map_err(|e| Error::io(&pts_path, e))?;
    Ok(SynthSummary { n_views: cameras.len(), n_points: m })
}
