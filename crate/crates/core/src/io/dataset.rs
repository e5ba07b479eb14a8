use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::colmap::{load_colmap_model, parse_points};
use super::png_io::read_png;
use crate::camera::{Camera, Scene, View};
use crate::error::{Error, Result};
use crate::gaussian::init_from_points;

/// Views are held out when their index (in name order) is a multiple of this.
pub const TEST_EVERY: usize = 8;

/// One entry of `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub w2c_rotation: [f64; 9],
    pub w2c_translation: [f64; 3],
    /// Image path relative to the dataset directory. Optional when the
    /// record only describes a camera to render from.
    #[serde(default)]
    pub image: String,
}

impl CameraRecord {
    pub fn from_camera(c: &Camera, image: String) -> Self {
        let r = c.rotation;
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            w2c_rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            w2c_translation: [c.translation.x, c.translation.y, c.translation.z],
            image,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            Matrix3::from_row_slice(&self.w2c_rotation),
            Vector3::from(self.w2c_translation),
        )
    }
}

/// Posed images plus the sparse points used for initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Sorted by name.
    pub views: Vec<View>,
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl Dataset {
    /// `(train, test)`: every eighth view, starting with the first, is test.
    pub fn split(&self) -> (Vec<View>, Vec<View>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, v) in self.views.iter().enumerate() {
            if i % TEST_EVERY == 0 {
                test.push(v.clone());
            } else {
                train.push(v.clone());
            }
        }
        (train, test)
    }

    pub fn to_scene(&self, feature_dim: usize, seed: u64) -> Result<Scene> {
        let gaussians = init_from_points(&self.points, Some(&self.colors), feature_dim, seed)?;
        let (train, test) = self.split();
        Scene::new(gaussians, train, test)
    }
}

fn load_view(dir: &Path, rel: &str, camera: Camera) -> Result<View> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "image file missing")));
    }
    let image = read_png(&path)?;
    if image.width != camera.width || image.height != camera.height {
        return Err(Error::InvalidInput(format!(
            "{}: image is {}x{} but its camera is {}x{}",
            path.display(),
            image.width,
            image.height,
            camera.width,
            camera.height
        )));
    }
    Ok(View { camera, image, name: rel.to_string() })
}

/// Loads `cameras.json` + `points3D.txt` when present, otherwise a COLMAP
/// text model from `dir`, `dir/sparse/0` or `dir/sparse` with images under
/// `dir/images`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let json = dir.join("cameras.json");
    if json.is_file() {
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let records: Vec<CameraRecord> =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: json.clone(), line: e.line(), msg: e.to_string() })?;
        let mut views = records
            .iter()
            .map(|r| load_view(dir, &r.image, r.camera()?))
            .collect::<Result<Vec<_>>>()?;
        views.sort_by(|a, b| a.name.cmp(&b.name));
        let pts_path = dir.join("points3D.txt");
        let text = std::fs::read_to_string(&pts_path).map_err(|e| Error::io(&pts_path, e))?;
        let (points, colors) = parse_points(&pts_path, &text)?;
        return Ok(Dataset { views, points, colors });
    }
    let model_dir: PathBuf = [dir.join("sparse/0"), dir.join("sparse"), dir.to_path_buf()]
        .into_iter()
        .find(|d| d.join("cameras.txt").is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join("cameras.txt"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no cameras.json or COLMAP cameras.txt"),
            )
        })?;
    let model = load_colmap_model(&model_dir)?;
    let mut views = Vec::with_capacity(model.images.len());
    for im in &model.images {
        let c = &model.cameras[&im.camera_id];
        let camera = Camera::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, im.rotation(), im.translation())?;
        views.push(load_view(dir, &format!("images/{}", im.name), camera)?);
    }
    Ok(Dataset { views, points: model.points, colors: model.colors })
}
