use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::Image;

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `+y` of the image pointing
    /// down and `up` roughly opposite to it.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            fx,
            fx,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera has zero width or height".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if !(ortho <= 1e-9) {
            return Err(Error::InvalidInput(format!(
                "world_to_camera rotation not orthonormal (deviation {ortho:e})"
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: GaussianSet,
    pub train: Vec<View>,
    pub test: Vec<View>,
}

impl Scene {
    pub fn new(gaussians: GaussianSet, train: Vec<View>, test: Vec<View>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("scene needs at least one training camera".into()));
        }
        for v in train.iter().chain(&test) {
            if v.image.width != v.camera.width || v.image.height != v.camera.height {
                return Err(Error::InvalidInput(format!(
                    "image `{}` is {}x{} but its camera is {}x{}",
                    v.name, v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        gaussians.validate()?;
        Ok(Scene {
            gaussians,
            train,
            test,
        })
    }
}

/// Radius of the bounding sphere of the camera centers, inflated by 10%.
pub fn scene_extent<'a>(cameras: impl IntoIterator<Item = &'a Camera>) -> f64 {
    let centers: Vec<Vector3<f64>> = cameras.into_iter().map(Camera::center).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = centers
        .iter()
        .map(|c| (c - mean).norm())
        .fold(0.0_f64, f64::max);
    // a single camera has zero spread
    if radius > 0.0 {
        radius * 1.1
    } else {
        1.1
    }
}
