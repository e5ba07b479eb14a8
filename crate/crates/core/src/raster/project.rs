use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::camera::Camera;
use crate::gaussian::{build_covariance, covariance_backward, GaussianSet};

/// Gaussians closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of every screen-space covariance.
pub const LOW_PASS: f64 = 0.3;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    /// Index into the source [`GaussianSet`].
    pub index: usize,
    pub ndc_xy: [f64; 2],
    pub pixel_xy: [f64; 2],
    /// `(xx, xy, yy)` of the 2x2 covariance, pixels squared.
    pub cov2d: [f64; 3],
    /// `(xx, xy, yy)` of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    /// 3-sigma bound of the major axis, pixels.
    pub radius: f64,
    pub opacity: f64,
}

/// `(2u + 1) / W - 1`: maps pixel centers onto `[-1, 1]`.
#[inline]
pub fn pixel_to_ndc(pixel: f64, size: usize) -> f64 {
    (2.0 * pixel + 1.0) / size as f64 - 1.0
}

fn jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz2,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz2,
    )
}

/// Projects one Gaussian; `None` when it is behind the near plane or its
/// footprint degenerates.
pub fn project_one(gaussians: &GaussianSet, camera: &Camera, k: usize) -> Option<Projected2D> {
    let t = camera.world_to_camera(&gaussians.position(k));
    if !(t.z >= NEAR_PLANE) {
        return None;
    }
    let cov3d = build_covariance(&gaussians.log_scales[k], &gaussians.rotations[k]).ok()?;
    let jw = jacobian(camera, &t) * camera.rotation;
    let cov = jw * cov3d * jw.transpose();
    let (a, b, c) = (cov[(0, 0)] + LOW_PASS, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + LOW_PASS);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (3.0 * lambda_max.sqrt()).ceil();
    let u = camera.fx * t.x / t.z + camera.cx;
    let v = camera.fy * t.y / t.z + camera.cy;
    Some(Projected2D {
        index: k,
        ndc_xy: [pixel_to_ndc(u, camera.width), pixel_to_ndc(v, camera.height)],
        pixel_xy: [u, v],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        radius,
        opacity: gaussians.opacity(k),
    })
}

/// Projects every Gaussian, dropping culled ones.
pub fn project(gaussians: &GaussianSet, camera: &Camera) -> Vec<Projected2D> {
    (0..gaussians.len())
        .filter_map(|k| project_one(gaussians, camera, k))
        .collect()
}

/// Upstream gradients for one projected Gaussian.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ScreenGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
}

/// Chain rule from screen-space mean and conic to world position, log-scale
/// and quaternion.
pub(crate) fn project_backward(
    gaussians: &GaussianSet,
    camera: &Camera,
    p: &Projected2D,
    g: &ScreenGrad,
) -> ([f64; 3], [f64; 3], [f64; 4]) {
    let k = p.index;
    let t = camera.world_to_camera(&gaussians.position(k));
    let cov3d = build_covariance(&gaussians.log_scales[k], &gaussians.rotations[k])
        .expect("projected gaussians have valid quaternions");
    let w = camera.rotation;
    let jac = jacobian(camera, &t);
    let tm = jac * w;

    // conic -> cov2d
    let [a, b, c] = p.cov2d;
    let det = a * c - b * b;
    let d2 = det * det;
    let [ga, gb, gc] = g.conic;
    let d_a = ga * (-c * c / d2) + gb * (b * c / d2) + gc * (-b * b / d2);
    let d_b = ga * (2.0 * b * c / d2) + gb * (-1.0 / det - 2.0 * b * b / d2) + gc * (2.0 * a * b / d2);
    let d_c = ga * (-b * b / d2) + gb * (a * b / d2) + gc * (-a * a / d2);
    let g2 = nalgebra::Matrix2::new(d_a, 0.5 * d_b, 0.5 * d_b, d_c);

    let d_cov3d: Matrix3<f64> = tm.transpose() * g2 * tm;
    let d_tm: Matrix2x3<f64> = 2.0 * g2 * tm * cov3d;
    let d_j = d_tm * w.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let [gu, gv] = g.mean2d;
    let mut d_t = Vector3::new(
        gu * fx * iz - d_j[(0, 2)] * fx * iz2,
        gv * fy * iz - d_j[(1, 2)] * fy * iz2,
        -gu * fx * t.x * iz2 - gv * fy * t.y * iz2,
    );
    d_t.z += -d_j[(0, 0)] * fx * iz2 + d_j[(0, 2)] * 2.0 * fx * t.x * iz3 - d_j[(1, 1)] * fy * iz2
        + d_j[(1, 2)] * 2.0 * fy * t.y * iz3;
    let d_pos = w.transpose() * d_t;

    let (d_ls, d_q) = covariance_backward(&gaussians.log_scales[k], &gaussians.rotations[k], &d_cov3d);
    ([d_pos.x, d_pos.y, d_pos.z], d_ls, d_q)
}
