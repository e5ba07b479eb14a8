use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Unit vector from the camera center towards the Gaussian.
pub fn view_direction(position: &Vector3<f64>, camera_center: &Vector3<f64>) -> Result<Vector3<f64>> {
    let d = position - camera_center;
    let n = d.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput(
            "gaussian coincides with the camera center".into(),
        ));
    }
    Ok(d / n)
}

/// Adds isotropic normal noise to `dir` and renormalizes. A zero `noise_std`
/// returns `dir` untouched and draws nothing from `rng`.
pub fn perturb_direction<R: Rng + ?Sized>(dir: &Vector3<f64>, noise_std: f64, rng: &mut R) -> Vector3<f64> {
    if noise_std == 0.0 {
        return *dir;
    }
    let eps = Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ) * noise_std;
    let v = dir + eps;
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        *dir
    }
}
