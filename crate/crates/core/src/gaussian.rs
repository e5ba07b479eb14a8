//! Gaussian primitives stored as a structure of arrays, plus the activation
//! functions and covariance construction shared by the renderer and the
//! densification controller.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Default dimension of the per-Gaussian appearance embedding.
pub const DEFAULT_FEATURE_DIM: usize = 16;
/// Lower bound applied to the initial per-axis scale.
pub const MIN_INIT_SCALE: f64 = 1e-7;
pub const INIT_OPACITY: f64 = 0.1;
pub const INIT_FEATURE_STD: f64 = 0.1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Gaussians in structure-of-arrays layout. Quaternions are `(w, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    /// Row-major `len() x feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl GaussianSet {
    pub fn empty(feature_dim: usize) -> Self {
        GaussianSet {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            features: Vec::new(),
            feature_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, k: usize) -> Vector3<f64> {
        Vector3::from(self.positions[k])
    }

    pub fn scale(&self, k: usize) -> Vector3<f64> {
        Vector3::from(self.log_scales[k]).map(f64::exp)
    }

    pub fn opacity(&self, k: usize) -> f64 {
        sigmoid(self.opacity_logits[k])
    }

    pub fn feature(&self, k: usize) -> &[f64] {
        &self.features[k * self.feature_dim..(k + 1) * self.feature_dim]
    }

    pub fn push(
        &mut self,
        position: [f64; 3],
        log_scale: [f64; 3],
        rotation: [f64; 4],
        opacity_logit: f64,
        feature: &[f64],
    ) {
        debug_assert_eq!(feature.len(), self.feature_dim);
        self.positions.push(position);
        self.log_scales.push(log_scale);
        self.rotations.push(rotation);
        self.opacity_logits.push(opacity_logit);
        self.features.extend_from_slice(feature);
    }

    /// Copies Gaussian `k` of `self` onto the end of `out`.
    pub fn push_from(&self, k: usize, out: &mut GaussianSet) {
        out.push(
            self.positions[k],
            self.log_scales[k],
            self.rotations[k],
            self.opacity_logits[k],
            self.feature(k),
        );
    }

    /// New set holding the Gaussians at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::empty(self.feature_dim);
        for &k in indices {
            self.push_from(k, &mut out);
        }
        out
    }

    /// Checks the array-length and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |what: &'static str, got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got,
                })
            }
        };
        check("log_scales", self.log_scales.len())?;
        check("rotations", self.rotations.len())?;
        check("opacity_logits", self.opacity_logits.len())?;
        if self.features.len() != n * self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "features",
                expected: n * self.feature_dim,
                got: self.features.len(),
            });
        }
        let finite = self.positions.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.features.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        if self.rotations.iter().any(|q| q.iter().all(|&c| c == 0.0)) {
            return Err(Error::InvalidInput("zero quaternion".into()));
        }
        Ok(())
    }
}

/// Builds one Gaussian per input point.
///
/// Scales start at the mean distance to the (up to) three nearest neighbours;
/// a lone point has no neighbours and falls back to [`MIN_INIT_SCALE`].
/// Point colors are accepted for interface parity with SfM loaders but
/// appearance is decoded by the color MLP, so they only get validated.
pub fn init_from_points(
    points: &[[f64; 3]],
    colors: Option<&[[f64; 3]]>,
    feature_dim: usize,
    seed: u64,
) -> Result<GaussianSet> {
    if points.is_empty() {
        return Err(Error::InvalidInput("empty point set".into()));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("input point coordinates"));
    }
    if let Some(colors) = colors {
        if colors.len() != points.len() {
            return Err(Error::DimensionMismatch {
                what: "point colors",
                expected: points.len(),
                got: colors.len(),
            });
        }
    }

    let mean_dists = knn_mean_distance(points, 3);
    let opacity_logit = logit(INIT_OPACITY);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_FEATURE_STD).expect("valid std");

    let mut set = GaussianSet::empty(feature_dim);
    let mut feature = vec![0.0; feature_dim];
    for (p, d) in points.iter().zip(mean_dists) {
        let s = d.max(MIN_INIT_SCALE).ln();
        for f in feature.iter_mut() {
            *f = normal.sample(&mut rng);
        }
        set.push(*p, [s; 3], [1.0, 0.0, 0.0, 0.0], opacity_logit, &feature);
    }
    Ok(set)
}

/// Mean Euclidean distance from each point to its `k` nearest neighbours
/// (fewer when the set is smaller). Uses a uniform grid so large SfM clouds
/// stay tractable.
pub(crate) fn knn_mean_distance(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let n = points.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let k = k.min(n - 1);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0_f64, f64::max);
    if extent == 0.0 {
        return vec![0.0; n];
    }
    // about two points per occupied cell for a surface-like cloud
    let cell = (extent / (n as f64 / 2.0).sqrt().max(1.0)).max(extent * 1e-6);
    let key = |p: &[f64; 3]| -> [i64; 3] {
        [
            ((p[0] - lo[0]) / cell).floor() as i64,
            ((p[1] - lo[1]) / cell).floor() as i64,
            ((p[2] - lo[2]) / cell).floor() as i64,
        ]
    };
    let mut grid: std::collections::HashMap<[i64; 3], Vec<usize>> = Default::default();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let max_ring = (extent / cell).ceil() as i64 + 1;

    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &points[i];
            let c = key(p);
            // sorted ascending, at most k entries
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            for ring in 0..=max_ring {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz])
                            else {
                                continue;
                            };
                            for &j in bucket {
                                if j == i {
                                    continue;
                                }
                                let q = &points[j];
                                let d = ((p[0] - q[0]).powi(2)
                                    + (p[1] - q[1]).powi(2)
                                    + (p[2] - q[2]).powi(2))
                                .sqrt();
                                let pos = best.partition_point(|&b| b <= d);
                                if pos < k {
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                // every unvisited cell is at least `ring * cell` away
                if best.len() == k && best[k - 1] <= ring as f64 * cell {
                    break;
                }
            }
            best.iter().sum::<f64>() / best.len() as f64
        })
        .collect()
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let v = Vector4::from(*q);
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidInput("zero quaternion".into()));
    }
    let u = v / norm;
    Ok(rotation_of_unit(&u))
}

fn rotation_of_unit(u: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw (unnormalized) quaternion.
pub fn rotation_matrix_backward(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let v = Vector4::from(*q);
    let norm = v.norm();
    let u = v / norm;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let g = |r: usize, c: usize| d_r[(r, c)];

    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let du = Vector4::new(dw, dx, dy, dz);
    let dq = (du - u * u.dot(&du)) / norm;
    [dq[0], dq[1], dq[2], dq[3]]
}

/// `R diag(exp(2 log_scale)) R^T`.
pub fn build_covariance(log_scale: &[f64; 3], rotation: &[f64; 4]) -> Result<Matrix3<f64>> {
    let r = rotation_matrix(rotation)?;
    let s = Vector3::from(*log_scale).map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let cov = m * m.transpose();
    // exact symmetry regardless of rounding in the product
    Ok((cov + cov.transpose()) * 0.5)
}

/// Gradients of a loss w.r.t. log-scale and raw quaternion, given `dL/dSigma`
/// over all nine entries.
pub fn covariance_backward(
    log_scale: &[f64; 3],
    rotation: &[f64; 4],
    d_cov: &Matrix3<f64>,
) -> ([f64; 3], [f64; 4]) {
    let r = rotation_matrix(rotation).expect("validated quaternion");
    let s = Vector3::from(*log_scale).map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let d_m = (d_cov + d_cov.transpose()) * m;
    let mut d_log_scale = [0.0; 3];
    for (i, d) in d_log_scale.iter_mut().enumerate() {
        // dM[:,i]/ds_i = R[:,i], ds_i/dlog = s_i
        *d = d_m.column(i).dot(&r.column(i)) * s[i];
    }
    let d_r = d_m * Matrix3::from_diagonal(&s);
    (d_log_scale, rotation_matrix_backward(rotation, &d_r))
}
