//! View-dependent color: per-Gaussian feature plus an encoded view direction,
//! decoded by a small MLP.

mod direction;
mod hashgrid;
mod mlp;

pub use direction::{perturb_direction, view_direction};
pub use hashgrid::{hash_index, DirHashGrid, EncodeContext, HashGridConfig, SparseGrad, HASH_PRIMES};
pub use mlp::{param_count, ColorMlp, MlpCache};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::raster::map_indexed;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_DIRECTION_NOISE: f64 = 0.02;

/// Gaussians processed together when reducing MLP weight gradients. Fixed so
/// the reduction order never depends on the thread count.
const GRAD_CHUNK: usize = 256;

/// Feature, optional hash grid and MLP.
///
/// With a grid the MLP sees `[feature, grid(dir)]`; without one it sees
/// `[feature, dir]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub feature_dim: usize,
    pub grid: Option<DirHashGrid>,
    pub mlp: ColorMlp,
}

struct Entry {
    index: usize,
    grid_ctx: Option<EncodeContext>,
    cache: MlpCache,
}

/// Everything [`Appearance::colors_backward`] needs from the forward pass.
pub struct ColorCache {
    n_gaussians: usize,
    entries: Vec<Entry>,
}

impl ColorCache {
    pub fn evaluated(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceGrads {
    /// `n x feature_dim`, zero for Gaussians that were not evaluated.
    pub features: Vec<f64>,
    pub mlp: Vec<f64>,
    pub grid: SparseGrad,
}

/// Direction noise for one training step. Gaussian `k` draws from stream `k`
/// of a generator seeded with `seed`, so the draw does not depend on which
/// other Gaussians are evaluated or on scheduling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionNoise {
    pub std: f64,
    pub seed: u64,
}

impl Appearance {
    pub fn new(feature_dim: usize, grid: Option<HashGridConfig>, hidden: usize, seed: u64) -> Result<Self> {
        let grid = grid.map(|c| DirHashGrid::new(c, seed ^ 0x9e37_79b9_7f4a_7c15)).transpose()?;
        let dir_dim = grid.as_ref().map_or(3, |g| g.output_dim());
        let mlp = ColorMlp::new(&[feature_dim + dir_dim, hidden, hidden, 3], seed)?;
        Ok(Appearance { feature_dim, grid, mlp })
    }

    pub fn from_parts(feature_dim: usize, grid: Option<DirHashGrid>, mlp: ColorMlp) -> Result<Self> {
        let dir_dim = grid.as_ref().map_or(3, |g| g.output_dim());
        if mlp.input_dim() != feature_dim + dir_dim {
            return Err(Error::DimensionMismatch {
                what: "mlp input width",
                expected: feature_dim + dir_dim,
                got: mlp.input_dim(),
            });
        }
        Ok(Appearance { feature_dim, grid, mlp })
    }

    /// Color of one Gaussian seen along the unit direction `dir`.
    pub fn color(&self, feature: &[f64], dir: &Vector3<f64>) -> Result<[f64; 3]> {
        self.eval(feature, dir).map(|(c, _, _)| c)
    }

    fn eval(&self, feature: &[f64], dir: &Vector3<f64>) -> Result<([f64; 3], Option<EncodeContext>, MlpCache)> {
        if feature.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "gaussian feature",
                expected: self.feature_dim,
                got: feature.len(),
            });
        }
        let mut input = Vec::with_capacity(self.mlp.input_dim());
        input.extend_from_slice(feature);
        let ctx = match &self.grid {
            Some(g) => {
                let (enc, ctx) = g.encode(dir)?;
                input.extend_from_slice(&enc);
                Some(ctx)
            }
            None => {
                input.extend_from_slice(dir.as_slice());
                None
            }
        };
        let (c, cache) = self.mlp.color(&input)?;
        Ok((c, ctx, cache))
    }

    /// Colors for the Gaussians in `subset` as seen from `camera_center`.
    /// Entries outside `subset` are left at zero.
    pub fn colors(
        &self,
        gaussians: &GaussianSet,
        camera_center: &Vector3<f64>,
        subset: &[usize],
        noise: Option<DirectionNoise>,
        parallel: bool,
    ) -> Result<(Vec<[f64; 3]>, ColorCache)> {
        if gaussians.feature_dim != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "gaussian feature dimension",
                expected: self.feature_dim,
                got: gaussians.feature_dim,
            });
        }
        let evals = map_indexed(subset.len(), parallel, |i| {
            let k = subset[i];
            if k >= gaussians.len() {
                return Err(Error::IndexOutOfRange { index: k, len: gaussians.len() });
            }
            let mut dir = view_direction(&gaussians.position(k), camera_center)?;
            if let Some(nz) = noise {
                let mut rng = ChaCha8Rng::seed_from_u64(nz.seed);
                rng.set_stream(k as u64);
                dir = perturb_direction(&dir, nz.std, &mut rng);
            }
            let (c, grid_ctx, cache) = self.eval(gaussians.feature(k), &dir)?;
            Ok((c, Entry { index: k, grid_ctx, cache }))
        });
        let mut rgb = vec![[0.0; 3]; gaussians.len()];
        let mut entries = Vec::with_capacity(subset.len());
        for e in evals {
            let (c, entry) = e?;
            rgb[entry.index] = c;
            entries.push(entry);
        }
        Ok((rgb, ColorCache { n_gaussians: gaussians.len(), entries }))
    }

    pub fn colors_backward(&self, cache: &ColorCache, d_rgb: &[[f64; 3]], parallel: bool) -> Result<AppearanceGrads> {
        if d_rgb.len() != cache.n_gaussians {
            return Err(Error::DimensionMismatch {
                what: "dL/drgb",
                expected: cache.n_gaussians,
                got: d_rgb.len(),
            });
        }
        let fd = self.feature_dim;
        let n_chunks = cache.entries.len().div_ceil(GRAD_CHUNK);
        let chunks = map_indexed(n_chunks, parallel, |c| -> Result<_> {
            let mut d_mlp = vec![0.0; self.mlp.params.len()];
            let mut d_grid = Vec::new();
            let mut d_feat = Vec::new();
            let lo = c * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(cache.entries.len());
            for e in &cache.entries[lo..hi] {
                let d = d_rgb[e.index];
                if d == [0.0; 3] {
                    continue;
                }
                let d_in = self.mlp.color_backward(&e.cache, d, &mut d_mlp)?;
                if let (Some(g), Some(ctx)) = (&self.grid, &e.grid_ctx) {
                    g.encode_backward(ctx, &d_in[fd..], &mut d_grid)?;
                }
                d_feat.push((e.index, d_in[..fd].to_vec()));
            }
            Ok((d_mlp, d_grid, d_feat))
        });
        let mut out = AppearanceGrads {
            features: vec![0.0; cache.n_gaussians * fd],
            mlp: vec![0.0; self.mlp.params.len()],
            grid: Vec::new(),
        };
        for chunk in chunks {
            let (d_mlp, d_grid, d_feat) = chunk?;
            for (a, b) in out.mlp.iter_mut().zip(&d_mlp) {
                *a += b;
            }
            out.grid.extend(d_grid);
            for (k, f) in d_feat {
                for (a, b) in out.features[k * fd..(k + 1) * fd].iter_mut().zip(&f) {
                    *a += b;
                }
            }
        }
        Ok(out)
    }
}
