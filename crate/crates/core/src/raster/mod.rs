//! Tile-based EWA splatting on the CPU.
//!
//! The forward pass composites depth-sorted Gaussians front to back inside
//! 16x16 pixel tiles. Work is split into bands of one tile row; bands run in
//! parallel but every reduction is performed in band order, so outputs are
//! bitwise identical between sequential and parallel execution and across
//! thread counts.

mod backward;
mod forward;
mod project;

pub use backward::{backward, backward_logged, ParamGrads, PixelGradRecord};
pub use forward::{render, RenderContext};
pub use project::{pixel_to_ndc, project, project_one, Projected2D, LOW_PASS, NEAR_PLANE};

pub const TILE_SIZE: usize = 16;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Weight a Gaussian must exceed at some pixel to count as visible in a view.
pub const VISIBLE_WEIGHT: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Per-pixel alphas below this are skipped.
    pub min_alpha: f64,
    /// Run bands on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: [0.0; 3],
            min_alpha: 1.0 / 255.0,
            parallel: true,
        }
    }
}

impl RenderOptions {
    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }
}

/// Runs `f` over `0..n` either on the rayon pool or inline, collecting in
/// index order.
pub(crate) fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
