use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::Image;

use super::project::{project_one, Projected2D};
use super::{map_indexed, RenderOptions, MIN_TRANSMITTANCE, TILE_SIZE};

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct RenderContext {
    pub camera: Camera,
    pub options: RenderOptions,
    pub n_gaussians: usize,
    pub projections: Vec<Projected2D>,
    /// Projection slot of each Gaussian, `u32::MAX` when culled or off-screen.
    pub slot_of: Vec<u32>,
    pub rgb: Vec<[f64; 3]>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Projection slots per tile, ascending depth (ties by Gaussian index).
    pub tile_lists: Vec<Vec<u32>>,
    /// `contrib_*[pixel_offsets[p]..pixel_offsets[p + 1]]` are the
    /// contributors of pixel `p`, front to back.
    pub pixel_offsets: Vec<usize>,
    pub contrib_slot: Vec<u32>,
    pub contrib_alpha: Vec<f64>,
    /// Transmittance in front of each contributor.
    pub contrib_trans: Vec<f64>,
    pub final_trans: Vec<f64>,
}

impl RenderContext {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn contributors(&self, pixel: usize) -> std::ops::Range<usize> {
        self.pixel_offsets[pixel]..self.pixel_offsets[pixel + 1]
    }

    /// Compositing weight `alpha * T` of contributor entry `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.contrib_alpha[i] * self.contrib_trans[i]
    }

    /// Gaussian index of contributor entry `i`.
    pub fn gaussian_of(&self, i: usize) -> usize {
        self.projections[self.contrib_slot[i] as usize].index
    }

    pub(crate) fn band_count(&self) -> usize {
        self.tiles_y
    }

    pub(crate) fn band_rows(&self, band: usize) -> std::ops::Range<usize> {
        band * TILE_SIZE..((band + 1) * TILE_SIZE).min(self.height())
    }
}

/// Gaussian falloff exponent `0.5 d^T conic d` at pixel center `(px, py)`.
#[inline]
pub(crate) fn power_at(p: &Projected2D, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - p.pixel_xy[0];
    let dy = py - p.pixel_xy[1];
    let [a, b, c] = p.conic;
    (0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy, dx, dy)
}

struct BandOut {
    counts: Vec<usize>,
    slots: Vec<u32>,
    alphas: Vec<f64>,
    trans: Vec<f64>,
    color: Vec<f64>,
    final_trans: Vec<f64>,
}

/// Renders `per_gaussian_rgb` colors through the Gaussians seen by `camera`.
pub fn render(
    gaussians: &GaussianSet,
    camera: &Camera,
    per_gaussian_rgb: &[[f64; 3]],
    options: &RenderOptions,
) -> Result<(Image, RenderContext)> {
    let n = gaussians.len();
    if per_gaussian_rgb.len() != n {
        return Err(Error::DimensionMismatch {
            what: "per-gaussian rgb",
            expected: n,
            got: per_gaussian_rgb.len(),
        });
    }
    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);

    let projected: Vec<Option<Projected2D>> =
        map_indexed(n, options.parallel, |k| project_one(gaussians, camera, k));

    let mut projections = Vec::new();
    let mut slot_of = vec![u32::MAX; n];
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for p in projected.into_iter().flatten() {
        let r = p.radius;
        let [u, v] = p.pixel_xy;
        let x0 = (u - r).floor().max(0.0);
        let x1 = (u + r).ceil().min(w as f64 - 1.0);
        let y0 = (v - r).floor().max(0.0);
        let y1 = (v + r).ceil().min(h as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let slot = projections.len() as u32;
        slot_of[p.index] = slot;
        let (tx0, tx1) = (x0 as usize / TILE_SIZE, x1 as usize / TILE_SIZE);
        let (ty0, ty1) = (y0 as usize / TILE_SIZE, y1 as usize / TILE_SIZE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tile_lists[ty * tiles_x + tx].push(slot);
            }
        }
        projections.push(p);
    }
    // slots were pushed in Gaussian-index order, so a stable sort breaks
    // depth ties by index
    for list in tile_lists.iter_mut() {
        list.sort_by(|&a, &b| {
            projections[a as usize]
                .depth
                .total_cmp(&projections[b as usize].depth)
        });
    }

    let bands: Vec<BandOut> = map_indexed(tiles_y, options.parallel, |band| {
        let rows = band * TILE_SIZE..((band + 1) * TILE_SIZE).min(h);
        let npix = rows.len() * w;
        let mut out = BandOut {
            counts: Vec::with_capacity(npix),
            slots: Vec::new(),
            alphas: Vec::new(),
            trans: Vec::new(),
            color: Vec::with_capacity(npix * 3),
            final_trans: Vec::with_capacity(npix),
        };
        for y in rows {
            for x in 0..w {
                let list = &tile_lists[band * tiles_x + x / TILE_SIZE];
                let mut t = 1.0;
                let mut col = [0.0; 3];
                let mut count = 0;
                for &slot in list {
                    let p = &projections[slot as usize];
                    let (power, _, _) = power_at(p, x as f64, y as f64);
                    if power < 0.0 {
                        continue;
                    }
                    let alpha = p.opacity * (-power).exp();
                    if alpha < options.min_alpha {
                        continue;
                    }
                    let wgt = alpha * t;
                    let c = per_gaussian_rgb[p.index];
                    for ch in 0..3 {
                        col[ch] += wgt * c[ch];
                    }
                    out.slots.push(slot);
                    out.alphas.push(alpha);
                    out.trans.push(t);
                    count += 1;
                    t *= 1.0 - alpha;
                    if t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                for ch in 0..3 {
                    out.color.push(col[ch] + t * options.background[ch]);
                }
                out.counts.push(count);
                out.final_trans.push(t);
            }
        }
        out
    });

    let mut pixel_offsets = Vec::with_capacity(w * h + 1);
    pixel_offsets.push(0);
    let total: usize = bands.iter().map(|b| b.slots.len()).sum();
    let mut contrib_slot = Vec::with_capacity(total);
    let mut contrib_alpha = Vec::with_capacity(total);
    let mut contrib_trans = Vec::with_capacity(total);
    let mut final_trans = Vec::with_capacity(w * h);
    let mut data = Vec::with_capacity(w * h * 3);
    for b in bands {
        let mut acc = *pixel_offsets.last().unwrap();
        for c in b.counts {
            acc += c;
            pixel_offsets.push(acc);
        }
        contrib_slot.extend(b.slots);
        contrib_alpha.extend(b.alphas);
        contrib_trans.extend(b.trans);
        final_trans.extend(b.final_trans);
        data.extend(b.color);
    }

    let ctx = RenderContext {
        camera: camera.clone(),
        options: *options,
        n_gaussians: n,
        projections,
        slot_of,
        rgb: per_gaussian_rgb.to_vec(),
        tiles_x,
        tiles_y,
        tile_lists,
        pixel_offsets,
        contrib_slot,
        contrib_alpha,
        contrib_trans,
        final_trans,
    };
    Ok((Image::from_data(w, h, data), ctx))
}
