use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::gradstats::{Estimator, GradAccum, GradSignal, StreamStat};
use crate::image::Image;

use super::forward::{power_at, RenderContext};
use super::project::{project_backward, ScreenGrad};
use super::{map_indexed, VISIBLE_WEIGHT};

/// Loss gradients w.r.t. every per-Gaussian render input.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub rgb: Vec<[f64; 3]>,
    /// Per-view NDC positional gradient (sum over rendered pixels).
    pub ndc: Vec<[f64; 2]>,
}

impl ParamGrads {
    pub fn zeros(n: usize) -> Self {
        ParamGrads {
            positions: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            rgb: vec![[0.0; 3]; n],
            ndc: vec![[0.0; 2]; n],
        }
    }
}

/// One (pixel, Gaussian) term of the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGradRecord {
    pub pixel: usize,
    pub gaussian: usize,
    pub weight: f64,
    /// This pixel's contribution to the Gaussian's NDC positional gradient.
    pub ndc_grad: [f64; 2],
    /// The value streamed into the Gaussian's channel estimators.
    pub color_grad: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default)]
struct SlotGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    rgb: [f64; 3],
    max_weight: f64,
}

impl SlotGrad {
    fn add(&mut self, o: &SlotGrad) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.rgb[i] += o.rgb[i];
        }
        self.opacity += o.opacity;
        self.max_weight = self.max_weight.max(o.max_weight);
    }
}

struct BandAcc {
    grads: Vec<SlotGrad>,
    /// Paper estimator: `(slot, g)` in canonical pixel order.
    stream: Vec<(u32, [f64; 3])>,
    /// Exact estimator: per-slot partials for this band.
    partial: Vec<[StreamStat; 3]>,
    log: Vec<PixelGradRecord>,
}

/// Backpropagates `dl_dimage` through the render recorded in `ctx`, streaming
/// per-pixel color gradients into `accum` and finalizing the view for every
/// visible Gaussian.
pub fn backward(
    ctx: &RenderContext,
    gaussians: &GaussianSet,
    dl_dimage: &Image,
    accum: &mut GradAccum,
) -> Result<ParamGrads> {
    backward_impl(ctx, gaussians, dl_dimage, accum, false).map(|(g, _)| g)
}

/// [`backward`] that also returns every per-pixel term it streamed.
pub fn backward_logged(
    ctx: &RenderContext,
    gaussians: &GaussianSet,
    dl_dimage: &Image,
    accum: &mut GradAccum,
) -> Result<(ParamGrads, Vec<PixelGradRecord>)> {
    backward_impl(ctx, gaussians, dl_dimage, accum, true)
}

fn backward_impl(
    ctx: &RenderContext,
    gaussians: &GaussianSet,
    dl_dimage: &Image,
    accum: &mut GradAccum,
    keep_log: bool,
) -> Result<(ParamGrads, Vec<PixelGradRecord>)> {
    let n = ctx.n_gaussians;
    if gaussians.len() != n {
        return Err(Error::DimensionMismatch {
            what: "gaussians vs render context",
            expected: n,
            got: gaussians.len(),
        });
    }
    if accum.len() != n {
        return Err(Error::DimensionMismatch {
            what: "gradient accumulator",
            expected: n,
            got: accum.len(),
        });
    }
    let (w, h) = (ctx.width(), ctx.height());
    if dl_dimage.width != w || dl_dimage.height != h {
        return Err(Error::DimensionMismatch {
            what: "dL/dimage pixels",
            expected: w * h,
            got: dl_dimage.width * dl_dimage.height,
        });
    }

    let n_slots = ctx.projections.len();
    let estimator = accum.estimator;
    let signal = accum.signal;
    let bg = ctx.options.background;
    let (half_w, half_h) = (w as f64 / 2.0, h as f64 / 2.0);

    let bands: Vec<BandAcc> = map_indexed(ctx.band_count(), ctx.options.parallel, |band| {
        let mut acc = BandAcc {
            grads: vec![SlotGrad::default(); n_slots],
            stream: Vec::new(),
            partial: match estimator {
                Estimator::Exact => vec![[StreamStat::EMPTY; 3]; n_slots],
                Estimator::Paper => Vec::new(),
            },
            log: Vec::new(),
        };
        for y in ctx.band_rows(band) {
            for x in 0..w {
                let pix = y * w + x;
                let d_pix = [
                    dl_dimage.data[pix * 3],
                    dl_dimage.data[pix * 3 + 1],
                    dl_dimage.data[pix * 3 + 2],
                ];
                // color composited behind the current entry, relative to its
                // own transmittance
                let mut behind = bg;
                for i in ctx.contributors(pix).rev() {
                    let slot = ctx.contrib_slot[i];
                    let p = &ctx.projections[slot as usize];
                    let alpha = ctx.contrib_alpha[i];
                    let t = ctx.contrib_trans[i];
                    let weight = alpha * t;
                    let c = ctx.rgb[p.index];

                    let g = &mut acc.grads[slot as usize];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        g.rgb[ch] += weight * d_pix[ch];
                        d_alpha += d_pix[ch] * (c[ch] - behind[ch]);
                        behind[ch] = alpha * c[ch] + (1.0 - alpha) * behind[ch];
                    }
                    d_alpha *= t;
                    g.max_weight = g.max_weight.max(weight);

                    let (power, dx, dy) = power_at(p, x as f64, y as f64);
                    g.opacity += d_alpha * (-power).exp();
                    let d_power = -alpha * d_alpha;
                    let [ca, cb, cc] = p.conic;
                    let d_u = -d_power * (ca * dx + cb * dy);
                    let d_v = -d_power * (cb * dx + cc * dy);
                    g.mean2d[0] += d_u;
                    g.mean2d[1] += d_v;
                    g.conic[0] += d_power * 0.5 * dx * dx;
                    g.conic[1] += d_power * dx * dy;
                    g.conic[2] += d_power * 0.5 * dy * dy;

                    let streamed = match signal {
                        GradSignal::Weighted => d_pix.map(|v| weight * v),
                        GradSignal::Raw => d_pix,
                    };
                    match estimator {
                        Estimator::Paper => acc.stream.push((slot, streamed)),
                        Estimator::Exact => {
                            for (s, v) in acc.partial[slot as usize].iter_mut().zip(streamed) {
                                s.update_exact(v);
                            }
                        }
                    }
                    if keep_log {
                        acc.log.push(PixelGradRecord {
                            pixel: pix,
                            gaussian: p.index,
                            weight,
                            ndc_grad: [d_u * half_w, d_v * half_h],
                            color_grad: streamed,
                        });
                    }
                }
            }
        }
        acc
    });

    accum.begin_view();
    let mut total = vec![SlotGrad::default(); n_slots];
    let mut merged = vec![[StreamStat::EMPTY; 3]; n_slots];
    let mut log = Vec::new();
    for band in bands {
        for (t, g) in total.iter_mut().zip(&band.grads) {
            t.add(g);
        }
        match estimator {
            Estimator::Paper => {
                for (slot, g) in band.stream {
                    accum.stream(ctx.projections[slot as usize].index, g);
                }
            }
            Estimator::Exact => {
                for (m, part) in merged.iter_mut().zip(&band.partial) {
                    for c in 0..3 {
                        m[c] = m[c].merge_exact(&part[c]);
                    }
                }
            }
        }
        log.extend(band.log);
    }
    if estimator == Estimator::Exact {
        for (slot, m) in merged.into_iter().enumerate() {
            accum.live[ctx.projections[slot].index] = m;
        }
    }

    let chained = map_indexed(n_slots, ctx.options.parallel, |slot| {
        let p = &ctx.projections[slot];
        let sg = ScreenGrad {
            mean2d: total[slot].mean2d,
            conic: total[slot].conic,
        };
        project_backward(gaussians, &ctx.camera, p, &sg)
    });

    let mut grads = ParamGrads::zeros(n);
    for (slot, (d_pos, d_ls, d_q)) in chained.into_iter().enumerate() {
        let p = &ctx.projections[slot];
        let k = p.index;
        let t = &total[slot];
        grads.positions[k] = d_pos;
        grads.log_scales[k] = d_ls;
        grads.rotations[k] = d_q;
        grads.opacity_logits[k] = t.opacity * p.opacity * (1.0 - p.opacity);
        grads.rgb[k] = t.rgb;
        let ndc = [t.mean2d[0] * half_w, t.mean2d[1] * half_h];
        grads.ndc[k] = ndc;
        if t.max_weight > VISIBLE_WEIGHT {
            accum.finalize_view(k, ndc)?;
            for a in 0..3 {
                accum.position_grad_sum[k][a] += d_pos[a];
            }
            accum.max_radius[k] = accum.max_radius[k].max(p.radius);
        }
    }
    Ok((grads, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::gaussian::logit;
    use crate::raster::{render, RenderOptions};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Tiny {
        gaussians: GaussianSet,
        rgb: Vec<[f64; 3]>,
        camera: Camera,
        weights: Image,
    }

    fn tiny(seed: u64) -> Tiny {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rng.random_range(6..=16);
        let h = rng.random_range(6..=16);
        let camera = Camera::look_at(
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            rng.random_range(10.0..20.0),
            w,
            h,
        )
        .unwrap();
        let n = rng.random_range(1..=5);
        let mut gaussians = GaussianSet::empty(1);
        let mut rgb = Vec::new();
        for _ in 0..n {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            gaussians.push(
                [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.5..0.5)],
                std::array::from_fn(|_| rng.random_range(0.1f64..0.35).ln()),
                q,
                logit(rng.random_range(0.2..0.8)),
                &[0.0],
            );
            rgb.push(std::array::from_fn(|_| rng.random_range(0.0..1.0)));
        }
        let data = (0..w * h * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tiny { gaussians, rgb, camera, weights: Image::from_data(w, h, data) }
    }

    fn loss(t: &Tiny, g: &GaussianSet, rgb: &[[f64; 3]]) -> f64 {
        let (img, _) = render(g, &t.camera, rgb, &RenderOptions::default()).unwrap();
        img.data.iter().zip(&t.weights.data).map(|(a, b)| a * b).sum()
    }

    fn check(name: &str, fd: f64, an: f64) {
        let err = (fd - an).abs();
        assert!(err <= 1e-8 || err <= 1e-4 * fd.abs().max(an.abs()), "{name}: fd {fd} vs analytic {an}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..20 {
            let t = tiny(seed);
            let (_, ctx) = render(&t.gaussians, &t.camera, &t.rgb, &RenderOptions::default()).unwrap();
            let mut accum = GradAccum::new(t.gaussians.len(), Estimator::Paper, GradSignal::Weighted);
            let grads = backward(&ctx, &t.gaussians, &t.weights, &mut accum).unwrap();
            let central = |f: &dyn Fn(&mut GaussianSet, &mut Vec<[f64; 3]>, f64)| {
                let (mut gp, mut rp) = (t.gaussians.clone(), t.rgb.clone());
                f(&mut gp, &mut rp, h);
                let (mut gm, mut rm) = (t.gaussians.clone(), t.rgb.clone());
                f(&mut gm, &mut rm, -h);
                (loss(&t, &gp, &rp) - loss(&t, &gm, &rm)) / (2.0 * h)
            };
            for k in 0..t.gaussians.len() {
                for a in 0..3 {
                    let fd = central(&|g, _, d| g.positions[k][a] += d);
                    check("position", fd, grads.positions[k][a]);
                    let fd = central(&|g, _, d| g.log_scales[k][a] += d);
                    check("log_scale", fd, grads.log_scales[k][a]);
                    let fd = central(&|_, r, d| r[k][a] += d);
                    check("rgb", fd, grads.rgb[k][a]);
                }
                for a in 0..4 {
                    let fd = central(&|g, _, d| g.rotations[k][a] += d);
                    check("rotation", fd, grads.rotations[k][a]);
                }
                let fd = central(&|g, _, d| g.opacity_logits[k] += d);
                check("opacity", fd, grads.opacity_logits[k]);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_everything() {
        let t = tiny(3);
        let (_, ctx) = render(&t.gaussians, &t.camera, &t.rgb, &RenderOptions::default()).unwrap();
        let mut accum = GradAccum::new(t.gaussians.len(), Estimator::Paper, GradSignal::Weighted);
        let zero = Image::new(t.weights.width, t.weights.height);
        let (grads, log) = backward_logged(&ctx, &t.gaussians, &zero, &mut accum).unwrap();
        assert_eq!(grads, ParamGrads::zeros(t.gaussians.len()));
        assert!(!log.is_empty());
        assert!(log.iter().all(|r| r.color_grad == [0.0; 3]));
        assert!(accum.channel_var_sum.iter().all(|v| *v == [0.0; 3]));
        assert!(accum.variance_sum.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn opposite_residuals_diverge() {
        // one Gaussian centered between two pixels of a 2x1 image
        let camera = Camera::new(
            50.0,
            50.0,
            0.5,
            0.0,
            2,
            1,
            nalgebra::Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap();
        let mut g = GaussianSet::empty(1);
        g.push([0.0, 0.0, 5.0], [(0.05f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], logit(0.5), &[0.0]);
        // red matches the black background, so a red residual moves no geometry
        let rgb = vec![[0.0, 0.5, 0.5]];
        let (_, ctx) = render(&g, &camera, &rgb, &RenderOptions::default()).unwrap();
        let u = 0.3;
        let d = Image::from_data(2, 1, vec![u, 0.0, 0.0, -u, 0.0, 0.0]);
        let mut accum = GradAccum::new(1, Estimator::Paper, GradSignal::Weighted);
        let (_, log) = backward_logged(&ctx, &g, &d, &mut accum).unwrap();
        assert_eq!(log.len(), 2);
        let w = log[0].weight;
        assert_eq!(log[1].weight, w);
        assert_eq!(log[0].color_grad[0], w * u);
        assert_eq!(log[1].color_grad[0], -w * u);
        assert_eq!(log[0].color_grad[0] + log[1].color_grad[0], 0.0);
        assert!(accum.mean_grad_norm(0) < 1e-12);
        assert!(accum.channel_var_sum[0][0] > 0.0);
    }

    #[test]
    fn size_mismatches_rejected() {
        let t = tiny(1);
        let (_, ctx) = render(&t.gaussians, &t.camera, &t.rgb, &RenderOptions::default()).unwrap();
        let mut short = GradAccum::new(t.gaussians.len() + 1, Estimator::Paper, GradSignal::Weighted);
        assert!(backward(&ctx, &t.gaussians, &t.weights, &mut short).is_err());
        let mut accum = GradAccum::new(t.gaussians.len(), Estimator::Paper, GradSignal::Weighted);
        assert!(backward(&ctx, &t.gaussians, &Image::new(3, 3), &mut accum).is_err());
    }

    #[test]
    fn parallel_and_sequential_accumulate_identically() {
        for est in [Estimator::Paper, Estimator::Exact] {
            let t = tiny(9);
            let mut out = Vec::new();
            for opts in [RenderOptions::default(), RenderOptions::default().sequential()] {
                let (_, ctx) = render(&t.gaussians, &t.camera, &t.rgb, &opts).unwrap();
                let mut accum = GradAccum::new(t.gaussians.len(), est, GradSignal::Weighted);
                let grads = backward(&ctx, &t.gaussians, &t.weights, &mut accum).unwrap();
                out.push((grads, accum.channel_var_sum.clone(), accum.ndc_grad_norm_sum.clone()));
            }
            assert_eq!(out[0], out[1]);
        }
    }
}
