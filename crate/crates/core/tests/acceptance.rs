//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! fails. `ACCEPTANCE_ONLY=1,3` runs a subset.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use vgsplat::appearance::{hash_index, Appearance, DirHashGrid, HashGridConfig};
use vgsplat::camera::{Camera, Scene};
use vgsplat::densify::{clone_or_split, densify_step, prune, select, DensifyConfig};
use vgsplat::engine::{evaluate, loss, replay_stats, train, TrainConfig, Trainer};
use vgsplat::gaussian::{logit, GaussianSet};
use vgsplat::gradstats::{Estimator, GradAccum, GradSignal, StreamStat};
use vgsplat::image::Image;
use vgsplat::io;
use vgsplat::raster::{backward, backward_logged, project, render, RenderOptions, VISIBLE_WEIGHT};

const TAU: f64 = 0.0004;
const GAMMA: f64 = 2048.0;

/// Trend-run settings for 40x40 images, shared with the README.
const DESK_TAU: f64 = 0.006;
const DESK_GAMMA: f64 = 524_288.0;
const DESK_LOG2_TABLE: u32 = 14;
const DESK_SEEDS: [u64; 3] = [0, 1, 2];
const DESK_ITERS: usize = 5000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let secs = Duration::from_secs;
    let all: [Criterion; 9] = [
        (1, "gradient oracle", secs(60), gradient_oracle),
        (2, "streaming statistics", secs(10), streaming_statistics),
        (3, "densification decision", secs(5), densification_decision),
        (4, "divergence fixture", secs(5), divergence_fixture),
        (5, "hash encoder", secs(10), hash_encoder),
        (6, "desk VGD trend", secs(30 * 60), vgd_trend),
        (7, "desk LHE trend", secs(30 * 60), lhe_trend),
        (8, "degeneracy", secs(5), degeneracy),
        (9, "io round trips", secs(5), io_round_trips),
    ];
    let mut failed = 0;
    for (n, name, limit, run) in all {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run);
        let took = start.elapsed();
        let (mut pass, mut detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if took > limit {
            pass = false;
            detail.push_str(&format!("; over the {}s limit", limit.as_secs()));
        }
        println!(
            "criterion {n} ({name}): {} in {:.1}s: {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

struct FdScene {
    camera: Camera,
    gaussians: GaussianSet,
    app: Appearance,
    target: Image,
}

fn fd_scene(seed: u64) -> FdScene {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let (w, h) = (rng.random_range(6..=16), rng.random_range(6..=16));
    let eye = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), -3.0);
    let camera = Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), rng.random_range(10.0..20.0), w, h)
        .unwrap();
    let fd = 4;
    let mut gaussians = GaussianSet::empty(fd);
    for _ in 0..rng.random_range(1..=5) {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let feat: Vec<f64> = (0..fd).map(|_| rng.random_range(-1.0..1.0)).collect();
        gaussians.push(
            [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.5..0.5)],
            std::array::from_fn(|_| rng.random_range(0.1f64..0.35).ln()),
            q,
            logit(rng.random_range(0.2..0.8)),
            &feat,
        );
    }
    let grid = HashGridConfig { levels: 4, base_resolution: 4, max_resolution: 16, log2_table_size: 8, features_per_level: 2 };
    let mut app = Appearance::new(fd, Some(grid), 16, seed).unwrap();
    for v in &mut app.grid.as_mut().unwrap().tables {
        *v = rng.random_range(-1.0..1.0);
    }
    let mut s = FdScene { camera, gaussians, app, target: Image::new(w, h) };
    let pred = fd_render(&s, &s.gaussians, &s.app, None);
    // keep every residual well away from the L1 kink
    let data = pred
        .data
        .iter()
        .map(|p| {
            let off = rng.random_range(0.1..0.5);
            if rng.random_bool(0.5) {
                p + off
            } else {
                p - off
            }
        })
        .collect();
    s.target = Image::from_data(w, h, data);
    s
}

/// Render with view directions held at the unperturbed positions; the
/// direction path carries no gradient.
fn fd_render(s: &FdScene, g: &GaussianSet, app: &Appearance, rgb: Option<&[[f64; 3]]>) -> Image {
    let opts = RenderOptions::default().sequential();
    if let Some(rgb) = rgb {
        return render(g, &s.camera, rgb, &opts).unwrap().0;
    }
    let mut held = g.clone();
    held.positions = s.gaussians.positions.clone();
    let subset: Vec<usize> = project(g, &s.camera).iter().map(|p| p.index).collect();
    let (rgb, _) = app.colors(&held, &s.camera.center(), &subset, None, false).unwrap();
    render(g, &s.camera, &rgb, &opts).unwrap().0
}

fn fd_loss(s: &FdScene, g: &GaussianSet, app: &Appearance, rgb: Option<&[[f64; 3]]>) -> f64 {
    loss(&fd_render(s, g, app, rgb), &s.target, 0.0).unwrap().0
}

#[derive(Default)]
struct FdTally {
    checked: usize,
    /// Gradients above 1e-6, where the relative error is meaningful.
    large: usize,
    worst: f64,
    failures: Vec<String>,
}

impl FdTally {
    fn check(&mut self, what: String, fd: f64, an: f64) {
        self.checked += 1;
        let err = (fd - an).abs();
        let scale = fd.abs().max(an.abs());
        if scale > 1e-6 {
            self.large += 1;
            self.worst = self.worst.max(err / scale);
        }
        if !(err <= 1e-8 || err <= 1e-4 * scale) && self.failures.len() < 5 {
            self.failures.push(format!("{what}: fd {fd:e} analytic {an:e}"));
        }
    }
}

fn gradient_oracle() -> Outcome {
    let h = 1e-5;
    let mut tally = FdTally::default();
    let scenes = 20;
    for seed in 0..scenes {
        let s = fd_scene(seed);
        let (g, app) = (&s.gaussians, &s.app);
        let n = g.len();
        let subset: Vec<usize> = project(g, &s.camera).iter().map(|p| p.index).collect();
        let (rgb, cache) = app.colors(g, &s.camera.center(), &subset, None, false).unwrap();
        let (img, ctx) = render(g, &s.camera, &rgb, &RenderOptions::default().sequential()).unwrap();
        let (_, d) = loss(&img, &s.target, 0.0).unwrap();
        let mut accum = GradAccum::new(n, Estimator::Paper, GradSignal::Weighted);
        let pg = backward(&ctx, g, &d, &mut accum).unwrap();
        let ag = app.colors_backward(&cache, &pg.rgb, false).unwrap();

        let gauss = |f: &dyn Fn(&mut GaussianSet, f64)| {
            let (mut p, mut m) = (g.clone(), g.clone());
            f(&mut p, h);
            f(&mut m, -h);
            (fd_loss(&s, &p, app, None) - fd_loss(&s, &m, app, None)) / (2.0 * h)
        };
        for k in 0..n {
            for a in 0..3 {
                let fd = gauss(&|x, e| x.positions[k][a] += e);
                tally.check(format!("scene {seed} position[{k}][{a}]"), fd, pg.positions[k][a]);
                let fd = gauss(&|x, e| x.log_scales[k][a] += e);
                tally.check(format!("scene {seed} log_scale[{k}][{a}]"), fd, pg.log_scales[k][a]);
                let (mut rp, mut rm) = (rgb.clone(), rgb.clone());
                rp[k][a] += h;
                rm[k][a] -= h;
                let fd = (fd_loss(&s, g, app, Some(&rp)) - fd_loss(&s, g, app, Some(&rm))) / (2.0 * h);
                tally.check(format!("scene {seed} rgb[{k}][{a}]"), fd, pg.rgb[k][a]);
            }
            for a in 0..4 {
                let fd = gauss(&|x, e| x.rotations[k][a] += e);
                tally.check(format!("scene {seed} rotation[{k}][{a}]"), fd, pg.rotations[k][a]);
            }
            let fd = gauss(&|x, e| x.opacity_logits[k] += e);
            tally.check(format!("scene {seed} opacity[{k}]"), fd, pg.opacity_logits[k]);
        }
        for i in 0..g.features.len() {
            let fd = gauss(&|x, e| x.features[i] += e);
            tally.check(format!("scene {seed} feature[{i}]"), fd, ag.features[i]);
        }

        let appear = |f: &dyn Fn(&mut Appearance, f64)| {
            let (mut p, mut m) = (app.clone(), app.clone());
            f(&mut p, h);
            f(&mut m, -h);
            (fd_loss(&s, g, &p, None) - fd_loss(&s, g, &m, None)) / (2.0 * h)
        };
        for i in 0..app.mlp.params.len() {
            let fd = appear(&|a, e| a.mlp.params[i] += e);
            tally.check(format!("scene {seed} mlp[{i}]"), fd, ag.mlp[i]);
        }
        let mut dense = vec![0.0; app.grid.as_ref().unwrap().tables.len()];
        for &(i, v) in &ag.grid {
            dense[i] += v;
        }
        for (i, &an) in dense.iter().enumerate() {
            let fd = appear(&|a, e| a.grid.as_mut().unwrap().tables[i] += e);
            tally.check(format!("scene {seed} hash[{i}]"), fd, an);
        }
    }
    let pass = tally.failures.is_empty();
    let mut detail = format!(
        "{} gradients over {scenes} scenes; worst relative error {:.2e} over the {} above 1e-6 (tolerance 1e-4, abs floor 1e-8)",
        tally.checked, tally.worst, tally.large
    );
    if !pass {
        detail.push_str(&format!("; mismatches: {}", tally.failures.join("; ")));
    }
    outcome(pass, detail)
}

// ---------------------------------------------------------------- 2

fn streaming_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_var = 0.0f64;
    let mut worst_merge = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..300);
        let scale = rng.random_range(0.01..3.0);
        let shift = rng.random_range(-2.0..2.0);
        let xs: Vec<f64> = (0..len).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
        let mean = xs.iter().sum::<f64>() / len as f64;
        let direct = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len as f64;

        let mut full = StreamStat::EMPTY;
        xs.iter().for_each(|&x| full.update_exact(x));
        worst_var = worst_var.max((full.var - direct).abs());

        let cut = rng.random_range(0..=len);
        let (mut a, mut b) = (StreamStat::EMPTY, StreamStat::EMPTY);
        xs[..cut].iter().for_each(|&x| a.update_exact(x));
        xs[cut..].iter().for_each(|&x| b.update_exact(x));
        let m = a.merge_exact(&b);
        assert_eq!(m.n, full.n);
        worst_merge = worst_merge.max((m.var - full.var).abs()).max((m.mean - full.mean).abs());
    }

    let mut half = StreamStat::EMPTY;
    half.update_paper(0.0);
    half.update_paper(1.0);

    let sigma = 1.5;
    let normal = Normal::new(0.7, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut recur, mut exact) = (StreamStat::EMPTY, StreamStat::EMPTY);
    for _ in 0..10_000 {
        let x = normal.sample(&mut rng);
        recur.update_paper(x);
        exact.update_exact(x);
    }
    let truth = sigma * sigma;
    let (rel_p, rel_e) = ((recur.var - truth).abs() / truth, (exact.var - truth).abs() / truth);

    let pass = worst_var <= 1e-12 && worst_merge <= 1e-12 && half.var == 0.5 && rel_p < 0.05 && rel_e < 0.05;
    outcome(
        pass,
        format!(
            "exact vs direct {worst_var:.1e}, merge vs full {worst_merge:.1e} (limit 1e-12); \
             recursion on [0,1] = {}; n=1e4 relative error recursion {rel_p:.4}, exact {rel_e:.4} (limit 0.05)",
            half.var
        ),
    )
}

// ---------------------------------------------------------------- 3

/// Three dim Gaussians over a black background seen from two cameras. Targets
/// sit +/-0.2 from the render with random signs, so positional gradients
/// partly cancel and the variance term can decide.
fn decision_fixture(seed: u64) -> (GaussianSet, Vec<[f64; 3]>, Vec<(Camera, Image)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let mut g = GaussianSet::empty(1);
    let mut rgb = Vec::new();
    for i in 0..3 {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        g.push(
            [-0.5 + 0.5 * i as f64 + rng.random_range(-0.1..0.1), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)],
            std::array::from_fn(|_| rng.random_range(0.1f64..0.3).ln()),
            q,
            logit(rng.random_range(0.3..0.9)),
            &[0.0],
        );
        rgb.push(std::array::from_fn(|_| rng.random_range(0.0..0.15)));
    }
    let views = [-0.6, 0.7]
        .iter()
        .map(|&x| {
            let cam = Camera::look_at(Vector3::new(x, 0.2, -3.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 18.0, 16, 16)
                .unwrap();
            let (pred, _) = render(&g, &cam, &rgb, &RenderOptions::default()).unwrap();
            let data = pred.data.iter().map(|p| if rng.random_bool(0.5) { p + 0.2 } else { p - 0.2 }).collect();
            (cam, Image::from_data(16, 16, data))
        })
        .collect();
    (g, rgb, views)
}

/// Streams `xs` through the recursion
/// `mu' = mu + (x - mu)/(n+1)`, `var' = (1 - 1/n) var + (x - mu)^2/(n+1)`.
fn recursion_variance(xs: &[f64]) -> f64 {
    let (mut mu, mut var) = (xs[0], 0.0);
    for (i, &x) in xs.iter().enumerate().skip(1) {
        let n = i as f64;
        let d = x - mu;
        mu += d / (n + 1.0);
        var = (1.0 - 1.0 / n) * var + d * d / (n + 1.0);
    }
    var
}

/// Brute-force decisions for one fixture next to `select`, for each gamma.
fn decide(seed: u64) -> (bool, [Vec<usize>; 2], String) {
    let (g, rgb, views) = decision_fixture(seed);
    let mut accum = GradAccum::new(3, Estimator::Paper, GradSignal::Weighted);
    let (mut d_sum, mut g_sum, mut seen) = ([0.0; 3], [0.0; 3], [0u32; 3]);
    for (cam, target) in &views {
        let (pred, ctx) = render(&g, cam, &rgb, &RenderOptions::default()).unwrap();
        let (_, dl) = loss(&pred, target, 0.2).unwrap();
        let (_, log) = backward_logged(&ctx, &g, &dl, &mut accum).unwrap();
        for k in 0..3 {
            let mut recs: Vec<_> = log.iter().filter(|r| r.gaussian == k).collect();
            recs.sort_by_key(|r| r.pixel);
            if !recs.iter().any(|r| r.weight > VISIBLE_WEIGHT) {
                continue;
            }
            for c in 0..3 {
                let xs: Vec<f64> = recs.iter().map(|r| r.weight * dl.data[r.pixel * 3 + c]).collect();
                d_sum[k] += recursion_variance(&xs);
            }
            let (sx, sy) = recs.iter().fold((0.0, 0.0), |(a, b), r| (a + r.ndc_grad[0], b + r.ndc_grad[1]));
            g_sum[k] += sx.hypot(sy);
            seen[k] += 1;
        }
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
    let mut ok = true;
    let mut stats = Vec::new();
    for k in 0..3 {
        let m = seen[k].max(1) as f64;
        let (dbar, gbar) = (d_sum[k] / m, g_sum[k] / m);
        ok &= seen[k] == accum.view_count[k] && close(dbar, accum.mean_variance(k)) && close(gbar, accum.mean_grad_norm(k));
        stats.push(format!("g{k} gbar {gbar:.2e} dbar {dbar:.2e}"));
    }
    let got = [0.0, GAMMA].map(|gamma| {
        let brute: Vec<usize> = (0..3)
            .filter(|&k| seen[k] > 0 && gamma * d_sum[k] / seen[k] as f64 + g_sum[k] / seen[k] as f64 > TAU)
            .collect();
        ok &= select(&accum, gamma, TAU) == brute;
        brute
    });
    (ok, got, stats.join(" "))
}

fn densification_decision() -> Outcome {
    let fixtures = 50;
    let (mut agree, mut flipped) = (0, Vec::new());
    let mut example = String::new();
    for seed in 0..fixtures {
        let (ok, [base, vgd], stats) = decide(seed);
        agree += usize::from(ok);
        if base != vgd {
            if flipped.is_empty() {
                example = format!("fixture {seed}: {stats}; gamma 0 selects {base:?}, gamma {GAMMA} selects {vgd:?}");
            }
            flipped.push(seed);
        }
    }
    outcome(
        agree == fixtures as usize && !flipped.is_empty(),
        format!(
            "select matches the brute force on {agree}/{fixtures} fixtures for gamma 0 and {GAMMA}, tau {TAU}; \
             the variance term changes the decision on {} of them; {example}",
            flipped.len()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn divergence_fixture() -> Outcome {
    // one Gaussian straddling the two pixels of a 2x1 image; its red channel
    // equals the black background's, and the target is +/-0.3 away in red
    let camera = Camera::new(50.0, 50.0, 0.5, 0.0, 2, 1, nalgebra::Matrix3::identity(), Vector3::zeros()).unwrap();
    let mut g = GaussianSet::empty(1);
    g.push([0.0, 0.0, 5.0], [(0.05f64).ln(); 3], [1.0, 0.0, 0.0, 0.0], logit(0.5), &[0.0]);
    let rgb = vec![[0.0, 0.5, 0.5]];
    let (pred, ctx) = render(&g, &camera, &rgb, &RenderOptions::default()).unwrap();
    let mut target = pred.clone();
    target.data[0] -= 0.3;
    target.data[3] += 0.3;
    let (_, dl) = loss(&pred, &target, 0.0).unwrap();
    let mut accum = GradAccum::new(1, Estimator::Paper, GradSignal::Weighted);
    backward(&ctx, &g, &dl, &mut accum).unwrap();
    let (gbar, dbar) = (accum.mean_grad_norm(0), accum.mean_variance(0));
    let vgd = select(&accum, GAMMA, TAU) == vec![0];
    let base = select(&accum, 0.0, TAU).is_empty();
    let pass = gbar < TAU && GAMMA * dbar + gbar > TAU && vgd && base;
    outcome(
        pass,
        format!(
            "gbar {gbar:.3e} < tau {TAU}; gamma*dbar+gbar = {:.3e}; selected with VGD {vgd}, skipped by baseline {base}",
            GAMMA * dbar + gbar
        ),
    )
}

// ---------------------------------------------------------------- 5

fn corners(cell: [i32; 3]) -> Vec<[i32; 3]> {
    (0..8).map(|c| [cell[0] + (c & 1), cell[1] + ((c >> 1) & 1), cell[2] + ((c >> 2) & 1)]).collect()
}

fn slot_value(grid: &DirHashGrid, level: usize, cell: [i32; 3], f: usize) -> f64 {
    grid.tables[grid.table_index(level, hash_index(cell, grid.config.log2_table_size), f)]
}

fn hash_encoder() -> Outcome {
    let cfg = HashGridConfig::default();
    let mut grid = DirHashGrid::new(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in &mut grid.tables {
        *v = rng.random_range(-1.0..1.0);
    }
    let res: Vec<u32> = grid.resolutions().to_vec();
    let fpl = cfg.features_per_level as usize;
    let mut notes = Vec::new();
    let mut pass = true;

    // corner exactness and cell-center mean
    let (mut corner_err, mut center_err) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let level = rng.random_range(0..res.len());
        let n = res[level] as i32;
        let s = 2.0 / res[level] as f64;
        let cell: [i32; 3] = std::array::from_fn(|_| rng.random_range(-n / 2..n / 2));
        let at = Vector3::new(cell[0] as f64 * s, cell[1] as f64 * s, cell[2] as f64 * s);
        let (enc, _) = grid.encode_point(&at);
        let mid = at.add_scalar(0.5 * s);
        let (enc_mid, _) = grid.encode_point(&mid);
        for f in 0..fpl {
            corner_err = corner_err.max((enc[level * fpl + f] - slot_value(&grid, level, cell, f)).abs());
            let mean = corners(cell).iter().map(|&c| slot_value(&grid, level, c, f)).sum::<f64>() / 8.0;
            center_err = center_err.max((enc_mid[level * fpl + f] - mean).abs());
        }
    }
    pass &= corner_err <= 1e-12 && center_err <= 1e-12;
    notes.push(format!("corner {corner_err:.1e}, center {center_err:.1e}"));

    // trilinear polynomials sampled at the corners are reproduced inside the cell
    let mut poly_err = 0.0f64;
    let mut cells_used = 0;
    while cells_used < 50 {
        let level = rng.random_range(0..res.len());
        let n = res[level] as i32;
        let s = 2.0 / res[level] as f64;
        let cell: [i32; 3] = std::array::from_fn(|_| rng.random_range(-n / 2..n / 2));
        let cs = corners(cell);
        let slots: BTreeSet<usize> = cs.iter().map(|&c| hash_index(c, cfg.log2_table_size)).collect();
        if slots.len() < 8 {
            continue;
        }
        cells_used += 1;
        let k: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let p = |x: f64, y: f64, z: f64| {
            k[0] + k[1] * x + k[2] * y + k[3] * z + k[4] * x * y + k[5] * x * z + k[6] * y * z + k[7] * x * y * z
        };
        let mut g2 = grid.clone();
        for c in &cs {
            let (x, y, z) = (c[0] as f64 * s, c[1] as f64 * s, c[2] as f64 * s);
            let i = g2.table_index(level, hash_index(*c, cfg.log2_table_size), 0);
            g2.tables[i] = p(x, y, z);
        }
        for _ in 0..10 {
            let q: [f64; 3] = std::array::from_fn(|a| (cell[a] as f64 + rng.random_range(0.0..1.0)) * s);
            let (enc, _) = g2.encode_point(&Vector3::new(q[0], q[1], q[2]));
            poly_err = poly_err.max((enc[level * fpl] - p(q[0], q[1], q[2])).abs());
        }
    }
    pass &= poly_err <= 1e-12;
    notes.push(format!("trilinear {poly_err:.1e}"));

    // continuity across cell faces, on the sphere
    let mut jump = 0.0f64;
    for _ in 0..500 {
        let level = rng.random_range(0..res.len());
        let s = 2.0 / res[level] as f64;
        let axis = rng.random_range(0..3);
        let b = (rng.random_range(-0.9..0.9) / s).round() * s;
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - b * b).sqrt();
        let at = |x: f64| {
            let mut v = [r * phi.cos(), r * phi.sin(), 0.0];
            v.rotate_right(axis + 1);
            v[axis] = x;
            Vector3::new(v[0], v[1], v[2])
        };
        let eps = 1e-12;
        let (lo, _) = grid.encode(&at(b - eps)).unwrap();
        let (hi, _) = grid.encode(&at(b + eps)).unwrap();
        jump = jump.max(lo.iter().zip(&hi).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max));
    }
    pass &= jump <= 1e-9;
    notes.push(format!("boundary jump {jump:.1e}"));

    // backward weights sum to one per level and feature; every touched slot is
    // reachable from the sphere
    let active = grid.sphere_active_slots();
    let per_level = grid.table_index(1, 0, 0);
    let mut unity = 0.0f64;
    let mut outside = 0;
    for _ in 0..2000 {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() < 1e-3 {
            continue;
        }
        let (_, ctx) = grid.encode(&v.normalize()).unwrap();
        let mut out = Vec::new();
        grid.encode_backward(&ctx, &vec![1.0; grid.output_dim()], &mut out).unwrap();
        let mut sums = vec![0.0; grid.output_dim()];
        for &(i, w) in &out {
            sums[(i / per_level) * fpl + i % fpl] += w;
            if !active.contains(&(i - i % fpl)) {
                outside += 1;
            }
        }
        unity = unity.max(sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max));
    }
    let total = res.len() * cfg.table_size();
    pass &= unity <= 1e-12 && outside == 0 && active.len() < total;
    notes.push(format!(
        "partition of unity {unity:.1e}, {outside} touched slots off the active set ({} of {total} active)",
        active.len()
    ));
    outcome(pass, notes.join(", "))
}

// ---------------------------------------------------------------- 6, 7

fn desk_config(seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        iterations: DESK_ITERS,
        seed,
        densify: DensifyConfig { tau: DESK_TAU, gamma: DESK_GAMMA, ..d.densify },
        grid: HashGridConfig { log2_table_size: DESK_LOG2_TABLE, ..d.grid },
        ..d
    }
}

fn synth_scene(kind: io::SynthScene, seed: u64, dir: &Path) -> Scene {
    io::synth_dataset(&io::SynthSpec::new(kind), seed, dir).unwrap();
    io::load_dataset(dir).unwrap().to_scene(TrainConfig::default().feature_dim, seed).unwrap()
}

struct Trend {
    psnr: [f64; 2],
    top_quartile: [f64; 2],
    at_iter: [usize; 2],
    per_seed: Vec<String>,
    determinism: bool,
}

/// Trains every seed with `toggle(cfg, true)` and `toggle(cfg, false)`.
fn trend(kind: io::SynthScene, toggle: fn(&mut TrainConfig, bool)) -> Trend {
    let mut t = Trend { psnr: [0.0; 2], top_quartile: [0.0; 2], at_iter: [0; 2], per_seed: Vec::new(), determinism: true };
    for &seed in &DESK_SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let scene = synth_scene(kind, seed, dir.path());
        let mut row = Vec::new();
        for (i, on) in [true, false].into_iter().enumerate() {
            let mut cfg = desk_config(seed);
            toggle(&mut cfg, on);
            let out = train(&scene, &cfg).unwrap();
            let report = evaluate(&out.checkpoint, &scene.test).unwrap();
            let last = out.curves.last().unwrap();
            t.psnr[i] += report.mean_psnr / DESK_SEEDS.len() as f64;
            t.top_quartile[i] += last.q[3] / DESK_SEEDS.len() as f64;
            t.at_iter[i] = last.iter;
            row.push(format!("{:.2}", report.mean_psnr));

            let again = evaluate(&out.checkpoint, &scene.test).unwrap();
            let mut seq = out.checkpoint.clone();
            seq.config.parallel = false;
            t.determinism &= again == report && evaluate(&seq, &scene.test).unwrap() == report;
        }
        t.per_seed.push(format!("seed {seed}: {}", row.join(" vs ")));
    }
    t
}

fn vgd_trend() -> Outcome {
    let t = trend(io::SynthScene::Texture, |c, on| c.vgd = on);
    let pass = t.psnr[0] >= t.psnr[1] && t.top_quartile[0] < t.top_quartile[1] && t.at_iter[0] == t.at_iter[1];
    outcome(
        pass,
        format!(
            "test PSNR with VGD {:.3} vs without {:.3} ({}); top-quartile dbar at iteration {} {:.3e} vs {:.3e}",
            t.psnr[0],
            t.psnr[1],
            t.per_seed.join(", "),
            t.at_iter[0],
            t.top_quartile[0],
            t.top_quartile[1]
        ),
    )
}

fn lhe_trend() -> Outcome {
    let t = trend(io::SynthScene::Specular, |c, on| c.lhe = on);
    let pass = t.psnr[0] >= t.psnr[1] && t.determinism;
    outcome(
        pass,
        format!(
            "test PSNR with LHE {:.3} vs raw direction {:.3} ({}); evaluation deterministic {}",
            t.psnr[0],
            t.psnr[1],
            t.per_seed.join(", "),
            t.determinism
        ),
    )
}

// ---------------------------------------------------------------- 8

fn baseline_rule(a: &GradAccum, tau: f64) -> Vec<usize> {
    (0..a.len())
        .filter(|&k| a.view_count[k] > 0 && a.ndc_grad_norm_sum[k] / a.view_count[k] as f64 > tau)
        .collect()
}

fn degeneracy() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = io::SynthSpec { n_views: 9, width: 16, height: 16, grid: 12, ..io::SynthSpec::new(io::SynthScene::Texture) };
    io::synth_dataset(&spec, 4, dir.path()).unwrap();
    let scene = io::load_dataset(dir.path()).unwrap().to_scene(8, 4).unwrap();
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        iterations: 200,
        seed: 4,
        vgd: false,
        lhe: false,
        feature_dim: 8,
        hidden: 16,
        densify: DensifyConfig { start_step: 20, interval: 30, end_step: Some(150), ..d.densify },
        ..d
    };
    let dcfg = cfg.effective_densify();
    let mut pass = dcfg.gamma == 0.0;
    let mut trainer = Trainer::new(&scene, cfg.clone()).unwrap();
    let (mut compared, mut nonempty) = (0, 0);
    let mut mismatch = Vec::new();
    while trainer.iteration < cfg.iterations {
        trainer.step().unwrap();
        if trainer.iteration % 10 != 5 {
            continue;
        }
        // selections and the densified set on the live accumulators
        let a = &trainer.accum;
        let mut taus: Vec<f64> = (0..a.len()).filter(|&k| a.view_count[k] > 0).map(|k| a.mean_grad_norm(k)).collect();
        taus.sort_by(f64::total_cmp);
        let mut probe = vec![TAU];
        if !taus.is_empty() {
            probe.extend([taus[taus.len() / 2], taus[taus.len() * 9 / 10]]);
        }
        for tau in probe {
            let want = baseline_rule(a, tau);
            compared += 1;
            nonempty += usize::from(!want.is_empty());
            if select(a, dcfg.gamma, tau) != want {
                mismatch.push(format!("iteration {} tau {tau:e}", trainer.iteration));
            }
            let dc = DensifyConfig { tau, ..dcfg };
            let (set, _, ev) = densify_step(&trainer.gaussians, a, &dc, trainer.extent, 1e-3, 7, 9).unwrap();
            let (grown, _) =
                clone_or_split(&trainer.gaussians, &want, &a.position_grad_sum, 1e-3, &dc, trainer.extent, 9).unwrap();
            let (expect, _) = prune(&grown, dc.prune_opacity, None);
            if set != expect || ev.n_selected_vgd_only != 0 || ev.n_selected_baseline != want.len() {
                mismatch.push(format!("densify at iteration {} tau {tau:e}", trainer.iteration));
            }
        }
    }
    let out = trainer.finish();
    let vgd_only: usize = out.events.iter().map(|e| e.n_selected_vgd_only).sum();
    let replay = replay_stats(&out.checkpoint, &scene.train).unwrap();
    let replay_ok = select(&replay, 0.0, TAU) == baseline_rule(&replay, TAU);
    pass &= mismatch.is_empty() && vgd_only == 0 && !out.events.is_empty() && replay_ok && nonempty > 0;
    outcome(
        pass,
        format!(
            "effective gamma {}; {compared} accumulator snapshots ({nonempty} with selections), {} mismatches{}; \
             {} densify events with {vgd_only} variance-only selections; replayed stats agree {replay_ok}",
            dcfg.gamma,
            mismatch.len(),
            mismatch.first().map(|m| format!(" (first: {m})")).unwrap_or_default(),
            out.events.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut pass = true;

    // checkpoint: bytes stable through a read/write cycle, values exact
    let spec = io::SynthSpec { n_views: 6, width: 12, height: 12, grid: 8, ..io::SynthSpec::new(io::SynthScene::Specular) };
    io::synth_dataset(&spec, 6, dir.path()).unwrap();
    let scene = io::load_dataset(dir.path()).unwrap().to_scene(8, 6).unwrap();
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        iterations: 10,
        feature_dim: 8,
        hidden: 16,
        grid: HashGridConfig { log2_table_size: 10, ..d.grid },
        ..d
    };
    let ckpt = train(&scene, &cfg).unwrap().checkpoint;
    let mut bytes = Vec::new();
    io::write_checkpoint(&ckpt, &mut bytes).unwrap();
    let back = io::read_checkpoint(&bytes[..]).unwrap();
    let mut again = Vec::new();
    io::write_checkpoint(&back, &mut again).unwrap();
    let ck_ok = back == ckpt && again == bytes;
    pass &= ck_ok;
    notes.push(format!("checkpoint {} bytes exact {ck_ok}", bytes.len()));

    // ply
    let path = dir.path().join("g.ply");
    io::save_ply(&path, &ckpt.gaussians).unwrap();
    let ply_ok = io::load_ply(&path).unwrap() == ckpt.gaussians;
    pass &= ply_ok;
    notes.push(format!("ply exact {ply_ok}"));

    // png: 0.5 stores as 128, byte values come back exactly
    let path = dir.path().join("p.png");
    let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as f64 / 255.0).collect();
    let img = Image::from_data(4, 3, data);
    io::write_png(&path, &img).unwrap();
    let png_ok = io::read_png(&path).unwrap() == img && io::to_byte(0.5) == 128 && io::from_byte(128) == 128.0 / 255.0;
    io::write_png(&path, &Image::filled(2, 2, [0.5; 3])).unwrap();
    let half = io::read_png(&path).unwrap().data.iter().all(|&v| v == 128.0 / 255.0);
    pass &= png_ok && half;
    notes.push(format!("png exact {png_ok}, 0.5 -> 128 {half}"));

    // colmap fixture
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/colmap");
    let m = io::load_colmap_model(&fixture.join("sparse/0")).unwrap();
    let ds = io::load_dataset(&fixture).unwrap();
    let c1 = m.cameras[&1];
    let colmap_ok = (c1.fx, c1.fy, c1.cx, c1.cy) == (5.5, 6.0, 2.0, 1.5)
        && m.images.iter().map(|i| i.id).collect::<Vec<_>>() == [3, 7]
        && m.images[1].tvec == [0.5, -0.25, 3.0]
        && m.points[0] == [0.125, -0.5, 2.75]
        && m.colors[0] == [1.0, 0.0, 128.0 / 255.0]
        && ds.views.len() == 2
        && ds.views[0].image.pixel(3, 2) == [180.0 / 255.0, 200.0 / 255.0, 1.0];
    pass &= colmap_ok;
    notes.push(format!("colmap fixture {colmap_ok}"));
    outcome(pass, notes.join(", "))
}
