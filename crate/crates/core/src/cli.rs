//! The `vgsplat` command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::engine::{
    evaluate, render_view, replay_stats, write_curves_csv, write_eval_csv, write_metrics_csv, Checkpoint, TrainConfig,
    Trainer,
};
use crate::densify::write_densify_csv;
use crate::error::Error;
use crate::gradstats::write_stats_csv;
use crate::io::{
    load_checkpoint, load_config, load_dataset, save_checkpoint, save_ply, synth_dataset, write_config_echo, write_png,
    CameraRecord, SynthScene, SynthSpec,
};

#[derive(Debug, Parser)]
#[command(name = "vgsplat", version, about = "CPU Gaussian-splatting trainer with variance-guided densification")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a built-in synthetic dataset.
    Synth(SynthArgs),
    /// Train on a dataset directory.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Render one view of a checkpoint to PNG.
    Render(RenderArgs),
    /// Score a checkpoint against dataset views.
    #[command(after_help = "Report columns: view,psnr,ssim. The last row is `mean`.")]
    Eval(EvalArgs),
    /// Replay one accumulation pass and dump per-Gaussian statistics.
    #[command(after_help = STATS_HELP)]
    Stats(StatsArgs),
}

const TRAIN_HELP: &str = "\
Outputs in --out:
  checkpoint.bin   trained model
  gaussians.ply    Gaussian parameters
  config.json      resolved settings (the gamma actually applied)
  metrics.csv      iter,loss,psnr_train,n_gaussians
  curves.csv       iter,q1_dbar,q2_dbar,q3_dbar,q4_dbar  (mean dbar per quartile, q1 lowest)
  stats.csv        gaussian_id,gnorm,dbar,var_r,var_g,var_b  (accumulator at the end)
  densify.csv      step,n_before,n_selected_vgd_only,n_selected_baseline,n_after
  eval.csv         view,psnr,ssim on held-out views, then a mean row

Precedence: flags > --config file > defaults.";

const STATS_HELP: &str = "\
Columns: gaussian_id,gnorm,dbar,var_r,var_g,var_b
  gnorm  mean screen-space positional gradient norm over views
  dbar   mean summed per-channel color-gradient variance over views
  var_*  per-channel variance, averaged over views";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn is_on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

fn finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not a finite number"))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scene: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub views: usize,
    #[arg(long, default_value_t = 40)]
    pub width: usize,
    #[arg(long, default_value_t = 40)]
    pub height: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Variance term in the densification criterion.
    #[arg(long, value_enum)]
    pub vgd: Option<OnOff>,
    /// Hash-grid direction encoder.
    #[arg(long, value_enum)]
    pub lhe: Option<OnOff>,
    #[arg(long, value_parser = finite, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = finite, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat JSON (or `.toml`) file of config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// View index into --data (name order), or a camera JSON file.
    #[arg(long)]
    pub camera: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Defaults, then the config file, then flags.
pub fn resolve_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    if args.vgd == Some(OnOff::Off) && args.gamma.is_some() {
        return Err(CliError::Usage("--gamma has no effect with --vgd off".into()));
    }
    let mut cfg = match &args.config {
        Some(p) => load_config(p).map_err(|e| match e {
            Error::InvalidInput(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        })?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.vgd {
        cfg.vgd = v.is_on();
    }
    if let Some(v) = args.lhe {
        cfg.lhe = v.is_on();
    }
    if let Some(g) = args.gamma {
        cfg.densify.gamma = g;
    }
    if let Some(t) = args.tau {
        cfg.densify.tau = t;
    }
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e).into())
}

fn views_for(data: &Path, split: Split) -> CliResult<Vec<crate::camera::View>> {
    let ds = load_dataset(data)?;
    let (train, test) = ds.split();
    Ok(match split {
        Split::Train => train,
        Split::Test => test,
        Split::All => ds.views,
    })
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let scene: SynthScene = a.scene.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let spec = SynthSpec { n_views: a.views, width: a.width, height: a.height, ..SynthSpec::new(scene) };
    let s = synth_dataset(&spec, a.seed, &a.out).map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Usage(m),
        other => CliError::Runtime(other),
    })?;
    println!("n_views={} n_points={}", s.n_views, s.n_points);
    Ok(())
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(a)?;
    let ds = load_dataset(&a.data)?;
    let scene = ds.to_scene(cfg.feature_dim, cfg.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_config_echo(&a.out.join("config.json"), &cfg)?;
    info!(
        "{} train / {} test views, {} initial gaussians, {} iterations",
        scene.train.len(),
        scene.test.len(),
        scene.gaussians.len(),
        cfg.iterations
    );
    let mut t = Trainer::new(&scene, cfg.clone())?;
    let every = (cfg.iterations / 20).max(1);
    for _ in 0..cfg.iterations {
        let l = t.step()?;
        if t.iteration % every == 0 {
            info!("iter {:>6}  loss {:.5}  gaussians {}", t.iteration, l, t.gaussians.len());
        }
    }
    let accum = t.accum.clone();
    let out = t.finish();
    let o = |name: &str| a.out.join(name);
    save_checkpoint(&o("checkpoint.bin"), &out.checkpoint)?;
    save_ply(&o("gaussians.ply"), &out.checkpoint.gaussians)?;
    write_with(&o("metrics.csv"), |w| write_metrics_csv(&out.metrics, w))?;
    write_with(&o("curves.csv"), |w| write_curves_csv(&out.curves, w))?;
    write_with(&o("stats.csv"), |w| write_stats_csv(&accum, w))?;
    write_with(&o("densify.csv"), |w| write_densify_csv(&out.events, w))?;
    if !scene.test.is_empty() {
        let report = evaluate(&out.checkpoint, &scene.test)?;
        write_with(&o("eval.csv"), |w| write_eval_csv(&report, w))?;
        println!(
            "iterations={} gaussians={} test_psnr={:.4} test_ssim={:.4}",
            out.checkpoint.iteration,
            out.checkpoint.gaussians.len(),
            report.mean_psnr,
            report.mean_ssim
        );
    }
    if out.skipped_steps > 0 {
        log::warn!("{} steps skipped for non-finite gradients", out.skipped_steps);
    }
    Ok(())
}

fn load_camera_arg(a: &RenderArgs) -> CliResult<crate::camera::Camera> {
    if let Ok(index) = a.camera.parse::<usize>() {
        let data = a.data.as_ref().ok_or_else(|| CliError::Usage("--camera <index> requires --data".into()))?;
        let views = views_for(data, Split::All)?;
        let n = views.len();
        return views
            .into_iter()
            .nth(index)
            .map(|v| v.camera)
            .ok_or_else(|| CliError::Usage(format!("camera index {index} out of range ({n} views)")));
    }
    let path = Path::new(&a.camera);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: CameraRecord = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), msg: e.to_string() })?;
    Ok(rec.camera()?)
}

fn render(a: &RenderArgs) -> CliResult<()> {
    let camera = load_camera_arg(a)?;
    let ckpt: Checkpoint = load_checkpoint(&a.ckpt)?;
    let img = render_view(&ckpt.gaussians, &ckpt.appearance, &camera, ckpt.config.background, ckpt.config.parallel)?;
    write_png(&a.out, &img)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let views = views_for(&a.data, a.split)?;
    let report = evaluate(&ckpt, &views)?;
    write_with(&a.report, |w| write_eval_csv(&report, w))?;
    println!("psnr={:.4} ssim={:.4} views={}", report.mean_psnr, report.mean_ssim, report.views.len());
    Ok(())
}

fn stats(a: &StatsArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let views = views_for(&a.data, a.split)?;
    let accum = replay_stats(&ckpt, &views)?;
    write_with(&a.out, |w| write_stats_csv(&accum, w))?;
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
