//! Command-line front end. Exit codes: 0 success, 1 runtime failure or
//! tolerance exceeded, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accel::{BlasKind, CutoffPolicy};
use crate::error::Error;
use crate::metrics::{buffer_memory_report, emit_report, CacheModel, PairDiff, RegimeRow, ReportFormat, StatsReport};
use crate::render::{build_structure, render_frame, write_image, Camera, Image, ImageFormat, Regime, RenderConfig};
use crate::scene::{generate_synthetic, load_ply_with, save_ply, Activation, Scene, SyntheticParams};
use crate::traversal::{HitKeyMode, TraceOptions};

const DEFAULT_CAMERA: &str = "pos=0,0,-3,look=0,0,0,fov=45,res=64x64";

#[derive(Debug, Parser)]
#[command(name = "gsrt", version, about = "Ray trace 3D Gaussian scenes and report traversal statistics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render one image under one regime.
    Render(RenderArgs),
    /// Sweep the k-buffer size and report rounds, fetches and evictions.
    Bench(BenchArgs),
    /// Render under several regimes and compare images and counters.
    Compare(CompareArgs),
    /// Print acceleration structure statistics.
    AsStats(AsStatsArgs),
    /// Write a seeded synthetic scene as PLY.
    GenScene(GenSceneArgs),
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// Scene in 3DGS PLY layout.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    scene: Option<PathBuf>,
    /// Use a synthetic scene with this many Gaussians instead of a file.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    synthetic: Option<u64>,
    /// Seed for --synthetic.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// PLY opacity and scale are stored already activated.
    #[arg(long)]
    no_activation: bool,
}

impl SceneArgs {
    fn load(&self) -> crate::Result<Scene> {
        match (&self.scene, self.synthetic) {
            (Some(path), _) => {
                let act = if self.no_activation {
                    Activation::PreActivated
                } else {
                    Activation::Apply
                };
                load_ply_with(path, act)
            }
            (None, Some(n)) => generate_synthetic(&SyntheticParams::new(n as usize, self.seed)),
            (None, None) => unreachable!("clap requires one of them"),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BlasArg {
    Sphere,
    Ico20,
    Ico80,
}

impl From<BlasArg> for BlasKind {
    fn from(b: BlasArg) -> Self {
        match b {
            BlasArg::Sphere => BlasKind::UnitSphere,
            BlasArg::Ico20 => BlasKind::Icosphere(0),
            BlasArg::Ico80 => BlasKind::Icosphere(1),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HitKeyArg {
    Ellipsoid,
    Proxy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StatsFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// k-buffer capacity.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Early termination threshold on accumulated alpha, or "off".
    #[arg(long, default_value = "0.999", value_parser = parse_ert)]
    ert: Ert,
    /// Cutoff radius: a number, "adaptive" or "adaptive:<min alpha>".
    #[arg(long, default_value = "3", value_parser = parse_kappa)]
    kappa: CutoffPolicy,
    /// BVH branching factor.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..=6))]
    arity: u64,
    /// Proxy geometry; defaults to ico20 for baseline and sphere otherwise.
    #[arg(long, value_enum)]
    blas: Option<BlasArg>,
    /// Hit key: exact ellipsoid entry or nearest proxy surface.
    #[arg(long, value_enum, default_value = "ellipsoid")]
    hit_key: HitKeyArg,
    /// Highest SH degree to evaluate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=3))]
    sh_degree: Option<u64>,
    /// Background color as r,g,b.
    #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
    background: [f64; 3],
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Inline camera (pos=x,y,z,look=x,y,z,fov=deg,res=WxH[,up=x,y,z]) or a JSON file.
    #[arg(long, default_value = DEFAULT_CAMERA)]
    cam: String,
}

impl TraceArgs {
    fn config(&self, regime: Regime) -> RenderConfig {
        RenderConfig {
            regime,
            k: self.k as usize,
            ert: self.ert.0,
            cutoff: self.kappa,
            sh_degree: self.sh_degree.map(|d| d as usize),
            background: self.background,
            proxy: self.blas.map(BlasKind::from),
            arity: self.arity as usize,
            trace: TraceOptions {
                hit_key: match self.hit_key {
                    HitKeyArg::Ellipsoid => HitKeyMode::Ellipsoid,
                    HitKeyArg::Proxy => HitKeyMode::ProxySurface,
                },
                ..TraceOptions::default()
            },
            ..RenderConfig::default()
        }
    }

    fn camera(&self) -> Result<Camera, Failure> {
        if self.cam.contains('=') {
            Camera::parse_inline(&self.cam).map_err(Failure::usage)
        } else {
            let text = fs::read_to_string(&self.cam).map_err(|e| Failure::Usage(format!("--cam {}: {e}", self.cam)))?;
            Camera::parse_json(&text).map_err(Failure::usage)
        }
    }

    fn threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Write stats here instead of stdout.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Stats format; defaults to csv for a .csv path and json otherwise.
    #[arg(long, value_enum)]
    stats_format: Option<StatsFormat>,
    /// Skip the L1 cache replay.
    #[arg(long)]
    no_cache_model: bool,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    stats: StatsArgs,
    /// baseline, sw or sw+hw.
    #[arg(long, default_value = "sw+hw", value_parser = parse_regime)]
    regime: Regime,
    /// Output image (.ppm or .png).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    stats: StatsArgs,
    /// Comma-separated regimes, at least two.
    #[arg(long, value_delimiter = ',', default_value = "baseline,sw,sw+hw", value_parser = parse_regime)]
    regimes: Vec<Regime>,
    /// Largest allowed per-channel difference between any two images.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    stats: StatsArgs,
    #[arg(long, default_value = "sw+hw", value_parser = parse_regime)]
    regime: Regime,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1.., value_parser = clap::value_parser!(u64).range(1..))]
    k_sweep: Vec<u64>,
}

#[derive(Debug, Args)]
struct AsStatsArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value = "sw", value_parser = parse_regime)]
    regime: Regime,
    #[arg(long, value_enum)]
    blas: Option<BlasArg>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..=6))]
    arity: u64,
    #[arg(long, default_value = "3", value_parser = parse_kappa)]
    kappa: CutoffPolicy,
}

#[derive(Debug, Args)]
struct GenSceneArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u64).range(0..=3))]
    sh_degree: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Early termination threshold; `None` when disabled.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ert(Option<f64>);

fn parse_ert(s: &str) -> Result<Ert, String> {
    if matches!(s, "off" | "none") {
        return Ok(Ert(None));
    }
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number or \"off\""))?;
    if v > 0.0 && v <= 1.0 {
        Ok(Ert(Some(v)))
    } else {
        Err(format!("{v} outside (0, 1]"))
    }
}

fn parse_kappa(s: &str) -> Result<CutoffPolicy, String> {
    let policy = match s.split_once(':') {
        _ if s == "adaptive" => CutoffPolicy::Adaptive(1.0 / 255.0),
        Some(("adaptive", a)) => CutoffPolicy::Adaptive(a.parse().map_err(|_| format!("bad alpha {a:?}"))?),
        _ => CutoffPolicy::Fixed(s.parse().map_err(|_| format!("{s:?} is not a number"))?),
    };
    policy.validate().map_err(|e| e.to_string())?;
    Ok(policy)
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("{s:?} is not r,g,b"))?;
    <[f64; 3]>::try_from(v).map_err(|_| format!("{s:?} is not r,g,b"))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn usage(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bench(a) => cmd_bench(a),
        Command::AsStats(a) => cmd_as_stats(a),
        Command::GenScene(a) => cmd_gen_scene(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn run_regime(scene: &Scene, camera: &Camera, cfg: &RenderConfig, threads: usize, cache: bool) -> crate::Result<(Image, RegimeRow)> {
    let accel = build_structure(scene, cfg)?;
    let cfg = RenderConfig {
        record_trace: cache,
        ..cfg.clone()
    };
    let frame = render_frame(scene, &accel, camera, &cfg, threads)?;
    let mut row = RegimeRow {
        regime: cfg.regime.name().to_string(),
        k: cfg.k as u64,
        counters: frame.counters.summary(),
        structure_bytes: accel.stats().size_bytes,
        ..Default::default()
    };
    if cfg.regime.checkpointing() {
        row.buffer_bytes = buffer_memory_report(cfg.checkpoint_capacity, cfg.eviction_capacity, row.counters.rays).total_bytes;
    }
    if let Some(trace) = frame.counters.trace() {
        let mut model = CacheModel::l1();
        model.replay(trace);
        let s = model.stats()[0];
        (row.cache_hits, row.cache_misses, row.cache_hit_rate) = (s.hits, s.misses, s.hit_rate);
    }
    Ok((frame.image, row))
}

fn write_stats(report: &StatsReport, args: &StatsArgs) -> Result<(), Failure> {
    let format = match (args.stats_format, &args.stats_out) {
        (Some(StatsFormat::Csv), _) => ReportFormat::Csv,
        (Some(StatsFormat::Json), _) => ReportFormat::Json,
        (None, Some(p)) if p.extension().is_some_and(|e| e == "csv") => ReportFormat::Csv,
        _ => ReportFormat::Json,
    };
    let text = emit_report(report, format)?;
    match &args.stats_out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e).into()),
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn image_format(path: &Path) -> Result<ImageFormat, Failure> {
    ImageFormat::from_path(path)
        .ok_or_else(|| Failure::Usage(format!("--out {}: expected a .ppm or .png path", path.display())))
}

fn validated(trace: &TraceArgs, regime: Regime) -> Result<(RenderConfig, Camera), Failure> {
    let cfg = trace.config(regime);
    cfg.validate().map_err(Failure::usage)?;
    Ok((cfg, trace.camera()?))
}

fn cmd_render(a: RenderArgs) -> Result<(), Failure> {
    let (cfg, camera) = validated(&a.trace, a.regime)?;
    let format = image_format(&a.out)?;
    let scene = a.scene.load()?;
    let (image, row) = run_regime(&scene, &camera, &cfg, a.trace.threads(), !a.stats.no_cache_model)?;
    write_image(&image, &a.out, format)?;
    let report = StatsReport {
        width: camera.width,
        height: camera.height,
        rows: vec![row],
        ..Default::default()
    };
    write_stats(&report, &a.stats)
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    if a.regimes.len() < 2 {
        return Err(Failure::Usage("--regimes needs at least two regimes".into()));
    }
    if !(a.tolerance >= 0.0) {
        return Err(Failure::Usage(format!("--tolerance {} must be >= 0", a.tolerance)));
    }
    let mut configs = Vec::new();
    for &r in &a.regimes {
        configs.push(validated(&a.trace, r)?);
    }
    let camera = configs[0].1.clone();
    let scene = a.scene.load()?;
    let mut runs = Vec::new();
    for (cfg, _) in &configs {
        runs.push(run_regime(&scene, &camera, cfg, a.trace.threads(), !a.stats.no_cache_model)?);
    }
    let mut report = StatsReport {
        width: camera.width,
        height: camera.height,
        ..Default::default()
    };
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (fa, fb) = (runs[i].1.counters.node_fetches, runs[j].1.counters.node_fetches);
            report.pairs.push(PairDiff {
                a: runs[i].1.regime.clone(),
                b: runs[j].1.regime.clone(),
                max_abs_diff: runs[i].0.max_abs_diff(&runs[j].0)?,
                fetch_ratio: if fb == 0 { 0.0 } else { fa as f64 / fb as f64 },
            });
        }
    }
    for (image, mut row) in runs.iter().cloned() {
        row.max_abs_diff = image.max_abs_diff(&runs[0].0)?;
        report.rows.push(row);
    }
    write_stats(&report, &a.stats)?;
    match report.pairs.iter().find(|p| p.max_abs_diff > a.tolerance) {
        Some(p) => Err(Failure::Runtime(format!(
            "{} vs {} differ by {:e} > tolerance {:e}",
            p.a, p.b, p.max_abs_diff, a.tolerance
        ))),
        None => Ok(()),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let (base, camera) = validated(&a.trace, a.regime)?;
    let scene = a.scene.load()?;
    let mut report = StatsReport {
        width: camera.width,
        height: camera.height,
        ..Default::default()
    };
    for &k in &a.k_sweep {
        let cfg = RenderConfig {
            k: k as usize,
            ..base.clone()
        };
        let (_, row) = run_regime(&scene, &camera, &cfg, a.trace.threads(), !a.stats.no_cache_model)?;
        report.rows.push(row);
    }
    write_stats(&report, &a.stats)
}

fn cmd_as_stats(a: AsStatsArgs) -> Result<(), Failure> {
    let cfg = RenderConfig {
        regime: a.regime,
        proxy: a.blas.map(BlasKind::from),
        arity: a.arity as usize,
        cutoff: a.kappa,
        ..RenderConfig::default()
    };
    cfg.validate().map_err(Failure::usage)?;
    let scene = a.scene.load()?;
    let stats = build_structure(&scene, &cfg)?.stats();
    println!("{}", serde_json::to_string_pretty(&stats).map_err(Error::from)?);
    Ok(())
}

fn cmd_gen_scene(a: GenSceneArgs) -> Result<(), Failure> {
    let params = SyntheticParams::new(a.count as usize, a.seed).with_sh_degree(a.sh_degree as usize);
    save_ply(&generate_synthetic(&params)?, &a.out)?;
    Ok(())
}
