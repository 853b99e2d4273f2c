use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use probdet::io::{self, Dump, FusedFrameDump, RawFrame};
use probdet::robustness::{rpc, rpc_suite};
use probdet::sampler::{bench_config, BenchConfig, BenchReport};
use probdet::synth::{generate, severity_ladder, SceneSpec, SynthFrame};
use probdet::{evaluate, fuse_frame, FilterConfig, DEFAULT_MAP_IOU};

const SEED_ENV: &str = "PROBDET_SEED";

#[derive(Parser)]
#[command(
    name = "probdet",
    version,
    about = "Probabilistic object detection: fuse MC samples, score PDQ/mAP, aggregate rPC"
)]
struct Cli {
    /// Worker threads for per-frame work (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average, filter and convert a raw-sample dump into probabilistic boxes.
    Fuse(FuseArgs),
    /// Score a fused dump against ground truth.
    Evaluate(EvaluateArgs),
    /// Relative performance under corruption from a grid CSV or a report directory.
    Rpc(RpcArgs),
    /// Time deterministic, naive and cached MC-Dropout sampling.
    BenchSampler(BenchArgs),
    /// Generate a synthetic ground truth and raw-sample dump.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Confidence threshold α.
    #[arg(long)]
    conf: f64,
    #[arg(long, default_value_t = FilterConfig::DEFAULT_IOU_THRESHOLD)]
    iou: f64,
    /// Frame size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_frame_size)]
    frame_size: (u32, u32),
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAP_IOU)]
    map_iou: f64,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct RpcSource {
    /// CSV with `corruption,severity,<metric>...` and a `clean,0,...` row.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Directory of `<corruption>_s<severity>.report` files.
    #[arg(long, requires = "clean")]
    reports: Option<PathBuf>,
}

#[derive(Args)]
struct RpcArgs {
    #[command(flatten)]
    source: RpcSource,
    /// Report on uncorrupted data, used with --reports.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Write the rPC table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML benchmark config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML scene spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
    /// Raw-sample dump; with --ladder, one file per level with `_s<k>` before the extension.
    #[arg(long)]
    out_dump: PathBuf,
    /// Emit a severity ladder with this many levels (must match `severity_sigmas`).
    #[arg(long)]
    ladder: Option<usize>,
}

fn parse_frame_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let parse = |v: &str| v.parse::<u32>().ok().filter(|n| *n > 0);
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok((w, h)),
        _ => Err(format!("expected positive WIDTHxHEIGHT, got `{s}`")),
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            Ok(Some(v.trim().parse().with_context(|| {
                format!("{SEED_ENV}=`{v}` is not an unsigned integer")
            })?))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(SEED_ENV),
    }
}

fn read(path: &Path) -> Result<String> {
    Ok(io::read_file(path)?)
}

fn with_context<T>(r: std::result::Result<T, io::IoError>, path: &Path) -> Result<T> {
    r.with_context(|| format!("reading {}", path.display()))
}

fn fuse(a: FuseArgs) -> Result<()> {
    let cfg = FilterConfig::new(a.conf, a.iou, a.frame_size.0, a.frame_size.1)?;
    let dump = with_context(io::read_dump(&read(&a.dump)?), &a.dump)?;
    let Dump::Raw { classes, frames, .. } = dump else {
        bail!("{}: expected a raw-sample dump, found shape=fused", a.dump.display());
    };
    let fused = frames
        .par_iter()
        .map(|f| {
            let r = fuse_frame(&f.sets, &cfg).with_context(|| format!("frame {}", f.frame_id))?;
            Ok(FusedFrameDump {
                frame_id: f.frame_id.clone(),
                boxes: r.boxes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let d_o: usize = frames.iter().map(|f| f.sets.len()).sum();
    let d_f: usize = fused.iter().map(|f| f.boxes.len()).sum();
    io::write_file(&a.out, &io::write_fused_dump(classes, &fused)?)?;
    println!("frames {}  D_O {d_o}  D_F {d_f}", frames.len());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    ensure!((0.0..=1.0).contains(&a.map_iou), "--map-iou must lie in [0, 1]");
    let gt = with_context(io::read_ground_truth(&read(&a.gt)?), &a.gt)?;
    let dump = with_context(io::read_dump(&read(&a.dump)?), &a.dump)?;
    let Dump::Fused { frames, .. } = dump else {
        bail!(
            "{}: expected a fused dump, found shape=raw (run `probdet fuse` first)",
            a.dump.display()
        );
    };
    let frames = io::attach_detections(gt, frames)?;
    let report = evaluate(&frames, a.map_iou)?;
    io::write_file(&a.out, &io::write_report(&report))?;
    println!("{}", io::report_summary(&report));
    Ok(())
}

fn rpc_cmd(a: RpcArgs) -> Result<()> {
    let rows: Vec<(String, std::result::Result<f64, String>)> = if let Some(grid) = &a.source.grid {
        let grids = with_context(io::read_grid_csv(&read(grid)?), grid)?;
        grids
            .iter()
            .map(|g| (g.metric_name.clone(), rpc(g).map_err(|e| e.to_string())))
            .collect()
    } else {
        let dir = a.source.reports.as_ref().expect("clap enforces one source");
        let clean_path = a.clean.as_ref().expect("clap requires --clean with --reports");
        let clean = with_context(io::read_report(&read(clean_path)?), clean_path)?;
        let mut reports = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            let Some(cell) = io::parse_cell_report_name(&name) else {
                continue;
            };
            let path = e.path();
            reports.insert(cell, with_context(io::read_report(&read(&path)?), &path)?);
        }
        ensure!(
            !reports.is_empty(),
            "{}: no `<corruption>_s<severity>.report` files",
            dir.display()
        );
        rpc_suite(&reports, &clean)?
            .into_iter()
            .map(|(m, r)| (m.name().to_owned(), r.map_err(|e| e.to_string())))
            .collect()
    };

    for (name, r) in &rows {
        match r {
            Ok(v) => println!("rPC_{name:<4} {:>7.2}", 100.0 * v),
            Err(e) => println!("rPC_{name:<4}   undefined ({e})"),
        }
    }
    if let Some(out) = &a.out {
        io::write_file(out, &io::write_rpc_csv(&rows)?)?;
    }
    if rows.iter().all(|(_, r)| r.is_err()) {
        let (_, first) = &rows[0];
        bail!("no metric has a defined rPC: {}", first.as_ref().unwrap_err());
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = io::read_toml(&a.config)?;
    if let Some(seed) = seed_override()? {
        cfg.pipeline.seed = seed;
    }
    let r = bench_config(&cfg)?;
    io::write_file(&a.out, &format!("{}\n{}\n", BenchReport::CSV_HEADER, r.csv_row()))?;
    println!(
        "head share {:.3}  N {}  t_det {:.3} ms  naive/det {:.2}  cached/det {:.2}  naive/cached {:.2}",
        r.head_share,
        r.n_samples,
        1e3 * r.t_det,
        r.naive_ratio(),
        r.cached_ratio(),
        r.speedup()
    );
    Ok(())
}

fn raw_frames(scene: &[SynthFrame]) -> Vec<RawFrame> {
    scene
        .iter()
        .map(|f| RawFrame {
            frame_id: f.frame_id.clone(),
            sets: f.sample_sets.clone(),
        })
        .collect()
}

fn ground_truth_frames(scene: &[SynthFrame]) -> Vec<probdet::Frame> {
    scene
        .iter()
        .map(|f| probdet::Frame {
            frame_id: f.frame_id.clone(),
            width: f.width,
            height: f.height,
            ground_truths: f.ground_truths.clone(),
            detections: Vec::new(),
        })
        .collect()
}

fn level_path(base: &Path, level: usize) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_s{level}.{}", ext.to_string_lossy()),
        None => format!("{stem}_s{level}"),
    };
    base.with_file_name(name)
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut spec: SceneSpec = io::read_toml(&a.spec)?;
    if let Some(seed) = seed_override()? {
        spec.seed = seed;
    }
    let (classes, samples) = (spec.classes, spec.samples);
    match a.ladder {
        None => {
            let scene = generate(&spec)?;
            let dump = io::write_raw_dump(classes, samples, &raw_frames(&scene))?;
            io::write_file(&a.out_gt, &io::write_ground_truth(&ground_truth_frames(&scene))?)?;
            io::write_file(&a.out_dump, &dump)?;
            println!(
                "frames {}  wrote {} and {}",
                scene.len(),
                a.out_gt.display(),
                a.out_dump.display()
            );
        }
        Some(levels) => {
            ensure!(
                levels == spec.severity_sigmas.len(),
                "--ladder {levels} but the spec lists {} severity_sigmas",
                spec.severity_sigmas.len()
            );
            let ladder = severity_ladder(&spec)?;
            let dumps = ladder
                .iter()
                .map(|scene| io::write_raw_dump(classes, samples, &raw_frames(scene)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            io::write_file(&a.out_gt, &io::write_ground_truth(&ground_truth_frames(&ladder[0]))?)?;
            for (k, dump) in dumps.iter().enumerate() {
                let path = level_path(&a.out_dump, k + 1);
                io::write_file(&path, dump)?;
                println!(
                    "level {} sigma {}  wrote {}",
                    k + 1,
                    spec.severity_sigmas[k],
                    path.display()
                );
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Rpc(a) => rpc_cmd(a),
        Command::BenchSampler(a) => bench_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
