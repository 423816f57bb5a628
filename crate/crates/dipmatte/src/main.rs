//! Command-line frontend.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical divergence.

use clap::{ArgAction, Args, Parser, Subcommand};
use dipmatte::engine::{
    self, EngineConfig, MatteResult, MattingProblem, TrimapMasks,
};
use dipmatte::eval;
use dipmatte::io::{self, ShapeKind};
use dipmatte::nn::snapshot::{read_snapshot, write_snapshot};
use dipmatte::nn::UNetConfig;
use dipmatte::tensor::Tensor;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "dipmatte", version, about = "Training-free alpha matte extraction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract an alpha matte from an image and a trimap.
    Extract {
        image: PathBuf,
        trimap: PathBuf,
        out_dir: PathBuf,
        /// Warm-start from a weight snapshot written by a previous run.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Sequential warm-start pipeline over numbered frame directories.
    Video {
        frames_dir: PathBuf,
        trimaps_dir: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Composite a foreground over a new background using an alpha matte.
    Composite {
        alpha: PathBuf,
        fg: PathBuf,
        new_bg: PathBuf,
        out: PathBuf,
    },
    /// Generate a synthetic case with exact ground truth.
    Synth {
        /// disk, strands, or holed_ring.
        kind: String,
        out_dir: PathBuf,
        #[arg(long, default_value = "64x64")]
        size: String,
        #[arg(long, default_value_t = 4)]
        band: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score an alpha estimate against ground truth.
    Eval {
        alpha: PathBuf,
        gt_alpha: PathBuf,
        trimap: PathBuf,
        /// Also write the key=value lines to this file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run the finite-difference verification suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Verify in 64-bit (default). `--f64-gradcheck=false` runs the
        /// faster 32-bit variant with a looser tolerance.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        f64_gradcheck: bool,
    },
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Maximum optimization iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Warm-mode stopping threshold on the total loss.
    #[arg(long)]
    loss_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// U-net depth (number of down/up levels).
    #[arg(long)]
    depth: Option<usize>,
    /// Comma-separated channel counts per level, e.g. 16,32,64,128.
    #[arg(long)]
    channels: Option<String>,
    /// Checkpoint the weight snapshot every N iterations (0 disables).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Io(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<engine::EngineError> for CliError {
    fn from(e: engine::EngineError) -> Self {
        match e {
            engine::EngineError::Diverged { .. } => CliError::Diverged(e.to_string()),
            engine::EngineError::BadConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<dipmatte::nn::snapshot::SnapshotError> for CliError {
    fn from(e: dipmatte::nn::snapshot::SnapshotError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Extract {
            image,
            trimap,
            out_dir,
            warm_start,
            flags,
        } => cmd_extract(&image, &trimap, &out_dir, warm_start.as_deref(), &flags),
        Cmd::Video {
            frames_dir,
            trimaps_dir,
            out_dir,
            flags,
        } => cmd_video(&frames_dir, &trimaps_dir, &out_dir, &flags),
        Cmd::Composite {
            alpha,
            fg,
            new_bg,
            out,
        } => cmd_composite(&alpha, &fg, &new_bg, &out),
        Cmd::Synth {
            kind,
            out_dir,
            size,
            band,
            seed,
        } => cmd_synth(&kind, &out_dir, &size, band, seed),
        Cmd::Eval {
            alpha,
            gt_alpha,
            trimap,
            summary,
        } => cmd_eval(&alpha, &gt_alpha, &trimap, summary.as_deref()),
        Cmd::Gradcheck {
            seed,
            f64_gradcheck,
        } => cmd_gradcheck(seed, f64_gradcheck),
    }
}

/// Resolved settings: defaults, overridden by the config file, overridden
/// by explicit flags.
struct Settings {
    iters: usize,
    lr: f64,
    loss_threshold: Option<f64>,
    seed: u64,
    depth: usize,
    channels: Vec<usize>,
    snapshot_every: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let net = UNetConfig::desk_default(vec![]);
        Settings {
            iters: 4000,
            lr: 0.001,
            loss_threshold: None,
            seed: 0,
            depth: net.depth,
            channels: net.channels,
            snapshot_every: 0,
        }
    }
}

fn parse_channels(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad channel count {p:?}")))
        })
        .collect()
}

/// Default channel ladder for a non-default depth: 16 doubling per level,
/// capped at 128.
fn default_channels(depth: usize) -> Vec<usize> {
    (0..depth).map(|i| (16usize << i).min(128)).collect()
}

fn resolve(flags: &RunFlags) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    let mut depth_set = false;
    let mut channels_set = false;
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad =
                |k: &str| CliError::Usage(format!("{}: bad value for {k}", path.display()));
            match key {
                "iters" => s.iters = value.parse().map_err(|_| bad("iters"))?,
                "lr" => s.lr = value.parse().map_err(|_| bad("lr"))?,
                "loss_threshold" => {
                    s.loss_threshold = Some(value.parse().map_err(|_| bad("loss_threshold"))?)
                }
                "seed" => s.seed = value.parse().map_err(|_| bad("seed"))?,
                "depth" => {
                    s.depth = value.parse().map_err(|_| bad("depth"))?;
                    depth_set = true;
                }
                "channels" => {
                    s.channels = parse_channels(value)?;
                    channels_set = true;
                }
                "snapshot_every" => {
                    s.snapshot_every = value.parse().map_err(|_| bad("snapshot_every"))?
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "{}: unknown config key {other:?}",
                        path.display()
                    )))
                }
            }
        }
    }
    if let Some(v) = flags.iters {
        s.iters = v;
    }
    if let Some(v) = flags.lr {
        s.lr = v;
    }
    if let Some(v) = flags.loss_threshold {
        s.loss_threshold = Some(v);
    }
    if let Some(v) = flags.seed {
        s.seed = v;
    }
    if let Some(v) = flags.depth {
        s.depth = v;
        depth_set = true;
    }
    if let Some(v) = &flags.channels {
        s.channels = parse_channels(v)?;
        channels_set = true;
    }
    if let Some(v) = flags.snapshot_every {
        s.snapshot_every = v;
    }
    if depth_set && !channels_set {
        s.channels = default_channels(s.depth);
    }
    if s.channels.len() != s.depth {
        return Err(CliError::Usage(format!(
            "--channels lists {} levels but --depth is {}",
            s.channels.len(),
            s.depth
        )));
    }
    Ok(s)
}

fn engine_config(s: &Settings) -> EngineConfig {
    EngineConfig {
        lr: s.lr,
        max_iters: s.iters,
        loss_threshold: s.loss_threshold,
        seed: s.seed,
        snapshot_every: s.snapshot_every,
        net: UNetConfig {
            depth: s.depth,
            channels: s.channels.clone(),
            ..UNetConfig::desk_default(vec![])
        },
    }
}

fn load_problem(
    image: &Path,
    trimap: &Path,
    config: EngineConfig,
) -> Result<MattingProblem<f32>, CliError> {
    let image_t = io::load_image(image)?;
    let masks = io::load_trimap(trimap)?;
    let (_, h, w) = image_t
        .shape
        .as_chw()
        .map_err(|e| CliError::Io(e.to_string()))?;
    if (masks.height, masks.width) != (h, w) {
        return Err(CliError::Io(format!(
            "trimap {} is {}x{} but image {} is {}x{}",
            trimap.display(),
            masks.height,
            masks.width,
            image.display(),
            h,
            w
        )));
    }
    Ok(MattingProblem {
        image: image_t,
        masks,
        config,
    })
}

fn write_loss_history(path: &Path, history: &[engine::LossBreakdown]) -> Result<(), CliError> {
    let mut text = String::from("# iter, L_I, L_alpha, L_F, L_B, L_c, L_e, total\n");
    for (i, b) in history.iter().enumerate() {
        writeln!(
            text,
            "{}, {:.9}, {:.9}, {:.9}, {:.9}, {:.9}, {:.9}, {:.9}",
            i, b.reconstruction, b.alpha, b.fg, b.bg, b.composite, b.exclusion, b.total
        )
        .expect("format");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_result(out_dir: &Path, result: &MatteResult<f32>) -> Result<(), CliError> {
    io::save_alpha(&out_dir.join("alpha.png"), &result.alpha)?;
    io::save_image(&out_dir.join("fg.png"), &result.fg)?;
    io::save_image(&out_dir.join("bg.png"), &result.bg)?;
    write_loss_history(&out_dir.join("loss.txt"), &result.loss_history)?;
    Ok(())
}

fn cmd_extract(
    image: &Path,
    trimap: &Path,
    out_dir: &Path,
    warm_start: Option<&Path>,
    flags: &RunFlags,
) -> Result<ExitCode, CliError> {
    let settings = resolve(flags)?;
    let problem = load_problem(image, trimap, engine_config(&settings))?;
    std::fs::create_dir_all(out_dir)?;

    let mut nets = engine::build_networks(&problem)?;
    let threshold = match warm_start {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let entries = read_snapshot(std::io::BufReader::new(file))?;
            for (net, prefix) in nets.iter_mut().zip(["net_image.", "net_fg.", "net_bg."]) {
                net.load_snapshot_entries(prefix, &entries)
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            settings.loss_threshold
        }
        None => {
            if settings.loss_threshold.is_some() {
                return Err(CliError::Usage(
                    "--loss-threshold requires --warm-start".into(),
                ));
            }
            None
        }
    };

    let weights_path = out_dir.join("weights.bin");
    let mut checkpoint = |_iter: usize, nets: &[dipmatte::nn::Network<f32>; 3]| {
        let entries = engine::snapshot_networks(nets);
        if let Ok(f) = std::fs::File::create(&weights_path) {
            let _ = write_snapshot(std::io::BufWriter::new(f), &entries);
        }
    };
    let result = engine::optimize(&problem, &mut nets, threshold, Some(&mut checkpoint))?;

    write_result(out_dir, &result)?;
    let entries = engine::snapshot_networks(&nets);
    let f = std::fs::File::create(out_dir.join("weights.bin"))?;
    write_snapshot(std::io::BufWriter::new(f), &entries)?;

    let final_loss = result.loss_history.last().map(|b| b.total).unwrap_or(0.0);
    println!(
        "extracted {} in {} iterations, final loss {:.6}",
        out_dir.join("alpha.png").display(),
        result.iterations_run,
        final_loss
    );
    Ok(ExitCode::SUCCESS)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_video(
    frames_dir: &Path,
    trimaps_dir: &Path,
    out_dir: &Path,
    flags: &RunFlags,
) -> Result<ExitCode, CliError> {
    let settings = resolve(flags)?;
    let frame_paths = png_files(frames_dir)?;
    if frame_paths.is_empty() {
        return Err(CliError::Io(format!(
            "no .png frames in {}",
            frames_dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(frame_paths.len());
    for path in &frame_paths {
        let trimap = trimaps_dir.join(path.file_name().expect("png path"));
        frames.push(load_problem(path, &trimap, engine_config(&settings))?);
    }
    std::fs::create_dir_all(out_dir)?;

    let results = engine::extract_video(&frames)?;

    let mut summary = String::from("# frame, iterations\n");
    for (path, result) in frame_paths.iter().zip(&results) {
        let stem = path.file_stem().expect("png stem").to_string_lossy();
        let frame_dir = out_dir.join(stem.as_ref());
        std::fs::create_dir_all(&frame_dir)?;
        write_result(&frame_dir, result)?;
        writeln!(summary, "{}, {}", stem, result.iterations_run).expect("format");
    }
    std::fs::write(out_dir.join("iterations.txt"), &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_composite(
    alpha: &Path,
    fg: &Path,
    new_bg: &Path,
    out: &Path,
) -> Result<ExitCode, CliError> {
    let alpha_t = io::load_alpha(alpha)?;
    let fg_t = io::load_image(fg)?;
    let bg_t = io::load_image(new_bg)?;
    let result = engine::composite(&alpha_t, &fg_t, &bg_t)?;
    io::save_image(out, &result)?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(
    kind: &str,
    out_dir: &Path,
    size: &str,
    band: usize,
    seed: u64,
) -> Result<ExitCode, CliError> {
    let kind = ShapeKind::from_str(kind).map_err(|e| CliError::Usage(e.to_string()))?;
    let (w, h) = size
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
        .ok_or_else(|| CliError::Usage(format!("bad --size {size:?}, expected WxH")))?;
    let case = io::synth_case(kind, (h, w), band, seed)?;
    io::write_case(out_dir, &case)?;
    println!("wrote {} case to {}", kind, out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    alpha: &Path,
    gt_alpha: &Path,
    trimap: &Path,
    summary: Option<&Path>,
) -> Result<ExitCode, CliError> {
    let est = io::load_alpha(alpha)?;
    let gt = io::load_alpha(gt_alpha)?;
    let masks = io::load_trimap(trimap)?;
    let lines = eval_lines(&est, &gt, &masks).map_err(|e| CliError::Io(e.to_string()))?;
    print!("{lines}");
    if let Some(path) = summary {
        std::fs::write(path, &lines)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn eval_lines(
    est: &Tensor<f32>,
    gt: &Tensor<f32>,
    masks: &TrimapMasks,
) -> Result<String, eval::EvalError> {
    let all = vec![true; est.data.len()];
    let mut out = String::new();
    let sad_all = eval::sad(&est.data, &gt.data, &all)?;
    let mse_all = eval::mse(&est.data, &gt.data, &all)?;
    writeln!(out, "sad_overall={sad_all:.6}").expect("format");
    writeln!(out, "mse_overall={mse_all:.8}").expect("format");
    let n_u = masks.n_unknown();
    if n_u > 0 {
        let sad_u = eval::sad(&est.data, &gt.data, &masks.unknown)?;
        let mse_u = eval::mse(&est.data, &gt.data, &masks.unknown)?;
        writeln!(out, "sad_unknown={sad_u:.6}").expect("format");
        writeln!(out, "sad_per_unknown_px={:.8}", sad_u / n_u as f64).expect("format");
        writeln!(out, "mse_unknown={mse_u:.8}").expect("format");
    }
    Ok(out)
}

fn cmd_gradcheck(seed: u64, f64_mode: bool) -> Result<ExitCode, CliError> {
    let report = if f64_mode {
        eval::gradcheck_suite(seed)
    } else {
        eval::gradcheck_suite_f32(seed)
    };
    for e in &report.entries {
        println!(
            "{} {} max_rel_err={:.3e} (tol {:.0e})",
            if e.max_rel_err <= report.tolerance {
                "PASS"
            } else {
                "FAIL"
            },
            e.name,
            e.max_rel_err,
            report.tolerance
        );
    }
    if report.passed() {
        println!("gradcheck: all ops passed");
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Diverged("gradient check failed".into()))
    }
}
