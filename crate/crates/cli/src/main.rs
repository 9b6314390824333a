//! `synthface` command-line front end.
//!
//! Human-readable output goes to stderr; `--json` puts a machine-readable
//! summary on stdout. Exit codes: 0 success, 1 runtime or validation
//! failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use synthface::align::{optimize_alignment, AlignConfig};
use synthface::camera::{rig_from_json, rig_to_json, CameraRig};
use synthface::dataset::{
    generate_dataset, read_bundle, read_manifest, AssetSource, DatasetConfig, ReadOptions,
};
use synthface::headmodel::{synthesize_mesh, HeadParams, Mesh};
use synthface::imageio::{read_file, write_file};
use synthface::raster::{project_landmarks, rasterize};
use synthface::selfcheck::{self, SelfcheckReport};
use synthface::volume::read_dvox;
use synthface::{json, Error};

#[derive(Parser)]
#[command(name = "synthface", version, about = "Synthetic face annotation pipeline")]
struct Cli {
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its manifest.
    Generate(GenerateArgs),
    /// Align a mesh to a DVOX density grid seen through a camera.
    Align(AlignArgs),
    /// Rasterize segmentation, depth and landmarks for one mesh and camera.
    Render(RenderArgs),
    /// Verify a dataset's digests and summarize its samples.
    Inspect(InspectArgs),
    /// Run the invariant suites.
    Selfcheck(SelfcheckArgs),
    /// Loss utilities.
    Losses {
        #[command(subcommand)]
        command: LossesCommand,
    },
}

#[derive(Subcommand)]
enum LossesCommand {
    /// Run the loss invariant suite.
    Selfcheck,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set hidden_transform.scale_max=0.05` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Sample count, overriding the config.
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Output resolution, overriding the config.
    #[arg(long, value_name = "WxH", value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
}

#[derive(Args)]
struct MeshArgs {
    /// Asset directory (default: builtin head).
    #[arg(long, value_name = "DIR")]
    asset: Option<PathBuf>,
    /// HeadParams JSON (default: neutral mesh).
    #[arg(long, value_name = "PATH")]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Density grid.
    #[arg(long, value_name = "PATH")]
    dvox: PathBuf,
    /// Camera JSON as written by `generate` or `render`.
    #[arg(long, value_name = "PATH")]
    camera: PathBuf,
    /// AlignConfig JSON.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-key override into the AlignConfig (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for align.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Camera JSON (default: frontal, 20° field of view).
    #[arg(long, value_name = "PATH")]
    camera: Option<PathBuf>,
    /// Output resolution.
    #[arg(long, value_name = "WxH", value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset root containing manifest.json.
    dir: PathBuf,
    /// Asset whose class table and landmark count the samples must match
    /// (default: builtin head).
    #[arg(long, value_name = "DIR")]
    asset: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Run only this suite.
    #[arg(long, value_name = "NAME")]
    suite: Option<String>,
}

/// `WxH`, or a single number for a square.
fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n > 0);
    let dims = match s.split_once(['x', 'X']) {
        Some((w, h)) => parse(w).zip(parse(h)),
        None => parse(s).map(|n| (n, n)),
    };
    dims.ok_or_else(|| format!("`{s}` is not a resolution of the form WxH"))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// Errors reading user-named inputs are usage errors.
fn input<T>(r: synthface::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

type CmdResult = Result<serde_json::Value, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    let bytes = input(read_file(path))?;
    String::from_utf8(bytes).map_err(|_| Failure::Usage(format!("{}: not UTF-8", path.display())))
}

fn load_mesh(args: &MeshArgs) -> Result<Mesh, Failure> {
    let source = match &args.asset {
        Some(dir) => AssetSource::Paths { dir: dir.clone() },
        None => AssetSource::default(),
    };
    let asset = input(source.load())?;
    match &args.params {
        None => Ok(asset.neutral_mesh()),
        Some(p) => {
            let params: HeadParams = serde_json::from_str(&read_text(p)?)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            input(synthesize_mesh(&asset, &params))
        }
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::Runtime(e.to_string()))
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(write_file(&dir.join(name), bytes)?)
}

fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    let text = match &args.config.config {
        Some(p) => Some(read_text(p)?),
        None => None,
    };
    let mut overrides = args.config.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    if let Some(n) = args.n {
        overrides.push(format!("n_samples={n}"));
    }
    if let Some((w, h)) = args.resolution {
        overrides.push(format!("resolution=[{w},{h}]"));
    }
    let cfg = DatasetConfig::from_json_with_overrides(text.as_deref(), &overrides)?;
    let t = Instant::now();
    let (manifest, stats) = generate_dataset(&cfg, &args.out, args.threads)?;
    let secs = t.elapsed().as_secs_f64();
    let rate = if secs > 0.0 { stats.generated as f64 / secs } else { 0.0 };
    eprintln!(
        "generated {} samples ({} reused) in {secs:.2}s: {rate:.2} samples/s",
        stats.generated, stats.reused
    );
    eprintln!("manifest: {}", args.out.join(synthface::dataset::MANIFEST_FILE).display());
    Ok(json!({
        "dataset_id": manifest.dataset_id,
        "n_samples": manifest.n_samples,
        "generated": stats.generated,
        "reused": stats.reused,
        "seconds": secs,
        "samples_per_second": rate,
    }))
}

fn cmd_align(args: &AlignArgs) -> CmdResult {
    let mesh = load_mesh(&args.mesh)?;
    let grid = input(read_dvox(&args.dvox))?;
    let rig = input(rig_from_json(&read_text(&args.camera)?))?;
    let text = match &args.config {
        Some(p) => read_text(p)?,
        None => serde_json::to_string(&AlignConfig::default()).expect("config serializes"),
    };
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("align config: {e}")))?;
    for o in &args.overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("override `{o}` is not of the form key=value")))?;
        let mut cur = &mut value;
        for part in key.split('.') {
            cur = cur
                .as_object_mut()
                .ok_or_else(|| Failure::Usage(format!("override `{key}` does not name a config field")))?
                .entry(part)
                .or_insert(serde_json::Value::Null);
        }
        *cur = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
    }
    let cfg: AlignConfig = serde_json::from_value(value).map_err(|e| Failure::Usage(format!("align config: {e}")))?;
    input(cfg.validate())?;
    let pool = thread_pool(args.threads)?;
    let (_, report) = pool.install(|| optimize_alignment(&mesh, &grid, &rig, &cfg))?;
    write_out(&args.out, synthface::dataset::ALIGN_FILE, json::to_string_pretty(&report).as_bytes())?;
    eprintln!(
        "depth {:.6e} ({} px)  chamfer {:.6e}  total {:.6e} (from {:.6e})  iterations {}  converged {}",
        report.depth_loss,
        report.depth_pixels,
        report.chamfer_loss,
        report.total_loss,
        report.initial_loss,
        report.iterations,
        report.converged
    );
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn cmd_render(args: &RenderArgs) -> CmdResult {
    let mesh = load_mesh(&args.mesh)?;
    let mut rig = match &args.camera {
        Some(p) => input(rig_from_json(&read_text(p)?))?,
        None => CameraRig::frontal(20.0, 512, 512)?,
    };
    if let Some((w, h)) = args.resolution {
        rig = input(rig.with_resolution(w, h))?;
    }
    let r = rasterize(&mesh, &rig);
    let depth = r.depth.quantized();
    let landmarks = project_landmarks(&mesh, &rig, &r.depth);
    write_out(&args.out, synthface::dataset::SEG_FILE, &r.classes.encode_pgm())?;
    write_out(&args.out, synthface::dataset::DEPTH_MESH_FILE, &depth.encode_pfm())?;
    write_out(&args.out, synthface::dataset::LANDMARKS_FILE, json::to_string_pretty(&landmarks).as_bytes())?;
    write_out(&args.out, synthface::dataset::CAMERA_FILE, rig_to_json(&rig).as_bytes())?;
    let visible = landmarks.iter().filter(|l| l.visible).count();
    let coverage = r.classes.covered_fraction();
    eprintln!(
        "{}x{}: coverage {:.1}%, {visible}/{} landmarks visible",
        rig.width,
        rig.height,
        100.0 * coverage,
        landmarks.len()
    );
    Ok(json!({
        "width": rig.width,
        "height": rig.height,
        "coverage": coverage,
        "visible_landmarks": visible,
        "landmarks": landmarks.len(),
    }))
}

fn cmd_inspect(args: &InspectArgs) -> CmdResult {
    let source = match &args.asset {
        Some(dir) => AssetSource::Paths { dir: dir.clone() },
        None => AssetSource::default(),
    };
    let asset = input(source.load())?;
    let manifest = read_manifest(&args.dir)?;
    let (mut coverage, mut aligned, mut converged) = (0.0, 0usize, 0usize);
    let mut resolution = None;
    for entry in &manifest.samples {
        let opts = ReadOptions::for_asset(&asset).with_entry(entry);
        let b = read_bundle(&args.dir, entry.index, &opts)?;
        coverage += b.seg.covered_fraction();
        resolution.get_or_insert((b.camera.width, b.camera.height));
        if let Some(r) = &b.alignment {
            aligned += 1;
            converged += usize::from(r.converged);
        }
    }
    let n = manifest.samples.len();
    let mean_cov = if n > 0 { coverage / n as f64 } else { 0.0 };
    eprintln!("dataset {} (format {})", manifest.dataset_id, manifest.format_version);
    eprintln!("  {n} samples, master seed {}, digests verified", manifest.master_seed);
    if let Some((w, h)) = resolution {
        eprintln!("  resolution {w}x{h}, mean coverage {:.1}%", 100.0 * mean_cov);
    }
    eprintln!("  alignment: {converged}/{aligned} converged");
    Ok(json!({
        "dataset_id": manifest.dataset_id,
        "n_samples": n,
        "master_seed": manifest.master_seed,
        "mean_coverage": mean_cov,
        "aligned": aligned,
        "converged": converged,
        "digests_ok": true,
    }))
}

fn report_result(report: SelfcheckReport) -> CmdResult {
    eprint!("{}", report.render());
    let value = serde_json::to_value(&report).expect("report serializes");
    if report.ok() {
        Ok(value)
    } else {
        Err(Failure::Runtime(format!("{} checks failed", report.failed)))
    }
}

fn cmd_selfcheck(args: &SelfcheckArgs) -> CmdResult {
    let report = match args.suite.as_deref() {
        None => selfcheck::run_all(),
        Some(name) => {
            let suite = match name {
                "camera" => selfcheck::camera_suite(),
                "raster" => selfcheck::raster_suite(),
                "volume" => selfcheck::volume_suite(),
                "align" => selfcheck::align_suite(),
                "losses" => selfcheck::losses_suite(),
                "dataset" => selfcheck::dataset_suite(),
                other => return Err(Failure::Usage(format!("unknown suite `{other}`"))),
            };
            SelfcheckReport::new(vec![suite])
        }
    };
    report_result(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Align(a) => cmd_align(a),
        Command::Render(a) => cmd_render(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
        Command::Losses { command: LossesCommand::Selfcheck } => {
            report_result(SelfcheckReport::new(vec![selfcheck::losses_suite()]))
        }
    };
    match result {
        Ok(value) => {
            if cli.json {
                println!("{}", json::to_string_pretty(&value));
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (Failure::Usage(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
