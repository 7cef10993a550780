mod alloc;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use deepmatch::correspondence::{
    format_matches, match_images, read_matches, write_matches, Match, MatchParams, MatchSet,
};
use deepmatch::descriptor::DescriptorParams;
use deepmatch::evalio::{
    coverage, decode_flo, densify_matches, read_flo, read_mask, write_flo, GroundTruthFlow,
    MetricReport, DEFAULT_THRESHOLD,
};
use deepmatch::flow::viz::flow_to_color;
use deepmatch::flow::{rasterize_matches, solve_flow, FlowField, FlowParams};
use deepmatch::image::{load_image, save_image, ImageBuffer};
use deepmatch::invariance::{match_invariant, InvariantParams};
use deepmatch::synth::{warped_pair, Affine, Texture};

#[global_allocator]
static GLOBAL: alloc::Counting = alloc::Counting;

#[derive(Parser)]
#[command(
    name = "deepmatch",
    version,
    about = "Dense deformable matching and match-guided optical flow"
)]
struct Cli {
    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long, global = true, env = "DEEPMATCH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match two images and write `x1 y1 x2 y2 score` lines.
    Match(MatchCmd),
    /// Same as `match --invariant`.
    MatchInvariant(MatchCmd),
    /// Estimate dense optical flow guided by matches.
    Flow(FlowCmd),
    /// Score a match file or a .flo against ground truth.
    Eval(EvalCmd),
    /// Run matching and flow on a synthetic pair and check the results.
    Selftest(SelftestCmd),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Lossless preset for PNG input, standard preset otherwise.
    Auto,
    Standard,
    Lossless,
}

#[derive(Args, Clone)]
struct MatchOpts {
    /// Working resolution factor in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    resolution: f32,
    /// Prototype dictionary size, 0 for exact correlation.
    #[arg(long, default_value_t = 0)]
    dict_size: usize,
    /// Rectification exponent.
    #[arg(long, default_value_t = deepmatch::pyramid::DEFAULT_LAMBDA)]
    lambda: f32,
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale- and rotation-invariant matching.
    #[arg(long)]
    invariant: bool,
    /// Descriptor smoothing preset.
    #[arg(long, value_enum, default_value_t = Preset::Auto)]
    descriptor: Preset,
}

#[derive(Args)]
struct MatchCmd {
    image1: PathBuf,
    image2: PathBuf,
    /// Match file to write (stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Color-coded image of the densified matches.
    #[arg(long)]
    viz: Option<PathBuf>,
    #[command(flatten)]
    opts: MatchOpts,
}

#[derive(Args)]
struct FlowCmd {
    image1: PathBuf,
    image2: PathBuf,
    /// Output .flo file.
    #[arg(short, long)]
    output: PathBuf,
    /// Precomputed match file; matches are computed when absent.
    #[arg(long)]
    matches: Option<PathBuf>,
    /// Color-coded flow image (.png or .ppm).
    #[arg(long)]
    viz: Option<PathBuf>,
    /// Matching term weight.
    #[arg(long, default_value_t = FlowParams::default().beta)]
    beta: f32,
    #[command(flatten)]
    opts: MatchOpts,
}

#[derive(Args)]
struct EvalCmd {
    /// Match file or .flo, or a directory of them.
    prediction: PathBuf,
    /// Ground-truth .flo, or a directory of them.
    ground_truth: PathBuf,
    /// Occlusion mask (nonzero = occluded), or a directory of them.
    #[arg(long)]
    occlusion: Option<PathBuf>,
    /// Accuracy threshold in pixels.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
    /// Resolution the matches were computed at; sets their cell size.
    #[arg(long, default_value_t = 0.5)]
    resolution: f32,
    /// Print JSON instead of `key value` lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SelftestCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Match(c) => cmd_match(c, false),
        Command::MatchInvariant(c) => cmd_match(c, true),
        Command::Flow(c) => cmd_flow(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Selftest(c) => cmd_selftest(c),
    })
}

fn is_png(path: &Path) -> bool {
    std::fs::read(path)
        .map(|b| b.starts_with(b"\x89PNG"))
        .unwrap_or(false)
}

fn match_params(opts: &MatchOpts, image1: &Path) -> MatchParams {
    let lossless = match opts.descriptor {
        Preset::Auto => is_png(image1),
        Preset::Standard => false,
        Preset::Lossless => true,
    };
    MatchParams {
        descriptor: if lossless {
            DescriptorParams::lossless()
        } else {
            DescriptorParams::default()
        },
        lambda: opts.lambda,
        resolution: opts.resolution,
        dict_size: opts.dict_size,
        seed: opts.seed,
        ..MatchParams::default()
    }
}

fn load(path: &Path) -> Result<ImageBuffer> {
    load_image(path).with_context(|| format!("loading {}", path.display()))
}

struct Matched {
    set: MatchSet,
    analytic_bytes: Option<f64>,
}

fn run_matching(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    params: &MatchParams,
    invariant: bool,
) -> Result<Matched> {
    if invariant {
        let ip = InvariantParams {
            matching: *params,
            ..InvariantParams::default()
        };
        let res = match_invariant(img1, img2, &ip)?;
        Ok(Matched {
            set: res.set,
            analytic_bytes: None,
        })
    } else {
        let run = match_images(img1, img2, params)?;
        Ok(Matched {
            set: MatchSet {
                matches: run.filtered,
                params_fingerprint: params.fingerprint(),
                cell_size: params.cell_size(),
            },
            analytic_bytes: Some(run.analytic_bytes),
        })
    }
}

/// Dense field holding each pixel's match displacement, NaN where uncovered.
fn densified_flow(matches: &[Match], cell: f32, w: usize, h: usize) -> FlowField {
    let dense = densify_matches(matches, cell, w, h);
    FlowField::from_fn(w, h, |x, y| {
        dense[y * w + x].unwrap_or((f32::NAN, f32::NAN))
    })
}

fn report_memory(analytic: Option<f64>) {
    eprintln!("peak_memory_bytes {} (measured)", alloc::peak_bytes());
    if let Some(a) = analytic {
        eprintln!("pyramid_memory_bytes {:.0} (analytic estimate)", a);
    }
}

fn cmd_match(c: MatchCmd, invariant_cmd: bool) -> Result<()> {
    let img1 = load(&c.image1)?;
    let img2 = load(&c.image2)?;
    let params = match_params(&c.opts, &c.image1);
    let invariant = invariant_cmd || c.opts.invariant;
    info!(
        "matching {}x{} against {}x{}",
        img1.width(),
        img1.height(),
        img2.width(),
        img2.height()
    );
    let start = Instant::now();
    let m = run_matching(&img1, &img2, &params, invariant)?;
    let secs = start.elapsed().as_secs_f64();
    match &c.output {
        Some(p) => {
            write_matches(p, &m.set.matches).with_context(|| format!("writing {}", p.display()))?
        }
        None => print!("{}", format_matches(&m.set.matches)),
    }
    if let Some(v) = &c.viz {
        let f = densified_flow(&m.set.matches, m.set.cell_size, img1.width(), img1.height());
        save_image(v, &flow_to_color(&f, None))
            .with_context(|| format!("writing {}", v.display()))?;
    }
    eprintln!("matches {}", m.set.len());
    eprintln!(
        "coverage {:.4}",
        coverage(&m.set.matches, img1.width(), img1.height())
    );
    eprintln!("time_s {secs:.3}");
    report_memory(m.analytic_bytes);
    Ok(())
}

fn cmd_flow(c: FlowCmd) -> Result<()> {
    let img1 = load(&c.image1)?;
    let img2 = load(&c.image2)?;
    let start = Instant::now();
    let (matches, analytic) = match &c.matches {
        Some(p) => (
            read_matches(p).with_context(|| format!("reading {}", p.display()))?,
            None,
        ),
        None => {
            let params = match_params(&c.opts, &c.image1);
            let m = run_matching(&img1, &img2, &params, c.opts.invariant)?;
            (m.set.matches, m.analytic_bytes)
        }
    };
    let fp = FlowParams {
        beta: c.beta,
        ..FlowParams::default()
    };
    let guide = rasterize_matches(&matches, &img1, &img2, &fp)?;
    if guide.skipped > 0 {
        log::warn!(
            "{} matches fall outside the images and were ignored",
            guide.skipped
        );
    }
    let flow = solve_flow(&img1, &img2, &guide, &fp)?;
    let secs = start.elapsed().as_secs_f64();
    write_flo(&c.output, &flow).with_context(|| format!("writing {}", c.output.display()))?;
    if let Some(v) = &c.viz {
        save_image(v, &flow_to_color(&flow, None))
            .with_context(|| format!("writing {}", v.display()))?;
    }
    eprintln!("matches {}", matches.len());
    eprintln!("mean_flow_norm {:.4}", flow.mean_norm());
    eprintln!("time_s {secs:.3}");
    report_memory(analytic);
    Ok(())
}

enum Prediction {
    Flow(FlowField),
    Matches(Vec<Match>),
}

fn read_prediction(path: &Path) -> Result<Prediction> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"PIEH") {
        let f = decode_flo(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(Prediction::Flow(f.flow));
    }
    let text = String::from_utf8(bytes)
        .with_context(|| format!("{} is neither .flo nor text", path.display()))?;
    let ms = deepmatch::correspondence::parse_matches(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(Prediction::Matches(ms))
}

fn load_gt(gt: &Path, occlusion: Option<&Path>) -> Result<GroundTruthFlow> {
    let g = read_flo(gt).with_context(|| format!("reading {}", gt.display()))?;
    match occlusion {
        None => Ok(g),
        Some(o) => {
            let (w, h, mask) = read_mask(o).with_context(|| format!("reading {}", o.display()))?;
            if (w, h) != (g.flow.width(), g.flow.height()) {
                bail!(
                    "occlusion mask {} is {w}x{h}, ground truth is {}x{}",
                    o.display(),
                    g.flow.width(),
                    g.flow.height()
                );
            }
            Ok(g.with_occlusion(&mask)?)
        }
    }
}

fn eval_pair(pred: &Path, gt: &Path, occ: Option<&Path>, c: &EvalCmd) -> Result<MetricReport> {
    let gt = load_gt(gt, occ)?;
    match read_prediction(pred)? {
        Prediction::Flow(f) => Ok(MetricReport::for_flow(&f, &gt, c.threshold)?),
        Prediction::Matches(ms) => {
            let set = MatchSet {
                matches: ms,
                params_fingerprint: 0,
                cell_size: deepmatch::pyramid::ATOMIC_SIZE as f32 / c.resolution,
            };
            Ok(MetricReport::for_matches(&set, &gt, c.threshold))
        }
    }
}

/// First existing `dir/stem.ext` over `exts`.
fn find_sibling(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

fn cmd_eval(c: EvalCmd) -> Result<()> {
    if c.threshold.is_nan() || c.threshold <= 0.0 {
        bail!("--threshold must be > 0");
    }
    if !(c.resolution > 0.0 && c.resolution <= 1.0) {
        bail!("--resolution must be in (0, 1]");
    }
    let report = if c.ground_truth.is_dir() {
        if !c.prediction.is_dir() {
            bail!("ground truth is a directory, so the prediction must be one too");
        }
        let mut gts: Vec<PathBuf> = std::fs::read_dir(&c.ground_truth)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "flo"))
            .collect();
        gts.sort();
        if gts.is_empty() {
            bail!("no .flo files in {}", c.ground_truth.display());
        }
        let mut reports = Vec::with_capacity(gts.len());
        for gt in &gts {
            let stem = gt.file_stem().unwrap().to_string_lossy();
            let pred = find_sibling(&c.prediction, &stem, &["flo", "txt", "match", "matches"])
                .with_context(|| {
                    format!("no prediction for {stem} in {}", c.prediction.display())
                })?;
            let occ =
                match &c.occlusion {
                    Some(d) => Some(find_sibling(d, &stem, &["png", "pgm", "ppm"]).with_context(
                        || format!("no occlusion mask for {stem} in {}", d.display()),
                    )?),
                    None => None,
                };
            info!("evaluating {}", pred.display());
            reports.push(eval_pair(&pred, gt, occ.as_deref(), &c)?);
        }
        MetricReport::mean(&reports)
    } else {
        eval_pair(&c.prediction, &c.ground_truth, c.occlusion.as_deref(), &c)?
    };
    if c.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_kv());
    }
    Ok(())
}

fn cmd_selftest(c: SelftestCmd) -> Result<()> {
    if c.size < 48 {
        bail!("--size must be at least 48");
    }
    let n = c.size as f32;
    let tex = Texture::new(c.seed, n);
    let warp = Affine::similarity_about((n / 2.0, n / 2.0), 8f32.to_radians(), 1.1);
    let (a, b, gt) = warped_pair(&tex, c.size, c.size, &warp);
    let params = MatchParams {
        seed: c.seed,
        ..MatchParams::default()
    };
    let start = Instant::now();
    let m = run_matching(&a, &b, &params, false)?;
    let match_secs = start.elapsed().as_secs_f64();
    let mrep = MetricReport::for_matches(&m.set, &gt, DEFAULT_THRESHOLD);
    let fp = FlowParams::default();
    let start = Instant::now();
    let flow = solve_flow(
        &a,
        &b,
        &rasterize_matches(&m.set.matches, &a, &b, &fp)?,
        &fp,
    )?;
    let flow_secs = start.elapsed().as_secs_f64();
    let frep = MetricReport::for_flow(&flow, &gt, DEFAULT_THRESHOLD)?;
    let acc = mrep.accuracy_at_t.unwrap_or(0.0);
    let epe = frep.epe.unwrap_or(f32::INFINITY);
    println!("matches {}", m.set.len());
    println!("match_accuracy_at_10 {acc:.4}");
    println!("match_time_s {match_secs:.3}");
    println!("flow_epe {epe:.4}");
    println!("flow_time_s {flow_secs:.3}");
    let ok = acc >= 0.8 && epe < 1.0;
    println!("selftest {}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        bail!("synthetic pair not recovered");
    }
    Ok(())
}
