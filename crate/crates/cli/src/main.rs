use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blastoseg::evaluation::{evaluate_regions, BatchReport, EvalOptions, EvalReport, GroundTruth, RegionMask};
use blastoseg::image::load_grayscale;
use blastoseg::{
    detect_blastomeres, generate_embryo, DetectionReport, EdgeMap, Ellipse, Error, Image, PipelineConfig, Point,
    SynthSpec,
};
use clap::{Args, Parser, Subcommand};
use image::{ImageFormat, Luma, Rgb, RgbImage};
use rayon::prelude::*;
use serde::Serialize;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];
const GT_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Parser)]
#[command(name = "blastoseg", version, about = "Blastomere boundary detection in embryo micrographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect blastomere boundaries; images are processed in parallel.
    Detect(DetectArgs),
    /// Score detection files against ground-truth files with the same stem.
    Eval(EvalArgs),
    /// Generate synthetic embryo images with ground truth.
    Synth(SynthArgs),
    /// Print the default configuration file.
    Config,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Number of blastomeres in each image.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    cells: u8,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write edge maps, clusters and the zona model.
    #[arg(long)]
    debug_dumps: bool,
    /// Drop edges within this many pixels of the image border.
    #[arg(long)]
    border_margin: Option<f64>,
    /// Ground-truth file drawn in white on the overlay.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    oq_threshold: f64,
    /// Report Dice with the union in the denominator.
    #[arg(long)]
    paper_dice: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    n: u8,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    overlap_max: f64,
    #[arg(long, default_value_t = 0.1)]
    fragmentation: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 100.0)]
    zp_radius: f64,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(3, format!("{}: {e}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NoZonaPellucida(_) | Error::EmptySizeRegion | Error::NoValidPlacement { .. } => 2,
            Error::CellCount(_) | Error::InvalidParameter(_) | Error::Config { .. } | Error::ImageTooSmall { .. } => 1,
            _ => 3,
        };
        Self::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Config => {
            print!("{}", PipelineConfig::default().to_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(path, e))?;
    tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn png_bytes<P, C>(img: &image::ImageBuffer<P, C>) -> Vec<u8>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("png encoding to memory");
    buf.into_inner()
}

fn gray_png(img: &Image) -> Vec<u8> {
    let (w, h) = img.dims();
    png_bytes(&image::GrayImage::from_raw(w as u32, h as u32, img.to_u8()).expect("buffer size matches"))
}

fn edge_png(edges: &EdgeMap) -> Vec<u8> {
    let (w, h) = edges.dims();
    let mut out = image::GrayImage::new(w as u32, h as u32);
    for (i, &on) in edges.mask().iter().enumerate() {
        if on {
            out.put_pixel((i % w) as u32, (i / w) as u32, Luma([255]));
        }
    }
    png_bytes(&out)
}

fn plot(img: &mut RgbImage, p: Point, color: [u8; 3]) {
    if let Some((x, y)) = p.to_pixel(img.width() as usize, img.height() as usize) {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn draw_polyline(img: &mut RgbImage, poly: &[Point], color: [u8; 3]) {
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let steps = (p.distance(q) * 2.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            plot(img, p + (q - p) * (s as f64 / steps as f64), color);
        }
    }
}

fn overlay(img: &Image, detections: &[Ellipse], gt: Option<&GroundTruth>) -> RgbImage {
    let (w, h) = img.dims();
    let gray = img.to_u8();
    let mut out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = gray[y as usize * w + x as usize];
        Rgb([v, v, v])
    });
    if let Some(gt) = gt {
        for poly in gt.polygons::<f64>() {
            draw_polyline(&mut out, &poly, GT_COLOR);
        }
    }
    for (k, e) in detections.iter().enumerate() {
        for (p, _) in e.arc_length_samples(0.5) {
            plot(&mut out, p, PALETTE[k % PALETTE.len()]);
        }
    }
    out
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn load_gt(path: &Path) -> Result<GroundTruth, Failure> {
    GroundTruth::from_json(&read_text(path)?).map_err(|e| Failure::new(3, format!("{}: {e}", path.display())))
}

fn load_config(args: &DetectArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| {
            let mut f = Failure::from(e);
            f.message = format!("{}: {}", path.display(), f.message);
            f
        })?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = args.border_margin {
        cfg.edges.border_margin = Some(m);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn detect_one(path: &Path, cfg: &PipelineConfig, args: &DetectArgs, gt: Option<&GroundTruth>) -> CmdResult {
    let img: Image = load_grayscale(path)?;
    let result = detect_blastomeres(&img, args.cells as usize, cfg)?;
    if result.zp_fallback {
        eprintln!("warning: {}: zona not found, searched the whole image", path.display());
    }
    let stem = file_stem(path);
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = DetectionReport::new(&name, &result);
    let out = |suffix: &str| args.out.join(format!("{stem}{suffix}"));
    write_atomic(&out(".json"), (report.to_json() + "\n").as_bytes())?;
    let ellipses: Vec<Ellipse> = result.detections.iter().map(|d| d.ellipse).collect();
    write_atomic(&out("_overlay.png"), &png_bytes(&overlay(&img, &ellipses, gt)))?;
    if args.debug_dumps {
        // kept apart so `eval` never mistakes a dump for a detection file
        let dir = args.out.join("debug");
        fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        let dump = |suffix: &str| dir.join(format!("{stem}{suffix}"));
        write_atomic(&dump("_edges.png"), &edge_png(&result.stages.edges))?;
        write_atomic(&dump("_interior_edges.png"), &edge_png(&result.stages.interior_edges))?;
        write_atomic(&dump("_residual_edges.png"), &edge_png(&result.residual_edges))?;
        write_json(&dump("_clusters.json"), &result.stages.clusters)?;
        write_json(&dump("_zp.json"), &serde_json::json!({ "zp": result.zp, "fallback": result.zp_fallback }))?;
    }
    println!("{}: {} of {} cells", path.display(), report.detections.len(), args.cells);
    Ok(())
}

fn cmd_detect(args: &DetectArgs) -> CmdResult {
    let cfg = load_config(args)?;
    let gt = args.gt.as_deref().map(load_gt).transpose()?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    let results: Vec<CmdResult> = args.images.par_iter().map(|p| detect_one(p, &cfg, args, gt.as_ref())).collect();
    let mut first = None;
    for (path, r) in args.images.iter().zip(results) {
        if let Err(f) = r {
            if args.images.len() > 1 {
                eprintln!("error: {}: {}", path.display(), f.message);
            }
            first.get_or_insert(f);
        }
    }
    match first {
        None => Ok(()),
        Some(f) if args.images.len() == 1 => Err(f),
        Some(f) => Err(Failure::new(f.code, "some images failed")),
    }
}

/// `*.json` files of a directory, keyed by stem.
fn json_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Failure::io(dir, e))? {
        let path = entry.map_err(|e| Failure::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "json") {
            out.insert(file_stem(&path), path);
        }
    }
    Ok(out)
}

enum Prediction {
    Ellipses(Vec<Ellipse>),
    Polygons(Vec<Vec<Point>>),
}

fn load_prediction(path: &Path) -> Result<Prediction, Failure> {
    let text = read_text(path)?;
    let bad = |e: &dyn std::fmt::Display| Failure::new(3, format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
    if value.get("blastomeres").is_some() {
        let gt = GroundTruth::from_json(&text).map_err(|e| bad(&e))?;
        return Ok(Prediction::Polygons(gt.polygons()));
    }
    let report: DetectionReport = serde_json::from_value(value).map_err(|e| bad(&e))?;
    let ellipses = report.detections.iter().map(|d| d.ellipse()).collect::<blastoseg::Result<_>>().map_err(|e| bad(&e))?;
    Ok(Prediction::Ellipses(ellipses))
}

fn canvas(pred: &Prediction, gt: &GroundTruth) -> (usize, usize) {
    let mut max = (1.0f64, 1.0f64);
    let mut grow = |x: f64, y: f64| max = (max.0.max(x), max.1.max(y));
    for poly in &gt.blastomeres {
        for &[x, y] in poly {
            grow(x, y);
        }
    }
    match pred {
        Prediction::Ellipses(es) => {
            for e in es {
                let (_, hi) = e.bounding_box();
                grow(hi.x, hi.y);
            }
        }
        Prediction::Polygons(ps) => {
            for p in ps.iter().flatten() {
                grow(p.x, p.y);
            }
        }
    }
    (max.0.ceil() as usize + 2, max.1.ceil() as usize + 2)
}

fn eval_one(stem: &str, pred_path: &Path, gt_path: &Path, opts: &EvalOptions) -> Result<EvalReport, Failure> {
    let gt = load_gt(gt_path)?;
    let pred = load_prediction(pred_path)?;
    let (w, h) = canvas(&pred, &gt);
    let preds: Vec<RegionMask> = match &pred {
        Prediction::Ellipses(es) => es.iter().map(|e| RegionMask::from_ellipse(e, w, h)).collect(),
        Prediction::Polygons(ps) => ps.iter().map(|p| RegionMask::from_polygon(p, w, h)).collect(),
    };
    let gts: Vec<RegionMask> = gt.polygons::<f64>().iter().map(|p| RegionMask::from_polygon(p, w, h)).collect();
    Ok(evaluate_regions(stem, &preds, &gt, &gts, opts)?)
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    if !(args.oq_threshold > 0.0 && args.oq_threshold <= 1.0) {
        return Err(Failure::new(1, "--oq-threshold must lie in (0, 1]"));
    }
    let preds = json_files(&args.pred_dir)?;
    let gts = json_files(&args.gt_dir)?;
    let unmatched: Vec<String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .map(|k| format!("prediction without ground truth: {}", preds[k].display()))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)).map(|k| format!("ground truth without prediction: {}", gts[k].display())))
        .collect();
    if !unmatched.is_empty() || preds.is_empty() {
        for line in &unmatched {
            eprintln!("{line}");
        }
        return Err(Failure::new(4, if preds.is_empty() { "no prediction files".to_string() } else { format!("{} unmatched files", unmatched.len()) }));
    }
    let opts = EvalOptions { oq_threshold: args.oq_threshold, union_dice: args.paper_dice };
    let reports: Vec<EvalReport> = preds
        .par_iter()
        .map(|(stem, p)| eval_one(stem, p, &gts[stem], &opts))
        .collect::<Result<_, _>>()?;
    let batch = BatchReport::new(reports);
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    write_json(&args.out.join("report.json"), &batch)?;
    let table = batch.to_table();
    write_atomic(&args.out.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// `Ok(Some(reason))` when the cells could not be placed.
fn synth_one(spec: &SynthSpec, out: &Path) -> Result<Option<String>, Failure> {
    let embryo = match generate_embryo::<f64>(spec) {
        Ok(e) => e,
        Err(e @ Error::Placement { .. }) => return Ok(Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let name = embryo.truth.image.clone();
    let mut truth = embryo.truth;
    truth.image = format!("{name}.png");
    write_atomic(&out.join(&truth.image), &gray_png(&embryo.image))?;
    write_json(&out.join(format!("{name}.json")), &truth)?;
    Ok(None)
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let specs: Vec<SynthSpec> = (0..args.count)
        .map(|i| SynthSpec {
            n_cells: args.n as usize,
            zp_radius: args.zp_radius,
            overlap_max: args.overlap_max,
            fragmentation: args.fragmentation,
            noise_sigma: args.noise,
            seed: args.seed.wrapping_add(i as u64),
            image_size: (args.width, args.height),
        })
        .collect();
    specs[..specs.len().min(1)].iter().try_for_each(|s| s.validate().map_err(Failure::from))?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::io(&args.out, e))?;
    let results: Vec<_> = specs.par_iter().map(|s| synth_one(s, &args.out)).collect();
    let mut written = 0;
    for (spec, r) in specs.iter().zip(results) {
        match r? {
            None => written += 1,
            Some(reason) => eprintln!("seed {}: {reason}", spec.seed),
        }
    }
    println!("wrote {written} of {} embryos to {}", args.count, args.out.display());
    Ok(())
}
