//! One-pass evaluation: sequence loading, per-frame metrics, precision and
//! success curves, synthetic sequences and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, Image};
use crate::tracker::{self, BoundingBox, FrameDiagnostics, Tracker, TrackerConfig, TrackerError};

pub const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
pub const PRECISION_THRESHOLDS: usize = 51;
pub const SUCCESS_THRESHOLDS: usize = 101;
/// Center-error threshold of the headline precision score, in pixels.
pub const PRECISION_AT: usize = 20;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: no ground-truth file")]
    MissingGroundTruth(PathBuf),
    #[error("{0}: no frames found")]
    NoFrames(PathBuf),
    #[error("{frames} frames but {annotations} annotations")]
    CountMismatch { frames: usize, annotations: usize },
    #[error("line {line}: cannot parse {content:?}")]
    Parse { line: usize, content: String },
    #[error("first ground-truth box must have positive area")]
    FirstBox,
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("tracker failed at frame {frame}: {source}")]
    Tracker { frame: usize, source: TrackerError },
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
    #[error("no reports to emit")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Frames on disk plus one annotation per frame. `None` marks frames whose
/// annotation is missing (NaN lines); those are tracked but not scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frame_paths: Vec<PathBuf>,
    pub ground_truth: Vec<Option<BoundingBox>>,
    pub attributes: Vec<String>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    pub fn initial_box(&self) -> Result<BoundingBox> {
        match self.ground_truth.first() {
            Some(Some(b)) if b.is_valid() => Ok(*b),
            _ => Err(EvalError::FirstBox),
        }
    }
}

/// Parses one annotation line. Accepts comma, tab or space separators and
/// shifts 1-based coordinates to 0-based. NaN entries give `None`.
pub fn parse_box_line(line: &str, line_no: usize) -> Result<Option<BoundingBox>> {
    let parse_err = || EvalError::Parse {
        line: line_no,
        content: line.to_string(),
    };
    let fields: Vec<f64> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| parse_err()))
        .collect::<Result<_>>()?;
    if fields.len() != 4 {
        return Err(parse_err());
    }
    if fields.iter().any(|v| v.is_nan()) {
        return Ok(None);
    }
    Ok(Some(BoundingBox::new(
        fields[0] - 1.0,
        fields[1] - 1.0,
        fields[2],
        fields[3],
    )))
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<Option<BoundingBox>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_box_line(l.trim(), i + 1))
        .collect()
}

fn frame_number(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

/// Numerically sorted frame files of `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            frame_number(&p).map(|n| (n, p))
        })
        .collect();
    if frames.is_empty() {
        return Err(EvalError::NoFrames(dir.to_path_buf()));
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Loads `<dir>/img/NNNN.(png|jpg)` and `<dir>/groundtruth_rect.txt`. An
/// optional `attributes.txt` supplies comma or newline separated tags.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    if !gt_path.is_file() {
        return Err(EvalError::MissingGroundTruth(dir.to_path_buf()));
    }
    let mut seq = load_frames_only(dir)?;
    let text = fs::read_to_string(&gt_path).map_err(io_err(&gt_path))?;
    let gt = parse_ground_truth(&text)?;
    if gt.len() != seq.len() {
        return Err(EvalError::CountMismatch {
            frames: seq.len(),
            annotations: gt.len(),
        });
    }
    seq.ground_truth = gt;
    seq.initial_box()?;
    Ok(seq)
}

/// Frames without annotations (ground truth filled with `None`).
pub fn load_frames_only(dir: &Path) -> Result<Sequence> {
    let frame_paths = list_frames(&dir.join("img"))?;
    let attr_path = dir.join("attributes.txt");
    let attributes = if attr_path.is_file() {
        fs::read_to_string(&attr_path)
            .map_err(io_err(&attr_path))?
            .split([',', '\n'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    } else {
        Vec::new()
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence {
        name,
        ground_truth: vec![None; frame_paths.len()],
        frame_paths,
        attributes,
    })
}

/// Sequence directories directly below `root`, sorted by name.
pub fn discover_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("img").is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Decodes a PNG or JPEG file. Grayscale files stay single-channel.
pub fn load_frame(path: &Path) -> Result<Image> {
    let img_err = |message: String| EvalError::Image {
        path: path.to_path_buf(),
        message,
    };
    let dynamic = image::open(path).map_err(|e| img_err(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let result = if dynamic.color().has_color() {
        Image::from_u8(h, w, 3, dynamic.to_rgb8().as_raw())
    } else {
        Image::from_u8(h, w, 1, dynamic.to_luma8().as_raw())
    };
    result.map_err(|e| img_err(e.to_string()))
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // (x + w) - x need not round back to w
    if a == b {
        return if a.area() > 0.0 { 1.0 } else { 0.0 };
    }
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Per-sequence OPE result.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub name: String,
    pub attributes: Vec<String>,
    pub frames: usize,
    /// Indices of annotated frames; the per-frame vectors follow this order.
    pub scored_frames: Vec<usize>,
    pub cle_per_frame: Vec<f64>,
    pub iou_per_frame: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub auc: f64,
    pub fps: f64,
}

fn success_threshold(i: usize) -> f64 {
    i as f64 / (SUCCESS_THRESHOLDS - 1) as f64
}

/// Fraction of frames with CLE ≤ t for t = 0..50 px.
pub fn precision_curve(cle: &[f64]) -> Vec<f64> {
    let n = cle.len().max(1) as f64;
    (0..PRECISION_THRESHOLDS)
        .map(|t| cle.iter().filter(|&&e| e <= t as f64).count() as f64 / n)
        .collect()
}

/// Fraction of frames with IoU ≥ t for t = 0.01..1, and IoU > 0 at t = 0.
pub fn success_curve(ious: &[f64]) -> Vec<f64> {
    let n = ious.len().max(1) as f64;
    (0..SUCCESS_THRESHOLDS)
        .map(|i| {
            let t = success_threshold(i);
            let hits = if i == 0 {
                ious.iter().filter(|&&v| v > 0.0).count()
            } else {
                ious.iter().filter(|&&v| v >= t).count()
            };
            hits as f64 / n
        })
        .collect()
}

impl MetricsReport {
    pub fn from_boxes(
        name: &str,
        attributes: &[String],
        predicted: &[BoundingBox],
        ground_truth: &[Option<BoundingBox>],
        fps: f64,
    ) -> Self {
        let mut scored_frames = Vec::new();
        let mut cle = Vec::new();
        let mut ious = Vec::new();
        for (k, (p, g)) in predicted.iter().zip(ground_truth).enumerate() {
            if let Some(g) = g {
                scored_frames.push(k);
                cle.push(center_error(p, g));
                ious.push(iou(p, g));
            }
        }
        let precision_curve = precision_curve(&cle);
        let success_curve = success_curve(&ious);
        let auc = success_curve.iter().sum::<f64>() / SUCCESS_THRESHOLDS as f64;
        Self {
            name: name.to_string(),
            attributes: attributes.to_vec(),
            frames: predicted.len(),
            scored_frames,
            cle_per_frame: cle,
            iou_per_frame: ious,
            precision_curve,
            success_curve,
            auc,
            fps,
        }
    }

    pub fn precision_at_20(&self) -> f64 {
        self.precision_curve[PRECISION_AT]
    }

    pub fn mean_cle(&self) -> f64 {
        if self.cle_per_frame.is_empty() {
            return 0.0;
        }
        self.cle_per_frame.iter().sum::<f64>() / self.cle_per_frame.len() as f64
    }
}

/// Anything that can be run under the one-pass protocol.
pub trait OpeTracker {
    fn initialize(&mut self, frame: &Image, bbox: BoundingBox) -> tracker::Result<()>;
    fn update(&mut self, frame: &Image) -> tracker::Result<BoundingBox>;
    fn diagnostics(&self) -> &[FrameDiagnostics] {
        &[]
    }
}

/// The correlation-filter tracker behind the [`OpeTracker`] interface.
pub struct CpcfRunner {
    cfg: TrackerConfig,
    features: FeatureConfig,
    tracker: Option<Tracker>,
    diagnostics: Vec<FrameDiagnostics>,
}

impl CpcfRunner {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            features: FeatureConfig::default(),
            tracker: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn tracker(&self) -> Option<&Tracker> {
        self.tracker.as_ref()
    }
}

impl OpeTracker for CpcfRunner {
    fn initialize(&mut self, frame: &Image, bbox: BoundingBox) -> tracker::Result<()> {
        self.diagnostics.clear();
        self.tracker = Some(Tracker::init_with_features(
            frame,
            bbox,
            self.cfg.clone(),
            self.features.clone(),
        )?);
        Ok(())
    }

    fn update(&mut self, frame: &Image) -> tracker::Result<BoundingBox> {
        let t = self.tracker.as_mut().expect("initialize must precede update");
        let (bbox, diag) = t.step(frame)?;
        self.diagnostics.push(diag);
        Ok(bbox)
    }

    fn diagnostics(&self) -> &[FrameDiagnostics] {
        &self.diagnostics
    }
}

/// Replays the annotations; holds the last known box over unannotated frames.
pub struct OracleTracker {
    truth: Vec<Option<BoundingBox>>,
    frame: usize,
    last: Option<BoundingBox>,
}

impl OracleTracker {
    pub fn new(truth: &[Option<BoundingBox>]) -> Self {
        Self {
            truth: truth.to_vec(),
            frame: 0,
            last: None,
        }
    }
}

impl OpeTracker for OracleTracker {
    fn initialize(&mut self, _frame: &Image, bbox: BoundingBox) -> tracker::Result<()> {
        self.frame = 0;
        self.last = Some(bbox);
        Ok(())
    }

    fn update(&mut self, _frame: &Image) -> tracker::Result<BoundingBox> {
        self.frame += 1;
        if let Some(Some(b)) = self.truth.get(self.frame) {
            self.last = Some(*b);
        }
        Ok(self.last.expect("initialized"))
    }
}

/// Never moves from the initial box.
#[derive(Default)]
pub struct StaticTracker {
    bbox: Option<BoundingBox>,
}

impl OpeTracker for StaticTracker {
    fn initialize(&mut self, _frame: &Image, bbox: BoundingBox) -> tracker::Result<()> {
        self.bbox = Some(bbox);
        Ok(())
    }

    fn update(&mut self, _frame: &Image) -> tracker::Result<BoundingBox> {
        Ok(self.bbox.expect("initialized"))
    }
}

/// Boxes, metrics and per-frame diagnostics of one OPE run.
#[derive(Debug, Clone)]
pub struct OpeRun {
    pub report: MetricsReport,
    pub boxes: Vec<BoundingBox>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// Initializes on frame 1 and tracks to the end without resets. Only
/// tracker calls are timed; decoding is excluded.
pub fn run_ope(seq: &Sequence, tracker: &mut dyn OpeTracker) -> Result<OpeRun> {
    let init = seq.initial_box()?;
    let boxes = track_frames(&seq.frame_paths, init, tracker)?;
    let elapsed = boxes.1;
    let fps = if elapsed > 0.0 { seq.len() as f64 / elapsed } else { 0.0 };
    let report = MetricsReport::from_boxes(&seq.name, &seq.attributes, &boxes.0, &seq.ground_truth, fps);
    Ok(OpeRun {
        report,
        boxes: boxes.0,
        diagnostics: tracker.diagnostics().to_vec(),
    })
}

/// Runs a tracker over frame files; returns the boxes and the tracker time
/// in seconds.
pub fn track_frames(
    frames: &[PathBuf],
    init: BoundingBox,
    tracker: &mut dyn OpeTracker,
) -> Result<(Vec<BoundingBox>, f64)> {
    let mut boxes = Vec::with_capacity(frames.len());
    let mut elapsed = 0.0;
    for (k, path) in frames.iter().enumerate() {
        let frame = load_frame(path)?;
        let start = Instant::now();
        let bbox = if k == 0 {
            tracker
                .initialize(&frame, init)
                .map_err(|source| EvalError::Tracker { frame: 0, source })?;
            init
        } else {
            tracker
                .update(&frame)
                .map_err(|source| EvalError::Tracker { frame: k, source })?
        };
        elapsed += start.elapsed().as_secs_f64();
        boxes.push(bbox);
    }
    Ok((boxes, elapsed))
}

/// Evaluates sequences concurrently on a pool of `threads` workers, one
/// tracker per sequence. Results keep the input order.
pub fn run_batch<F>(seqs: &[Sequence], threads: usize, make: F) -> Vec<Result<OpeRun>>
where
    F: Fn() -> Box<dyn OpeTracker> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        seqs.par_iter()
            .map(|s| {
                let mut t = make();
                run_ope(s, t.as_mut())
            })
            .collect()
    })
}

/// Unweighted mean over sequences, reduced in name order so the result does
/// not depend on evaluation or input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub sequences: usize,
    pub precision_curve: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub precision20: f64,
    pub auc: f64,
    pub mean_cle: f64,
    pub fps: f64,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted: Vec<&MetricsReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let n = sorted.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / n;
    let curve_mean = |f: &dyn Fn(&MetricsReport) -> &Vec<f64>, len: usize| -> Vec<f64> {
        (0..len)
            .map(|i| sorted.iter().map(|r| f(r)[i]).sum::<f64>() / n)
            .collect()
    };
    Ok(Aggregate {
        sequences: sorted.len(),
        precision_curve: curve_mean(&|r| &r.precision_curve, PRECISION_THRESHOLDS),
        success_curve: curve_mean(&|r| &r.success_curve, SUCCESS_THRESHOLDS),
        precision20: mean(&|r| r.precision_at_20()),
        auc: mean(&|r| r.auc),
        mean_cle: mean(&|r| r.mean_cle()),
        fps: mean(&|r| r.fps),
    })
}

/// Formats with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let s = format!("{:.*}", (5 - magnitude).max(0) as usize, x);
    // rounding can carry into a new leading digit (9.999999 -> 10.00000)
    if s.parse::<f64>().map_or(false, |v| v.abs() >= 10f64.powi(magnitude + 1)) {
        format!("{:.*}", (4 - magnitude).max(0) as usize, x)
    } else {
        s
    }
}

fn curve_csv(precision: &[f64], success: &[f64]) -> String {
    let mut out = String::from("curve,threshold,value\n");
    for (t, v) in precision.iter().enumerate() {
        let _ = writeln!(out, "precision,{t},{}", sig6(*v));
    }
    for (i, v) in success.iter().enumerate() {
        let _ = writeln!(out, "success,{:.2},{}", success_threshold(i), sig6(*v));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Writes `<name>.curves.csv` per sequence, `aggregate.curves.csv`,
/// `summary.csv` (accuracy only, deterministic) and `timing.csv` (FPS).
pub fn emit_report(reports: &[MetricsReport], out_dir: &Path) -> Result<Aggregate> {
    let agg = aggregate(reports)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut summary = String::from("sequence,frames,precision20,auc,mean_cle,attributes\n");
    let mut timing = String::from("sequence,fps\n");
    let mut ordered: Vec<&MetricsReport> = reports.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    for r in ordered {
        write_file(
            &out_dir.join(format!("{}.curves.csv", r.name)),
            &curve_csv(&r.precision_curve, &r.success_curve),
        )?;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            r.name,
            r.frames,
            sig6(r.precision_at_20()),
            sig6(r.auc),
            sig6(r.mean_cle()),
            r.attributes.join(";")
        );
        let _ = writeln!(timing, "{},{}", r.name, sig6(r.fps));
    }
    let _ = writeln!(
        summary,
        "mean,{},{},{},{},",
        agg.sequences,
        sig6(agg.precision20),
        sig6(agg.auc),
        sig6(agg.mean_cle)
    );
    let _ = writeln!(timing, "mean,{}", sig6(agg.fps));
    write_file(&out_dir.join("summary.csv"), &summary)?;
    write_file(&out_dir.join("timing.csv"), &timing)?;
    write_file(
        &out_dir.join("aggregate.curves.csv"),
        &curve_csv(&agg.precision_curve, &agg.success_curve),
    )?;
    Ok(agg)
}

/// Target appearance of a synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Sum of random oriented sinusoids with a random colour cast.
    Waves,
    /// Random-colour checkerboard.
    Checker,
}

/// Velocity in px/frame taking effect at a given 0-based frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityChange {
    pub frame: usize,
    pub dx: f64,
    pub dy: f64,
}

/// Parameters of a generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub pattern: Pattern,
    /// Target `(w, h)` in pixels at frame 0.
    pub target_size: (f64, f64),
    /// Target center `(x, y)` at frame 0.
    pub start: (f64, f64),
    /// Initial velocity `(dx, dy)` in px/frame.
    pub motion: (f64, f64),
    pub velocity_changes: Vec<VelocityChange>,
    /// Per-frame multiplicative size change.
    pub scale_ramp: f64,
    /// Standard deviation of additive Gaussian pixel noise (intensity in [0, 1]).
    pub noise_sigma: f64,
    /// First frame rendered with a freshly drawn target texture.
    pub appearance_swap_frame: Option<usize>,
    pub grayscale: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            seed: 0,
            width: 240,
            height: 240,
            frames: 100,
            pattern: Pattern::Waves,
            target_size: (40.0, 40.0),
            start: (50.0, 120.0),
            motion: (0.0, 0.0),
            velocity_changes: Vec::new(),
            scale_ramp: 1.0,
            noise_sigma: 0.0,
            appearance_swap_frame: None,
            grayscale: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    gain: [f64; 3],
}

#[derive(Debug, Clone)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
    checker: Option<(f64, [[f64; 3]; 2])>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, count: usize, freq: (f64, f64), amp: f64, base: (f64, f64)) -> Self {
        let waves = (0..count)
            .map(|_| {
                let f = rng.random_range(freq.0..freq.1) * std::f64::consts::TAU;
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                Wave {
                    fy: f * theta.sin(),
                    fx: f * theta.cos(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    gain: [0, 1, 2].map(|_| amp * rng.random_range(0.3..1.0)),
                }
            })
            .collect();
        Self {
            base: [0, 1, 2].map(|_| {
                if base.1 > base.0 {
                    rng.random_range(base.0..base.1)
                } else {
                    base.0
                }
            }),
            waves,
            checker: None,
        }
    }

    fn checker(rng: &mut ChaCha8Rng) -> Self {
        let colour = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| rng.random_range(0.0..1.0));
        let mut t = Self::random(rng, 3, (0.02, 0.05), 0.05, (0.0, 0.0));
        t.checker = Some((rng.random_range(5.0..9.0), [colour(rng), colour(rng)]));
        t
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.base;
        if let Some((period, colours)) = self.checker {
            let parity = ((u / period).floor() + (v / period).floor()).rem_euclid(2.0) as usize;
            out = colours[parity];
        }
        for w in &self.waves {
            let s = (w.fy * u + w.fx * v + w.phase).sin();
            for (o, g) in out.iter_mut().zip(w.gain) {
                *o += g * s;
            }
        }
        out
    }
}

/// Target state of a synthetic sequence at one frame.
fn trajectory(spec: &SynthSpec) -> Vec<BoundingBox> {
    let (mut cx, mut cy) = spec.start;
    let (mut dx, mut dy) = spec.motion;
    let mut out = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        if k > 0 {
            for c in spec.velocity_changes.iter().filter(|c| c.frame == k) {
                dx = c.dx;
                dy = c.dy;
            }
            cx += dx;
            cy += dy;
        }
        let s = spec.scale_ramp.powi(k as i32);
        out.push(BoundingBox::from_center(
            cx,
            cy,
            spec.target_size.0 * s,
            spec.target_size.1 * s,
        ));
    }
    out
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width < 8 || self.height < 8 {
            return Err(EvalError::Synth("need >= 1 frame and a frame of at least 8x8".into()));
        }
        if !(self.target_size.0 >= 4.0 && self.target_size.1 >= 4.0) {
            return Err(EvalError::Synth("target must be at least 4x4 px".into()));
        }
        if !(self.scale_ramp > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(EvalError::Synth(
                "scale_ramp must be positive and noise_sigma non-negative".into(),
            ));
        }
        for (k, b) in trajectory(self).iter().enumerate() {
            if b.x < 0.0 || b.y < 0.0 || b.x + b.w > self.width as f64 || b.y + b.h > self.height as f64 {
                return Err(EvalError::Synth(format!("target leaves the frame at frame {k}: {b:?}")));
            }
        }
        Ok(())
    }

    /// Exact target boxes, 0-based.
    pub fn ground_truth(&self) -> Vec<BoundingBox> {
        trajectory(self)
    }
}

/// Constant-velocity sequence: 240x240, 32x32 target moving 2 px/frame
/// to the right over 100 frames with noise 0.01.
pub fn constant_velocity_spec() -> SynthSpec {
    SynthSpec {
        name: "constant_velocity".into(),
        target_size: (32.0, 32.0),
        start: (20.0, 120.0),
        motion: (2.0, 0.0),
        noise_sigma: 0.01,
        ..SynthSpec::default()
    }
}

fn swap_spec(seed: u64, draw: u64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
    let mut velocity = || (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
    let (a, b, c) = (velocity(), velocity(), velocity());
    SynthSpec {
        name: format!("swap{seed:02}"),
        seed,
        frames: 90,
        target_size: (36.0, 36.0),
        start: (120.0, 120.0),
        motion: a,
        velocity_changes: vec![
            VelocityChange {
                frame: 30,
                dx: b.0,
                dy: b.1,
            },
            VelocityChange {
                frame: 60,
                dx: c.0,
                dy: c.1,
            },
        ],
        noise_sigma: 0.02,
        appearance_swap_frame: Some(45),
        ..SynthSpec::default()
    }
}

/// `count` sequences with an appearance swap at frame 45 and velocity
/// changes at frames 30 and 60. Velocities that would carry the target
/// out of the frame are redrawn.
pub fn ablation_suite(count: usize) -> Vec<SynthSpec> {
    (0..count as u64)
        .map(|seed| {
            (0..=50)
                .map(|k| swap_spec(seed, seed + 100 * k))
                .find(|s| s.validate().is_ok())
                .expect("a valid velocity draw exists")
        })
        .collect()
}

/// Renders all frames of a synthetic sequence in memory.
pub fn render_synth(spec: &SynthSpec) -> Result<Vec<Image>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = Texture::random(&mut rng, 10, (0.01, 0.08), 0.09, (0.3, 0.6));
    let draw_target = |rng: &mut ChaCha8Rng| match spec.pattern {
        Pattern::Waves => Texture::random(rng, 8, (0.04, 0.18), 0.2, (0.2, 0.8)),
        Pattern::Checker => Texture::checker(rng),
    };
    let first = draw_target(&mut rng);
    let swapped = draw_target(&mut rng);
    let channels = if spec.grayscale { 1 } else { 3 };
    let boxes = trajectory(spec);
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-300)).expect("valid sigma");

    boxes
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let target = match spec.appearance_swap_frame {
                Some(f) if k >= f => &swapped,
                _ => &first,
            };
            let scale = b.w / spec.target_size.0;
            let mut frame_rng = ChaCha8Rng::seed_from_u64(spec.seed);
            frame_rng.set_stream(k as u64 + 1);
            let mut px = [0.0; 3];
            let img = Image::from_fn(spec.height, spec.width, channels, |r, c, ch| {
                if ch == 0 {
                    let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                    px = if x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h {
                        target.sample((y - b.y) / scale, (x - b.x) / scale)
                    } else {
                        background.sample(y, x)
                    };
                    if spec.grayscale {
                        px[0] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                    }
                }
                let mut v = px[ch];
                if spec.noise_sigma > 0.0 {
                    v += noise.sample(&mut frame_rng);
                }
                v.clamp(0.0, 1.0) as f32
            })
            .map_err(|e| EvalError::Synth(e.to_string()))?;
            Ok(img)
        })
        .collect()
}

fn format_box_line(b: &BoundingBox) -> String {
    format!("{:.3},{:.3},{:.3},{:.3}", b.x + 1.0, b.y + 1.0, b.w, b.h)
}

/// Writes a synthetic sequence to `<parent>/<name>/` in the benchmark layout
/// and loads it back.
pub fn synth_sequence(spec: &SynthSpec, parent: &Path) -> Result<Sequence> {
    let frames = render_synth(spec)?;
    let dir = parent.join(&spec.name);
    let img_dir = dir.join("img");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    for (k, frame) in frames.iter().enumerate() {
        let path = img_dir.join(format!("{:04}.png", k + 1));
        save_png(frame, &path)?;
    }
    let gt: String = spec.ground_truth().iter().map(|b| format_box_line(b) + "\n").collect();
    write_file(&dir.join(GROUND_TRUTH_FILE), &gt)?;
    load_sequence(&dir)
}

pub fn save_png(frame: &Image, path: &Path) -> Result<()> {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let bytes = frame.to_u8();
    let color = if frame.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer(path, &bytes, w, h, color).map_err(|e| EvalError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes boxes as 1-based `x,y,w,h` lines.
pub fn write_boxes(boxes: &[BoundingBox], path: &Path) -> Result<()> {
    let text: String = boxes.iter().map(|b| format_box_line(b) + "\n").collect();
    write_file(path, &text)
}

/// Writes per-frame diagnostics; frame 1 (initialization) has no row.
pub fn write_diagnostics(diags: &[FrameDiagnostics], path: &Path) -> Result<()> {
    let mut text = String::from("frame,psrm,h,peak,scale,solver_ok\n");
    for d in diags {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            d.frame,
            sig6(d.psrm),
            sig6(d.h),
            sig6(d.peak),
            sig6(d.scale),
            d.solver_ok
        );
    }
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn parses_one_based_lines() {
        let g = parse_box_line("128.0,82.0,40.0,56.0", 1).unwrap().unwrap();
        assert_eq!(g, b(127.0, 81.0, 40.0, 56.0));
        assert_eq!(parse_box_line("1\t2\t3\t4", 1).unwrap().unwrap(), b(0.0, 1.0, 3.0, 4.0));
        assert_eq!(parse_box_line("1 2 3 4", 1).unwrap().unwrap(), b(0.0, 1.0, 3.0, 4.0));
        assert!(parse_box_line("NaN,NaN,NaN,NaN", 1).unwrap().is_none());
        match parse_box_line("1,2,x,4", 7) {
            Err(EvalError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        assert!(parse_box_line("1,2,3", 1).is_err());
    }

    #[test]
    fn center_error_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(center_error(&a, &a), 0.0);
        let c = b(3.0, 4.0, 2.0, 2.0);
        assert_eq!(center_error(&a, &c), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = b(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(1.0..9.0),
                rng.random_range(1.0..9.0),
            );
            let q = b(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(1.0..9.0),
                rng.random_range(1.0..9.0),
            );
            let dx = (p.x + p.w / 2.0) - (q.x + q.w / 2.0);
            let dy = (p.y + p.h / 2.0) - (q.y + q.h / 2.0);
            assert!((center_error(&p, &q) - (dx * dx + dy * dy).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(2.0, 2.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &b(0.5, 0.0, 1.0, 1.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &b(1.0, 0.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn curve_shapes() {
        let r = MetricsReport::from_boxes(
            "s",
            &[],
            &[b(0.0, 0.0, 2.0, 2.0), b(10.0, 0.0, 2.0, 2.0)],
            &[Some(b(0.0, 0.0, 2.0, 2.0)), Some(b(0.0, 0.0, 2.0, 2.0))],
            1.0,
        );
        assert_eq!(r.precision_curve.len(), 51);
        assert_eq!(r.success_curve.len(), 101);
        assert_eq!(r.precision_curve[0], 0.5);
        assert_eq!(r.precision_curve[10], 1.0);
        assert_eq!(r.success_curve[0], 0.5);
        assert_eq!(r.success_curve[100], 0.5);
        assert!((r.auc - r.success_curve.iter().sum::<f64>() / 101.0).abs() < 1e-12);
        assert!(r.precision_curve.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.success_curve.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn unannotated_frames_are_not_scored() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        let r = MetricsReport::from_boxes("s", &[], &[a, b(50.0, 50.0, 2.0, 2.0)], &[Some(a), None], 1.0);
        assert_eq!(r.scored_frames, vec![0]);
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn aggregate_means() {
        let mk = |name: &str, auc_frac: f64| {
            let mut r =
                MetricsReport::from_boxes(name, &[], &[b(0.0, 0.0, 1.0, 1.0)], &[Some(b(0.0, 0.0, 1.0, 1.0))], 1.0);
            r.auc = auc_frac;
            r
        };
        let one = aggregate(&[mk("a", 0.4)]).unwrap();
        assert_eq!(one.auc, 0.4);
        let two = aggregate(&[mk("a", 0.4), mk("b", 0.6)]).unwrap();
        assert!((two.auc - 0.5).abs() < 1e-15);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.661), "0.661000");
        assert_eq!(sig6(123.456789), "123.457");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1234567.0), "1234567");
        assert_eq!(sig6(9.9999999), "10.0000");
    }

    #[test]
    fn trajectory_is_arithmetic() {
        let spec = SynthSpec {
            motion: (2.0, 0.0),
            frames: 100,
            start: (21.0, 120.0),
            ..SynthSpec::default()
        };
        let gt = spec.ground_truth();
        for w in gt.windows(2) {
            assert_eq!(w[1].x - w[0].x, 2.0);
            assert_eq!(w[1].y, w[0].y);
        }
        assert!(spec.validate().is_ok());
        let off = SynthSpec {
            motion: (5.0, 0.0),
            ..spec
        };
        assert!(matches!(off.validate(), Err(EvalError::Synth(_))));
    }

    #[test]
    fn velocity_changes_apply() {
        let spec = SynthSpec {
            frames: 5,
            motion: (1.0, 0.0),
            velocity_changes: vec![VelocityChange {
                frame: 3,
                dx: 0.0,
                dy: -2.0,
            }],
            ..SynthSpec::default()
        };
        let c: Vec<(f64, f64)> = spec.ground_truth().iter().map(|b| b.center()).collect();
        assert_eq!(
            c,
            vec![
                (50.0, 120.0),
                (51.0, 120.0),
                (52.0, 120.0),
                (52.0, 118.0),
                (52.0, 116.0)
            ]
        );
    }

    #[test]
    fn static_synth_frames_repeat() {
        let spec = SynthSpec {
            frames: 3,
            width: 64,
            height: 64,
            start: (32.0, 32.0),
            target_size: (16.0, 16.0),
            ..SynthSpec::default()
        };
        let frames = render_synth(&spec).unwrap();
        assert_eq!(frames[0], frames[2]);
        let gt = spec.ground_truth();
        assert!(gt.iter().all(|g| *g == gt[0]));
    }

    #[test]
    fn checker_pattern_renders() {
        let spec = SynthSpec {
            frames: 2,
            width: 64,
            height: 64,
            start: (32.0, 32.0),
            target_size: (16.0, 16.0),
            pattern: Pattern::Checker,
            ..SynthSpec::default()
        };
        let frames = render_synth(&spec).unwrap();
        assert!(frames[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
        let first = frames[0].data()[0];
        assert!(frames[0].data().iter().any(|&v| (v - first).abs() > 0.1));
    }

    #[test]
    fn appearance_swap_changes_target_only() {
        let spec = SynthSpec {
            frames: 3,
            width: 64,
            height: 64,
            start: (32.0, 32.0),
            target_size: (16.0, 16.0),
            appearance_swap_frame: Some(2),
            ..SynthSpec::default()
        };
        let f = render_synth(&spec).unwrap();
        assert_eq!(f[0], f[1]);
        assert_ne!(f[1].get(32, 32, 0), f[2].get(32, 32, 0));
        assert_eq!(f[1].get(2, 2, 0), f[2].get(2, 2, 0));
    }
}
