//! Command-line front end: `track`, `bench`, `synth` and `verify`.
//!
//! Precedence for every tracker parameter is flag, then config file, then
//! built-in default. The effective configuration is written to
//! `config.toml` in each output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{consistency_map, fixed_label, ResponseMap};
use crate::eval::{self, CpcfRunner, OpeTracker, SynthSpec};
use crate::signal::{self, circ_shift, cyclic_correlate, dft2, gaussian_label, Grid2D, ShiftVector};
use crate::solver::{
    dense_bin_solve, oracle, sherman_morrison_bin, solve_filter, spatial_weight, AdmmSettings, FilterStack,
    TrainingProblem,
};
use crate::tracker::{BoundingBox, TrackerConfig};

#[derive(Debug, Parser)]
#[command(name = "cpcf", version, about = "Consistency-pursued correlation filter tracker")]
pub struct Cli {
    /// TOML file with tracker parameters plus optional `seed` and `threads`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch evaluation (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub overrides: TrackerOverrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track one sequence and write boxes and per-frame diagnostics.
    Track {
        #[arg(long)]
        seq: PathBuf,
        /// Initial box `x,y,w,h` (1-based, like annotation files).
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-pass evaluation over every sequence below a directory.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic sequences.
    Synth {
        /// TOML spec: one sequence, or `[[sequence]]` tables.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical self-checks and print a pass/fail table.
    Verify {
        /// Corrupt solver outputs to confirm the checks can fail.
        #[arg(long)]
        perturb: bool,
    },
}

/// One optional flag per tracker parameter.
#[derive(Debug, Default, Clone, Args)]
pub struct TrackerOverrides {
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub h_min: Option<f64>,
    #[arg(long, global = true)]
    pub h_max: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub cell_size: Option<usize>,
    #[arg(long, global = true)]
    pub padding: Option<f64>,
    #[arg(long, global = true)]
    pub scale_count: Option<usize>,
    #[arg(long, global = true)]
    pub scale_step: Option<f64>,
    #[arg(long, global = true)]
    pub scale_penalty: Option<f64>,
    #[arg(long, global = true)]
    pub admm_iters: Option<usize>,
    #[arg(long, global = true)]
    pub admm_penalty: Option<f64>,
    #[arg(long, global = true)]
    pub admm_penalty_growth: Option<f64>,
    #[arg(long, global = true)]
    pub admm_penalty_max: Option<f64>,
    #[arg(long, global = true)]
    pub sidelobe_margin: Option<f64>,
    #[arg(long, global = true)]
    pub label_sigma_factor: Option<f64>,
    #[arg(long, global = true)]
    pub spatial_mu: Option<f64>,
    #[arg(long, global = true)]
    pub spatial_theta: Option<f64>,
    #[arg(long, global = true)]
    pub max_sample_area: Option<f64>,
    #[arg(long, global = true)]
    pub min_sample_area: Option<f64>,
    #[arg(long, global = true)]
    pub normalize_response: Option<bool>,
    #[arg(long, global = true)]
    pub fixed_h: Option<f64>,
}

impl TrackerOverrides {
    /// Applies every set flag; returns `name = value` for each.
    pub fn apply(&self, cfg: &mut TrackerConfig) -> Vec<String> {
        let mut echoed = Vec::new();
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                    echoed.push(format!("{} = {}", stringify!($field), v));
                }
            )*};
        }
        set!(
            gamma,
            h_min,
            h_max,
            alpha,
            beta,
            eta,
            cell_size,
            padding,
            scale_count,
            scale_step,
            scale_penalty,
            admm_iters,
            admm_penalty,
            admm_penalty_growth,
            admm_penalty_max,
            sidelobe_margin,
            label_sigma_factor,
            spatial_mu,
            spatial_theta,
            max_sample_area,
            min_sample_area,
            normalize_response
        );
        if let Some(h) = self.fixed_h {
            cfg.fixed_h = Some(h);
            echoed.push(format!("fixed_h = {h}"));
        }
        echoed
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub tracker: TrackerConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        let mut out = format!("seed = {}\nthreads = {}\n", self.seed, self.threads);
        out.push_str(&toml::to_string(&self.tracker).expect("tracker config serializes"));
        out
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses a flat config document: tracker keys plus `seed` and `threads`.
/// Unknown keys are errors.
pub fn parse_config_text(text: &str) -> Result<(TrackerConfig, Option<u64>, Option<usize>), String> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let take_uint = |table: &mut toml::Table, key: &str| -> Result<Option<u64>, String> {
        match table.remove(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) if v >= 0 => Ok(Some(v as u64)),
            Some(other) => Err(format!("{key} must be a non-negative integer, got {other}")),
        }
    };
    let seed = take_uint(&mut table, "seed")?;
    let threads = take_uint(&mut table, "threads")?.map(|t| t as usize);
    let tracker = TrackerConfig::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?;
    Ok((tracker, seed, threads))
}

/// Resolves default < file < flag. Returns the config and the echoed
/// overrides.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, Vec<String>), String> {
    let (mut tracker, file_seed, file_threads) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config_text(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => (TrackerConfig::default(), None, None),
    };
    let defaults = TrackerConfig::default();
    let mut echoed = Vec::new();
    if tracker != defaults {
        let file_keys = toml::to_string(&tracker).expect("serializes");
        let default_keys = toml::to_string(&defaults).expect("serializes");
        let defaults: Vec<&str> = default_keys.lines().collect();
        echoed.extend(
            file_keys
                .lines()
                .filter(|l| !defaults.contains(l))
                .map(|l| format!("{l} (config file)")),
        );
    }
    echoed.extend(cli.overrides.apply(&mut tracker));
    tracker.validate().map_err(|e| e.to_string())?;
    let threads = cli.threads.or(file_threads).unwrap_or_else(default_threads);
    if threads == 0 {
        return Err("threads must be positive".into());
    }
    Ok((
        RunConfig {
            seed: cli.seed.or(file_seed).unwrap_or(0),
            threads,
            tracker,
        },
        echoed,
    ))
}

/// Parses `x,y,w,h` (1-based corner) into a 0-based box.
pub fn parse_init(text: &str) -> Result<BoundingBox, String> {
    match eval::parse_box_line(text, 1) {
        Ok(Some(b)) if b.is_valid() => Ok(b),
        _ => Err(format!("--init expects x,y,w,h with positive size, got {text:?}")),
    }
}

fn write_config(out: &Path, cfg: &RunConfig) -> Result<(), String> {
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn cmd_track(seq_dir: &Path, init: Option<&str>, out: &Path, cfg: &RunConfig) -> Result<(), String> {
    let seq = if seq_dir.join(eval::GROUND_TRUTH_FILE).is_file() {
        eval::load_sequence(seq_dir)
    } else {
        eval::load_frames_only(seq_dir)
    }
    .map_err(|e| e.to_string())?;
    let start = match init {
        Some(text) => parse_init(text)?,
        None => seq
            .initial_box()
            .map_err(|_| "no ground truth found; pass --init x,y,w,h".to_string())?,
    };
    write_config(out, cfg)?;
    let mut runner = CpcfRunner::new(cfg.tracker.clone());
    let (boxes, elapsed) = eval::track_frames(&seq.frame_paths, start, &mut runner).map_err(|e| e.to_string())?;
    eval::write_boxes(&boxes, &out.join("bboxes.txt")).map_err(|e| e.to_string())?;
    eval::write_diagnostics(runner.diagnostics(), &out.join("diagnostics.csv")).map_err(|e| e.to_string())?;
    let fps = if elapsed > 0.0 {
        boxes.len() as f64 / elapsed
    } else {
        0.0
    };
    println!("{}: {} frames, {:.1} fps", seq.name, boxes.len(), fps);
    if seq.ground_truth.iter().skip(1).any(Option::is_some) {
        let report = eval::MetricsReport::from_boxes(&seq.name, &seq.attributes, &boxes, &seq.ground_truth, fps);
        println!(
            "precision@20 {:.4}  auc {:.4}  mean cle {:.2} px",
            report.precision_at_20(),
            report.auc,
            report.mean_cle()
        );
    }
    Ok(())
}

pub fn cmd_bench(dataset: &Path, out: &Path, cfg: &RunConfig) -> Result<(), String> {
    let dirs = eval::discover_sequences(dataset).map_err(|e| e.to_string())?;
    if dirs.is_empty() {
        return Err(format!("no sequences found in {}", dataset.display()));
    }
    let mut failures = 0;
    let mut seqs = Vec::new();
    for d in &dirs {
        match eval::load_sequence(d) {
            Ok(s) => seqs.push(s),
            Err(e) => {
                eprintln!("skipping {}: {e}", d.display());
                failures += 1;
            }
        }
    }
    write_config(out, cfg)?;
    let tracker_cfg = cfg.tracker.clone();
    let runs = eval::run_batch(&seqs, cfg.threads, || {
        Box::new(CpcfRunner::new(tracker_cfg.clone())) as Box<dyn OpeTracker>
    });
    let boxes_dir = out.join("boxes");
    fs::create_dir_all(&boxes_dir).map_err(|e| format!("{}: {e}", boxes_dir.display()))?;
    let mut reports = Vec::new();
    for (seq, run) in seqs.iter().zip(runs) {
        match run {
            Ok(run) => {
                eval::write_boxes(&run.boxes, &boxes_dir.join(format!("{}.txt", seq.name)))
                    .map_err(|e| e.to_string())?;
                reports.push(run.report);
            }
            Err(e) => {
                eprintln!("{} failed: {e}", seq.name);
                failures += 1;
            }
        }
    }
    if reports.is_empty() {
        return Err(format!("all {failures} sequences failed"));
    }
    let agg = eval::emit_report(&reports, out).map_err(|e| e.to_string())?;
    println!(
        "{} sequences ({} failed): precision@20 {:.4}  auc {:.4}  fps {:.1}",
        agg.sequences, failures, agg.precision20, agg.auc, agg.fps
    );
    Ok(())
}

/// Synthetic spec file: either one flat spec or `[[sequence]]` tables.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSuite {
    sequence: Vec<SynthSpec>,
}

pub fn parse_synth_text(text: &str) -> Result<Vec<SynthSpec>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    if table.contains_key("sequence") {
        let suite = SynthSuite::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?;
        Ok(suite.sequence)
    } else {
        Ok(vec![
            SynthSpec::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?
        ])
    }
}

pub fn cmd_synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), String> {
    let mut specs = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_synth_text(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => vec![eval::constant_velocity_spec()],
    };
    if let Some(s) = seed {
        for (i, spec) in specs.iter_mut().enumerate() {
            spec.seed = s + i as u64;
        }
    }
    for spec in &specs {
        let seq = eval::synth_sequence(spec, out).map_err(|e| format!("{}: {e}", spec.name))?;
        println!("{}: {} frames", seq.name, seq.len());
    }
    Ok(())
}

/// Outcome of one self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: value.is_finite() && value <= tol,
        detail: format!("{value:.3e} (tol {tol:.0e})"),
    }
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

/// Small random training problem with an active consistency term.
fn random_problem(rng: &mut ChaCha8Rng, gamma: f64) -> TrainingProblem {
    let (h, w, d) = (8, 8, 2);
    let win = signal::hann_window(h, w);
    let x: Vec<Grid2D> = (0..d)
        .map(|_| random_grid(rng, h, w).zip_with(&win, |a, b| a * b).expect("same size"))
        .collect();
    let y = gaussian_label(h, w, 1.0, (0, 0)).expect("valid label");
    let r = gaussian_label(h, w, 1.0, (h / 2, w / 2))
        .expect("valid label")
        .zip_with(&random_grid(rng, h, w), |a, b| 0.6 * a + 0.03 * b)
        .expect("same size");
    let l = fixed_label(&y);
    let weight = spatial_weight((4.0, 4.0), (h, w), 0.1, 3.0).expect("valid weight");
    TrainingProblem::from_grids(&x, &y, Some((&r, &l)), gamma, weight).expect("valid problem")
}

fn perturbed(w: Vec<Grid2D>, perturb: bool) -> Vec<Grid2D> {
    if !perturb {
        return w;
    }
    w.into_iter()
        .map(|g| {
            let bump = 0.05 * g.max_abs().max(1e-3);
            g.map(|v| v + bump)
        })
        .collect()
}

/// The numerical self-checks behind `verify`.
pub fn verify_checks(perturb: bool) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();

    let p = random_problem(&mut rng, 0.9);
    let settings = AdmmSettings::accelerated(30, p.suggested_penalty());
    let (h, w) = p.dims();
    let init = FilterStack::zeros(p.channels(), h, w);
    let oracle_err = solve_filter(&p, &init, &settings)
        .and_then(|(f, _)| {
            Ok(oracle::relative_max_error(
                &perturbed(f.w, perturb),
                &oracle::oracle_solve(&p)?,
            ))
        })
        .unwrap_or(f64::INFINITY);
    out.push(check("solver matches dense oracle", oracle_err, 1e-4));

    let p0 = random_problem(&mut rng, 0.0);
    let settings = AdmmSettings::accelerated(30, p0.suggested_penalty());
    let base_err = solve_filter(&p0, &init, &settings)
        .and_then(|(f, _)| {
            Ok(oracle::relative_max_error(
                &perturbed(f.w, perturb),
                &oracle::oracle_solve_baseline(&p0)?,
            ))
        })
        .unwrap_or(f64::INFINITY);
    out.push(check("zero gamma reduces to the baseline", base_err, 1e-6));

    let mut sm_err: f64 = 0.0;
    for d in [1, 2, 3, 8] {
        for _ in 0..50 {
            let xs: Vec<_> = (0..d)
                .map(|_| rustfft::num_complex::Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let bs: Vec<_> = (0..d)
                .map(|_| rustfft::num_complex::Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let c = 1.0 + rng.random_range(0.0..5.0);
            let nu = rng.random_range(0.1..10.0);
            let mut fast = vec![Default::default(); d];
            sherman_morrison_bin(&xs, &bs, c, nu, &mut fast);
            if let Some(slow) = dense_bin_solve(&xs, &bs, c, nu) {
                for (a, b) in fast.iter().zip(&slow) {
                    sm_err = sm_err.max((a - b).norm() / (1.0 + b.norm()));
                }
            }
        }
    }
    out.push(check("Sherman-Morrison matches dense inverse", sm_err, 1e-10));

    let g = random_grid(&mut rng, 24, 17);
    let parseval = (g.energy() - dft2(&g).energy() / (24.0 * 17.0)).abs() / g.energy();
    out.push(check("Parseval identity", parseval, 1e-9));

    let a = random_grid(&mut rng, 9, 7);
    let b = random_grid(&mut rng, 9, 7);
    let fast = cyclic_correlate(&a, &b).expect("same size");
    let brute = Grid2D::from_fn(9, 7, |u, v| {
        let mut s = 0.0;
        for i in 0..9 {
            for j in 0..7 {
                s += a.get(i, j) * b.get((i + u) % 9, (j + v) % 7);
            }
        }
        s
    });
    out.push(check(
        "correlation theorem vs direct sum",
        fast.max_abs_diff(&brute),
        1e-9,
    ));

    let target = ResponseMap::new(random_grid(&mut rng, 10, 12));
    let mut detect_grid = random_grid(&mut rng, 10, 12);
    detect_grid[(3, 8)] = 5.0;
    let detect = ResponseMap::new(detect_grid.clone());
    let map = consistency_map(&target, &detect).expect("same size");
    let moved = detect_grid.clone();
    let (pr, pc) = (3usize, 8usize);
    let brute = Grid2D::from_fn(10, 12, |u, v| {
        let mut s = 0.0;
        for i in 0..10 {
            for j in 0..12 {
                // detect re-centred: its peak moves to (5, 6)
                let si = (i + u + 10 + pr - 5) % 10;
                let sj = (j + v + 12 + pc - 6) % 12;
                s += target.grid().get(i, j) * moved.get(si, sj);
            }
        }
        s
    });
    out.push(check("consistency map vs direct sum", map.max_abs_diff(&brute), 1e-9));

    let y = gaussian_label(12, 10, 1.5, (0, 0)).expect("valid label");
    let ideal = consistency_map(&ResponseMap::new(y.clone()), &ResponseMap::new(y.clone())).expect("same size");
    out.push(check(
        "ideal responses give the fixed label",
        ideal.max_abs_diff(&fixed_label(&y)),
        1e-9,
    ));

    let shifted = ResponseMap::new(circ_shift(&detect_grid, ShiftVector::new(4, -3)));
    let inv = consistency_map(&target, &shifted)
        .expect("same size")
        .max_abs_diff(&map);
    out.push(check("consistency map is shift invariant", inv, 1e-9));

    out
}

pub fn cmd_verify(perturb: bool) -> Result<(), String> {
    let results = verify_checks(perturb);
    let mut table = String::new();
    for r in &results {
        let _ = writeln!(
            table,
            "{:4}  {:42} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    print!("{table}");
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    println!("{} checks, {} failed", results.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("failed checks: {}", failed.join(", ")))
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), String> {
    if let Command::Verify { perturb } = cli.command {
        return cmd_verify(perturb);
    }
    let (cfg, echoed) = resolve_config(&cli)?;
    for e in &echoed {
        println!("override: {e}");
    }
    match &cli.command {
        Command::Track { seq, init, out } => cmd_track(seq, init.as_deref(), out, &cfg),
        Command::Bench { dataset, out } => cmd_bench(dataset, out, &cfg),
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), out, cli.seed),
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
