//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances here are fixed; do not relax
//! them to make a run pass.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cpcf::cli::{cmd_bench, RunConfig};
use cpcf::consistency::{consistency_map, fixed_label, ResponseMap};
use cpcf::eval::{self, CpcfRunner, OpeTracker, Sequence, SynthSpec};
use cpcf::signal::{circ_shift, cyclic_correlate, dft2, gaussian_label, grid_center, hann_window, Grid2D, ShiftVector};
use cpcf::solver::oracle::{oracle_solve, oracle_solve_baseline, relative_max_error};
use cpcf::solver::{
    dense_bin_solve, sherman_morrison_bin, solve_filter, spatial_weight, AdmmSettings, FilterStack, TrainingProblem,
};
use cpcf::tracker::{Tracker, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn uniform_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random_range(lo..hi))
}

/// Random training problem: windowed noise samples, origin-peaked label,
/// a noisy centred previous response and a randomly scaled fixed label.
fn random_problem(seed: u64, gamma: f64) -> TrainingProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(6..=16usize);
    let w = rng.random_range(6..=16usize);
    let d = rng.random_range(1..=3usize);
    let win = hann_window(h, w);
    let x: Vec<Grid2D> = (0..d)
        .map(|_| {
            uniform_grid(&mut rng, h, w, -1.0, 1.0)
                .zip_with(&win, |a, b| a * b)
                .unwrap()
        })
        .collect();
    let th = rng.random_range(h as f64 / 3.0..h as f64 / 2.0);
    let tw = rng.random_range(w as f64 / 3.0..w as f64 / 2.0);
    let sigma = ((th * tw).sqrt() / 4.0).max(0.5);
    let y = gaussian_label(h, w, sigma, (0, 0)).unwrap();
    let noise = uniform_grid(&mut rng, h, w, -0.03, 0.03);
    let r = gaussian_label(h, w, sigma, grid_center(h, w))
        .unwrap()
        .zip_with(&noise, |a, n| 0.6 * a + n)
        .unwrap();
    let l = fixed_label(&y).scale(rng.random_range(0.6..1.2));
    let s = spatial_weight((th, tw), (h, w), 0.1, 3.0).unwrap();
    TrainingProblem::from_grids(&x, &y, Some((&r, &l)), gamma, s).unwrap()
}

fn solve(p: &TrainingProblem, iterations: usize) -> Vec<Grid2D> {
    let (h, w) = p.dims();
    let settings = AdmmSettings::accelerated(iterations, p.suggested_penalty());
    solve_filter(p, &FilterStack::zeros(p.channels(), h, w), &settings)
        .unwrap()
        .0
        .w
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failing = Vec::new();
    for seed in 0..20 {
        let gamma = if seed % 2 == 0 { 0.0 } else { 0.9 };
        let p = random_problem(seed, gamma);
        let err = relative_max_error(&solve(&p, 20), &oracle_solve(&p).unwrap());
        if !(err <= 1e-4) {
            failing.push(format!("seed {seed}: {err:.2e}"));
        }
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failing.is_empty() && secs < 30.0,
        format!(
            "worst rel err {worst:.2e} (tol 1e-4), {secs:.2} s (limit 30 s) {}",
            failing.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let c64 = |rng: &mut ChaCha8Rng| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    for d in [1usize, 2, 3, 8] {
        for _ in 0..1000 {
            let x: Vec<_> = (0..d).map(|_| c64(&mut rng)).collect();
            let b: Vec<_> = (0..d).map(|_| c64(&mut rng)).collect();
            let c = 1.0 + 0.9 * rng.random_range(0.0..4.0);
            let nu = rng.random_range(0.1..100.0);
            let mut fast = vec![Complex64::default(); d];
            sherman_morrison_bin(&x, &b, c, nu, &mut fast);
            let dense = dense_bin_solve(&x, &b, c, nu).expect("regular system");
            let scale = dense.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
            for (a, e) in fast.iter().zip(&dense) {
                worst = worst.max((a - e).norm() / scale);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 5.0,
        format!("4000 bins, worst rel err {worst:.2e} (tol 1e-10), {secs:.2} s (limit 5 s)"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let p = random_problem(100 + seed, 0.0);
        let err = relative_max_error(&solve(&p, 200), &oracle_solve_baseline(&p).unwrap());
        worst = worst.max(err);
    }
    outcome(
        worst <= 1e-6,
        format!("20 problems with gamma = 0, worst rel err {worst:.2e} (tol 1e-6)"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut parseval, mut corr): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let h = rng.random_range(1..=64usize);
        let w = rng.random_range(1..=64usize);
        let a = uniform_grid(&mut rng, h, w, -1.0, 1.0);
        let b = uniform_grid(&mut rng, h, w, -1.0, 1.0);
        let e = a.energy();
        parseval = parseval.max((e - dft2(&a).energy() / (h * w) as f64).abs() / e.max(1e-300));
        let fast = cyclic_correlate(&a, &b).unwrap();
        let mut brute = Grid2D::zeros(h, w);
        for u in 0..h {
            for v in 0..w {
                let mut s = 0.0;
                for i in 0..h {
                    let bi = (i + u) % h;
                    for j in 0..w {
                        s += a.get(i, j) * b.get(bi, (j + v) % w);
                    }
                }
                brute[(u, v)] = s;
            }
        }
        corr = corr.max(fast.max_abs_diff(&brute));
    }
    outcome(
        parseval <= 1e-9 && corr <= 1e-9,
        format!("100 grids up to 64x64: Parseval {parseval:.2e}, correlation {corr:.2e} (tol 1e-9)"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ideal: f64 = 0.0;
    let mut shift: f64 = 0.0;
    for _ in 0..50 {
        let h = rng.random_range(4..=32usize);
        let w = rng.random_range(4..=32usize);
        let y = gaussian_label(h, w, rng.random_range(0.5..4.0), (0, 0)).unwrap();
        let c = consistency_map(&ResponseMap::new(y.clone()), &ResponseMap::new(y.clone())).unwrap();
        ideal = ideal.max(c.max_abs_diff(&fixed_label(&y)));

        let target = ResponseMap::new(uniform_grid(&mut rng, h, w, -1.0, 1.0));
        let detect = uniform_grid(&mut rng, h, w, -1.0, 1.0);
        let by = ShiftVector::new(
            rng.random_range(-40i64..40) as isize,
            rng.random_range(-40i64..40) as isize,
        );
        let base = consistency_map(&target, &ResponseMap::new(detect.clone())).unwrap();
        let moved = consistency_map(&target, &ResponseMap::new(circ_shift(&detect, by))).unwrap();
        shift = shift.max(base.max_abs_diff(&moved));
    }
    outcome(
        ideal <= 1e-9 && shift <= 1e-9,
        format!("50 cases: |C(y,y) - l_f| {ideal:.2e}, shift variation {shift:.2e} (tol 1e-9)"),
    )
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn criterion_6(dir: &Path, h_log: &mut Vec<f64>) -> Outcome {
    let start = Instant::now();
    let seq = eval::synth_sequence(&eval::constant_velocity_spec(), dir).unwrap();
    let run = eval::run_ope(&seq, &mut CpcfRunner::new(TrackerConfig::default())).unwrap();
    h_log.extend(run.diagnostics.iter().map(|d| d.h));
    let secs = start.elapsed().as_secs_f64();
    let (cle, p20, auc) = (run.report.mean_cle(), run.report.precision_at_20(), run.report.auc);
    outcome(
        cle <= 2.0 && p20 == 1.0 && auc >= 0.75 && secs < 60.0,
        format!("mean CLE {cle:.3} px (<= 2), precision@20 {p20:.3} (= 1), AUC {auc:.3} (>= 0.75), {secs:.1} s (limit 60 s)"),
    )
}

fn suite_cle(seqs: &[Sequence], cfg: &TrackerConfig, h_log: &mut Vec<f64>) -> f64 {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs = eval::run_batch(seqs, threads, || {
        Box::new(CpcfRunner::new(cfg.clone())) as Box<dyn OpeTracker>
    });
    let cles: Vec<f64> = runs
        .into_iter()
        .map(|r| {
            let r = r.unwrap();
            h_log.extend(r.diagnostics.iter().map(|d| d.h));
            r.report.mean_cle()
        })
        .collect();
    mean(&cles)
}

fn criterion_7(dir: &Path, h_log: &mut Vec<f64>) -> Outcome {
    let seqs: Vec<Sequence> = eval::ablation_suite(10)
        .iter()
        .map(|s| eval::synth_sequence(s, dir).unwrap())
        .collect();
    let default = TrackerConfig::default();
    let full = suite_cle(&seqs, &default, h_log);
    let baseline = suite_cle(
        &seqs,
        &TrackerConfig {
            gamma: 0.0,
            ..default.clone()
        },
        h_log,
    );
    let fixed = suite_cle(
        &seqs,
        &TrackerConfig {
            fixed_h: Some(1.0),
            ..default
        },
        h_log,
    );
    outcome(
        full < baseline && full <= fixed,
        format!("mean CLE: default {full:.2} px, gamma=0 {baseline:.2} px, fixed h=1 {fixed:.2} px (need default < gamma=0 and default <= fixed h)"),
    )
}

fn criterion_8(h_log: &[f64]) -> Outcome {
    let outside = h_log.iter().filter(|h| !(0.6..=1.2).contains(*h)).count();
    let spec = SynthSpec {
        frames: 1,
        ..SynthSpec::default()
    };
    let frame = &eval::render_synth(&spec).unwrap()[0];
    let t = Tracker::init(frame, spec.ground_truth()[0], TrackerConfig::default()).unwrap();
    let (rows, cols) = t.cells();
    let (_, flat_h) = t
        .regulatory_factor(&ResponseMap::new(Grid2D::zeros(rows, cols)))
        .unwrap();
    outcome(
        outside == 0 && !h_log.is_empty() && flat_h == 0.6,
        format!(
            "{} logged frames, {outside} outside [0.6, 1.2]; flat response gives h = {flat_h}",
            h_log.len()
        ),
    )
}

fn criterion_9(h_log: &mut Vec<f64>) -> Outcome {
    let spec = SynthSpec {
        name: "throughput".into(),
        width: 320,
        height: 240,
        frames: 60,
        target_size: (48.0, 40.0),
        start: (80.0, 120.0),
        motion: (2.0, 0.5),
        noise_sigma: 0.01,
        ..SynthSpec::default()
    };
    let frames = eval::render_synth(&spec).unwrap();
    let gt = spec.ground_truth();
    let start = Instant::now();
    let mut t = Tracker::init(&frames[0], gt[0], TrackerConfig::default()).unwrap();
    for f in &frames[1..] {
        let (_, d) = t.step(f).unwrap();
        h_log.push(d.h);
    }
    let fps = frames.len() as f64 / start.elapsed().as_secs_f64();
    outcome(fps >= 15.0, format!("{fps:.1} FPS single-threaded on 320x240 (>= 15)"))
}

fn criterion_10(dir: &Path) -> Outcome {
    let data = dir.join("data");
    for (i, spec) in eval::ablation_suite(3).into_iter().enumerate() {
        let spec = SynthSpec {
            frames: 40,
            seed: 500 + i as u64,
            ..spec
        };
        eval::synth_sequence(&spec, &data).unwrap();
    }
    let cfg = RunConfig {
        seed: 1,
        threads: 3,
        tracker: TrackerConfig::default(),
    };
    let (a, b) = (dir.join("bench_a"), dir.join("bench_b"));
    cmd_bench(&data, &a, &cfg).unwrap();
    cmd_bench(&data, &b, &cfg).unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n == "summary.csv" || n.ends_with(".curves.csv"))
        .collect();
    names.sort();
    for name in &names {
        compared += 1;
        if fs::read(a.join(name)).ok() != fs::read(b.join(name)).ok() {
            differing.push(name.clone());
        }
    }
    outcome(
        compared >= 5 && differing.is_empty(),
        format!(
            "{compared} summary/curve files compared, {} differ {}",
            differing.len(),
            differing.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut h_log = Vec::new();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "oracle equivalence", criterion_1()),
        (2, "Sherman-Morrison correctness", criterion_2()),
        (3, "gamma = 0 reduction", criterion_3()),
        (4, "spectral identities", criterion_4()),
        (5, "consistency-map contract", criterion_5()),
        (
            6,
            "synthetic tracking accuracy",
            criterion_6(&dir.path().join("cv"), &mut h_log),
        ),
        (
            7,
            "ablation direction",
            criterion_7(&dir.path().join("ablation"), &mut h_log),
        ),
        (9, "throughput", criterion_9(&mut h_log)),
        (10, "determinism", criterion_10(&dir.path().join("determinism"))),
    ];
    results.push((8, "dynamic-factor bounds", criterion_8(&h_log)));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, o) in &results {
        failed += usize::from(!o.passed);
        println!(
            "[{}] criterion {id:2} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail.trim_end()
        );
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
