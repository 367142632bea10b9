use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use cpcf::eval::{
    ablation_suite, aggregate, emit_report, render_synth, run_batch, run_ope, synth_sequence, CpcfRunner,
    MetricsReport, OpeTracker, OracleTracker, Sequence, StaticTracker, SynthSpec,
};
use cpcf::tracker::{BoundingBox, TrackerConfig};

fn small_spec(name: &str, seed: u64, motion: (f64, f64)) -> SynthSpec {
    SynthSpec {
        name: name.into(),
        seed,
        width: 120,
        height: 100,
        frames: 12,
        target_size: (24.0, 20.0),
        start: (40.0, 50.0),
        motion,
        noise_sigma: 0.02,
        ..SynthSpec::default()
    }
}

fn dataset(dir: &Path) -> Vec<Sequence> {
    vec![
        synth_sequence(&small_spec("bravo", 1, (2.0, 0.5)), dir).unwrap(),
        synth_sequence(&small_spec("alpha", 2, (-1.0, 1.0)), dir).unwrap(),
        synth_sequence(&small_spec("charlie", 3, (0.0, 0.0)), dir).unwrap(),
    ]
}

fn file_hash(path: &Path) -> u64 {
    let mut h = DefaultHasher::new();
    fs::read(path).unwrap().hash(&mut h);
    h.finish()
}

#[test]
fn oracle_tracker_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let mut seqs = dataset(dir.path());
    // fractional swap-suite boxes exercise rounding in the overlap
    seqs.extend(ablation_suite(2).iter().map(|s| {
        synth_sequence(
            &SynthSpec {
                frames: 20,
                ..s.clone()
            },
            dir.path(),
        )
        .unwrap()
    }));
    for seq in seqs {
        let run = run_ope(&seq, &mut OracleTracker::new(&seq.ground_truth)).unwrap();
        assert_eq!(run.report.auc, 1.0, "{}", seq.name);
        assert_eq!(run.report.precision_at_20(), 1.0);
        assert_eq!(run.report.mean_cle(), 0.0);
    }
}

#[test]
fn static_tracker_success_at_zero_counts_any_overlap() {
    let dir = tempfile::tempdir().unwrap();
    // 24 px wide target moving 2 px/frame: overlap lasts 11 frames after the first
    let seq = synth_sequence(&small_spec("drift", 0, (2.0, 0.0)), dir.path()).unwrap();
    let run = run_ope(&seq, &mut StaticTracker::default()).unwrap();
    let r = &run.report;
    let overlapping = r.iou_per_frame.iter().filter(|&&v| v > 0.0).count() as f64;
    assert_eq!(r.success_curve[0], overlapping / r.iou_per_frame.len() as f64);
    assert_eq!(r.success_curve[0], 1.0);
    assert!(r.success_curve[100] < 1.0 / 12.0 + 1e-12);
    assert!(r.precision_curve[0] > 0.0 && r.precision_curve[0] < 0.1);
}

#[test]
fn auc_is_the_mean_of_the_success_curve() {
    let gt: Vec<Option<BoundingBox>> = (0..30)
        .map(|k| Some(BoundingBox::new(k as f64, 10.0, 20.0, 20.0)))
        .collect();
    let pred: Vec<BoundingBox> = (0..30)
        .map(|k| BoundingBox::new(1.3 * k as f64, 11.0, 18.0, 22.0))
        .collect();
    let r = MetricsReport::from_boxes("x", &[], &pred, &gt, 0.0);
    let mean = r.success_curve.iter().sum::<f64>() / r.success_curve.len() as f64;
    assert!((r.auc - mean).abs() <= 1e-12);
    assert_eq!(r.success_curve.len(), 101);
    assert_eq!(r.precision_curve.len(), 51);
}

#[test]
fn two_report_aggregate_is_the_plain_mean() {
    let gt: Vec<Option<BoundingBox>> = vec![Some(BoundingBox::new(0.0, 0.0, 10.0, 10.0)); 4];
    let near = vec![BoundingBox::new(3.0, 4.0, 10.0, 10.0); 4];
    let far = vec![BoundingBox::new(30.0, 40.0, 10.0, 10.0); 4];
    let a = MetricsReport::from_boxes("a", &[], &near, &gt, 10.0);
    let b = MetricsReport::from_boxes("b", &[], &far, &gt, 30.0);
    let agg = aggregate(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(agg.sequences, 2);
    assert!((agg.mean_cle - 27.5).abs() < 1e-12);
    assert_eq!(agg.precision20, 0.5);
    assert!((agg.auc - (a.auc + b.auc) / 2.0).abs() < 1e-12);
    assert_eq!(agg.fps, 20.0);
}

#[test]
fn batch_aggregate_ignores_sequence_order() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = dataset(dir.path());
    let mut reversed = seqs.clone();
    reversed.reverse();
    let make = || Box::new(CpcfRunner::new(TrackerConfig::default())) as Box<dyn OpeTracker>;
    let reports = |s: &[Sequence]| -> Vec<MetricsReport> {
        run_batch(s, 2, make).into_iter().map(|r| r.unwrap().report).collect()
    };
    let (fwd, bwd) = (reports(&seqs), reports(&reversed));
    assert_eq!(fwd[0].name, bwd[2].name);
    assert_eq!(fwd[0].cle_per_frame, bwd[2].cle_per_frame);
    let (x, y) = (aggregate(&fwd).unwrap(), aggregate(&bwd).unwrap());
    assert_eq!(x.precision_curve, y.precision_curve);
    assert_eq!(x.success_curve, y.success_curve);
    assert_eq!(x.mean_cle, y.mean_cle);
}

#[test]
fn report_files_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = dataset(&dir.path().join("data"));
    let reports: Vec<MetricsReport> = seqs
        .iter()
        .map(|s| run_ope(s, &mut StaticTracker::default()).unwrap().report)
        .collect();
    let out = dir.path().join("out");
    emit_report(&reports, &out).unwrap();
    for name in ["alpha", "bravo", "charlie", "aggregate"] {
        let text = fs::read_to_string(out.join(format!("{name}.curves.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "curve,threshold,value");
        assert_eq!(lines.len(), 1 + 51 + 101, "{name}");
        assert_eq!(lines.iter().filter(|l| l.starts_with("precision,")).count(), 51);
        assert_eq!(lines.iter().filter(|l| l.starts_with("success,")).count(), 101);
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("alpha,") && rows[4].starts_with("mean,"));
    assert!(out.join("timing.csv").is_file());
}

#[test]
fn synthetic_sequences_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = small_spec("repeat", 9, (1.5, -0.5));
    let sa = synth_sequence(&spec, a.path()).unwrap();
    let sb = synth_sequence(&spec, b.path()).unwrap();
    for (pa, pb) in sa.frame_paths.iter().zip(&sb.frame_paths) {
        assert_eq!(file_hash(pa), file_hash(pb));
    }
    assert_eq!(
        file_hash(&a.path().join("repeat/groundtruth_rect.txt")),
        file_hash(&b.path().join("repeat/groundtruth_rect.txt"))
    );
    let other = render_synth(&SynthSpec {
        seed: 10,
        ..spec.clone()
    })
    .unwrap();
    assert_ne!(render_synth(&spec).unwrap()[3].data(), other[3].data());
}

#[test]
fn dynamic_factor_drops_at_the_appearance_swap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        frames: 55,
        ..ablation_suite(1).remove(0)
    };
    let seq = synth_sequence(&spec, dir.path()).unwrap();
    let run = run_ope(&seq, &mut CpcfRunner::new(TrackerConfig::default())).unwrap();
    let h_at = |frame: usize| run.diagnostics.iter().find(|d| d.frame == frame).unwrap().h;
    let before = h_at(40);
    let after = (45..=47).map(h_at).fold(f64::INFINITY, f64::min);
    assert!(after < before, "h before swap {before}, after {after}");
}
