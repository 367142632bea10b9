//! Compares the default tracker with gamma = 0 and with a fixed dynamic
//! factor on the appearance-swap suite. Pass the number of sequences as the
//! first argument (default 10).

use cpcf::eval::{ablation_suite, run_batch, synth_sequence, CpcfRunner, OpeTracker};
use cpcf::tracker::TrackerConfig;

fn main() {
    let count = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let dir = tempfile::tempdir().expect("temp dir");
    let seqs: Vec<_> = ablation_suite(count)
        .iter()
        .map(|s| synth_sequence(s, dir.path()).expect("sequence"))
        .collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let base = TrackerConfig::default();
    let variants = [
        ("default", base.clone()),
        (
            "gamma=0",
            TrackerConfig {
                gamma: 0.0,
                ..base.clone()
            },
        ),
        (
            "fixed h=1",
            TrackerConfig {
                fixed_h: Some(1.0),
                ..base
            },
        ),
    ];
    for (name, cfg) in variants {
        let runs = run_batch(&seqs, threads, || {
            Box::new(CpcfRunner::new(cfg.clone())) as Box<dyn OpeTracker>
        });
        let cles: Vec<f64> = runs.into_iter().map(|r| r.expect("run").report.mean_cle()).collect();
        let per_seq: Vec<String> = cles.iter().map(|c| format!("{c:.1}")).collect();
        println!(
            "{name:>9}: mean CLE {:6.2} px  [{}]",
            cles.iter().sum::<f64>() / cles.len() as f64,
            per_seq.join(" ")
        );
    }
}
