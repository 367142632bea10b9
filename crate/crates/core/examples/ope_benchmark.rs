//! One-pass evaluation of three trackers on a generated dataset: the
//! correlation filter, a tracker that never moves and one that replays the
//! ground truth.

use cpcf::eval::{
    ablation_suite, aggregate, run_batch, synth_sequence, CpcfRunner, OpeTracker, OracleTracker, StaticTracker,
};
use cpcf::tracker::TrackerConfig;

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let seqs: Vec<_> = ablation_suite(4)
        .into_iter()
        .map(|mut s| {
            s.frames = 40;
            synth_sequence(&s, dir.path()).expect("sequence")
        })
        .collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());

    let cpcf = run_batch(&seqs, threads, || {
        Box::new(CpcfRunner::new(TrackerConfig::default())) as Box<dyn OpeTracker>
    });
    let fixed = run_batch(&seqs, threads, || {
        Box::new(StaticTracker::default()) as Box<dyn OpeTracker>
    });
    let oracle: Vec<_> = seqs
        .iter()
        .map(|s| cpcf::eval::run_ope(s, &mut OracleTracker::new(&s.ground_truth)))
        .collect();

    for (name, runs) in [("cpcf", cpcf), ("static", fixed), ("oracle", oracle)] {
        let reports: Vec<_> = runs.into_iter().map(|r| r.expect("run").report).collect();
        let agg = aggregate(&reports).expect("non-empty");
        println!(
            "{name:>6}: precision@20 {:.3}  auc {:.3}  mean cle {:6.2} px",
            agg.precision20, agg.auc, agg.mean_cle
        );
    }
}
