//! Writes a small synthetic dataset (constant velocity plus two swap
//! sequences) in the benchmark directory layout.

use std::path::PathBuf;

use cpcf::eval::{ablation_suite, constant_velocity_spec, synth_sequence};

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("synthetic_data"));
    let mut specs = vec![constant_velocity_spec()];
    specs.extend(ablation_suite(2));
    for spec in &specs {
        let seq = synth_sequence(spec, &out).expect("sequence written");
        println!(
            "{}: {} frames, first box {:?}",
            seq.name,
            seq.len(),
            seq.ground_truth[0]
        );
    }
    println!("dataset written to {}", out.display());
}
