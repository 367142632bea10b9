//! Extracts the HOG, colour-name and intensity stack from a synthetic
//! colour frame and prints per-channel energy.

use cpcf::eval::{render_synth, SynthSpec};
use cpcf::features::{build_sample, feature_depth, FeatureConfig, COLOR_NAMES, HOG_CHANNELS};

fn main() {
    let spec = SynthSpec {
        frames: 1,
        ..SynthSpec::default()
    };
    let frame = &render_synth(&spec).expect("valid spec")[0];
    let (cx, cy) = spec.start;
    let cfg = FeatureConfig::default();

    let map = build_sample(frame, (cy, cx), (80.0, 80.0), (20, 20), &cfg).expect("features");
    println!(
        "{}x{} cells, {} channels (expected {})",
        map.rows(),
        map.cols(),
        map.depth(),
        feature_depth(frame.channels())
    );
    let hog: f64 = map.channels[..HOG_CHANNELS].iter().map(|g| g.energy()).sum();
    println!("HOG energy {hog:.3}");
    for (name, grid) in COLOR_NAMES.iter().zip(&map.channels[HOG_CHANNELS..]) {
        println!("{name:>7}: {:.3}", grid.energy());
    }
    println!("intensity: {:.3}", map.channels.last().expect("channel").energy());
}
