//! Tracks a generated constant-velocity target in memory and prints the
//! per-frame diagnostics every ten frames.

use cpcf::eval::{center_error, constant_velocity_spec, render_synth};
use cpcf::tracker::{Tracker, TrackerConfig};

fn main() {
    let spec = constant_velocity_spec();
    let frames = render_synth(&spec).expect("valid spec");
    let gt = spec.ground_truth();

    let mut tracker = Tracker::init(&frames[0], gt[0], TrackerConfig::default()).expect("init");
    println!("cells {:?}, {} channels", tracker.cells(), tracker.channels());
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let (bbox, diag) = tracker.step(frame).expect("step");
        if k % 10 == 0 {
            println!(
                "frame {k:3}: error {:5.2} px  psr {:7.2}  h {:.3}  peak {:.3}",
                center_error(&bbox, &gt[k]),
                diag.psrm,
                diag.h,
                diag.peak
            );
        }
    }
}
