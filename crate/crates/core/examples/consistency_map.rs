//! Consistency map between two responses: ideal responses reproduce the
//! fixed label, and moving the detection peak leaves the map unchanged.

use cpcf::consistency::{consistency_map, fixed_label, ResponseMap};
use cpcf::signal::{circ_shift, gaussian_label, grid_center, ShiftVector};

fn main() {
    let (h, w) = (25, 25);
    let y = gaussian_label(h, w, 1.5, (0, 0)).expect("label");
    let ideal = consistency_map(&ResponseMap::new(y.clone()), &ResponseMap::new(y.clone())).expect("map");
    let l = fixed_label(&y);
    println!("C(y, y) vs fixed label: max diff {:.2e}", ideal.max_abs_diff(&l));
    println!(
        "fixed label peaks at {:?}, grid centre {:?}",
        l.argmax().1,
        grid_center(h, w)
    );

    // a weaker, displaced detection still yields a centred map
    let detect = circ_shift(&y.scale(0.4), ShiftVector::new(6, -4));
    let c = consistency_map(&ResponseMap::new(y.clone()), &ResponseMap::new(detect)).expect("map");
    let (peak, at) = c.argmax();
    println!("displaced detection: map peak {peak:.3} at {at:?}");
}
