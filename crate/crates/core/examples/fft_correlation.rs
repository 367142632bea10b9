//! Cyclic correlation through the FFT, checked against the direct sum, and
//! the peak position recovering a known circular shift.

use cpcf::signal::{circ_shift, cyclic_correlate, dft2, Grid2D, ShiftVector};

fn main() {
    let a = Grid2D::from_fn(16, 12, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
    let b = circ_shift(&a, ShiftVector::new(3, -2));

    let corr = cyclic_correlate(&a, &b).expect("same size");
    let (peak, at) = corr.argmax();
    println!("correlation peak {peak:.1} at {at:?} (shift (3, -2) wraps to (3, 10))");

    let mut worst: f64 = 0.0;
    for u in 0..16 {
        for v in 0..12 {
            let mut s = 0.0;
            for i in 0..16 {
                for j in 0..12 {
                    s += a.get(i, j) * b.get((i + u) % 16, (j + v) % 12);
                }
            }
            worst = worst.max((s - corr.get(u, v)).abs());
        }
    }
    println!("max deviation from the direct sum: {worst:.2e}");

    let spectrum = dft2(&a);
    println!(
        "Parseval: spatial energy {:.3}, spectral energy / MN {:.3}",
        a.energy(),
        spectrum.energy() / (16.0 * 12.0)
    );
}
