//! Trains a small consistency-regularized filter with ADMM and compares it
//! with the dense direct solve and the gamma = 0 baseline.

use cpcf::consistency::fixed_label;
use cpcf::signal::{gaussian_label, grid_center, hann_window, Grid2D};
use cpcf::solver::oracle::{oracle_solve, oracle_solve_baseline, relative_max_error};
use cpcf::solver::{objective_value, solve_filter, spatial_weight, AdmmSettings, FilterStack, TrainingProblem};

fn main() {
    let (h, w) = (12, 12);
    let win = hann_window(h, w);
    let x: Vec<Grid2D> = (0..2)
        .map(|k| {
            Grid2D::from_fn(h, w, |r, c| {
                (((r * 5 + c * 3 + k * 7) % 13) as f64 / 6.0 - 1.0) * win.get(r, c)
            })
        })
        .collect();
    let y = gaussian_label(h, w, 1.0, (0, 0)).expect("label");
    let prev = gaussian_label(h, w, 1.0, grid_center(h, w)).expect("label").scale(0.7);
    let l = fixed_label(&y);
    let weight = spatial_weight((5.0, 5.0), (h, w), 0.1, 3.0).expect("weight");

    for gamma in [0.0, 0.9] {
        let p = TrainingProblem::from_grids(&x, &y, Some((&prev, &l)), gamma, weight.clone()).expect("problem");
        let init = FilterStack::zeros(p.channels(), h, w);
        for (label, settings) in [
            ("3-iteration tracking schedule", AdmmSettings::schedule(3)),
            (
                "50 accelerated iterations",
                AdmmSettings::accelerated(50, p.suggested_penalty()),
            ),
        ] {
            let (stack, report) = solve_filter(&p, &init, &settings).expect("solve");
            let oracle = oracle_solve(&p).expect("oracle");
            println!(
                "gamma {gamma}: {label}: objective {:.5}, rel err vs direct {:.2e}, iterations {}",
                objective_value(&p, &stack.w).expect("objective"),
                relative_max_error(&stack.w, &oracle),
                report.iterations
            );
        }
        let gap = relative_max_error(&oracle_solve(&p).unwrap(), &oracle_solve_baseline(&p).unwrap());
        println!("gamma {gamma}: distance from the baseline solution {gap:.3e}");
    }
}
