//! Response maps, the consistency map between consecutive responses, the
//! fixed and dynamic constraint labels, and the PSRM quality score.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::signal::{self, circ_shift, cyclic_correlate, grid_center, Grid2D, ShiftVector, SignalError};

/// Below this sidelobe standard deviation the PSR term is treated as zero.
pub const FLAT_SIDELOBE_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(
        "{rows}x{cols} response leaves {remaining} sidelobe cells outside a {win_rows}x{win_cols} exclusion window"
    )]
    SidelobeTooSmall {
        rows: usize,
        cols: usize,
        win_rows: usize,
        win_cols: usize,
        remaining: usize,
    },
    #[error("invalid factor range: h_min={h_min}, h_max={h_max}, alpha={alpha}")]
    InvalidFactorRange { h_min: f64, h_max: f64, alpha: f64 },
}

pub type Result<T> = std::result::Result<T, ConsistencyError>;

/// A correlation response together with its (row-major first) maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    grid: Grid2D,
    peak_value: f64,
    peak_pos: (usize, usize),
}

impl ResponseMap {
    pub fn new(grid: Grid2D) -> Self {
        let (peak_value, peak_pos) = grid.argmax();
        Self {
            grid,
            peak_value,
            peak_pos,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D {
        self.grid
    }

    pub fn peak_value(&self) -> f64 {
        self.peak_value
    }

    pub fn peak_pos(&self) -> (usize, usize) {
        self.peak_pos
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// The shift that moves the peak to the grid center.
    pub fn recentering_shift(&self) -> ShiftVector {
        let (h, w) = self.dims();
        let (cr, cc) = grid_center(h, w);
        ShiftVector::new(
            cr as isize - self.peak_pos.0 as isize,
            cc as isize - self.peak_pos.1 as isize,
        )
    }

    /// The response circularly shifted so that its peak sits at the center.
    pub fn recentered(&self) -> Grid2D {
        circ_shift(&self.grid, self.recentering_shift())
    }
}

/// `C = R' ⋆ shift(R, center − peak(R))`.
pub fn consistency_map(target_resp: &ResponseMap, detect_resp: &ResponseMap) -> Result<Grid2D> {
    Ok(cyclic_correlate(target_resp.grid(), &detect_resp.recentered())?)
}

/// Autocorrelation of the ideal response, shifted so that its peak lies at
/// the grid center.
///
/// `y` is expected to peak at the origin (as produced by the tracker's label
/// construction); the shift by the center then places `y ⋆ y` where the
/// consistency map of two ideal responses puts it.
pub fn fixed_label(y: &Grid2D) -> Grid2D {
    let (h, w) = y.dims();
    let (cr, cc) = grid_center(h, w);
    let auto = cyclic_correlate(y, y).expect("same grid on both sides");
    circ_shift(&auto, ShiftVector::new(cr as isize, cc as isize))
}

/// Per-size cache for [`fixed_label`], keyed by grid dimensions and sigma.
#[derive(Debug, Default, Clone)]
pub struct FixedLabelCache {
    inner: Arc<Mutex<HashMap<(usize, usize, u64), Arc<Grid2D>>>>,
}

impl FixedLabelCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fixed label for an origin-peaked Gaussian of the given size and sigma.
    pub fn get(&self, height: usize, width: usize, sigma: f64) -> Result<Arc<Grid2D>> {
        let key = (height, width, sigma.to_bits());
        if let Some(hit) = self.inner.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let y = signal::gaussian_label(height, width, sigma, (0, 0))?;
        let label = Arc::new(fixed_label(&y));
        self.inner.lock().expect("cache lock").insert(key, label.clone());
        Ok(label)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsrmScore {
    pub value: f64,
    pub psr_part: f64,
    pub peak_part: f64,
}

/// Half-extent of the sidelobe exclusion window along one axis.
pub fn exclusion_half(len: usize, margin: f64) -> usize {
    // side = margin * len, at least 3 cells, made odd so the peak is centered
    ((margin * len as f64) / 2.0).floor().max(1.0) as usize
}

/// Peak-to-sidelobe ratio plus weighted peak magnitude.
///
/// The sidelobe is every cell outside a cyclic rectangular window centered
/// on the peak, with per-axis half-extent [`exclusion_half`].
pub fn psrm(resp: &ResponseMap, beta: f64, sidelobe_margin: f64) -> Result<PsrmScore> {
    let (rows, cols) = resp.dims();
    let hr = exclusion_half(rows, sidelobe_margin);
    let hc = exclusion_half(cols, sidelobe_margin);
    let (win_rows, win_cols) = (2 * hr + 1, 2 * hc + 1);
    let sidelobe_cells = rows * cols - win_rows.min(rows) * win_cols.min(cols);
    if win_rows > rows || win_cols > cols || sidelobe_cells < 2 {
        return Err(ConsistencyError::SidelobeTooSmall {
            rows,
            cols,
            win_rows,
            win_cols,
            remaining: sidelobe_cells,
        });
    }

    let (pr, pc) = resp.peak_pos();
    let grid = resp.grid();
    let mut sum = 0.0;
    let mut count = 0usize;
    let in_window = |r: usize, c: usize| {
        let dr = signal::wrapped_offset(r as isize, pr as isize, rows).unsigned_abs();
        let dc = signal::wrapped_offset(c as isize, pc as isize, cols).unsigned_abs();
        dr <= hr && dc <= hc
    };
    for r in 0..rows {
        for c in 0..cols {
            if !in_window(r, c) {
                sum += grid.get(r, c);
                count += 1;
            }
        }
    }
    let mean = sum / count as f64;
    let mut var = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            if !in_window(r, c) {
                let d = grid.get(r, c) - mean;
                var += d * d;
            }
        }
    }
    let std = (var / count as f64).sqrt();
    let peak = resp.peak_value();
    let psr_part = if std < FLAT_SIDELOBE_EPS {
        0.0
    } else {
        (peak - mean) / std
    };
    Ok(PsrmScore {
        value: psr_part + beta * peak,
        psr_part,
        peak_part: peak,
    })
}

/// `h = h_min + (PSRM / α)(h_max − h_min)`, clamped to `[h_min, h_max]`.
pub fn dynamic_factor(score: &PsrmScore, h_min: f64, h_max: f64, alpha: f64) -> Result<f64> {
    if !(h_min <= h_max) || !(alpha > 0.0) || !h_min.is_finite() || !h_max.is_finite() {
        return Err(ConsistencyError::InvalidFactorRange { h_min, h_max, alpha });
    }
    let h = h_min + (score.value / alpha) * (h_max - h_min);
    if h.is_nan() {
        return Ok(h_min);
    }
    Ok(h.clamp(h_min, h_max))
}

/// The fixed label scaled by the dynamic factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLabel {
    pub grid: Grid2D,
    pub factor: f64,
}

pub fn dynamic_label(h: f64, l_f: &Grid2D) -> ConstraintLabel {
    ConstraintLabel {
        grid: l_f.scale(h),
        factor: h,
    }
}
