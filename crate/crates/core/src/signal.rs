//! Dense 2-D real and complex grids, discrete Fourier transforms and the
//! cyclic operations built on them.
//!
//! Transform convention: the forward transform is unnormalized and the
//! inverse carries the `1/(MN)` factor. Every closed form elsewhere in the
//! crate (per-bin filter solves, Parseval-based objectives) is written against
//! this convention, so the `sqrt(N)` scale factors usually attached to the
//! unitary DFT never appear explicitly.
//!
//! Correlation conjugates its first argument:
//! `correlate(a, b)(τ) = Σ_t a(t)·b(t+τ)`, i.e. `idft2(conj(dft2(a)) ⊙ dft2(b))`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Largest tolerated imaginary residue (relative to the spectrum's peak
/// magnitude scaled by `1/(MN)`) when collapsing an inverse transform to a
/// real grid.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("grid {height}x{width} needs {expected} values, got {actual}")]
    LengthMismatch {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value at cell ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("inverse transform left an imaginary residue of {residue:e}")]
    ImaginaryResidue { residue: f64 },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("center ({row}, {col}) lies outside a {height}x{width} grid")]
    CenterOutside {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Row-major dense real grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SignalError::EmptyGrid { height, width });
        }
        if values.len() != height * width {
            return Err(SignalError::LengthMismatch {
                height,
                width,
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite {
                row: i / width,
                col: i % width,
            });
        }
        Ok(Self { height, width, values })
    }

    /// # Panics
    /// Panics on a zero dimension.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// # Panics
    /// Panics on a zero dimension.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// # Panics
    /// Panics on a zero dimension.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Cell lookup with both indices wrapped cyclically.
    pub fn get_wrapped(&self, row: isize, col: isize) -> f64 {
        let r = row.rem_euclid(self.height as isize) as usize;
        let c = col.rem_euclid(self.width as isize) as usize;
        self.values[r * self.width + c]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cell-wise combination of two equally sized grids.
    pub fn zip_with(&self, other: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum value and its position; ties resolve to the first cell in
    /// row-major order.
    pub fn argmax(&self) -> (f64, (usize, usize)) {
        let mut best = self.values[0];
        let mut at = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                at = i;
            }
        }
        (best, (at / self.width, at % self.width))
    }

    pub fn max_abs_diff(&self, other: &Grid2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Promote to a complex spectrum-shaped container without transforming.
    pub fn to_complex(&self) -> Vec<Complex64> {
        self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
    }
}

impl Index<(usize, usize)> for Grid2D {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.values[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for Grid2D {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.values[r * self.width + c]
    }
}

/// Row-major dense complex grid holding a 2-D spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SignalError::EmptyGrid { height, width });
        }
        if values.len() != height * width {
            return Err(SignalError::LengthMismatch {
                height,
                width,
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(Self { height, width, values })
    }

    /// # Panics
    /// Panics on a zero dimension.
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            values: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    pub fn conj(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn zip_with(&self, other: &Spectrum2D, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_abs_diff(&self, other: &Spectrum2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Largest deviation from the symmetry `S(-k) = conj(S(k))` that every
    /// spectrum of a real grid satisfies.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let (h, w) = self.dims();
        let mut worst: f64 = 0.0;
        for r in 0..h {
            for c in 0..w {
                let mirrored = self.get((h - r) % h, (w - c) % w);
                worst = worst.max((self.get(r, c) - mirrored.conj()).norm());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Spectrum2D {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.values[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for Spectrum2D {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.values[r * self.width + c]
    }
}

/// Integer cyclic shift, reduced modulo the grid size on application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShiftVector {
    pub du: isize,
    pub dv: isize,
}

impl ShiftVector {
    pub const fn new(du: isize, dv: isize) -> Self {
        Self { du, dv }
    }

    pub fn reduced(self, height: usize, width: usize) -> (usize, usize) {
        (
            self.du.rem_euclid(height as isize) as usize,
            self.dv.rem_euclid(width as isize) as usize,
        )
    }

    pub fn neg(self) -> Self {
        Self::new(-self.du, -self.dv)
    }
}

fn ensure_same_dims(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(SignalError::DimensionMismatch { left, right });
    }
    Ok(())
}

// Plans are cached per thread; `FftPlanner` itself is not `Sync`.
thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(PlanCache::default());
}

struct PlanCache {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

impl Default for PlanCache {
    fn default() -> Self {
        Self {
            planner: FftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
        }
    }
}

impl PlanCache {
    fn plan(&mut self, len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        let (map, planner) = if inverse {
            (&mut self.inverse, &mut self.planner)
        } else {
            (&mut self.forward, &mut self.planner)
        };
        map.entry(len)
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    }
}

/// In-place unnormalized 2-D transform of a row-major buffer.
fn fft2_in_place(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let (row_fft, col_fft) = PLANS.with(|cache| {
        let mut cache = cache.borrow_mut();
        (cache.plan(width, inverse), cache.plan(height, inverse))
    });

    let scratch_len = row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

    if width > 1 {
        row_fft.process_with_scratch(data, &mut scratch);
    }
    if height > 1 {
        let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
        transpose::transpose(data, &mut t, width, height);
        col_fft.process_with_scratch(&mut t, &mut scratch);
        transpose::transpose(&t, data, height, width);
    }
}

/// Forward transform, unnormalized.
pub fn dft2(grid: &Grid2D) -> Spectrum2D {
    let (h, w) = grid.dims();
    let mut data = grid.to_complex();
    fft2_in_place(&mut data, h, w, false);
    Spectrum2D {
        height: h,
        width: w,
        values: data,
    }
}

/// Forward transform of an already complex buffer (used for interleaved
/// two-for-one real transforms and tests).
pub fn dft2_complex(spectrum: &Spectrum2D) -> Spectrum2D {
    let mut out = spectrum.clone();
    fft2_in_place(&mut out.values, out.height, out.width, false);
    out
}

/// Inverse transform including the `1/(MN)` factor, without discarding the
/// imaginary part.
pub fn idft2_complex(spectrum: &Spectrum2D) -> Spectrum2D {
    let (h, w) = spectrum.dims();
    let mut data = spectrum.values.clone();
    fft2_in_place(&mut data, h, w, true);
    let norm = 1.0 / (h * w) as f64;
    for v in &mut data {
        *v *= norm;
    }
    Spectrum2D {
        height: h,
        width: w,
        values: data,
    }
}

/// Inverse transform to a real grid.
///
/// The input must be (numerically) conjugate-symmetric: the imaginary residue
/// of the result is checked against [`IMAG_RESIDUE_TOL`] relative to the
/// largest real magnitude before it is dropped.
pub fn idft2(spectrum: &Spectrum2D) -> Result<Grid2D> {
    let full = idft2_complex(spectrum);
    let mut scale: f64 = 1.0;
    let mut residue: f64 = 0.0;
    for v in &full.values {
        scale = scale.max(v.re.abs());
        residue = residue.max(v.im.abs());
    }
    if !(residue <= IMAG_RESIDUE_TOL * scale) {
        return Err(SignalError::ImaginaryResidue { residue });
    }
    let values: Vec<f64> = full.values.iter().map(|v| v.re).collect();
    Grid2D::new(full.height, full.width, values)
}

/// `out(τ) = Σ_t a(t)·b(t+τ)` with cyclic indices.
pub fn cyclic_correlate(a: &Grid2D, b: &Grid2D) -> Result<Grid2D> {
    ensure_same_dims(a.dims(), b.dims())?;
    let fa = dft2(a);
    let fb = dft2(b);
    let product = fa.zip_with(&fb, |x, y| x.conj() * y)?;
    idft2(&product)
}

/// Output cell `(i, j)` takes input cell `((i − du) mod M, (j − dv) mod N)`.
pub fn circ_shift(grid: &Grid2D, shift: ShiftVector) -> Grid2D {
    let (h, w) = grid.dims();
    let (du, dv) = shift.reduced(h, w);
    let mut values = vec![0.0; h * w];
    for r in 0..h {
        let src_r = (r + h - du) % h;
        for c in 0..w {
            let src_c = (c + w - dv) % w;
            values[r * w + c] = grid.values[src_r * w + src_c];
        }
    }
    Grid2D {
        height: h,
        width: w,
        values,
    }
}

/// Grid center used for all re-centering: `(⌊M/2⌋, ⌊N/2⌋)`.
pub fn grid_center(height: usize, width: usize) -> (usize, usize) {
    (height / 2, width / 2)
}

/// Signed cyclic offset of `index` from `origin` in `[-len/2, len/2)`.
pub fn wrapped_offset(index: isize, origin: isize, len: usize) -> isize {
    let len = len as isize;
    let d = (index - origin).rem_euclid(len);
    if d >= (len + 1) / 2 {
        d - len
    } else {
        d
    }
}

/// Gaussian with unit peak at `center`, using cyclic distances.
pub fn gaussian_label(height: usize, width: usize, sigma: f64, center: (usize, usize)) -> Result<Grid2D> {
    if height == 0 || width == 0 {
        return Err(SignalError::EmptyGrid { height, width });
    }
    if !(sigma > 0.0) {
        return Err(SignalError::NonPositiveSigma(sigma));
    }
    if center.0 >= height || center.1 >= width {
        return Err(SignalError::CenterOutside {
            row: center.0,
            col: center.1,
            height,
            width,
        });
    }
    let denom = 2.0 * sigma * sigma;
    Ok(Grid2D::from_fn(height, width, |r, c| {
        let dr = wrapped_offset(r as isize, center.0 as isize, height) as f64;
        let dc = wrapped_offset(c as isize, center.1 as isize, width) as f64;
        (-(dr * dr + dc * dc) / denom).exp()
    }))
}

fn hann_1d(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect()
}

/// Separable raised-cosine window; zero on the border rows/columns.
pub fn hann_window(height: usize, width: usize) -> Grid2D {
    let wr = hann_1d(height);
    let wc = hann_1d(width);
    Grid2D::from_fn(height, width, |r, c| wr[r] * wc[c])
}
