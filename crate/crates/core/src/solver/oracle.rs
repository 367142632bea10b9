//! Dense normal-equation solve of the training objective, for tests only.
//!
//! The circulant operators are assembled by direct index loops in the
//! spatial domain, so this path shares nothing with the spectral solver
//! except the problem data:
//!
//! ```text
//! (Xw)(τ)  = Σ_d Σ_t w_d(t) x_d(t+τ)
//! (A_r v)(τ) = Σ_t v(t) r(t+τ)
//! (XᵀX + S² + γ XᵀA_rᵀA_r X) w = Xᵀy + γ XᵀA_rᵀ l
//! ```

use nalgebra::{DMatrix, DVector};

use super::{Result, SolverError, TrainingProblem};
use crate::signal::{self, Grid2D};

/// Largest number of unknowns (`D·M·N`) the oracle accepts.
pub const ORACLE_LIMIT: usize = 2048;

/// The assembled dense system.
pub struct DenseSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub channels: usize,
    pub dims: (usize, usize),
}

/// `A[τ, t] = v(t + τ)`, the matrix of `u ↦ u ⋆ v` acting on the first
/// argument.
fn correlation_matrix(v: &Grid2D) -> DMatrix<f64> {
    let (h, w) = v.dims();
    let n = h * w;
    DMatrix::from_fn(n, n, |tau, t| {
        let (tu, tv) = (tau / w, tau % w);
        let (u, c) = (t / w, t % w);
        v.get((u + tu) % h, (c + tv) % w)
    })
}

/// Builds the dense normal equations. `include_consistency = false` drops
/// every γ term, which gives the plain spatially regularized problem.
pub fn assemble(p: &TrainingProblem, include_consistency: bool) -> Result<DenseSystem> {
    let (h, w) = p.dims();
    let d = p.channels();
    let n = h * w;
    let unknowns = d * n;
    if unknowns > ORACLE_LIMIT {
        return Err(SolverError::TooLarge {
            unknowns,
            limit: ORACLE_LIMIT,
        });
    }

    let mut x_mat = DMatrix::<f64>::zeros(n, unknowns);
    for (k, xh) in p.x_hat().iter().enumerate() {
        let x = signal::idft2(xh)?;
        x_mat.columns_mut(k * n, n).copy_from(&correlation_matrix(&x));
    }
    let y = signal::idft2(p.y_hat())?;
    let y_vec = DVector::from_column_slice(y.values());

    let mut matrix = x_mat.transpose() * &x_mat;
    let mut rhs = x_mat.transpose() * &y_vec;
    let s2 = p.weight().squared();
    for k in 0..d {
        for i in 0..n {
            matrix[(k * n + i, k * n + i)] += s2.values()[i];
        }
    }

    if include_consistency && p.gamma() > 0.0 {
        if let (Some(rh), Some(lh)) = (p.r_hat(), p.l_hat()) {
            let r = signal::idft2(rh)?;
            let l = signal::idft2(lh)?;
            let ax = correlation_matrix(&r) * &x_mat;
            matrix += (ax.transpose() * &ax) * p.gamma();
            rhs += (ax.transpose() * DVector::from_column_slice(l.values())) * p.gamma();
        }
    }

    Ok(DenseSystem {
        matrix,
        rhs,
        channels: d,
        dims: (h, w),
    })
}

impl DenseSystem {
    pub fn solve(&self) -> Result<Vec<Grid2D>> {
        let sol = match self.matrix.clone().cholesky() {
            Some(ch) => ch.solve(&self.rhs),
            None => self.matrix.clone().lu().solve(&self.rhs).ok_or(SolverError::Singular)?,
        };
        Ok(self.split(sol.as_slice()))
    }

    fn split(&self, v: &[f64]) -> Vec<Grid2D> {
        let (h, w) = self.dims;
        let n = h * w;
        (0..self.channels)
            .map(|k| Grid2D::new(h, w, v[k * n..(k + 1) * n].to_vec()).expect("finite solution"))
            .collect()
    }

    /// `‖A w − b‖_max`.
    pub fn residual(&self, w: &[Grid2D]) -> f64 {
        let flat: Vec<f64> = w.iter().flat_map(|g| g.values().iter().cloned()).collect();
        let r = &self.matrix * DVector::from_vec(flat) - &self.rhs;
        r.amax()
    }
}

/// Exact minimizer of the full objective.
pub fn oracle_solve(p: &TrainingProblem) -> Result<Vec<Grid2D>> {
    assemble(p, true)?.solve()
}

/// Exact minimizer with the consistency term removed.
pub fn oracle_solve_baseline(p: &TrainingProblem) -> Result<Vec<Grid2D>> {
    assemble(p, false)?.solve()
}

/// `max |a − b| / max |b|` over all channels.
pub fn relative_max_error(a: &[Grid2D], b: &[Grid2D]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max);
    let den = b.iter().map(Grid2D::max_abs).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
