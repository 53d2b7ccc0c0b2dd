//! Dense linear least squares on top of the singular value decomposition.
//!
//! Everything here goes through [`SvdSolver`], which factors a matrix once and
//! then serves minimum-norm solves, the Moore-Penrose pseudoinverse and the
//! orthogonal projector onto the column space. A singular value counts towards
//! the numerical rank only when it is strictly larger than the cutoff.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numerical rank of a factored matrix together with the cutoff that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub numerical_rank: usize,
    pub sv_tolerance: f64,
    /// Singular values in non-increasing order.
    pub singular_values: Vec<f64>,
}

/// `max(m, n) · ε · σ_max`, the usual rank cutoff for an `m × n` matrix.
pub fn default_sv_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

pub(crate) fn ensure_finite_matrix(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
        // nalgebra storage is column-major
        let (row, col) = (pos % a.nrows(), pos / a.nrows());
        return Err(Error::invalid(format!(
            "{what} has a non-finite entry at ({row}, {col})"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has a non-finite entry at {i}")));
    }
    Ok(())
}

/// A linear least-squares problem `min ‖A x − b‖₂`.
#[derive(Debug, Clone)]
pub struct LinearLsProblem {
    design: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl LinearLsProblem {
    pub fn new(design: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::invalid("design matrix must be at least 1×1"));
        }
        if design.nrows() != rhs.len() {
            return Err(Error::dims(format!(
                "design has {} rows but rhs has length {}",
                design.nrows(),
                rhs.len()
            )));
        }
        ensure_finite_matrix(&design, "design matrix")?;
        ensure_finite_vector(&rhs, "rhs")?;
        Ok(Self { design, rhs })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }
}

/// Minimum-norm least-squares solution `A⁺ b` with the default rank cutoff.
pub fn solve_lls(p: &LinearLsProblem) -> Result<DVector<f64>> {
    solve_lls_with_tolerance(p, 0.0)
}

/// As [`solve_lls`] with an explicit singular value cutoff (`0` selects the default).
pub fn solve_lls_with_tolerance(p: &LinearLsProblem, sv_tolerance: f64) -> Result<DVector<f64>> {
    let svd = SvdSolver::new(&p.design, sv_tolerance)?;
    svd.solve(&p.rhs)
}

/// Moore-Penrose pseudoinverse (`n × m`) and the rank information used to build it.
pub fn pseudoinverse(a: &DMatrix<f64>, sv_tolerance: f64) -> Result<(DMatrix<f64>, RankInfo)> {
    let svd = SvdSolver::new(a, sv_tolerance)?;
    Ok((svd.pseudoinverse(), svd.rank_info()))
}

/// Orthogonal projector `A A⁺` onto the column space of `A` (`m × m`).
pub fn column_space_projector(a: &DMatrix<f64>, sv_tolerance: f64) -> Result<DMatrix<f64>> {
    Ok(SvdSolver::new(a, sv_tolerance)?.projector())
}

/// Thin SVD by one-sided Jacobi rotations, singular values descending.
///
/// Columns of a working copy of `A` (or `Aᵀ` when wide) are rotated pairwise
/// until all are mutually orthogonal to working precision; their norms are
/// the singular values and the accumulated rotations form `V`.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, sigma, v_t) = jacobi_svd(&a.transpose());
        return (v_t.transpose(), sigma, u.transpose());
    }
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let (xp, xq) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * xp - s * xq;
                        m[(r, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(a.nrows(), n);
    let mut v_t = DMatrix::zeros(n, n);
    let mut sigma = DVector::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = norms[j];
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
        v_t.set_row(k, &v.column(j).transpose());
    }
    (u, sigma, v_t)
}

/// Thin SVD `A = U Σ Vᵀ` with a fixed rank cutoff.
#[derive(Debug, Clone)]
pub struct SvdSolver {
    rows: usize,
    cols: usize,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    sigma: DVector<f64>,
    tolerance: f64,
}

impl SvdSolver {
    /// Factor `a`. `sv_tolerance = 0` picks [`default_sv_tolerance`]; negative
    /// or non-finite tolerances are rejected.
    pub fn new(a: &DMatrix<f64>, sv_tolerance: f64) -> Result<Self> {
        if !sv_tolerance.is_finite() || sv_tolerance < 0.0 {
            return Err(Error::invalid(format!(
                "singular value tolerance must be finite and ≥ 0, got {sv_tolerance}"
            )));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::invalid("matrix must be at least 1×1"));
        }
        ensure_finite_matrix(a, "matrix")?;

        let (u, sigma, v_t) = jacobi_svd(a);
        let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
        let tolerance = if sv_tolerance == 0.0 {
            default_sv_tolerance(a.nrows(), a.ncols(), sigma_max)
        } else {
            sv_tolerance
        };
        Ok(Self {
            rows: a.nrows(),
            cols: a.ncols(),
            u,
            v_t,
            sigma,
            tolerance,
        })
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sigma.len()).filter(move |&i| self.sigma[i] > self.tolerance)
    }

    pub fn rank(&self) -> usize {
        self.kept().count()
    }

    pub fn rank_info(&self) -> RankInfo {
        let mut singular_values: Vec<f64> = self.sigma.iter().copied().collect();
        singular_values.sort_by(|a, b| b.total_cmp(a));
        RankInfo {
            numerical_rank: self.rank(),
            sv_tolerance: self.tolerance,
            singular_values,
        }
    }

    /// Minimum-norm minimizer of `‖A x − b‖₂`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rhs(b)?;
        let mut x = DVector::zeros(self.cols);
        for i in self.kept() {
            let coeff = self.u.column(i).dot(b) / self.sigma[i];
            x.axpy(coeff, &self.v_t.row(i).transpose(), 1.0);
        }
        Ok(x)
    }

    /// Solution of `(AᵀA + μ I) x = Aᵀ b`. With `μ = 0` singular values below
    /// the cutoff are dropped, which gives the minimum-norm solution.
    pub fn solve_damped(&self, b: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
        if damping == 0.0 {
            return self.solve(b);
        }
        if !damping.is_finite() || damping < 0.0 {
            return Err(Error::invalid(format!("damping must be finite and ≥ 0, got {damping}")));
        }
        self.check_rhs(b)?;
        let mut x = DVector::zeros(self.cols);
        for (i, &s) in self.sigma.iter().enumerate() {
            let coeff = self.u.column(i).dot(b) * s / (s * s + damping);
            x.axpy(coeff, &self.v_t.row(i).transpose(), 1.0);
        }
        Ok(x)
    }

    pub fn pseudoinverse(&self) -> DMatrix<f64> {
        let mut pinv = DMatrix::zeros(self.cols, self.rows);
        for i in self.kept() {
            let v = self.v_t.row(i).transpose();
            let u = self.u.column(i);
            pinv.ger(1.0 / self.sigma[i], &v, &u, 1.0);
        }
        pinv
    }

    /// `U_r U_rᵀ`, exactly symmetric by construction.
    pub fn projector(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.rows, self.rows);
        for i in self.kept() {
            let u = self.u.column(i);
            p.ger(1.0, &u, &u, 1.0);
        }
        p
    }

    /// `(I − A A⁺) v`, the component of `v` orthogonal to the column space.
    pub fn project_orthogonal(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rhs(v)?;
        let mut out = v.clone();
        for i in self.kept() {
            let u = self.u.column(i);
            out.axpy(-u.dot(v), &u, 1.0);
        }
        Ok(out)
    }

    fn check_rhs(&self, b: &DVector<f64>) -> Result<()> {
        if b.len() != self.rows {
            return Err(Error::dims(format!(
                "matrix has {} rows but vector has length {}",
                self.rows,
                b.len()
            )));
        }
        ensure_finite_vector(b, "vector")
    }
}
