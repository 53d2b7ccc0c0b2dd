//! Nonlinear least squares `min ½‖f(x)‖²`: Gauss-Newton and damped
//! Levenberg-Marquardt steps, the iteration driver, finite-difference
//! derivatives, and the two drivers for separable models (reduced variable
//! projection and the joint, unseparated formulation).

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lls::{ensure_finite_vector, SvdSolver};
use crate::separable::{
    eliminate_linear, eval_design_derivatives, eval_design_matrix, full_residual, vp_residual,
    vp_residual_and_jacobian, Dataset, SeparableFit, SeparableModel,
};

type ResidualFn<'a> = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + 'a;
type JacobianFn<'a> = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + 'a;

/// A residual map `f: ℝ^dim → ℝ^m` with optional analytic Jacobian.
pub struct NlsProblem<'a> {
    dim: usize,
    residual: Box<ResidualFn<'a>>,
    jacobian: Option<Box<JacobianFn<'a>>>,
}

impl fmt::Debug for NlsProblem<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlsProblem")
            .field("dim", &self.dim)
            .field("has_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl<'a> NlsProblem<'a> {
    pub fn new<F>(dim: usize, residual: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + 'a,
    {
        Self {
            dim,
            residual: Box::new(residual),
            jacobian: None,
        }
    }

    pub fn with_jacobian<G>(mut self, jacobian: G) -> Self
    where
        G: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + 'a,
    {
        self.jacobian = Some(Box::new(jacobian));
        self
    }

    /// Affine residual `A x − b`, with its (constant) Jacobian.
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Result<NlsProblem<'static>> {
        if a.nrows() != b.len() {
            return Err(Error::dims("affine residual: rows of A must match length of b"));
        }
        let dim = a.ncols();
        let jac = a.clone();
        Ok(NlsProblem::new(dim, move |x: &DVector<f64>| Ok(&a * x - &b))
            .with_jacobian(move |_: &DVector<f64>| Ok(jac.clone())))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        (self.residual)(x)
    }

    /// Analytic Jacobian if present, `None` otherwise.
    pub fn analytic_jacobian(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let jac = self.jacobian.as_ref()?;
        Some(self.check_point(x).and_then(|_| jac(x)))
    }

    /// Analytic Jacobian, falling back to central differences.
    pub fn jacobian(&self, x: &DVector<f64>, fd_step: f64) -> Result<DMatrix<f64>> {
        match self.analytic_jacobian(x) {
            Some(j) => j,
            None => fd_jacobian(self, x, fd_step),
        }
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dims(format!(
                "problem has dimension {}, point has length {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }
}

/// Termination reason of [`solve_nls`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    ConvergedGradient,
    ConvergedStep,
    ConvergedObjective,
    MaxIterations,
    Failed,
}

impl Status {
    pub fn is_converged(self) -> bool {
        matches!(
            self,
            Status::ConvergedGradient | Status::ConvergedStep | Status::ConvergedObjective
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::ConvergedGradient => "converged_gradient",
            Status::ConvergedStep => "converged_step",
            Status::ConvergedObjective => "converged_objective",
            Status::MaxIterations => "max_iterations",
            Status::Failed => "failed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when `‖Jᵀf‖∞` falls to this value.
    pub gradient_tolerance: f64,
    /// Stop when `‖d‖ ≤ step_tolerance · (1 + ‖x‖)`.
    pub step_tolerance: f64,
    /// Stop when an accepted step lowers `F` by at most `objective_tolerance · (1 + F)`.
    pub objective_tolerance: f64,
    pub lm_initial_damping: f64,
    pub lm_damping_growth: f64,
    /// Relative finite-difference step, scaled per coordinate by `1 + |x_l|`.
    pub fd_step: f64,
    /// Give up after this many rejected steps in a row.
    pub max_consecutive_rejections: usize,
    /// Singular value cutoff for every SVD in the solve; `0` selects the default.
    pub sv_tolerance: f64,
    /// Record [`hessian_gap_norm`] at each accepted iterate (costly).
    pub hessian_gap_diagnostic: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            objective_tolerance: 1e-12,
            lm_initial_damping: 1e-3,
            lm_damping_growth: 10.0,
            fd_step: 1e-6,
            max_consecutive_rejections: 40,
            sv_tolerance: 0.0,
            hessian_gap_diagnostic: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("objective_tolerance", self.objective_tolerance),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lm_initial_damping >= 0.0 && self.lm_initial_damping.is_finite()) {
            return Err(Error::invalid("lm_initial_damping must be ≥ 0"));
        }
        if !(self.lm_damping_growth > 1.0 && self.lm_damping_growth.is_finite()) {
            return Err(Error::invalid("lm_damping_growth must be > 1"));
        }
        if !(self.sv_tolerance >= 0.0 && self.sv_tolerance.is_finite()) {
            return Err(Error::invalid("sv_tolerance must be ≥ 0"));
        }
        if self.max_consecutive_rejections == 0 {
            return Err(Error::invalid("max_consecutive_rejections must be ≥ 1"));
        }
        Ok(())
    }
}

/// One attempted step. `objective` is `F` at the current iterate after the
/// accept/reject decision.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub damping: f64,
    pub step_norm: f64,
    pub accepted: bool,
    pub hessian_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: DVector<f64>,
    /// `½‖f(x)‖²`.
    pub objective: f64,
    pub status: Status,
    /// Attempted steps.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub trace: Vec<IterationRecord>,
}

pub(crate) fn half_norm_sq(f: &DVector<f64>) -> f64 {
    0.5 * f.norm_squared()
}

fn check_rows(j: &DMatrix<f64>, f: &DVector<f64>) -> Result<()> {
    if j.nrows() != f.len() {
        return Err(Error::dims(format!(
            "Jacobian has {} rows, residual has length {}",
            j.nrows(),
            f.len()
        )));
    }
    Ok(())
}

/// Gauss-Newton step `d = −J⁺f`, the minimum-norm minimizer of `‖f + J d‖₂`.
pub fn gauss_newton_step(j: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_rows(j, f)?;
    Ok(-SvdSolver::new(j, 0.0)?.solve(f)?)
}

/// Levenberg-Marquardt step solving `(JᵀJ + μI) d = −Jᵀf`. At `μ = 0` this is
/// the pseudoinverse step, so rank-deficient `J` needs no special handling.
pub fn lm_step(j: &DMatrix<f64>, f: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    check_rows(j, f)?;
    Ok(-SvdSolver::new(j, 0.0)?.solve_damped(f, damping)?)
}

fn perturbed(x: &DVector<f64>, l: usize, h: f64) -> DVector<f64> {
    let mut xp = x.clone();
    xp[l] += h;
    xp
}

fn finite_residual(p: &NlsProblem<'_>, x: &DVector<f64>, col: usize) -> Result<DVector<f64>> {
    let f = p.residual(x)?;
    if let Some(row) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation {
            row,
            col,
            params: x.iter().copied().collect(),
        });
    }
    Ok(f)
}

fn fd_steps(x: &DVector<f64>, rel: f64) -> Vec<f64> {
    x.iter().map(|v| rel * (1.0 + v.abs())).collect()
}

/// Central-difference Jacobian; column `l` uses step `fd_step · (1 + |x_l|)`.
pub fn fd_jacobian(p: &NlsProblem<'_>, x: &DVector<f64>, fd_step: f64) -> Result<DMatrix<f64>> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::invalid(format!("fd_step must be positive, got {fd_step}")));
    }
    let m = finite_residual(p, x, 0)?.len();
    let mut jac = DMatrix::zeros(m, p.dim());
    for (l, h) in fd_steps(x, fd_step).into_iter().enumerate() {
        let fp = finite_residual(p, &perturbed(x, l, h), l)?;
        let fm = finite_residual(p, &perturbed(x, l, -h), l)?;
        if fp.len() != m || fm.len() != m {
            return Err(Error::dims("residual length changed between evaluations"));
        }
        jac.set_column(l, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Frobenius norm of `Σᵢ fᵢ(x) ∇²fᵢ(x)`, the part of the Hessian of
/// `½‖f‖²` that Gauss-Newton drops.
///
/// With an analytic Jacobian the second derivatives are central differences
/// of `J`; otherwise second-order differences of `f` with step
/// `1e-3·(1 + |xₗ|)`. The rounding floor of the latter grows like
/// `ε‖f‖²/h²`, which is why the step is larger than the usual `ε^¼`.
pub fn hessian_gap_norm(p: &NlsProblem<'_>, x: &DVector<f64>) -> Result<f64> {
    let f = finite_residual(p, x, 0)?;
    let n = p.dim();
    let mut s = DMatrix::zeros(n, n);
    if p.has_jacobian() {
        for (l, h) in fd_steps(x, 6e-6).into_iter().enumerate() {
            let jp = p.analytic_jacobian(&perturbed(x, l, h)).expect("has jacobian")?;
            let jm = p.analytic_jacobian(&perturbed(x, l, -h)).expect("has jacobian")?;
            check_rows(&jp, &f)?;
            check_rows(&jm, &f)?;
            let col = (jp - jm).transpose() * &f / (2.0 * h);
            s.set_column(l, &col);
        }
    } else {
        let h = fd_steps(x, 1e-3);
        for l in 0..n {
            for k in l..n {
                let second = if l == k {
                    let fp = finite_residual(p, &perturbed(x, l, h[l]), l)?;
                    let fm = finite_residual(p, &perturbed(x, l, -h[l]), l)?;
                    (fp - 2.0 * &f + fm) / (h[l] * h[l])
                } else {
                    let eval = |sl: f64, sk: f64| {
                        let mut xp = x.clone();
                        xp[l] += sl * h[l];
                        xp[k] += sk * h[k];
                        finite_residual(p, &xp, l)
                    };
                    (eval(1.0, 1.0)? - eval(1.0, -1.0)? - eval(-1.0, 1.0)? + eval(-1.0, -1.0)?)
                        / (4.0 * h[l] * h[k])
                };
                let v = second.dot(&f);
                s[(l, k)] = v;
                s[(k, l)] = v;
            }
        }
    }
    let sym = (&s + s.transpose()) * 0.5;
    Ok(sym.norm())
}

/// Damped Levenberg-Marquardt iteration from `x0`.
///
/// A step is accepted only if it strictly lowers `F = ½‖f‖²`; the damping is
/// divided by `lm_damping_growth` on acceptance and multiplied by it on
/// rejection. Non-finite trial residuals count as rejections.
pub fn solve_nls(p: &NlsProblem<'_>, x0: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    if x0.len() != p.dim() {
        return Err(Error::dims(format!(
            "problem has dimension {}, x0 has length {}",
            p.dim(),
            x0.len()
        )));
    }
    ensure_finite_vector(x0, "x0")?;

    let mut x = x0.clone();
    let mut f = match p.residual(&x) {
        Ok(f) if f.iter().all(|v| v.is_finite()) => f,
        Ok(_) | Err(Error::ModelEvaluation { .. }) => return Err(Error::InvalidStart),
        Err(e) => return Err(e),
    };
    if f.is_empty() {
        return Err(Error::invalid("residual must have at least one component"));
    }
    let m = f.len();
    let mut jac = match p.jacobian(&x, cfg.fd_step) {
        Err(Error::ModelEvaluation { .. }) => return Err(Error::InvalidStart),
        other => other?,
    };
    check_rows(&jac, &f)?;
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStart);
    }

    let mut objective = half_norm_sq(&f);
    let mut damping = cfg.lm_initial_damping;
    let mut rejections = 0;
    let mut accepted_steps = 0;
    let mut trace = Vec::new();
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let gradient_norm = (jac.transpose() * &f).amax();
        if gradient_norm <= cfg.gradient_tolerance {
            status = Status::ConvergedGradient;
            break;
        }
        iterations += 1;

        let step = -SvdSolver::new(&jac, cfg.sv_tolerance)?.solve_damped(&f, damping)?;
        let step_norm = step.norm();
        if step_norm <= cfg.step_tolerance * (1.0 + x.norm()) {
            status = Status::ConvergedStep;
            break;
        }

        let candidate = &x + &step;
        let trial = p
            .residual(&candidate)
            .ok()
            .filter(|f_new| f_new.len() == m && f_new.iter().all(|v| v.is_finite()))
            .map(|f_new| (half_norm_sq(&f_new), f_new))
            .filter(|(obj, _)| *obj < objective)
            .and_then(|(obj, f_new)| {
                p.jacobian(&candidate, cfg.fd_step)
                    .ok()
                    .filter(|j| j.shape() == jac.shape() && j.iter().all(|v| v.is_finite()))
                    .map(|j| (obj, f_new, j))
            });

        match trial {
            Some((new_objective, f_new, j_new)) => {
                let decrease = objective - new_objective;
                let previous = objective;
                x = candidate;
                f = f_new;
                jac = j_new;
                objective = new_objective;
                accepted_steps += 1;
                rejections = 0;
                damping /= cfg.lm_damping_growth;
                let hessian_gap = if cfg.hessian_gap_diagnostic {
                    hessian_gap_norm(p, &x).ok()
                } else {
                    None
                };
                trace.push(IterationRecord {
                    iteration: iterations,
                    objective,
                    gradient_norm,
                    damping,
                    step_norm,
                    accepted: true,
                    hessian_gap,
                });
                if decrease <= cfg.objective_tolerance * (1.0 + previous) {
                    status = Status::ConvergedObjective;
                    break;
                }
            }
            None => {
                rejections += 1;
                damping = if damping > 0.0 {
                    damping * cfg.lm_damping_growth
                } else {
                    SolverConfig::default().lm_initial_damping
                };
                trace.push(IterationRecord {
                    iteration: iterations,
                    objective,
                    gradient_norm,
                    damping,
                    step_norm,
                    accepted: false,
                    hessian_gap: None,
                });
                if rejections >= cfg.max_consecutive_rejections {
                    status = Status::Failed;
                    break;
                }
            }
        }
    }

    Ok(SolveResult {
        x,
        objective,
        status,
        iterations,
        accepted_steps,
        trace,
    })
}

fn separable_fit(
    model: &SeparableModel,
    data: &Dataset,
    a: DVector<f64>,
    alpha: Vec<f64>,
    status: Status,
    iterations: usize,
    trace: Vec<IterationRecord>,
) -> Result<SeparableFit> {
    let a: Vec<f64> = a.iter().copied().collect();
    let residual_norm_sq = full_residual(model, &a, &alpha, data)?.norm_squared();
    Ok(SeparableFit {
        alpha,
        a,
        residual_norm_sq,
        status,
        iterations,
        trace,
    })
}

/// Reduced (variable projection) problem over `α`, with the approximate
/// projected Jacobian when the model has analytic derivatives and finite differences otherwise.
pub fn varpro_problem<'a>(model: &'a SeparableModel, data: &'a Dataset, sv_tolerance: f64) -> NlsProblem<'a> {
    let problem = NlsProblem::new(model.k_nonlinear(), move |alpha: &DVector<f64>| {
        vp_residual(model, alpha.as_slice(), data, sv_tolerance)
    });
    if model.has_derivative() {
        problem.with_jacobian(move |alpha: &DVector<f64>| {
            vp_residual_and_jacobian(model, alpha.as_slice(), data, sv_tolerance)
                .map(|r| r.expect("model has derivatives").1)
        })
    } else {
        problem
    }
}

/// Joint problem over the stacked vector `(a, α)` with residual `y − Φ(α)a`.
pub fn joint_problem<'a>(model: &'a SeparableModel, data: &'a Dataset) -> NlsProblem<'a> {
    let n = model.n_linear();
    let problem = NlsProblem::new(n + model.k_nonlinear(), move |x: &DVector<f64>| {
        let (a, alpha) = x.as_slice().split_at(n);
        full_residual(model, a, alpha, data)
    });
    if model.has_derivative() {
        problem.with_jacobian(move |x: &DVector<f64>| {
            let (a, alpha) = x.as_slice().split_at(n);
            let phi = eval_design_matrix(model, alpha, data)?;
            let derivs = eval_design_derivatives(model, alpha, data).expect("model has derivatives")?;
            let a = DVector::from_column_slice(a);
            let mut jac = DMatrix::zeros(data.len(), x.len());
            jac.columns_mut(0, n).copy_from(&(-phi));
            for (l, d) in derivs.iter().enumerate() {
                jac.set_column(n + l, &(-(d * &a)));
            }
            Ok(jac)
        })
    } else {
        problem
    }
}

/// Fit a separable model by minimizing `½‖(I − Φ(α)Φ(α)⁺) y‖²` over `α`, then
/// recovering `a = Φ(α*)⁺ y`.
pub fn solve_separable_varpro(
    model: &SeparableModel,
    data: &Dataset,
    alpha0: &[f64],
    cfg: &SolverConfig,
) -> Result<SeparableFit> {
    cfg.validate()?;
    if alpha0.len() != model.k_nonlinear() {
        return Err(Error::dims(format!(
            "model expects {} nonlinear parameters, alpha0 has {}",
            model.k_nonlinear(),
            alpha0.len()
        )));
    }
    if model.k_nonlinear() == 0 {
        let a = eliminate_linear(model, &[], data, cfg.sv_tolerance)?;
        return separable_fit(model, data, a, Vec::new(), Status::ConvergedGradient, 0, Vec::new());
    }
    let problem = varpro_problem(model, data, cfg.sv_tolerance);
    let result = solve_nls(&problem, &DVector::from_column_slice(alpha0), cfg)?;
    let alpha: Vec<f64> = result.x.iter().copied().collect();
    let a = eliminate_linear(model, &alpha, data, cfg.sv_tolerance)?;
    separable_fit(model, data, a, alpha, result.status, result.iterations, result.trace)
}

/// Fit a separable model jointly over `(a, α)` without eliminating `a`.
pub fn solve_separable_joint(
    model: &SeparableModel,
    data: &Dataset,
    a0: &[f64],
    alpha0: &[f64],
    cfg: &SolverConfig,
) -> Result<SeparableFit> {
    cfg.validate()?;
    if a0.len() != model.n_linear() || alpha0.len() != model.k_nonlinear() {
        return Err(Error::dims(format!(
            "model expects ({}, {}) parameters, got ({}, {})",
            model.n_linear(),
            model.k_nonlinear(),
            a0.len(),
            alpha0.len()
        )));
    }
    let n = model.n_linear();
    let problem = joint_problem(model, data);
    let x0 = DVector::from_iterator(n + alpha0.len(), a0.iter().chain(alpha0).copied());
    let result = solve_nls(&problem, &x0, cfg)?;
    let a = result.x.rows(0, n).into_owned();
    let alpha = result.x.as_slice()[n..].to_vec();
    separable_fit(model, data, a, alpha, result.status, result.iterations, result.trace)
}
