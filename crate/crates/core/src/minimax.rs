//! Nonlinear infinity-norm fitting `min_{x,y} ‖A(y)x − b(y)‖∞`.
//!
//! The squared max is relaxed to a max over the probability simplex of
//! `Σ λᵢ ρᵢ²`, and the dual `max_λ min_{x,y} Σ λᵢ ρᵢ²` is attacked with a
//! subgradient method: each outer iteration solves a weighted separable
//! least-squares subproblem for fixed `λ` (with `x` eliminated by weighted
//! linear least squares), then moves `λ` along the squared residuals with
//! step `1/(k + α₀)` and maps it back onto the simplex. By default the
//! residuals are first divided by the current largest one (see
//! [`ResidualScaling`]), which keeps the update independent of data units.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lls::SvdSolver;
use crate::nls::{solve_nls, NlsProblem, SolverConfig, Status};
use crate::separable::{eval_design_matrix, Dataset, SeparableModel};

type MatrixFn = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync;
type RhsFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;

/// Residual map `ρ(x, y) = A(y) x − b(y)` with `A(y)` of shape `m × n1`.
#[derive(Clone)]
pub struct MinimaxProblem {
    n1: usize,
    n2: usize,
    m: usize,
    matrix: Arc<MatrixFn>,
    rhs: Arc<RhsFn>,
}

impl fmt::Debug for MinimaxProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinimaxProblem")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("m", &self.m)
            .finish()
    }
}

impl MinimaxProblem {
    pub fn new<A, B>(n1: usize, n2: usize, m: usize, matrix: A, rhs: B) -> Result<Self>
    where
        A: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        if n1 == 0 || m == 0 {
            return Err(Error::invalid("minimax problem needs n1 ≥ 1 and m ≥ 1"));
        }
        Ok(Self {
            n1,
            n2,
            m,
            matrix: Arc::new(move |y: &[f64]| Ok(matrix(y))),
            rhs: Arc::new(rhs),
        })
    }

    /// `A(y) = Φ(y)` on the dataset abscissae and `b = y_obs`, so that the
    /// residual is `Φ(y)x − y_obs`.
    pub fn from_separable(model: SeparableModel, data: Dataset) -> Self {
        let (n1, n2, m) = (model.n_linear(), model.k_nonlinear(), data.len());
        let rhs = data.y_vector();
        let matrix = move |y: &[f64]| eval_design_matrix(&model, y, &data);
        Self {
            n1,
            n2,
            m,
            matrix: Arc::new(matrix),
            rhs: Arc::new(move |_: &[f64]| rhs.clone()),
        }
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `m > n1 + n2`; other shapes are accepted but usually interpolate.
    pub fn is_overdetermined(&self) -> bool {
        self.m > self.n1 + self.n2
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n2 {
            return Err(Error::dims(format!("expected {} nonlinear parameters, got {}", self.n2, y.len())));
        }
        Ok(())
    }

    pub fn design_matrix(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_y(y)?;
        let a = (self.matrix)(y)?;
        if a.shape() != (self.m, self.n1) {
            return Err(Error::dims(format!(
                "A(y) has shape {:?}, expected {:?}",
                a.shape(),
                (self.m, self.n1)
            )));
        }
        if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation {
                row: pos % self.m,
                col: pos / self.m,
                params: y.to_vec(),
            });
        }
        Ok(a)
    }

    pub fn rhs(&self, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        let b = (self.rhs)(y);
        if b.len() != self.m {
            return Err(Error::dims(format!("b(y) has length {}, expected {}", b.len(), self.m)));
        }
        if let Some(row) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation {
                row,
                col: 0,
                params: y.to_vec(),
            });
        }
        Ok(b)
    }

    /// `ρ(x, y) = A(y) x − b(y)`.
    pub fn residuals(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n1 {
            return Err(Error::dims(format!("expected {} linear parameters, got {}", self.n1, x.len())));
        }
        Ok(self.design_matrix(y)? * DVector::from_column_slice(x) - self.rhs(y)?)
    }
}

/// `maxᵢ |ρᵢ(x, y)|`.
pub fn primal_value(p: &MinimaxProblem, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(p.residuals(x, y)?.amax())
}

/// `max_{λ ∈ simplex} Σ λᵢ rᵢ²` in closed form: the maximum of a linear
/// function over the simplex sits at a vertex, so it equals `maxᵢ rᵢ²`.
pub fn simplex_max_identity(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).fold(0.0, f64::max)
}

const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Multipliers on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierVector(Vec<f64>);

impl MultiplierVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::invalid("multiplier vector must be non-empty"));
        }
        if lambda.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("multipliers must be finite and non-negative"));
        }
        let sum: f64 = lambda.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("multipliers must sum to 1, sum is {sum}")));
        }
        Ok(Self(lambda))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("multiplier vector must be non-empty"));
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    /// Vertex `eᵢ` of the simplex.
    pub fn vertex(m: usize, i: usize) -> Result<Self> {
        if i >= m {
            return Err(Error::invalid(format!("vertex index {i} out of range for m = {m}")));
        }
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// How the raw update `λ + α r²` is mapped back onto the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiplierUpdate {
    /// Euclidean projection onto the simplex. Mass drains from small residuals,
    /// so `λ` concentrates on the active set of the minimax fit.
    #[default]
    Project,
    /// Divide by the sum. Keeps `λ` positive everywhere; its fixed point is
    /// `λ ∝ r²`, which is generally not the minimax solution.
    Renormalize,
}

impl MultiplierUpdate {
    pub fn as_str(self) -> &'static str {
        match self {
            MultiplierUpdate::Project => "project",
            MultiplierUpdate::Renormalize => "renormalize",
        }
    }
}

impl std::str::FromStr for MultiplierUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "project" => Ok(MultiplierUpdate::Project),
            "renormalize" => Ok(MultiplierUpdate::Renormalize),
            other => Err(Error::invalid(format!("unknown multiplier update '{other}'"))),
        }
    }
}

/// Euclidean projection of `v` onto `{λ ≥ 0, Σλ = 1}` (sort-and-threshold).
pub fn project_onto_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // remove the rounding drift so the sum is 1 to machine precision
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Step size `1/(k + α₀)` of outer iteration `k`.
pub fn step_size(k: usize, alpha0: f64) -> f64 {
    1.0 / (k as f64 + alpha0)
}

/// Subgradient step `λ + α rᵢ²` with `α = 1/(k + α₀)`, mapped back onto the
/// simplex by `rule`.
pub fn subgradient_update(
    lambda: &MultiplierVector,
    residuals: &[f64],
    k: usize,
    alpha0: f64,
    rule: MultiplierUpdate,
) -> Result<MultiplierVector> {
    if k == 0 {
        return Err(Error::invalid("outer iteration count starts at 1"));
    }
    if !(alpha0 > 0.0 && alpha0.is_finite()) {
        return Err(Error::invalid(format!("alpha0 must be positive, got {alpha0}")));
    }
    if residuals.len() != lambda.len() {
        return Err(Error::dims(format!(
            "{} residuals for {} multipliers",
            residuals.len(),
            lambda.len()
        )));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("residuals must be finite"));
    }
    let alpha = step_size(k, alpha0);
    let raw: Vec<f64> = lambda
        .as_slice()
        .iter()
        .zip(residuals)
        .map(|(l, r)| l + alpha * r * r)
        .collect();
    let updated = match rule {
        MultiplierUpdate::Renormalize => {
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        }
        MultiplierUpdate::Project => project_onto_simplex(&raw),
    };
    MultiplierVector::new(updated)
}

/// Local solution of the weighted subproblem `min Σ λᵢ ρᵢ(x, y)²`.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weighted_objective: f64,
    pub status: Status,
    pub iterations: usize,
}

fn weighted(lambda: &MultiplierVector) -> Vec<f64> {
    lambda.as_slice().iter().map(|l| l.sqrt()).collect()
}

fn scale_rows(a: &mut DMatrix<f64>, w: &[f64]) {
    for (i, wi) in w.iter().enumerate() {
        a.row_mut(i).scale_mut(*wi);
    }
}

fn weighted_system(p: &MinimaxProblem, w: &[f64], y: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut a = p.design_matrix(y)?;
    scale_rows(&mut a, w);
    let b = p.rhs(y)?.component_mul(&DVector::from_column_slice(w));
    Ok((a, b))
}

/// Solve `min_{x,y} Σ λᵢ ρᵢ(x,y)²` from `y0`: rows are scaled by `√λᵢ`, `x`
/// is eliminated by weighted linear least squares, and the reduced residual
/// over `y` is minimized with [`solve_nls`] (finite-difference Jacobian).
///
/// `x0` is accepted for symmetry with the outer loop but unused, since `x`
/// is always recomputed from `y`.
pub fn weighted_subproblem(
    p: &MinimaxProblem,
    lambda: &MultiplierVector,
    _x0: &[f64],
    y0: &[f64],
    inner: &SolverConfig,
) -> Result<Subproblem> {
    if lambda.len() != p.m() {
        return Err(Error::dims(format!("{} multipliers for {} residuals", lambda.len(), p.m())));
    }
    p.check_y(y0)?;
    let w = weighted(lambda);
    let tol = inner.sv_tolerance;

    let (y, status, iterations) = if p.n2() == 0 {
        (Vec::new(), Status::ConvergedGradient, 0)
    } else {
        let reduced = NlsProblem::new(p.n2(), |y: &DVector<f64>| {
            let (a, b) = weighted_system(p, &w, y.as_slice())?;
            SvdSolver::new(&a, tol)?.project_orthogonal(&b)
        });
        let res = solve_nls(&reduced, &DVector::from_column_slice(y0), inner)?;
        if res.status == Status::Failed {
            return Err(Error::SubproblemFailed {
                iteration: 0,
                status: res.status,
                trace: Vec::new(),
            });
        }
        (res.x.iter().copied().collect(), res.status, res.iterations)
    };

    let (a, b) = weighted_system(p, &w, &y)?;
    let x: Vec<f64> = SvdSolver::new(&a, tol)?.solve(&b)?.iter().copied().collect();
    let rho = p.residuals(&x, &y)?;
    let weighted_objective = rho
        .iter()
        .zip(lambda.as_slice())
        .map(|(r, l)| l * r * r)
        .sum();
    Ok(Subproblem {
        x,
        y,
        weighted_objective,
        status,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualConfig {
    /// Offset `α₀` in the step size `1/(k + α₀)`.
    pub alpha0: f64,
    pub max_outer_iterations: usize,
    /// Stop once `|F_{k+1} − F_k| ≤ tol · (1 + F_k)` holds for
    /// `window_length` consecutive outer iterations, `F` being the weighted
    /// subproblem objective.
    pub objective_window_tolerance: f64,
    pub window_length: usize,
    pub update: MultiplierUpdate,
    /// With [`ResidualScaling::Normalized`] the window test also runs on the
    /// objective divided by the first primal value squared, so neither the
    /// update nor the stopping rule depends on the units of `b`.
    pub residual_scaling: ResidualScaling,
    /// Squared size of the largest scaled residual under
    /// [`ResidualScaling::Normalized`].
    pub residual_gain: f64,
    /// Starting multipliers; uniform `1/m` when absent.
    pub initial_lambda: Option<MultiplierVector>,
    pub inner: SolverConfig,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            max_outer_iterations: 200,
            objective_window_tolerance: 1e-6,
            window_length: 3,
            update: MultiplierUpdate::default(),
            residual_scaling: ResidualScaling::default(),
            residual_gain: 10.0,
            initial_lambda: None,
            inner: SolverConfig::default(),
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::invalid("alpha0 must be positive"));
        }
        if !(self.objective_window_tolerance > 0.0 && self.objective_window_tolerance.is_finite()) {
            return Err(Error::invalid("objective_window_tolerance must be positive"));
        }
        if !(self.residual_gain > 0.0 && self.residual_gain.is_finite()) {
            return Err(Error::invalid("residual_gain must be positive"));
        }
        if self.max_outer_iterations == 0 || self.window_length == 0 {
            return Err(Error::invalid("max_outer_iterations and window_length must be ≥ 1"));
        }
        self.inner.validate()
    }
}

/// One outer iteration: the multipliers used for the subproblem, what it
/// produced, and the step size applied to the following multiplier update.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    pub step_size: f64,
    pub primal_value: f64,
    pub weighted_objective: f64,
    pub lambda: Vec<f64>,
    pub inner_status: Status,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MinimaxResult {
    /// Best-primal iterate over all outer iterations.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub primal_value: f64,
    /// Running maximum of the weighted subproblem objectives. A lower bound on
    /// the squared minimax value only when subproblems are solved globally;
    /// with local solves it is heuristic.
    pub dual_value_sq: f64,
    /// Multipliers after the last update.
    pub lambda: MultiplierVector,
    pub status: Status,
    pub outer_iterations: usize,
    pub trace: Vec<OuterRecord>,
}

/// How residuals are scaled before they enter the multiplier update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualScaling {
    /// Raw residuals, exactly `λ + α r²`.
    None,
    /// Residuals divided by the current primal value `max |rᵢ|`, then
    /// multiplied by `√residual_gain`. The update no longer depends on the
    /// units of `b`.
    #[default]
    Normalized,
}

impl ResidualScaling {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Normalized => "normalized",
        }
    }
}

impl std::str::FromStr for ResidualScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "normalized" => Ok(Self::Normalized),
            other => Err(Error::invalid(format!("unknown residual scaling {other:?}"))),
        }
    }
}

/// Outer loop of the Lagrangian-dual method.
///
/// Returns [`Status::ConvergedObjective`] when the objective window closes and
/// [`Status::MaxIterations`] otherwise.
pub fn solve_minimax(p: &MinimaxProblem, x0: &[f64], y0: &[f64], cfg: &DualConfig) -> Result<MinimaxResult> {
    cfg.validate()?;
    if x0.len() != p.n1() {
        return Err(Error::dims(format!("expected {} linear parameters, got {}", p.n1(), x0.len())));
    }
    p.check_y(y0)?;
    let mut lambda = match &cfg.initial_lambda {
        Some(l) if l.len() != p.m() => {
            return Err(Error::dims(format!("{} initial multipliers for {} residuals", l.len(), p.m())))
        }
        Some(l) => l.clone(),
        None => MultiplierVector::uniform(p.m())?,
    };

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut trace: Vec<OuterRecord> = Vec::new();
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut dual_value_sq = 0.0_f64;
    let mut previous_objective: Option<f64> = None;
    let mut window = 0;
    let mut status = Status::MaxIterations;
    let mut scale: Option<f64> = None;

    for k in 1..=cfg.max_outer_iterations {
        let sub = match weighted_subproblem(p, &lambda, &x, &y, &cfg.inner) {
            Ok(sub) => sub,
            Err(Error::SubproblemFailed { status, .. }) => {
                return Err(Error::SubproblemFailed {
                    iteration: k,
                    status,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        let residuals = p.residuals(&sub.x, &sub.y)?;
        let primal = residuals.amax();
        let step = step_size(k, cfg.alpha0);
        trace.push(OuterRecord {
            iteration: k,
            step_size: step,
            primal_value: primal,
            weighted_objective: sub.weighted_objective,
            lambda: lambda.as_slice().to_vec(),
            inner_status: sub.status,
            inner_iterations: sub.iterations,
        });
        dual_value_sq = dual_value_sq.max(sub.weighted_objective);
        if best.as_ref().is_none_or(|(_, _, v)| primal < *v) {
            best = Some((sub.x.clone(), sub.y.clone(), primal));
        }

        let scale = *scale.get_or_insert(match cfg.residual_scaling {
            ResidualScaling::Normalized if primal > 0.0 => primal,
            _ => 1.0,
        });
        let update_scale = match cfg.residual_scaling {
            ResidualScaling::None => 1.0,
            ResidualScaling::Normalized if primal > 0.0 => primal / cfg.residual_gain.sqrt(),
            ResidualScaling::Normalized => 1.0,
        };
        let objective = sub.weighted_objective / (scale * scale);
        // A (numerically) zero weighted objective with a nonzero primal value means the
        // multipliers sit on residuals the subproblem can fit exactly; that is
        // not a stationary point of the dual.
        let degenerate = sub.weighted_objective <= 1e-12 * primal * primal && primal > 0.0;
        if let Some(prev) = previous_objective {
            if !degenerate && (objective - prev).abs() <= cfg.objective_window_tolerance * (1.0 + prev) {
                window += 1;
            } else {
                window = 0;
            }
        }
        previous_objective = Some(objective);
        x = sub.x;
        y = sub.y;
        let scaled: Vec<f64> = residuals.iter().map(|r| r / update_scale).collect();
        lambda = subgradient_update(&lambda, &scaled, k, cfg.alpha0, cfg.update)?;
        if window >= cfg.window_length {
            status = Status::ConvergedObjective;
            break;
        }
    }

    let (x, y, primal_value) = best.expect("at least one outer iteration");
    Ok(MinimaxResult {
        x,
        y,
        primal_value,
        dual_value_sq,
        lambda,
        status,
        outer_iterations: trace.len(),
        trace,
    })
}
