//! Separable models `y ≈ Φ(α) a`: design matrix evaluation, elimination of
//! the linear coefficients and the variable-projection residual.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lls::SvdSolver;
use crate::nls::{IterationRecord, Status};

/// Observation pairs `(tᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::dims(format!(
                "t has {} entries but y has {}",
                t.len(),
                y.len()
            )));
        }
        if t.is_empty() {
            return Err(Error::invalid("dataset must contain at least one observation"));
        }
        if let Some(i) = t.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "dataset value {} is not finite",
                i % t.len()
            )));
        }
        Ok(Self { t, y })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }
}

type BasisFn = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;
type BasisDerivFn = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;

/// Basis functions `φⱼ(α, t)`, `j = 1..n`, depending on `k` nonlinear
/// parameters, with optional analytic derivatives `∂φⱼ/∂α_l` (an `n × k` matrix).
///
/// The evaluators must be pure. Cloning is cheap; the closures are shared.
#[derive(Clone)]
pub struct SeparableModel {
    name: String,
    n_linear: usize,
    k_nonlinear: usize,
    basis: Arc<BasisFn>,
    derivative: Option<Arc<BasisDerivFn>>,
}

impl fmt::Debug for SeparableModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableModel")
            .field("name", &self.name)
            .field("n_linear", &self.n_linear)
            .field("k_nonlinear", &self.k_nonlinear)
            .field("has_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl SeparableModel {
    pub fn new<F>(name: impl Into<String>, n_linear: usize, k_nonlinear: usize, basis: F) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        if n_linear == 0 {
            return Err(Error::invalid("a separable model needs at least one basis function"));
        }
        Ok(Self {
            name: name.into(),
            n_linear,
            k_nonlinear,
            basis: Arc::new(basis),
            derivative: None,
        })
    }

    /// Attach analytic derivatives; `deriv(α, t)` returns the `n × k` matrix `∂φⱼ/∂α_l`.
    pub fn with_derivative<G>(mut self, deriv: G) -> Self
    where
        G: Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(deriv));
        self
    }

    /// Drop the analytic derivatives, forcing finite differences downstream.
    pub fn without_derivative(mut self) -> Self {
        self.derivative = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_linear(&self) -> usize {
        self.n_linear
    }

    pub fn k_nonlinear(&self) -> usize {
        self.k_nonlinear
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn basis(&self, alpha: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        let phi = (self.basis)(alpha, t);
        if phi.len() != self.n_linear {
            return Err(Error::dims(format!(
                "basis returned {} values, model declares {}",
                phi.len(),
                self.n_linear
            )));
        }
        Ok(phi)
    }

    /// `∂φⱼ/∂α_l` at one point, or `None` without analytic derivatives.
    pub fn basis_derivative(&self, alpha: &[f64], t: f64) -> Option<Result<DMatrix<f64>>> {
        let deriv = self.derivative.as_ref()?;
        Some(self.check_alpha(alpha).and_then(|_| {
            let d = deriv(alpha, t);
            if d.shape() != (self.n_linear, self.k_nonlinear) {
                return Err(Error::dims(format!(
                    "basis derivative has shape {:?}, expected {:?}",
                    d.shape(),
                    (self.n_linear, self.k_nonlinear)
                )));
            }
            Ok(d)
        }))
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.k_nonlinear {
            return Err(Error::dims(format!(
                "model expects {} nonlinear parameters, got {}",
                self.k_nonlinear,
                alpha.len()
            )));
        }
        Ok(())
    }
}

/// Result of fitting a separable model.
#[derive(Debug, Clone)]
pub struct SeparableFit {
    pub alpha: Vec<f64>,
    pub a: Vec<f64>,
    /// `‖y − Φ(α) a‖²` (not halved).
    pub residual_norm_sq: f64,
    pub status: Status,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
}

/// `Φ(α)` with entry `(i, j) = φⱼ(α, tᵢ)`.
pub fn eval_design_matrix(model: &SeparableModel, alpha: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    let m = data.len();
    let n = model.n_linear();
    let mut phi = DMatrix::zeros(m, n);
    for (i, &t) in data.t().iter().enumerate() {
        let row = model.basis(alpha, t)?;
        for (j, v) in row.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::ModelEvaluation {
                    row: i,
                    col: j,
                    params: alpha.to_vec(),
                });
            }
            phi[(i, j)] = v;
        }
    }
    Ok(phi)
}

/// `∂Φ/∂α_l` for every `l`, or `None` when the model has no analytic derivatives.
pub fn eval_design_derivatives(
    model: &SeparableModel,
    alpha: &[f64],
    data: &Dataset,
) -> Option<Result<Vec<DMatrix<f64>>>> {
    model.derivative.as_ref()?;
    let (m, n, k) = (data.len(), model.n_linear(), model.k_nonlinear());
    let build = || {
        let mut out = vec![DMatrix::zeros(m, n); k];
        for (i, &t) in data.t().iter().enumerate() {
            let d = model
                .basis_derivative(alpha, t)
                .expect("derivative present")?;
            for j in 0..n {
                for (l, dl) in out.iter_mut().enumerate() {
                    let v = d[(j, l)];
                    if !v.is_finite() {
                        return Err(Error::ModelEvaluation {
                            row: i,
                            col: j,
                            params: alpha.to_vec(),
                        });
                    }
                    dl[(i, j)] = v;
                }
            }
        }
        Ok(out)
    };
    Some(build())
}

/// Linear coefficients `a = Φ(α)⁺ y` (minimum-norm least squares).
pub fn eliminate_linear(
    model: &SeparableModel,
    alpha: &[f64],
    data: &Dataset,
    sv_tolerance: f64,
) -> Result<DVector<f64>> {
    let phi = eval_design_matrix(model, alpha, data)?;
    SvdSolver::new(&phi, sv_tolerance)?.solve(&data.y_vector())
}

/// Variable-projection residual `(I − Φ(α)Φ(α)⁺) y`.
pub fn vp_residual(
    model: &SeparableModel,
    alpha: &[f64],
    data: &Dataset,
    sv_tolerance: f64,
) -> Result<DVector<f64>> {
    let phi = eval_design_matrix(model, alpha, data)?;
    SvdSolver::new(&phi, sv_tolerance)?.project_orthogonal(&data.y_vector())
}

/// Full residual `rᵢ = yᵢ − Σⱼ aⱼ φⱼ(α, tᵢ)`.
pub fn full_residual(model: &SeparableModel, a: &[f64], alpha: &[f64], data: &Dataset) -> Result<DVector<f64>> {
    if a.len() != model.n_linear() {
        return Err(Error::dims(format!(
            "model has {} linear coefficients, got {}",
            model.n_linear(),
            a.len()
        )));
    }
    let phi = eval_design_matrix(model, alpha, data)?;
    Ok(data.y_vector() - phi * DVector::from_column_slice(a))
}

/// Residual of the reduced problem together with the usual approximation of
/// its Jacobian, column `l` = `−(I − ΦΦ⁺)(∂Φ/∂α_l) Φ⁺y`.
///
/// The dropped term lies in the column space of `Φ`, orthogonal to the
/// residual, so `Jᵀr` is the exact gradient of `½‖r‖²`.
pub(crate) fn vp_residual_and_jacobian(
    model: &SeparableModel,
    alpha: &[f64],
    data: &Dataset,
    sv_tolerance: f64,
) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    let derivs = match eval_design_derivatives(model, alpha, data) {
        None => return Ok(None),
        Some(d) => d?,
    };
    let phi = eval_design_matrix(model, alpha, data)?;
    let svd = SvdSolver::new(&phi, sv_tolerance)?;
    let y = data.y_vector();
    let a = svd.solve(&y)?;
    let residual = svd.project_orthogonal(&y)?;
    let mut jac = DMatrix::zeros(data.len(), model.k_nonlinear());
    for (l, d_phi) in derivs.iter().enumerate() {
        let col = -svd.project_orthogonal(&(d_phi * &a))?;
        jac.set_column(l, &col);
    }
    Ok(Some((residual, jac)))
}
