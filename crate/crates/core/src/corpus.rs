//! Test problems and oracles.
//!
//! Noise comes from a fixed 64-bit LCG and the Box-Muller transform so that a
//! `(spec, seed)` pair produces the same dataset bit for bit on any platform
//! with IEEE-754 doubles and a correctly rounded `sqrt`/`ln`/`cos`:
//!
//! ```text
//! state₀      = seed
//! stateₖ₊₁    = stateₖ · 6364136223846793005 + 1442695040888963407   (mod 2⁶⁴)
//! uniform     = (stateₖ₊₁ >> 11) · 2⁻⁵³                              ∈ [0, 1)
//! normal      = √(−2 ln(1 − u₁)) · cos(2π u₂)                        (one draw per pair)
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::minimax::{primal_value, MinimaxProblem};
use crate::nls::{solve_separable_joint, solve_separable_varpro, SolverConfig, Status};
use crate::separable::{eliminate_linear, Dataset, SeparableModel};

/// Knuth's MMIX linear congruential generator.
#[derive(Debug, Clone)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes two uniforms.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// `φⱼ(α, t) = exp(−αⱼ t)`, one rate per term.
pub fn exp_sum_model(terms: usize) -> Result<SeparableModel> {
    Ok(SeparableModel::new("exp_sum", terms, terms, |alpha: &[f64], t| {
        alpha.iter().map(|a| (-a * t).exp()).collect()
    })?
    .with_derivative(move |alpha: &[f64], t| {
        let mut d = DMatrix::zeros(terms, terms);
        for (j, a) in alpha.iter().enumerate() {
            d[(j, j)] = -t * (-a * t).exp();
        }
        d
    }))
}

/// `φⱼ(α, t) = exp(−(t − cⱼ)² / (2 wⱼ²))` with `α = (c₁, w₁, c₂, w₂, …)`.
pub fn gaussian_peaks_model(peaks: usize) -> Result<SeparableModel> {
    Ok(SeparableModel::new("gaussian_peaks", peaks, 2 * peaks, |alpha: &[f64], t| {
        alpha
            .chunks_exact(2)
            .map(|cw| (-(t - cw[0]).powi(2) / (2.0 * cw[1] * cw[1])).exp())
            .collect()
    })?
    .with_derivative(move |alpha: &[f64], t| {
        let mut d = DMatrix::zeros(peaks, 2 * peaks);
        for (j, cw) in alpha.chunks_exact(2).enumerate() {
            let (c, w) = (cw[0], cw[1]);
            let u = t - c;
            let phi = (-u * u / (2.0 * w * w)).exp();
            d[(j, 2 * j)] = phi * u / (w * w);
            d[(j, 2 * j + 1)] = phi * u * u / (w * w * w);
        }
        d
    }))
}

/// Monomials `1, t, …, t^degree`; purely linear.
pub fn polynomial_model(degree: usize) -> Result<SeparableModel> {
    Ok(
        SeparableModel::new("polynomial", degree + 1, 0, move |_: &[f64], t| {
            (0..=degree).map(|j| t.powi(j as i32)).collect()
        })?
        .with_derivative(move |_: &[f64], _| DMatrix::zeros(degree + 1, 0)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    ExpSum,
    GaussianPeaks,
    ConstantMinimax,
    LineMinimax,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::ExpSum => "exp_sum",
            Family::GaussianPeaks => "gaussian_peaks",
            Family::ConstantMinimax => "constant_minimax",
            Family::LineMinimax => "line_minimax",
        }
    }

    pub fn is_minimax(self) -> bool {
        matches!(self, Family::ConstantMinimax | Family::LineMinimax)
    }

    /// Model for `linear_terms` linear coefficients, checking the family's
    /// parameter shape.
    pub fn model(self, linear_terms: usize, nonlinear_len: usize) -> Result<SeparableModel> {
        let (model, expected_nonlinear) = match self {
            Family::ExpSum => (exp_sum_model(linear_terms)?, linear_terms),
            Family::GaussianPeaks => (gaussian_peaks_model(linear_terms)?, 2 * linear_terms),
            Family::ConstantMinimax if linear_terms == 1 => (polynomial_model(0)?, 0),
            Family::LineMinimax if linear_terms == 2 => (polynomial_model(1)?, 0),
            _ => {
                return Err(Error::invalid(format!(
                    "{} does not take {linear_terms} linear parameters",
                    self.as_str()
                )))
            }
        };
        if nonlinear_len != expected_nonlinear {
            return Err(Error::invalid(format!(
                "{} with {linear_terms} terms needs {expected_nonlinear} nonlinear parameters, got {nonlinear_len}",
                self.as_str()
            )));
        }
        Ok(model)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_sum" => Ok(Family::ExpSum),
            "gaussian_peaks" => Ok(Family::GaussianPeaks),
            "constant_minimax" => Ok(Family::ConstantMinimax),
            "line_minimax" => Ok(Family::LineMinimax),
            other => Err(Error::invalid(format!("unknown problem family '{other}'"))),
        }
    }
}

/// A generated test problem: true parameters, abscissae, noise level, seed,
/// and the nonlinear starting point handed to the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub id: String,
    pub family: Family,
    /// `a` for separable families, `x` for minimax families.
    pub true_linear: Vec<f64>,
    /// `α` for separable families; empty for minimax families.
    pub true_nonlinear: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub start_nonlinear: Vec<f64>,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(Error::invalid("t_grid must be non-empty"));
        }
        if self.t_grid.iter().any(|t| !t.is_finite()) || self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("t_grid must be finite and strictly increasing"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be ≥ 0"));
        }
        if self.start_nonlinear.len() != self.true_nonlinear.len() {
            return Err(Error::invalid("start and true nonlinear parameters differ in length"));
        }
        self.model().map(|_| ())
    }

    pub fn model(&self) -> Result<SeparableModel> {
        self.family.model(self.true_linear.len(), self.true_nonlinear.len())
    }

    pub fn is_noise_free(&self) -> bool {
        self.noise_sigma == 0.0
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct GeneratedProblem {
    pub spec: CorpusSpec,
    pub model: SeparableModel,
    pub data: Dataset,
}

impl GeneratedProblem {
    /// The minimax view `Φ(y)x − y_obs` of the same data.
    pub fn minimax_problem(&self) -> MinimaxProblem {
        MinimaxProblem::from_separable(self.model.clone(), self.data.clone())
    }
}

/// `yᵢ = Σⱼ aⱼ φⱼ(α, tᵢ) + σ·zᵢ` with `zᵢ` drawn from [`Lcg64`] in grid order.
pub fn generate(spec: &CorpusSpec) -> Result<GeneratedProblem> {
    spec.validate()?;
    let model = spec.model()?;
    let mut rng = Lcg64::new(spec.seed);
    let mut y = Vec::with_capacity(spec.t_grid.len());
    for &t in &spec.t_grid {
        let phi = model.basis(&spec.true_nonlinear, t)?;
        let clean: f64 = phi.iter().zip(&spec.true_linear).map(|(p, a)| p * a).sum();
        let noise = if spec.noise_sigma > 0.0 {
            spec.noise_sigma * rng.next_normal()
        } else {
            0.0
        };
        y.push(clean + noise);
    }
    Ok(GeneratedProblem {
        spec: spec.clone(),
        model,
        data: Dataset::new(spec.t_grid.clone(), y)?,
    })
}

/// Exact minimax constant fit: `((max + min)/2, (max − min)/2)`.
pub fn midrange_oracle(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("midrange of an empty set"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(((max + min) / 2.0, (max - min) / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: f64,
}

fn grid_point(bounds: &[(f64, f64)], index: &[usize], steps: usize) -> Vec<f64> {
    bounds
        .iter()
        .zip(index)
        .map(|(&(lo, hi), &i)| {
            if steps == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect()
}

/// Dense grid search over `(x, y)` in `bounds` (one interval per coordinate,
/// linear ones first), followed by two passes on a grid ten times narrower
/// centred at the incumbent. Points where the model is not finite are skipped.
pub fn brute_force_minimax(p: &MinimaxProblem, bounds: &[(f64, f64)], grid_steps: usize) -> Result<BruteForceResult> {
    let dims = p.n1() + p.n2();
    if dims > 3 {
        return Err(Error::invalid(format!("brute force limited to 3 parameters, problem has {dims}")));
    }
    if bounds.len() != dims {
        return Err(Error::dims(format!("{} bounds for {dims} parameters", bounds.len())));
    }
    if grid_steps == 0 {
        return Err(Error::invalid("grid must have at least one step per dimension"));
    }
    if bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi) {
        return Err(Error::invalid("bounds must be finite with lo ≤ hi"));
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut window = bounds.to_vec();
    for _pass in 0..3 {
        let mut index = vec![0usize; dims];
        loop {
            let point = grid_point(&window, &index, grid_steps);
            let (x, y) = point.split_at(p.n1());
            if let Ok(v) = primal_value(p, x, y) {
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    best = Some((point, v));
                }
            }
            // odometer increment
            let mut d = 0;
            while d < dims {
                index[d] += 1;
                if index[d] < grid_steps {
                    break;
                }
                index[d] = 0;
                d += 1;
            }
            if d == dims {
                break;
            }
        }
        let Some((centre, _)) = &best else {
            return Err(Error::invalid("model is not finite anywhere on the grid"));
        };
        window = window
            .iter()
            .zip(centre)
            .map(|(&(lo, hi), &c)| {
                let half = (hi - lo) / 20.0;
                (c - half, c + half)
            })
            .collect();
    }
    let (point, value) = best.expect("checked above");
    let (x, y) = point.split_at(p.n1());
    Ok(BruteForceResult {
        x: x.to_vec(),
        y: y.to_vec(),
        value,
    })
}

/// One row of a [`ComparisonReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub id: String,
    pub family: Family,
    pub noise_free: bool,
    /// `‖y − Φ(α)a‖²` at the reduced-problem solution.
    pub vp_objective: f64,
    pub joint_objective: f64,
    pub vp_iterations: usize,
    pub joint_iterations: usize,
    pub vp_status: Status,
    pub joint_status: Status,
    /// Set on noise-free rows only: `|vp − joint| ≤ 1e-6`.
    pub objectives_agree: Option<bool>,
    /// Error that prevented either solve; statuses are `failed` then.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn all_converged(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.vp_status.is_converged() && r.joint_status.is_converged())
    }

    pub fn noise_free_agree(&self) -> bool {
        self.rows.iter().all(|r| r.objectives_agree != Some(false))
    }
}

pub const AGREEMENT_TOLERANCE: f64 = 1e-6;

fn compare_one(spec: &CorpusSpec, cfg: &SolverConfig) -> Result<ComparisonRow> {
    let problem = generate(spec)?;
    let (model, data) = (&problem.model, &problem.data);
    let alpha0 = &spec.start_nonlinear;
    let vp = solve_separable_varpro(model, data, alpha0, cfg)?;
    let a0: Vec<f64> = eliminate_linear(model, alpha0, data, cfg.sv_tolerance)?
        .iter()
        .copied()
        .collect();
    let joint = solve_separable_joint(model, data, &a0, alpha0, cfg)?;
    let noise_free = spec.is_noise_free();
    Ok(ComparisonRow {
        id: spec.id.clone(),
        family: spec.family,
        noise_free,
        vp_objective: vp.residual_norm_sq,
        joint_objective: joint.residual_norm_sq,
        vp_iterations: vp.iterations,
        joint_iterations: joint.iterations,
        vp_status: vp.status,
        joint_status: joint.status,
        objectives_agree: noise_free
            .then(|| (vp.residual_norm_sq - joint.residual_norm_sq).abs() <= AGREEMENT_TOLERANCE),
        error: None,
    })
}

/// Solve every problem with both drivers from matched starts
/// (`a₀ = Φ(α₀)⁺y`). Failures are recorded per row; row order follows input.
pub fn run_comparison(corpus: &[CorpusSpec], cfg: &SolverConfig) -> ComparisonReport {
    let rows = corpus
        .iter()
        .map(|spec| {
            compare_one(spec, cfg).unwrap_or_else(|e| ComparisonRow {
                id: spec.id.clone(),
                family: spec.family,
                noise_free: spec.is_noise_free(),
                vp_objective: f64::NAN,
                joint_objective: f64::NAN,
                vp_iterations: 0,
                joint_iterations: 0,
                vp_status: Status::Failed,
                joint_status: Status::Failed,
                objectives_agree: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    ComparisonReport { rows }
}

fn grid(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + step * i as f64).collect()
}

#[allow(clippy::too_many_arguments)]
fn spec(
    id: &str,
    family: Family,
    true_linear: &[f64],
    true_nonlinear: &[f64],
    t_grid: Vec<f64>,
    noise_sigma: f64,
    seed: u64,
    start_nonlinear: &[f64],
) -> CorpusSpec {
    CorpusSpec {
        id: id.to_string(),
        family,
        true_linear: true_linear.to_vec(),
        true_nonlinear: true_nonlinear.to_vec(),
        t_grid,
        noise_sigma,
        seed,
        start_nonlinear: start_nonlinear.to_vec(),
    }
}

/// Bundled separable problems: seven noise-free instances (exponential sums
/// and Gaussian peaks) and three seeded noisy ones.
pub fn default_corpus() -> Vec<CorpusSpec> {
    use Family::*;
    vec![
        spec("exp1", ExpSum, &[2.0], &[1.0], grid(0.0, 0.5, 10), 0.0, 0, &[0.5]),
        spec("exp2", ExpSum, &[1.0, 5.0], &[1.0, 3.0], grid(0.0, 1.0, 10), 0.0, 0, &[0.5, 4.0]),
        spec("exp2_mixed_sign", ExpSum, &[3.0, -1.0], &[0.5, 2.0], grid(0.0, 0.25, 25), 0.0, 0, &[0.3, 1.5]),
        spec("exp2_slow", ExpSum, &[0.5, 1.5], &[0.1, 0.8], grid(0.0, 0.5, 30), 0.0, 0, &[0.2, 1.2]),
        spec("gauss1", GaussianPeaks, &[2.0], &[5.0, 1.0], grid(0.0, 0.25, 41), 0.0, 0, &[4.5, 1.3]),
        spec("gauss2", GaussianPeaks, &[1.0, 0.6], &[3.0, 0.8, 7.0, 1.2], grid(0.0, 0.2, 51), 0.0, 0, &[2.7, 1.0, 7.3, 1.0]),
        spec("gauss2_overlap", GaussianPeaks, &[1.5, 1.0], &[4.0, 1.0, 6.0, 1.5], grid(0.0, 0.25, 41), 0.0, 0, &[3.8, 1.2, 6.5, 1.2]),
        spec("exp2_noisy", ExpSum, &[1.0, 5.0], &[1.0, 3.0], grid(0.0, 0.5, 20), 0.01, 7, &[0.5, 4.0]),
        spec("gauss1_noisy", GaussianPeaks, &[2.0], &[5.0, 1.0], grid(0.0, 0.25, 41), 0.02, 11, &[4.5, 1.3]),
        spec("exp1_noisy", ExpSum, &[2.0], &[1.0], grid(0.0, 0.5, 10), 0.05, 3, &[0.5]),
    ]
}
