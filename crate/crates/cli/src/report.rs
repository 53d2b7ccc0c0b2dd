//! Report documents.
//!
//! JSON field order is the declaration order of the structs below. Every real
//! number is written with 17 significant digits (`d.dddddddddddddddde±x`), so
//! it parses back to the same `f64`; non-finite values become `null`.
//!
//! Fit report, `schema_version` "1":
//!
//! | field | content |
//! |---|---|
//! | `schema_version` | `"1"` |
//! | `tool`, `version` | `"snls"` and the crate version |
//! | `command` | subcommand name |
//! | `timestamp` | RFC 3339 UTC, `null` under `--no-timestamp` |
//! | `input` | `rows` and `sha256` of the data file |
//! | `model` | `family`, `terms` |
//! | `solution` | `a`, `alpha` (least squares) or `x`, `y` (minimax) |
//! | `objective` | `residual_norm_sq`, or `primal_value` and `dual_bound_sq` |
//! | `status`, `converged`, `iterations` | solver outcome |
//! | `error` | message when the solver stopped on an error, else `null` |
//! | `trace` | per-iteration records, present only with `--trace` |

use serde::ser::Serializer;
use serde::Serialize;

pub const SCHEMA_VERSION: &str = "1";
pub const TOOL: &str = "snls";

/// A real serialized with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let text = format!("{:.16e}", self.0);
        let n: serde_json::Number = text.parse().map_err(serde::ser::Error::custom)?;
        n.serialize(s)
    }
}

pub fn reals(v: &[f64]) -> Vec<Real> {
    v.iter().copied().map(Real).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub schema_version: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub timestamp: Option<String>,
}

impl Header {
    pub fn new(command: &str, timestamp: bool) -> Self {
        Header {
            schema_version: SCHEMA_VERSION,
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            timestamp: timestamp
                .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Input {
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub family: String,
    pub terms: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Solution {
    Separable { a: Vec<Real>, alpha: Vec<Real> },
    Minimax { x: Vec<Real>, y: Vec<Real> },
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Objective {
    LeastSquares { residual_norm_sq: Real },
    Minimax { primal_value: Real, dual_bound_sq: Real },
}

#[derive(Debug, Clone, Serialize)]
pub struct LsTraceRow {
    pub iteration: usize,
    pub objective: Real,
    pub gradient_norm: Real,
    pub damping: Real,
    pub step_norm: Real,
    pub accepted: bool,
    pub hessian_gap: Option<Real>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualTraceRow {
    pub iteration: usize,
    pub step_size: Real,
    pub primal_value: Real,
    pub weighted_objective: Real,
    pub lambda: Vec<Real>,
    pub inner_status: &'static str,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Trace {
    LeastSquares(Vec<LsTraceRow>),
    Minimax(Vec<DualTraceRow>),
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    #[serde(flatten)]
    pub header: Header,
    pub input: Input,
    pub model: ModelInfo,
    pub solution: Solution,
    pub objective: Objective,
    pub status: &'static str,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub id: String,
    pub family: &'static str,
    pub noise_free: bool,
    pub vp_objective: Real,
    pub joint_objective: Real,
    pub vp_iterations: usize,
    pub joint_iterations: usize,
    pub vp_status: &'static str,
    pub joint_status: &'static str,
    pub objectives_agree: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    #[serde(flatten)]
    pub header: Header,
    pub agreement_tolerance: Real,
    pub rows: Vec<CompareRow>,
    pub all_converged: bool,
    pub noise_free_agree: bool,
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

fn csv_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

/// `field,value` lines; vector entries are indexed as `a[0]`, `a[1]`, ...
pub fn fit_csv(r: &FitReport) -> String {
    let mut lines = vec![
        "field,value".to_string(),
        format!("schema_version,{}", r.header.schema_version),
        format!("tool,{}", r.header.tool),
        format!("version,{}", r.header.version),
        format!("command,{}", r.header.command),
        format!("timestamp,{}", r.header.timestamp.as_deref().unwrap_or("")),
        format!("rows,{}", r.input.rows),
        format!("sha256,{}", r.input.sha256),
        format!("family,{}", r.model.family),
        format!("terms,{}", r.model.terms),
    ];
    let (first, second) = match &r.solution {
        Solution::Separable { a, alpha } => (("a", a), ("alpha", alpha)),
        Solution::Minimax { x, y } => (("x", x), ("y", y)),
    };
    for (name, values) in [first, second] {
        for (i, v) in values.iter().enumerate() {
            lines.push(format!("{name}[{i}],{}", csv_real(v.0)));
        }
    }
    match &r.objective {
        Objective::LeastSquares { residual_norm_sq } => {
            lines.push(format!("residual_norm_sq,{}", csv_real(residual_norm_sq.0)))
        }
        Objective::Minimax {
            primal_value,
            dual_bound_sq,
        } => {
            lines.push(format!("primal_value,{}", csv_real(primal_value.0)));
            lines.push(format!("dual_bound_sq,{}", csv_real(dual_bound_sq.0)));
        }
    }
    lines.push(format!("status,{}", r.status));
    lines.push(format!("converged,{}", r.converged));
    lines.push(format!("iterations,{}", r.iterations));
    if let Some(e) = &r.error {
        lines.push(format!("error,\"{}\"", e.replace('"', "\"\"")));
    }
    lines.join("\n") + "\n"
}

pub fn compare_csv(r: &CompareReport) -> String {
    let mut out = String::from(
        "id,family,noise_free,vp_objective,joint_objective,vp_iterations,joint_iterations,vp_status,joint_status,objectives_agree\n",
    );
    for row in &r.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.id,
            row.family,
            row.noise_free,
            csv_real(row.vp_objective.0),
            csv_real(row.joint_objective.0),
            row.vp_iterations,
            row.joint_iterations,
            row.vp_status,
            row.joint_status,
            row.objectives_agree.map_or(String::new(), |b| b.to_string()),
        ));
    }
    out
}
