use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use snls_core::corpus::{default_corpus, generate, run_comparison, CorpusSpec, AGREEMENT_TOLERANCE};
use snls_core::minimax::{primal_value, solve_minimax, DualConfig, MinimaxProblem, MinimaxResult};
use snls_core::nls::{solve_separable_joint, solve_separable_varpro, SolverConfig, Status};
use snls_core::separable::{eliminate_linear, full_residual, Dataset, SeparableFit};

use crate::config::{ConfigFile, Format, ModelSpec};
use crate::dataset::{parse_dataset, write_dataset, InputDigest};
use crate::error::CliError;
use crate::report::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    FitVarpro,
    FitJoint,
    FitMinimax,
    Compare,
    GenData,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::FitVarpro => "fit-varpro",
            Command::FitJoint => "fit-joint",
            Command::FitMinimax => "fit-minimax",
            Command::Compare => "compare",
            Command::GenData => "gen-data",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        [
            Command::FitVarpro,
            Command::FitJoint,
            Command::FitMinimax,
            Command::Compare,
            Command::GenData,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| CliError::config(format!("unknown command {s:?}")))
    }
}

/// One invocation: command, files and everything read from the config.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub data_path: Option<PathBuf>,
    /// Standard output when absent.
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub model: Option<ModelSpec>,
    pub solver: SolverConfig,
    pub dual: DualConfig,
    pub gen: Option<CorpusSpec>,
    pub corpus: Vec<CorpusSpec>,
    pub trace: bool,
    pub timestamp: bool,
}

/// Command-line inputs before the config file is read.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config_path: Option<PathBuf>,
    pub data_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub trace: bool,
    pub no_timestamp: bool,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(command: Command, inv: &Invocation) -> Result<Self, CliError> {
        let file = match &inv.config_path {
            Some(p) => ConfigFile::read(p)?,
            None => ConfigFile::default(),
        };
        if inv.seed.is_some() && command != Command::GenData {
            return Err(CliError::config("--seed only applies to gen-data"));
        }
        let needs_data = matches!(command, Command::FitVarpro | Command::FitJoint | Command::FitMinimax);
        match (&inv.data_path, needs_data) {
            (None, true) => return Err(CliError::config(format!("{command} needs --data"))),
            (Some(_), false) => return Err(CliError::config(format!("{command} takes no --data"))),
            (Some(p), true) if !p.is_file() => {
                return Err(CliError::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "data file not found"),
                ))
            }
            _ => {}
        }
        Ok(RunConfig {
            command,
            data_path: inv.data_path.clone(),
            output_path: inv.output_path.clone(),
            format: file.format()?,
            model: if needs_data { Some(file.model()?) } else { None },
            solver: file.solver()?,
            dual: file.dual()?,
            gen: if command == Command::GenData {
                Some(file.gen_spec(inv.seed)?)
            } else {
                None
            },
            corpus: if command == Command::Compare {
                file.corpus()?.unwrap_or_else(default_corpus)
            } else {
                Vec::new()
            },
            trace: inv.trace,
            timestamp: !inv.no_timestamp,
        })
    }
}

/// Rendered output plus whether the run counts as converged.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub text: String,
    pub converged: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            1
        }
    }
}

/// Execute a loaded configuration and return what should be written.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cfg.command {
        Command::FitVarpro | Command::FitJoint | Command::FitMinimax => {
            let path = cfg.data_path.as_deref().expect("checked at load");
            let (data, digest) = parse_dataset(path)?;
            let model = cfg.model.as_ref().expect("checked at load");
            let report = fit(cfg, model, &data, digest)?;
            let text = match cfg.format {
                Format::Json => to_json(&report),
                Format::Csv => fit_csv(&report),
            };
            Ok(Outcome {
                text,
                converged: report.converged,
            })
        }
        Command::Compare => {
            let report = compare(cfg);
            let converged = report.all_converged && report.noise_free_agree;
            let text = match cfg.format {
                Format::Json => to_json(&report),
                Format::Csv => compare_csv(&report),
            };
            Ok(Outcome { text, converged })
        }
        Command::GenData => {
            let problem = generate(cfg.gen.as_ref().expect("checked at load"))?;
            Ok(Outcome {
                text: write_dataset(&problem.data),
                converged: true,
            })
        }
    }
}

/// Load, execute and write. Configuration and input errors come back as `Err`
/// before anything is written.
pub fn run(command: Command, inv: &Invocation) -> Result<i32, CliError> {
    let cfg = RunConfig::load(command, inv)?;
    let outcome = execute(&cfg)?;
    write_output(cfg.output_path.as_deref(), &outcome.text)?;
    Ok(outcome.exit_code())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn fit(cfg: &RunConfig, spec: &ModelSpec, data: &Dataset, digest: InputDigest) -> Result<FitReport, CliError> {
    let model = spec.family.model(spec.terms, spec.alpha0.len())?;
    let header = Header::new(cfg.command.as_str(), cfg.timestamp);
    let input = Input {
        rows: digest.rows,
        sha256: digest.sha256,
    };
    let model_info = ModelInfo {
        family: spec.family.as_str().to_string(),
        terms: spec.terms,
    };

    if cfg.command == Command::FitMinimax {
        let problem = MinimaxProblem::from_separable(model, data.clone());
        let x0 = spec.a0.clone().unwrap_or_else(|| vec![0.0; spec.terms]);
        let (solution, objective, status, iterations, error, trace) =
            match solve_minimax(&problem, &x0, &spec.alpha0, &cfg.dual) {
                Ok(r) => minimax_parts(&problem, &r, cfg.trace)?,
                Err(e) => {
                    let v = primal_value(&problem, &x0, &spec.alpha0).unwrap_or(f64::NAN);
                    (
                        Solution::Minimax {
                            x: reals(&x0),
                            y: reals(&spec.alpha0),
                        },
                        Objective::Minimax {
                            primal_value: Real(v),
                            dual_bound_sq: Real(f64::NAN),
                        },
                        Status::Failed,
                        0,
                        Some(e.to_string()),
                        cfg.trace.then(|| Trace::Minimax(Vec::new())),
                    )
                }
            };
        return Ok(FitReport {
            header,
            input,
            model: model_info,
            solution,
            objective,
            status: status.as_str(),
            converged: status.is_converged(),
            iterations,
            error,
            trace,
        });
    }

    let result = if cfg.command == Command::FitVarpro {
        solve_separable_varpro(&model, data, &spec.alpha0, &cfg.solver)
    } else {
        let a0 = match &spec.a0 {
            Some(a0) => a0.clone(),
            None => eliminate_linear(&model, &spec.alpha0, data, cfg.solver.sv_tolerance)?
                .iter()
                .copied()
                .collect(),
        };
        solve_separable_joint(&model, data, &a0, &spec.alpha0, &cfg.solver)
    };
    let (fit, error) = match result {
        Ok(fit) => (fit, None),
        Err(e) => (
            SeparableFit {
                alpha: spec.alpha0.clone(),
                a: spec.a0.clone().unwrap_or_else(|| vec![0.0; spec.terms]),
                residual_norm_sq: f64::NAN,
                status: Status::Failed,
                iterations: 0,
                trace: Vec::new(),
            },
            Some(e.to_string()),
        ),
    };
    // recomputed from the reported parameters so the report is self-consistent
    let objective = full_residual(&model, &fit.a, &fit.alpha, data)
        .map(|r| r.norm_squared())
        .unwrap_or(f64::NAN);
    Ok(FitReport {
        header,
        input,
        model: model_info,
        solution: Solution::Separable {
            a: reals(&fit.a),
            alpha: reals(&fit.alpha),
        },
        objective: Objective::LeastSquares {
            residual_norm_sq: Real(objective),
        },
        status: fit.status.as_str(),
        converged: fit.status.is_converged(),
        iterations: fit.iterations,
        error,
        trace: cfg.trace.then(|| {
            Trace::LeastSquares(
                fit.trace
                    .iter()
                    .map(|r| LsTraceRow {
                        iteration: r.iteration,
                        objective: Real(r.objective),
                        gradient_norm: Real(r.gradient_norm),
                        damping: Real(r.damping),
                        step_norm: Real(r.step_norm),
                        accepted: r.accepted,
                        hessian_gap: r.hessian_gap.map(Real),
                    })
                    .collect(),
            )
        }),
    })
}

type MinimaxParts = (Solution, Objective, Status, usize, Option<String>, Option<Trace>);

fn minimax_parts(p: &MinimaxProblem, r: &MinimaxResult, trace: bool) -> Result<MinimaxParts, CliError> {
    Ok((
        Solution::Minimax {
            x: reals(&r.x),
            y: reals(&r.y),
        },
        Objective::Minimax {
            primal_value: Real(primal_value(p, &r.x, &r.y)?),
            dual_bound_sq: Real(r.dual_value_sq),
        },
        r.status,
        r.outer_iterations,
        None,
        trace.then(|| {
            Trace::Minimax(
                r.trace
                    .iter()
                    .map(|o| DualTraceRow {
                        iteration: o.iteration,
                        step_size: Real(o.step_size),
                        primal_value: Real(o.primal_value),
                        weighted_objective: Real(o.weighted_objective),
                        lambda: reals(&o.lambda),
                        inner_status: o.inner_status.as_str(),
                        inner_iterations: o.inner_iterations,
                    })
                    .collect(),
            )
        }),
    ))
}

fn compare(cfg: &RunConfig) -> CompareReport {
    let report = run_comparison(&cfg.corpus, &cfg.solver);
    CompareReport {
        header: Header::new(cfg.command.as_str(), cfg.timestamp),
        agreement_tolerance: Real(AGREEMENT_TOLERANCE),
        all_converged: report.all_converged(),
        noise_free_agree: report.noise_free_agree(),
        rows: report
            .rows
            .iter()
            .map(|r| CompareRow {
                id: r.id.clone(),
                family: r.family.as_str(),
                noise_free: r.noise_free,
                vp_objective: Real(r.vp_objective),
                joint_objective: Real(r.joint_objective),
                vp_iterations: r.vp_iterations,
                joint_iterations: r.joint_iterations,
                vp_status: r.vp_status.as_str(),
                joint_status: r.joint_status.as_str(),
                objectives_agree: r.objectives_agree,
                error: r.error.clone(),
            })
            .collect(),
    }
}
