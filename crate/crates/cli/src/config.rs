//! Flat `key = value` configuration with dotted keys.
//!
//! ```text
//! # comment
//! model.family = exp_sum
//! model.alpha0 = 0.5, 4
//! solver.max_iterations = 100
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use snls_core::corpus::{CorpusSpec, Family};
use snls_core::minimax::{DualConfig, MultiplierUpdate, ResidualScaling};
use snls_core::nls::SolverConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(CliError::config(format!("unknown output format {other:?}"))),
        }
    }
}

/// Model and starting point for the fit commands.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub terms: usize,
    /// Nonlinear start (α₀, or y₀ for minimax).
    pub alpha0: Vec<f64>,
    /// Linear start (a₀, or x₀ for minimax). Defaults per command.
    pub a0: Option<Vec<f64>>,
}

/// Raw entries with the line each came from.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::ConfigLine {
                    line,
                    message: "expected 'key = value'".into(),
                });
            };
            let key = key.trim();
            if key.is_empty() || key.split('.').any(|part| part.is_empty()) {
                return Err(CliError::ConfigLine {
                    line,
                    message: format!("malformed key {key:?}"),
                });
            }
            if !is_known_key(key) {
                return Err(CliError::ConfigLine {
                    line,
                    message: format!("unknown key {key:?}"),
                });
            }
            if entries.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(CliError::ConfigLine {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| CliError::ConfigLine {
                line: *line,
                message: format!("invalid value {v:?} for {key}"),
            }),
        }
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| CliError::ConfigLine {
                    line: *line,
                    message: format!("invalid number {s:?} in {key}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?.ok_or_else(|| CliError::config(format!("missing key {key}")))
    }

    fn require_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.list(key)?.ok_or_else(|| CliError::config(format!("missing key {key}")))
    }

    /// Ids of `corpus.<id>.*` entries, sorted.
    fn corpus_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix("corpus.")?.split_once('.').map(|(id, _)| id.to_string()))
            .collect();
        ids.dedup();
        ids
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let family: Family = self.require::<String>("model.family")?.parse()?;
        let alpha0 = self.list("model.alpha0")?.unwrap_or_default();
        let a0 = self.list("model.a0")?;
        let terms = match self.get::<usize>("model.terms")? {
            Some(n) => n,
            None => match family {
                Family::ExpSum => alpha0.len(),
                Family::GaussianPeaks => alpha0.len() / 2,
                Family::ConstantMinimax => 1,
                Family::LineMinimax => 2,
            },
        };
        family.model(terms, alpha0.len())?;
        if let Some(a0) = &a0 {
            if a0.len() != terms {
                return Err(CliError::config(format!("model.a0 has {} entries, expected {terms}", a0.len())));
            }
        }
        Ok(ModelSpec {
            family,
            terms,
            alpha0,
            a0,
        })
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let mut c = SolverConfig::default();
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.get(concat!("solver.", stringify!($field)))? {
                    c.$field = v;
                }
            )*};
        }
        set!(
            max_iterations,
            gradient_tolerance,
            step_tolerance,
            objective_tolerance,
            lm_initial_damping,
            lm_damping_growth,
            fd_step,
            max_consecutive_rejections,
            sv_tolerance,
            hessian_gap_diagnostic
        );
        c.validate()?;
        Ok(c)
    }

    pub fn dual(&self) -> Result<DualConfig, CliError> {
        let mut c = DualConfig {
            inner: self.solver()?,
            ..DualConfig::default()
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.get(concat!("dual.", stringify!($field)))? {
                    c.$field = v;
                }
            )*};
        }
        set!(alpha0, max_outer_iterations, objective_window_tolerance, window_length, residual_gain);
        if let Some(v) = self.get::<String>("dual.update")? {
            c.update = v.parse::<MultiplierUpdate>()?;
        }
        if let Some(v) = self.get::<String>("dual.residual_scaling")? {
            c.residual_scaling = v.parse::<ResidualScaling>()?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn format(&self) -> Result<Format, CliError> {
        Ok(self.get::<Format>("output.format")?.unwrap_or_default())
    }

    /// Problem for `gen-data`; `seed` overrides `gen.seed`.
    pub fn gen_spec(&self, seed: Option<u64>) -> Result<CorpusSpec, CliError> {
        self.corpus_spec("gen", seed)
    }

    /// `corpus.<id>.*` problems, or `None` when the file defines none.
    pub fn corpus(&self) -> Result<Option<Vec<CorpusSpec>>, CliError> {
        let ids = self.corpus_ids();
        if ids.is_empty() {
            return Ok(None);
        }
        ids.iter()
            .map(|id| {
                let mut spec = self.corpus_spec(&format!("corpus.{id}"), None)?;
                spec.id = id.clone();
                Ok(spec)
            })
            .collect::<Result<Vec<_>, CliError>>()
            .map(Some)
    }

    fn corpus_spec(&self, prefix: &str, seed: Option<u64>) -> Result<CorpusSpec, CliError> {
        let key = |field: &str| format!("{prefix}.{field}");
        let true_nonlinear = self.list(&key("true_nonlinear"))?.unwrap_or_default();
        let count: usize = self.require(&key("count"))?;
        let t_start = self.get(&key("t_start"))?.unwrap_or(0.0);
        let t_step = self.get(&key("t_step"))?.unwrap_or(1.0);
        let spec = CorpusSpec {
            id: prefix.to_string(),
            family: self.require::<String>(&key("family"))?.parse()?,
            true_linear: self.require_list(&key("true_linear"))?,
            start_nonlinear: self.list(&key("start"))?.unwrap_or_else(|| true_nonlinear.clone()),
            true_nonlinear,
            t_grid: (0..count).map(|i| t_start + t_step * i as f64).collect(),
            noise_sigma: self.get(&key("noise_sigma"))?.unwrap_or(0.0),
            seed: match seed {
                Some(s) => s,
                None => self.get(&key("seed"))?.unwrap_or(0),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

const SOLVER_KEYS: &[&str] = &[
    "max_iterations",
    "gradient_tolerance",
    "step_tolerance",
    "objective_tolerance",
    "lm_initial_damping",
    "lm_damping_growth",
    "fd_step",
    "max_consecutive_rejections",
    "sv_tolerance",
    "hessian_gap_diagnostic",
];
const DUAL_KEYS: &[&str] = &[
    "alpha0",
    "max_outer_iterations",
    "objective_window_tolerance",
    "window_length",
    "update",
    "residual_scaling",
    "residual_gain",
];
const PROBLEM_KEYS: &[&str] = &[
    "family",
    "true_linear",
    "true_nonlinear",
    "start",
    "t_start",
    "t_step",
    "count",
    "noise_sigma",
    "seed",
];

fn is_known_key(key: &str) -> bool {
    let (section, rest) = key.split_once('.').unwrap_or((key, ""));
    match section {
        "model" => ["family", "terms", "alpha0", "a0"].contains(&rest),
        "solver" => SOLVER_KEYS.contains(&rest),
        "dual" => DUAL_KEYS.contains(&rest),
        "output" => rest == "format",
        "gen" => PROBLEM_KEYS.contains(&rest),
        "corpus" => rest.split_once('.').is_some_and(|(_, field)| PROBLEM_KEYS.contains(&field)),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let c = ConfigFile::parse(
            "# fit\nmodel.family = exp_sum\nmodel.alpha0 = 0.5, 4\n\nsolver.max_iterations = 50\ndual.update = renormalize\n",
        )
        .unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.family, Family::ExpSum);
        assert_eq!(m.terms, 2);
        assert_eq!(m.alpha0, vec![0.5, 4.0]);
        assert_eq!(c.solver().unwrap().max_iterations, 50);
        let d = c.dual().unwrap();
        assert_eq!(d.update, MultiplierUpdate::Renormalize);
        assert_eq!(d.inner.max_iterations, 50);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(
            ConfigFile::parse("solver.max_iters = 3"),
            Err(CliError::ConfigLine { line: 1, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("output.format = csv\noutput.format = json"),
            Err(CliError::ConfigLine { line: 2, .. })
        ));
        assert!(matches!(ConfigFile::parse("just words"), Err(CliError::ConfigLine { line: 1, .. })));
    }

    #[test]
    fn bad_values_name_their_line() {
        let c = ConfigFile::parse("model.family = exp_sum\nsolver.fd_step = tiny\n").unwrap();
        assert!(matches!(c.solver(), Err(CliError::ConfigLine { line: 2, .. })));
        let c = ConfigFile::parse("model.family = exp_sum\nmodel.alpha0 = 1, x").unwrap();
        assert!(matches!(c.model(), Err(CliError::ConfigLine { line: 2, .. })));
    }

    #[test]
    fn model_shape_is_checked() {
        let c = ConfigFile::parse("model.family = gaussian_peaks\nmodel.alpha0 = 1, 2, 3").unwrap();
        assert!(c.model().is_err());
        let c = ConfigFile::parse("model.family = line_minimax").unwrap();
        assert_eq!(c.model().unwrap().terms, 2);
    }

    #[test]
    fn corpus_entries_become_specs() {
        let c = ConfigFile::parse(
            "corpus.b.family = exp_sum\ncorpus.b.true_linear = 2\ncorpus.b.true_nonlinear = 1\ncorpus.b.count = 5\n\
             corpus.a.family = constant_minimax\ncorpus.a.true_linear = 3\ncorpus.a.count = 4\ncorpus.a.noise_sigma = 0.1\n",
        )
        .unwrap();
        let specs = c.corpus().unwrap().unwrap();
        assert_eq!(specs.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(specs[1].t_grid, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(specs[1].start_nonlinear, vec![1.0]);
    }

    #[test]
    fn seed_flag_overrides_config() {
        let c = ConfigFile::parse("gen.family = exp_sum\ngen.true_linear = 1\ngen.true_nonlinear = 1\ngen.count = 3\ngen.seed = 4")
            .unwrap();
        assert_eq!(c.gen_spec(None).unwrap().seed, 4);
        assert_eq!(c.gen_spec(Some(9)).unwrap().seed, 9);
    }
}
