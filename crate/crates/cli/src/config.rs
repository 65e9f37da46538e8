//! `key = value` run configuration with command-line overrides.

use std::path::PathBuf;
use std::str::FromStr;

use biharmonic::eigen::{Method, DEFAULT_EIG_TOL};
use biharmonic::fem::solver::DEFAULT_LINEAR_TOL;
use biharmonic::fem::SolverKind;
use biharmonic::mesh::DomainKind;
use clap::Args;
use thiserror::Error;

pub const DEFAULT_LEVELS: usize = 4;
pub const DEFAULT_NUM_EIGS: usize = 6;

/// Every key accepted in a configuration file, in echo order.
pub const KEYS: [&str; 11] = [
    "domain",
    "method",
    "levels",
    "num_eigs",
    "eig_tol",
    "linear_tol",
    "seed",
    "solver",
    "output",
    "format",
    "dump_mesh",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("`domain` is required (config file or --domain)")]
    MissingDomain,
    #[error("cannot read config file {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Markdown => "markdown",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            other => Err(format!("unknown format `{other}` (expected csv or markdown)")),
        }
    }
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "direct" | "cholesky" => Ok(SolverKind::Direct),
        "pcg" | "cg" => Ok(SolverKind::Pcg),
        other => Err(format!("unknown solver `{other}` (expected direct or pcg)")),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("expected true or false, found `{other}`")),
    }
}

/// Settings shared by every command. Each can also appear as a
/// `key = value` line in the file given by `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Configuration file of `key = value` lines; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// domain: square | lshape | slit | ring (required)
    #[arg(long, global = true)]
    pub domain: Option<String>,
    /// method: modified | usual [default: modified]
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// levels: refinement level (solve, compare) or finest level (sweep) [default: 4]
    #[arg(long, global = true)]
    pub levels: Option<String>,
    /// num_eigs: number of eigenvalues [default: 6]
    #[arg(long, global = true)]
    pub num_eigs: Option<String>,
    /// eig_tol: relative eigen-residual bound [default: 1e-8]
    #[arg(long, global = true)]
    pub eig_tol: Option<String>,
    /// linear_tol: relative residual of the Poisson solves [default: 1e-10]
    #[arg(long, global = true)]
    pub linear_tol: Option<String>,
    /// seed: start block seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// solver: direct | pcg [default: direct]
    #[arg(long, global = true)]
    pub solver: Option<String>,
    /// output: file for the main table; standard output when absent
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// format: csv | markdown [default: csv]
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// dump_mesh: also write the (finest) mesh as text
    #[arg(long, global = true)]
    pub dump_mesh: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainKind,
    pub method: Method,
    pub levels: usize,
    pub num_eigs: usize,
    pub eig_tol: f64,
    pub linear_tol: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub dump_mesh: bool,
}

#[derive(Default)]
struct Builder {
    domain: Option<DomainKind>,
    method: Option<Method>,
    levels: Option<usize>,
    num_eigs: Option<usize>,
    eig_tol: Option<f64>,
    linear_tol: Option<f64>,
    seed: Option<u64>,
    solver: Option<SolverKind>,
    output: Option<PathBuf>,
    format: Option<OutputFormat>,
    dump_mesh: Option<bool>,
}

fn value_error(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn tolerance(key: &str, value: &str) -> Result<f64, ConfigError> {
    let t: f64 = value.trim().parse().map_err(|e| value_error(key, value, e))?;
    if !(t > 0.0 && t < 1.0) {
        return Err(value_error(key, value, "must lie in (0, 1)"));
    }
    Ok(t)
}

impl Builder {
    /// Returns `Ok(false)` for an unknown key.
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        let v = value.trim();
        match key {
            "domain" => self.domain = Some(v.parse().map_err(|e| value_error(key, v, e))?),
            "method" => self.method = Some(v.parse().map_err(|e: String| value_error(key, v, e))?),
            "levels" => self.levels = Some(v.parse().map_err(|e| value_error(key, v, e))?),
            "num_eigs" => {
                let k: usize = v.parse().map_err(|e| value_error(key, v, e))?;
                if k == 0 {
                    return Err(value_error(key, v, "must be at least 1"));
                }
                self.num_eigs = Some(k);
            }
            "eig_tol" => self.eig_tol = Some(tolerance(key, v)?),
            "linear_tol" => self.linear_tol = Some(tolerance(key, v)?),
            "seed" => self.seed = Some(v.parse().map_err(|e| value_error(key, v, e))?),
            "solver" => self.solver = Some(parse_solver(v).map_err(|e| value_error(key, v, e))?),
            "output" => self.output = (!v.is_empty()).then(|| PathBuf::from(v)),
            "format" => self.format = Some(v.parse().map_err(|e: String| value_error(key, v, e))?),
            "dump_mesh" => self.dump_mesh = Some(parse_bool(v).map_err(|e| value_error(key, v, e))?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn read_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                text: raw.trim().to_string(),
            })?;
            let key = key.trim();
            if !self.set(key, value)? {
                return Err(ConfigError::UnknownKey {
                    line: idx + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, flags: &Flags) -> Result<(), ConfigError> {
        let pairs = [
            ("domain", &flags.domain),
            ("method", &flags.method),
            ("levels", &flags.levels),
            ("num_eigs", &flags.num_eigs),
            ("eig_tol", &flags.eig_tol),
            ("linear_tol", &flags.linear_tol),
            ("seed", &flags.seed),
            ("solver", &flags.solver),
            ("format", &flags.format),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                self.set(key, v)?;
            }
        }
        if let Some(path) = &flags.output {
            self.output = Some(path.clone());
        }
        if flags.dump_mesh {
            self.dump_mesh = Some(true);
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig, ConfigError> {
        Ok(RunConfig {
            domain: self.domain.ok_or(ConfigError::MissingDomain)?,
            method: self.method.unwrap_or(Method::Modified),
            levels: self.levels.unwrap_or(DEFAULT_LEVELS),
            num_eigs: self.num_eigs.unwrap_or(DEFAULT_NUM_EIGS),
            eig_tol: self.eig_tol.unwrap_or(DEFAULT_EIG_TOL),
            linear_tol: self.linear_tol.unwrap_or(DEFAULT_LINEAR_TOL),
            seed: self.seed.unwrap_or(0),
            solver: self.solver.unwrap_or(SolverKind::Direct),
            output: self.output,
            format: self.format.unwrap_or(OutputFormat::Csv),
            dump_mesh: self.dump_mesh.unwrap_or(false),
        })
    }
}

/// Merges the configuration file text (if any) with `flags`; flags win.
pub fn parse_config(file: Option<&str>, flags: &Flags) -> Result<RunConfig, ConfigError> {
    let mut b = Builder::default();
    if let Some(text) = file {
        b.read_file(text)?;
    }
    b.apply_flags(flags)?;
    b.finish()
}

/// Reads the file named by `--config`, then merges as [`parse_config`].
pub fn load_config(flags: &Flags) -> Result<RunConfig, ConfigError> {
    let text = match &flags.config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?),
        None => None,
    };
    parse_config(text.as_deref(), flags)
}

impl RunConfig {
    /// `key = value` lines for every effective setting.
    pub fn echo(&self) -> Vec<String> {
        let output = self.output.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let values = [
            self.domain.name().to_string(),
            self.method.name().to_string(),
            self.levels.to_string(),
            self.num_eigs.to_string(),
            format!("{:e}", self.eig_tol),
            format!("{:e}", self.linear_tol),
            self.seed.to_string(),
            self.solver.name().to_string(),
            output,
            self.format.name().to_string(),
            self.dump_mesh.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}"))
            .collect()
    }
}
