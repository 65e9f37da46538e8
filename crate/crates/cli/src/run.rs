//! The `solve`, `sweep` and `compare` commands.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use biharmonic::eigen::{eigs_smallest, DiscreteOperator, EigenError, EigenOptions, Method};
use biharmonic::fem::quadrature::{MASS_ORDER, SMOOTH_ORDER};
use biharmonic::fem::SolverOptions;
use biharmonic::mesh::{build_initial_mesh, build_mesh, DomainKind};
use biharmonic::singular::{ANGULAR_NODES, FAR_ORDER, MAX_ANGULAR_WIDTH, NEAR_FACTOR, RADIAL_NODES, RADIAL_POWER};
use biharmonic::study::{
    compare_methods, first_usable_level, run_sweep, significant, ConvergenceReport, StudyError, SweepOptions,
};
use clap::Subcommand;
use thiserror::Error;

use crate::config::{ConfigError, OutputFormat, RunConfig};

/// Significant digits of every printed eigenvalue.
pub const DIGITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Smallest eigenvalues and their residuals on one level
    Solve,
    /// Eigenvalues on successive levels up to `levels`, with convergence rates
    Sweep,
    /// Modified and usual methods side by side on one level, with spurious flags
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("{0}")]
    Request(String),
    #[error("sweep stopped early at {0}")]
    Incomplete(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Request(_) => 2,
            _ => 1,
        }
    }
}

fn round(x: f64) -> f64 {
    significant(x, DIGITS).parse().unwrap_or(x)
}

fn pi_multiple(x: f64) -> String {
    let m = format!("{:.6}", x / PI);
    match m.trim_end_matches('0').trim_end_matches('.') {
        "0" | "-0" => "0".to_string(),
        m => format!("{m}π"),
    }
}

fn sweep_options(cfg: &RunConfig) -> SweepOptions {
    SweepOptions {
        eigen: EigenOptions {
            tol: cfg.eig_tol,
            seed: cfg.seed,
            ..EigenOptions::default()
        },
        solver: SolverOptions {
            kind: cfg.solver,
            rel_tol: cfg.linear_tol,
            ..SolverOptions::default()
        },
        first_level: None,
    }
}

/// Effective configuration, corner data, quadrature and solver settings.
pub fn header_lines(cmd: Command, cfg: &RunConfig) -> Vec<String> {
    let opts = sweep_options(cfg);
    let mut lines = vec![format!("biharmonic {}", cmd.name())];
    lines.extend(cfg.echo());
    let corners = build_initial_mesh(cfg.domain).corners;
    if corners.is_empty() {
        lines.push("corners: none".to_string());
    }
    for (i, c) in corners.iter().enumerate() {
        lines.push(format!(
            "corner {}: Q = ({}, {}), omega = {:.10} ({}), frame = {:.10} ({}), tau = {}, R = {}",
            i + 1,
            c.origin[0],
            c.origin[1],
            c.omega,
            pi_multiple(c.omega),
            c.frame_angle,
            pi_multiple(c.frame_angle),
            c.tau,
            c.radius
        ));
    }
    lines.push(format!(
        "quadrature: mass order {MASS_ORDER}, smooth order {SMOOTH_ORDER}, far-from-corner order {FAR_ORDER}, \
         near-corner polar Gauss {ANGULAR_NODES}x{RADIAL_NODES} with radial grading t^{RADIAL_POWER}, \
         angular width <= {MAX_ANGULAR_WIDTH}, near factor {NEAR_FACTOR}"
    ));
    lines.push(format!(
        "eigensolver: subspace iteration, block k+{}, max {} iterations, eigenvalue change <= {:e}",
        opts.eigen.buffer, opts.eigen.max_iter, opts.eigen.lambda_tol
    ));
    lines.push(format!(
        "linear solver: {}, relative residual <= {:e}",
        opts.solver.kind.name(),
        opts.solver.rel_tol
    ));
    if cfg.method == Method::Usual && !cfg.domain.is_convex() && cmd != Command::Compare {
        lines.push(format!(
            "warning: the usual mixed method on the non-convex {} domain yields spurious eigenvalues; \
             use method = modified",
            cfg.domain.name()
        ));
    }
    lines
}

fn render_header(lines: &[String], format: OutputFormat) -> String {
    let mut s = String::new();
    match format {
        OutputFormat::Csv => {
            for l in lines {
                let _ = writeln!(s, "# {l}");
            }
        }
        OutputFormat::Markdown => {
            s.push_str("```text\n");
            for l in lines {
                let _ = writeln!(s, "{l}");
            }
            s.push_str("```\n\n");
        }
    }
    s
}

/// Text produced by one command: the main document and any side files.
#[derive(Debug, Default)]
pub struct Outputs {
    pub main: String,
    pub extra: Vec<(PathBuf, String)>,
    /// Rendered after the main document when printing to standard output.
    pub trailer: Option<String>,
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn mesh_path(cfg: &RunConfig, level: usize) -> PathBuf {
    match &cfg.output {
        Some(p) => with_suffix(p, "", "mesh"),
        None => PathBuf::from(format!("{}_level{level}.mesh", cfg.domain.name())),
    }
}

fn mesh_text(domain: DomainKind, level: usize) -> String {
    let mut buf = Vec::new();
    build_mesh(domain, level).write_text(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("mesh text is ASCII")
}

fn solve(cfg: &RunConfig) -> Result<Outputs, RunError> {
    let opts = sweep_options(cfg);
    let mesh = build_mesh(cfg.domain, cfg.levels);
    let op = DiscreteOperator::build(&mesh, cfg.method, opts.solver)?;
    if cfg.num_eigs + opts.eigen.buffer > op.dim() {
        return Err(RunError::Request(format!(
            "level {} has {} unknowns, too few for {} eigenvalues; raise `levels`",
            cfg.levels,
            op.dim(),
            cfg.num_eigs
        )));
    }
    let res = eigs_smallest(&op, cfg.num_eigs, &opts.eigen)?;
    let mut head = header_lines(Command::Solve, cfg);
    head.push(format!(
        "level = {}, h = {}, dof = {}, iterations = {}",
        cfg.levels,
        mesh.max_diameter(),
        op.dim(),
        res.iterations
    ));
    head.extend(res.notes.iter().map(|n| format!("note: {n}")));
    let mut s = render_header(&head, cfg.format);
    match cfg.format {
        OutputFormat::Csv => {
            s.push_str("index,lambda,residual\n");
            for (i, (&l, &r)) in res.lambdas.iter().zip(&res.residuals).enumerate() {
                let _ = writeln!(s, "{},{},{:.3e}", i + 1, round(l), r);
            }
        }
        OutputFormat::Markdown => {
            s.push_str("| i | λ | residual |\n|---:|---:|---:|\n");
            for (i, (&l, &r)) in res.lambdas.iter().zip(&res.residuals).enumerate() {
                let _ = writeln!(s, "| {} | {} | {:.3e} |", i + 1, significant(l, DIGITS), r);
            }
        }
    }
    Ok(Outputs {
        main: s,
        ..Outputs::default()
    })
}

fn sweep(cfg: &RunConfig) -> Result<(Outputs, Option<String>), RunError> {
    let opts = sweep_options(cfg);
    let first = first_usable_level(cfg.domain, cfg.num_eigs, opts.eigen.buffer);
    if cfg.levels < first {
        return Err(RunError::Request(format!(
            "{} eigenvalues on {} need levels >= {first}",
            cfg.num_eigs,
            cfg.domain.name()
        )));
    }
    let report = run_sweep(cfg.domain, cfg.method, cfg.levels, cfg.num_eigs, &opts);
    let mut table: ConvergenceReport = report.clone();
    for row in &mut table.rows {
        row.lambdas.iter_mut().for_each(|l| *l = round(*l));
    }
    let mut head = header_lines(Command::Sweep, cfg);
    if let Some(ex) = report.extrapolated() {
        let values: Vec<String> = ex.iter().map(|&l| significant(l, DIGITS)).collect();
        head.push(format!("extrapolated = {}", values.join(" ")));
    }
    if let Some(f) = &report.failure {
        head.push(format!("failure: {f}"));
    }
    let mut main = render_header(&head, cfg.format);
    let rates = match cfg.format {
        OutputFormat::Csv => {
            main.push_str(&table.to_csv());
            report.rates_csv()
        }
        OutputFormat::Markdown => {
            main.push_str("## Eigenvalues\n\n");
            main.push_str(&table.eigen_markdown());
            format!("## Convergence\n\n{}", report.rates_markdown())
        }
    };
    let mut out = Outputs {
        main,
        ..Outputs::default()
    };
    match &cfg.output {
        Some(p) => {
            let ext = match cfg.format {
                OutputFormat::Csv => "csv",
                OutputFormat::Markdown => "md",
            };
            out.extra.push((with_suffix(p, "_rates", ext), rates));
        }
        None => out.trailer = Some(rates),
    }
    Ok((out, report.failure.clone()))
}

fn compare(cfg: &RunConfig) -> Result<Outputs, RunError> {
    let opts = sweep_options(cfg);
    let first = first_usable_level(cfg.domain, cfg.num_eigs, opts.eigen.buffer);
    if cfg.levels < first {
        return Err(RunError::Request(format!(
            "{} eigenvalues on {} need levels >= {first}",
            cfg.num_eigs,
            cfg.domain.name()
        )));
    }
    let mut cmp = compare_methods(cfg.domain, cfg.levels, cfg.num_eigs, &opts)?;
    cmp.modified.iter_mut().chain(cmp.usual.iter_mut()).for_each(|l| *l = round(*l));
    let mut head = header_lines(Command::Compare, cfg);
    let flagged: Vec<String> = cmp.spurious.iter().map(|i| format!("lambda{}", i + 1)).collect();
    head.push(format!(
        "level = {}, dof = {}, spurious (usual only) = {}",
        cmp.level,
        cmp.dof,
        if flagged.is_empty() { "none".to_string() } else { flagged.join(" ") }
    ));
    let mut main = render_header(&head, cfg.format);
    main.push_str(&match cfg.format {
        OutputFormat::Csv => cmp.to_csv(),
        OutputFormat::Markdown => cmp.to_markdown(),
    });
    Ok(Outputs {
        main,
        ..Outputs::default()
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs `cmd`, writing the main document to `cfg.output` or `stdout`. A
/// sweep that stops early still writes its partial report before failing.
pub fn execute(cmd: Command, cfg: &RunConfig, stdout: &mut impl Write) -> Result<(), RunError> {
    let (mut out, failure) = match cmd {
        Command::Solve => (solve(cfg)?, None),
        Command::Sweep => sweep(cfg)?,
        Command::Compare => (compare(cfg)?, None),
    };
    if cfg.dump_mesh {
        out.extra.push((mesh_path(cfg, cfg.levels), mesh_text(cfg.domain, cfg.levels)));
    }
    match &cfg.output {
        Some(p) => write_file(p, &out.main)?,
        None => {
            let io = |source| RunError::Io {
                path: "standard output".to_string(),
                source,
            };
            stdout.write_all(out.main.as_bytes()).map_err(io)?;
            if let Some(t) = &out.trailer {
                stdout.write_all(b"\n").map_err(io)?;
                stdout.write_all(t.as_bytes()).map_err(io)?;
            }
        }
    }
    for (path, text) in &out.extra {
        write_file(path, text)?;
    }
    match failure {
        Some(f) => Err(RunError::Incomplete(f)),
        None => Ok(()),
    }
}
