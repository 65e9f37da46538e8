//! Refinement sweeps, convergence-rate indicators and method comparisons.

use std::fmt::Write as _;

use thiserror::Error;

use crate::eigen::{eigs_smallest, DiscreteOperator, EigenError, EigenOptions, Method};
use crate::fem::SolverOptions;
use crate::mesh::{build_initial_mesh, interior_index, refine_red, DomainKind, TriangleMesh};

/// Relative gap above which a usual-method eigenvalue has no modified
/// counterpart.
pub const SPURIOUS_GAP: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub level: usize,
    /// Largest element diameter.
    pub h: f64,
    pub dof: usize,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub domain: DomainKind,
    pub method: Method,
    pub num_eigs: usize,
    pub rows: Vec<LevelRow>,
    /// False when a level failed; `rows` then holds the levels before it.
    pub complete: bool,
    pub failure: Option<String>,
}

/// `R_ℓ = log₂(d_{ℓ-1} / d_ℓ)` for successive differences `d`; the first
/// entry has no predecessor and zero or non-finite ratios are absent.
pub fn rate_indicator(diffs: &[f64]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(diffs.len());
    for (i, &d) in diffs.iter().enumerate() {
        if i == 0 || d == 0.0 {
            out.push(None);
            continue;
        }
        let r = (diffs[i - 1].abs() / d.abs()).log2();
        out.push(r.is_finite().then_some(r));
    }
    out
}

/// Extrapolation of a quantity converging at rate 2 from its values on two
/// successive levels.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

impl ConvergenceReport {
    /// `|λ_{i,ℓ+1} - λ_{i,ℓ}|` for eigenvalue `i` (0-based), one per pair of
    /// successive rows.
    pub fn diffs(&self, i: usize) -> Vec<f64> {
        self.rows.windows(2).map(|w| (w[1].lambdas[i] - w[0].lambdas[i]).abs()).collect()
    }

    pub fn rates(&self, i: usize) -> Vec<Option<f64>> {
        rate_indicator(&self.diffs(i))
    }

    /// Extrapolated eigenvalues from the two finest rows.
    pub fn extrapolated(&self) -> Option<Vec<f64>> {
        let [.., coarse, fine] = self.rows.as_slice() else { return None };
        Some(coarse.lambdas.iter().zip(&fine.lambdas).map(|(&c, &f)| richardson(c, f)).collect())
    }

    /// The last two available rates of eigenvalue `i`.
    pub fn last_rates(&self, i: usize) -> Vec<f64> {
        let rates: Vec<f64> = self.rates(i).into_iter().flatten().collect();
        rates[rates.len().saturating_sub(2)..].to_vec()
    }

    /// Eigenvalue table as CSV with columns `level,h,dof,lambda1..lambdak`,
    /// preceded by one `#` metadata line.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# domain={} method={} complete={}\n",
            self.domain.name(),
            self.method.name(),
            self.complete
        );
        s.push_str("level,h,dof");
        for i in 1..=self.num_eigs {
            let _ = write!(s, ",lambda{i}");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{},{},{}", row.level, row.h, row.dof);
            for l in &row.lambdas {
                let _ = write!(s, ",{l}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, StudyError> {
        let err = |line: usize, message: String| StudyError::Parse { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        // Free-form comment lines may precede the metadata line.
        let (meta_idx, meta) = loop {
            let (idx, line) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
            match line.strip_prefix('#') {
                Some(rest) if rest.trim_start().starts_with("domain=") => break (idx, rest),
                Some(_) => continue,
                None => return Err(err(idx + 1, "missing `# domain=.. method=.. complete=..` line".into())),
            }
        };
        let err_meta = |message: String| err(meta_idx + 1, message);
        let (mut domain, mut method, mut complete) = (None, None, None);
        for item in meta.split_whitespace() {
            let (key, value) = item.split_once('=').ok_or_else(|| err_meta(format!("bad field `{item}`")))?;
            match key {
                "domain" => domain = Some(value.parse::<DomainKind>().map_err(|e| err_meta(e.to_string()))?),
                "method" => method = Some(value.parse::<Method>().map_err(err_meta)?),
                "complete" => complete = Some(value.parse::<bool>().map_err(|e| err_meta(e.to_string()))?),
                other => return Err(err_meta(format!("unknown field `{other}`"))),
            }
        }
        let (idx, header) = lines.next().ok_or_else(|| err(meta_idx + 2, "missing header".into()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.len() < 3 || columns[..3] != ["level", "h", "dof"] {
            return Err(err(idx + 1, format!("unexpected header `{header}`")));
        }
        let num_eigs = columns.len() - 3;
        for (i, c) in columns[3..].iter().enumerate() {
            if *c != format!("lambda{}", i + 1) {
                return Err(err(idx + 1, format!("unexpected column `{c}`")));
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(err(idx + 1, format!("expected {} fields, found {}", columns.len(), fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(idx + 1, format!("`{s}`: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(idx + 1, format!("`{s}`: {e}")));
            rows.push(LevelRow {
                level: int(fields[0])?,
                h: num(fields[1])?,
                dof: int(fields[2])?,
                lambdas: fields[3..].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
            });
        }
        Ok(Self {
            domain: domain.ok_or_else(|| err(meta_idx + 1, "missing domain".into()))?,
            method: method.ok_or_else(|| err(meta_idx + 1, "missing method".into()))?,
            num_eigs,
            rows,
            complete: complete.ok_or_else(|| err(meta_idx + 1, "missing complete flag".into()))?,
            failure: None,
        })
    }

    /// Convergence history as CSV with columns `h,diff_1,rate_1,...`; row
    /// `ℓ` holds the coarser mesh size of the pair `(ℓ, ℓ+1)`.
    pub fn rates_csv(&self) -> String {
        let mut s = String::from("h");
        for i in 1..=self.num_eigs {
            let _ = write!(s, ",diff_{i},rate_{i}");
        }
        s.push('\n');
        let diffs: Vec<Vec<f64>> = (0..self.num_eigs).map(|i| self.diffs(i)).collect();
        let rates: Vec<Vec<Option<f64>>> = (0..self.num_eigs).map(|i| self.rates(i)).collect();
        for (r, row) in self.rows.iter().take(self.rows.len().saturating_sub(1)).enumerate() {
            let _ = write!(s, "{}", row.h);
            for i in 0..self.num_eigs {
                let rate = rates[i][r].map(|v| v.to_string()).unwrap_or_default();
                let _ = write!(s, ",{},{rate}", diffs[i][r]);
            }
            s.push('\n');
        }
        s
    }

    pub fn eigen_markdown(&self) -> String {
        let mut s = String::from("| level | h | dof |");
        for i in 1..=self.num_eigs {
            let _ = write!(s, " λ{i} |");
        }
        s.push_str("\n|---:|---:|---:|");
        s.push_str(&"---:|".repeat(self.num_eigs));
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "| {} | {:.4} | {} |", row.level, row.h, row.dof);
            for &l in &row.lambdas {
                let _ = write!(s, " {} |", significant(l, 10));
            }
            s.push('\n');
        }
        s
    }

    pub fn rates_markdown(&self) -> String {
        let mut s = String::from("| h |");
        for i in 1..=self.num_eigs {
            let _ = write!(s, " diff λ{i} | R |");
        }
        s.push_str("\n|---:|");
        s.push_str(&"---:|---:|".repeat(self.num_eigs));
        s.push('\n');
        let diffs: Vec<Vec<f64>> = (0..self.num_eigs).map(|i| self.diffs(i)).collect();
        let rates: Vec<Vec<Option<f64>>> = (0..self.num_eigs).map(|i| self.rates(i)).collect();
        for (r, row) in self.rows.iter().take(self.rows.len().saturating_sub(1)).enumerate() {
            let _ = write!(s, "| {:.4} |", row.h);
            for i in 0..self.num_eigs {
                let rate = rates[i][r].map(|v| format!("{v:.2}")).unwrap_or_default();
                let _ = write!(s, " {:.3e} | {rate} |", diffs[i][r]);
            }
            s.push('\n');
        }
        s
    }
}

/// `x` rounded to `digits` significant digits in positional notation.
pub fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub eigen: EigenOptions,
    pub solver: SolverOptions,
    /// First level of the sweep; by default the coarsest level with enough
    /// unknowns for the requested block.
    pub first_level: Option<usize>,
}

/// Coarsest level whose interior unknowns can hold `k + buffer` vectors.
pub fn first_usable_level(domain: DomainKind, k: usize, buffer: usize) -> usize {
    let mut mesh = build_initial_mesh(domain);
    let mut level = 0;
    while interior_index(&mesh).len() < k + buffer {
        mesh = refine_red(&mesh);
        level += 1;
    }
    level
}

fn mesh_chain(domain: DomainKind, first: usize, last: usize) -> Vec<TriangleMesh> {
    let mut mesh = build_initial_mesh(domain);
    let mut chain = Vec::new();
    for level in 0..=last {
        if level > 0 {
            mesh = refine_red(&mesh);
        }
        if level >= first {
            chain.push(mesh.clone());
        }
    }
    chain
}

fn solve_level(mesh: &TriangleMesh, method: Method, k: usize, opts: &SweepOptions) -> Result<LevelRow, EigenError> {
    let op = DiscreteOperator::build(mesh, method, opts.solver)?;
    let res = eigs_smallest(&op, k, &opts.eigen)?;
    Ok(LevelRow {
        level: mesh.level,
        h: mesh.max_diameter(),
        dof: op.dim(),
        lambdas: res.lambdas,
    })
}

/// Smallest `k` eigenvalues of `method` on every level up to `max_level`.
/// A failing level ends the sweep; the report then carries the levels
/// before it and is marked incomplete.
pub fn run_sweep(
    domain: DomainKind,
    method: Method,
    max_level: usize,
    k: usize,
    opts: &SweepOptions,
) -> ConvergenceReport {
    let first = opts
        .first_level
        .unwrap_or_else(|| first_usable_level(domain, k, opts.eigen.buffer));
    let mut report = ConvergenceReport {
        domain,
        method,
        num_eigs: k,
        rows: Vec::new(),
        complete: true,
        failure: None,
    };
    for mesh in mesh_chain(domain, first, max_level) {
        match solve_level(&mesh, method, k, opts) {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                report.complete = false;
                report.failure = Some(format!("level {}: {e}", mesh.level));
                break;
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodComparison {
    pub domain: DomainKind,
    pub level: usize,
    pub dof: usize,
    pub modified: Vec<f64>,
    pub usual: Vec<f64>,
    /// Indices into `usual` of eigenvalues with no modified counterpart.
    pub spurious: Vec<usize>,
}

/// Indices of `usual` values farther than [`SPURIOUS_GAP`] (relative) from
/// every `modified` value. Values above the modified window are not judged.
pub fn spurious_flags(usual: &[f64], modified: &[f64]) -> Vec<usize> {
    let top = modified.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    usual
        .iter()
        .enumerate()
        .filter(|(_, &u)| u <= top * (1.0 + SPURIOUS_GAP))
        .filter(|(_, &u)| modified.iter().all(|&m| (u - m).abs() > SPURIOUS_GAP * m.abs()))
        .map(|(i, _)| i)
        .collect()
}

pub fn compare_methods(
    domain: DomainKind,
    level: usize,
    k: usize,
    opts: &SweepOptions,
) -> Result<MethodComparison, StudyError> {
    let mesh = mesh_chain(domain, level, level).pop().expect("chain holds the requested level");
    let modified = solve_level(&mesh, Method::Modified, k, opts)?;
    let usual = solve_level(&mesh, Method::Usual, k, opts)?;
    let spurious = spurious_flags(&usual.lambdas, &modified.lambdas);
    Ok(MethodComparison {
        domain,
        level,
        dof: modified.dof,
        modified: modified.lambdas,
        usual: usual.lambdas,
        spurious,
    })
}

impl MethodComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,dof");
        for i in 1..=self.modified.len() {
            let _ = write!(s, ",lambda{i}");
        }
        s.push_str(",spurious\n");
        for (method, lambdas) in [(Method::Modified, &self.modified), (Method::Usual, &self.usual)] {
            let _ = write!(s, "{},{}", method.name(), self.dof);
            for l in lambdas {
                let _ = write!(s, ",{l}");
            }
            let flags: Vec<String> = match method {
                Method::Usual => self.spurious.iter().map(|i| format!("lambda{}", i + 1)).collect(),
                Method::Modified => Vec::new(),
            };
            let _ = writeln!(s, ",{}", flags.join(" "));
        }
        s
    }

    /// Two-row table; spurious usual-method entries carry a trailing `*`.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| method | dof |");
        for i in 1..=self.modified.len() {
            let _ = write!(s, " λ{i} |");
        }
        s.push_str("\n|---|---:|");
        s.push_str(&"---:|".repeat(self.modified.len()));
        s.push('\n');
        for (method, lambdas) in [(Method::Modified, &self.modified), (Method::Usual, &self.usual)] {
            let _ = write!(s, "| {} | {} |", method.name(), self.dof);
            for (i, &l) in lambdas.iter().enumerate() {
                let mark = if method == Method::Usual && self.spurious.contains(&i) { "*" } else { "" };
                let _ = write!(s, " {}{mark} |", significant(l, 10));
            }
            s.push('\n');
        }
        if !self.spurious.is_empty() {
            s.push_str("\n`*` usual-method eigenvalue with no modified counterpart within 5% (spurious)\n");
        }
        s
    }
}
