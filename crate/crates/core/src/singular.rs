//! Corner singular fields `ξ_h = s⁻ + ζ_h` and the correction system.
//!
//! `s⁻ = χ(r) r^{-α} sin(αθ)` with `α = π/ω` is square integrable but has
//! infinite energy; `ζ_h ∈ S_0^h` solves `(∇ζ_h, ∇v) = (Δs⁻, v)`. The
//! correction coefficients `c(w)` solve `Σ_j (ξ_i, ξ_j) c_j = (w, ξ_i)`.
//!
//! Integrals involving `s⁻` over triangles that touch the corner, lie close
//! to it, or are cut by one of the cutoff circles `r = τR`, `r = R` are
//! computed in polar coordinates centred at the corner, with the angular
//! range split at every vertex direction and circle crossing. Each piece
//! then has a smooth integrand; the radial piece starting at the corner
//! uses the substitution `r = b s^6`, which turns `r^{1-α}` and `r^{1-2α}`
//! into polynomials for `α ∈ {1/2, 2/3}`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fem::quadrature::gauss_legendre;
use crate::fem::{barycentric, QuadratureRule, SolverError, SpdSolver, SymmetricSparse};
use crate::mesh::{diameter, signed_area, wrap_pm_pi, DofMap, MeshError, Point, ReentrantCorner, TriangleMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SingularError {
    #[error("singular function evaluated at the corner itself")]
    AtCorner,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("corrector solve failed: {0}")]
    Solver(#[from] SolverError),
    #[error("correction Gram matrix is not positive definite (smallest eigenvalue {0:.3e}); cutoffs overlap or a corner frame is wrong")]
    GramNotSpd(f64),
}

/// Angular Gauss nodes per angular sub-interval.
pub const ANGULAR_NODES: usize = 12;
/// Radial Gauss nodes per radial piece.
pub const RADIAL_NODES: usize = 12;
/// Widest angular sub-interval in radians.
pub const MAX_ANGULAR_WIDTH: f64 = 0.25;
/// Power of the radial substitution on pieces that start at the corner.
pub const RADIAL_POWER: i32 = 6;
/// Triangles closer to the corner than this many diameters use polar quadrature.
pub const NEAR_FACTOR: f64 = 3.0;
/// Rule order for the remaining triangles inside the cutoff disk.
pub const FAR_ORDER: usize = 8;

/// Cutoff value with its first two radial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffValues {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Quintic cutoff: 1 for `r <= τR`, 0 for `r >= R`, and in between
/// `1/2 - 15/16 t + 5/8 t³ - 3/16 t⁵` with `t = 2r/(R(1-τ)) - (1+τ)/(1-τ)`.
pub fn cutoff(r: f64, tau: f64, radius: f64) -> CutoffValues {
    if r <= tau * radius {
        return CutoffValues {
            value: 1.0,
            d1: 0.0,
            d2: 0.0,
        };
    }
    if r >= radius {
        return CutoffValues {
            value: 0.0,
            d1: 0.0,
            d2: 0.0,
        };
    }
    let dt = 2.0 / (radius * (1.0 - tau));
    let t = r * dt - (1.0 + tau) / (1.0 - tau);
    let t2 = t * t;
    let one_m = 1.0 - t2;
    CutoffValues {
        value: 0.5 - 15.0 / 16.0 * t + 5.0 / 8.0 * t * t2 - 3.0 / 16.0 * t * t2 * t2,
        d1: -15.0 / 16.0 * one_m * one_m * dt,
        d2: 15.0 / 4.0 * t * one_m * dt * dt,
    }
}

pub fn cutoff_chi(r: f64, tau: f64, radius: f64) -> f64 {
    cutoff(r, tau, radius).value
}

pub fn chi_prime(r: f64, tau: f64, radius: f64) -> f64 {
    cutoff(r, tau, radius).d1
}

pub fn chi_double_prime(r: f64, tau: f64, radius: f64) -> f64 {
    cutoff(r, tau, radius).d2
}

/// `s⁻` at polar coordinates `(r, θ)` of the corner frame (`r > 0`).
pub fn s_minus_polar(corner: &ReentrantCorner, r: f64, theta: f64) -> f64 {
    if r >= corner.radius {
        return 0.0;
    }
    let alpha = corner.alpha();
    cutoff(r, corner.tau, corner.radius).value * r.powf(-alpha) * (alpha * theta).sin()
}

/// `Δs⁻ = (χ'' + (1 - 2α) χ'/r) r^{-α} sin(αθ)`, using that `r^{-α} sin(αθ)`
/// is harmonic.
pub fn laplacian_s_minus_polar(corner: &ReentrantCorner, r: f64, theta: f64) -> f64 {
    if r <= corner.tau * corner.radius || r >= corner.radius {
        return 0.0;
    }
    let alpha = corner.alpha();
    let c = cutoff(r, corner.tau, corner.radius);
    (c.d2 + (1.0 - 2.0 * alpha) * c.d1 / r) * r.powf(-alpha) * (alpha * theta).sin()
}

/// `s⁻` at a point of the triangle whose interior contains `hint`.
pub fn s_minus(corner: &ReentrantCorner, p: Point, hint: Point) -> Result<f64, SingularError> {
    let (r, theta) = corner.local_polar(p, hint)?;
    if r == 0.0 {
        return Err(SingularError::AtCorner);
    }
    Ok(s_minus_polar(corner, r, theta))
}

pub fn laplacian_s_minus(corner: &ReentrantCorner, p: Point, hint: Point) -> Result<f64, SingularError> {
    let (r, theta) = corner.local_polar(p, hint)?;
    if r == 0.0 {
        return Err(SingularError::AtCorner);
    }
    Ok(laplacian_s_minus_polar(corner, r, theta))
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let e = sub(b, a);
    let s = (dot(sub(p, a), e) / dot(e, e)).clamp(0.0, 1.0);
    let q = [a[0] + s * e[0], a[1] + s * e[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Distance from the corner to a triangle that does not contain it in its
/// interior (the corner is always a mesh vertex).
fn corner_distance(tri: &[Point; 3], q: Point) -> f64 {
    (0..3)
        .map(|e| point_segment_distance(q, tri[e], tri[(e + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

/// How a triangle is integrated against the singular function of one corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangleTreatment {
    /// Entirely outside the cutoff disk: every integrand vanishes.
    Outside,
    Polar,
    Standard,
}

pub fn classify(tri: &[Point; 3], corner: &ReentrantCorner) -> TriangleTreatment {
    let q = corner.origin;
    let dmin = corner_distance(tri, q);
    if dmin >= corner.radius {
        return TriangleTreatment::Outside;
    }
    let dmax = tri.iter().map(|&p| corner.distance(p)).fold(0.0, f64::max);
    let inner = corner.tau * corner.radius;
    let cut = |rho: f64| dmin < rho && rho < dmax;
    if dmin < NEAR_FACTOR * diameter(*tri) || cut(inner) || cut(corner.radius) {
        TriangleTreatment::Polar
    } else {
        TriangleTreatment::Standard
    }
}

struct PolarRules {
    angular: (Vec<f64>, Vec<f64>),
    radial: (Vec<f64>, Vec<f64>),
}

impl PolarRules {
    fn new() -> Self {
        Self {
            angular: gauss_legendre(ANGULAR_NODES),
            radial: gauss_legendre(RADIAL_NODES),
        }
    }
}

/// Integral of `f(r, θ, x)` over the part of triangle `tri` inside the
/// cutoff disk of `corner`, in polar coordinates about the corner.
fn integrate_polar<const N: usize>(
    tri: &[Point; 3],
    corner: &ReentrantCorner,
    rules: &PolarRules,
    mut f: impl FnMut(f64, f64, Point) -> [f64; N],
) -> Result<[f64; N], SingularError> {
    let q = corner.origin;
    let centroid = [
        (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
        (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
    ];
    let (_, theta_c) = corner.local_polar(centroid, centroid)?;
    let dc = sub(centroid, q);
    let phi_c = dc[1].atan2(dc[0]);
    let rel: Vec<Point> = tri.iter().map(|&p| sub(p, q)).collect();
    let scale = diameter(*tri);
    let apex = rel.iter().any(|d| d[0].hypot(d[1]) < 1e-14 * scale);

    let angle_of = |d: Point| wrap_pm_pi(d[1].atan2(d[0]) - phi_c);
    let mut breaks: Vec<f64> = rel
        .iter()
        .filter(|d| d[0].hypot(d[1]) >= 1e-14 * scale)
        .map(|&d| angle_of(d))
        .collect();
    let lo = breaks.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = breaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inner = corner.tau * corner.radius;
    for rho in [inner, corner.radius] {
        for e in 0..3 {
            let (da, db) = (rel[e], rel[(e + 1) % 3]);
            let ed = sub(db, da);
            let (a2, b2, c2) = (dot(ed, ed), 2.0 * dot(da, ed), dot(da, da) - rho * rho);
            let disc = b2 * b2 - 4.0 * a2 * c2;
            if disc <= 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for s in [(-b2 - sq) / (2.0 * a2), (-b2 + sq) / (2.0 * a2)] {
                if s > 0.0 && s < 1.0 {
                    breaks.push(angle_of([da[0] + s * ed[0], da[1] + s * ed[1]]));
                }
            }
        }
    }
    breaks.retain(|&b| b >= lo && b <= hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut refined = Vec::with_capacity(breaks.len());
    for seg in breaks.windows(2) {
        let parts = ((seg[1] - seg[0]) / MAX_ANGULAR_WIDTH).ceil().max(1.0) as usize;
        refined.extend((0..parts).map(|k| seg[0] + (seg[1] - seg[0]) * k as f64 / parts as f64));
    }
    refined.extend(breaks.last());
    let breaks = refined;

    let mut total = [0.0; N];
    let (gx, gw) = &rules.angular;
    let (rx, rw) = &rules.radial;
    for seg in breaks.windows(2) {
        let (p0, p1) = (seg[0], seg[1]);
        let width = p1 - p0;
        if width <= 1e-15 {
            continue;
        }
        for (&x, &w) in gx.iter().zip(gw) {
            let psi = p0 + width * x;
            let (sn, cs) = (phi_c + psi).sin_cos();
            let u = [cs, sn];
            let mut r_in = f64::INFINITY;
            let mut r_out = f64::NEG_INFINITY;
            for e in 0..3 {
                let (da, db) = (rel[e], rel[(e + 1) % 3]);
                let ed = sub(db, da);
                let denom = cross(u, ed);
                if denom.abs() < 1e-300 {
                    continue;
                }
                let t = cross(da, ed) / denom;
                let s = cross(da, u) / denom;
                if (-1e-12..=1.0 + 1e-12).contains(&s) && t >= -1e-14 * scale {
                    r_in = r_in.min(t.max(0.0));
                    r_out = r_out.max(t);
                }
            }
            if apex {
                r_in = 0.0;
            }
            let r_end = r_out.min(corner.radius);
            if !(r_end > r_in) {
                continue;
            }
            let theta = theta_c + psi;
            let mut pieces = [(r_in, r_end), (0.0, 0.0)];
            if r_in < inner && inner < r_end {
                pieces = [(r_in, inner), (inner, r_end)];
            }
            for &(a, b) in &pieces {
                if b <= a {
                    continue;
                }
                for (&sx, &sw) in rx.iter().zip(rw) {
                    let (r, jac) = if a == 0.0 {
                        let sm = sx.powi(RADIAL_POWER - 1);
                        (b * sm * sx, b * RADIAL_POWER as f64 * sm)
                    } else {
                        (a + (b - a) * sx, b - a)
                    };
                    let x_pt = [q[0] + r * u[0], q[1] + r * u[1]];
                    let v = f(r, theta, x_pt);
                    let weight = width * w * sw * jac * r;
                    for k in 0..N {
                        total[k] += weight * v[k];
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Integral over the part of `tri` inside the cutoff disk, choosing polar or
/// standard quadrature by [`classify`].
fn integrate_corner_triangle<const N: usize>(
    tri: &[Point; 3],
    corner: &ReentrantCorner,
    rules: &PolarRules,
    far_rule: &QuadratureRule,
    mut f: impl FnMut(f64, f64, Point) -> [f64; N],
) -> Result<[f64; N], SingularError> {
    match classify(tri, corner) {
        TriangleTreatment::Outside => Ok([0.0; N]),
        TriangleTreatment::Polar => integrate_polar(tri, corner, rules, f),
        TriangleTreatment::Standard => {
            let area = signed_area(*tri);
            let hint = [
                (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
                (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
            ];
            let mut total = [0.0; N];
            for qi in 0..far_rule.len() {
                let x = far_rule.map(qi, tri);
                let (r, theta) = corner.local_polar(x, hint)?;
                let v = f(r, theta, x);
                for k in 0..N {
                    total[k] += area * far_rule.weights[qi] * v[k];
                }
            }
            Ok(total)
        }
    }
}

/// Mesh integrals of the analytic part of one corner's singular function.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerIntegrals {
    /// `(Δs⁻, φ_i)` over interior hats.
    pub laplacian_load: Vec<f64>,
    /// `(s⁻, φ_i)` over interior hats.
    pub moment_s: Vec<f64>,
    /// `‖s⁻‖²`
    pub s_norm_sq: f64,
}

pub fn corner_integrals(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    corner: &ReentrantCorner,
) -> Result<CornerIntegrals, SingularError> {
    let rules = PolarRules::new();
    let far_rule = QuadratureRule::of_order(FAR_ORDER);
    let mut laplacian_load = vec![0.0; dofs.len()];
    let mut moment_s = vec![0.0; dofs.len()];
    let mut s_norm_sq = 0.0;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let tri = mesh.triangle_points(ti);
        let v = integrate_corner_triangle(&tri, corner, &rules, &far_rule, |r, theta, x| {
            let s = s_minus_polar(corner, r, theta);
            let ls = laplacian_s_minus_polar(corner, r, theta);
            let l = barycentric(tri, x);
            [s * l[0], s * l[1], s * l[2], ls * l[0], ls * l[1], ls * l[2], s * s]
        })?;
        for a in 0..3 {
            if let Some(i) = dofs.dof_of_vertex[t[a]] {
                moment_s[i] += v[a];
                laplacian_load[i] += v[3 + a];
            }
        }
        s_norm_sq += v[6];
    }
    Ok(CornerIntegrals {
        laplacian_load,
        moment_s,
        s_norm_sq,
    })
}

/// `∫ s⁻_a s⁻_b` for two different corners.
fn cross_s_integral(
    mesh: &TriangleMesh,
    a: &ReentrantCorner,
    b: &ReentrantCorner,
) -> Result<f64, SingularError> {
    let separation = (a.origin[0] - b.origin[0]).hypot(a.origin[1] - b.origin[1]);
    if separation >= a.radius + b.radius {
        // supports meet at most in a point
        return Ok(0.0);
    }
    let rules = PolarRules::new();
    let far_rule = QuadratureRule::of_order(FAR_ORDER);
    let mut total = 0.0;
    for ti in 0..mesh.num_triangles() {
        let tri = mesh.triangle_points(ti);
        let hint = mesh.centroid(ti);
        let mut err = None;
        let v = integrate_corner_triangle(&tri, a, &rules, &far_rule, |r, theta, x| {
            let sb = match b.local_polar(x, hint) {
                Ok((rb, tb)) if rb > 0.0 => s_minus_polar(b, rb, tb),
                Ok(_) => 0.0,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            };
            [s_minus_polar(a, r, theta) * sb]
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        total += v[0];
    }
    Ok(total)
}

/// `ζ_h` for one corner: `A ζ = ((Δs⁻, φ_i))_i`.
pub fn solve_zeta(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    stiffness: &SpdSolver,
    corner: &ReentrantCorner,
) -> Result<Vec<f64>, SingularError> {
    let integrals = corner_integrals(mesh, dofs, corner)?;
    Ok(stiffness.solve(&integrals.laplacian_load)?)
}

/// Discrete corrector `ξ_h = s⁻ + ζ_h` of one corner.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularField {
    pub corner: ReentrantCorner,
    pub alpha: f64,
    pub zeta: Vec<f64>,
    /// `(φ_i, ξ_h)` over interior hats; `(w, ξ_h) = wᵀ moment_b` for any
    /// finite element function `w`.
    pub moment_b: Vec<f64>,
    /// `(φ_i, s⁻)`
    pub moment_s: Vec<f64>,
    /// `‖s⁻‖²`
    pub s_norm_sq: f64,
    /// `‖ξ_h‖²`
    pub norm_sq: f64,
}

impl SingularField {
    pub fn build(
        mesh: &TriangleMesh,
        dofs: &DofMap,
        stiffness: &SpdSolver,
        mass: &SymmetricSparse,
        corner: &ReentrantCorner,
    ) -> Result<Self, SingularError> {
        let integrals = corner_integrals(mesh, dofs, corner)?;
        let zeta = stiffness.solve(&integrals.laplacian_load)?;
        let m_zeta = mass.mul_vec(&zeta);
        let moment_b: Vec<f64> = integrals.moment_s.iter().zip(&m_zeta).map(|(s, z)| s + z).collect();
        let zs: f64 = zeta.iter().zip(&integrals.moment_s).map(|(z, s)| z * s).sum();
        let zz: f64 = zeta.iter().zip(&m_zeta).map(|(z, mz)| z * mz).sum();
        let norm_sq = integrals.s_norm_sq + 2.0 * zs + zz;
        Ok(Self {
            corner: *corner,
            alpha: corner.alpha(),
            zeta,
            moment_b,
            moment_s: integrals.moment_s,
            s_norm_sq: integrals.s_norm_sq,
            norm_sq,
        })
    }

    /// `(w, ξ_h)` for a finite element function with interior coefficients `w`.
    pub fn moment(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.moment_b).map(|(a, b)| a * b).sum()
    }
}

/// Corrector fields of all corners with their Gram matrix `(ξ_i, ξ_j)`.
#[derive(Debug, Clone)]
pub struct CorrectionSystem {
    pub fields: Vec<SingularField>,
    pub gram: DMatrix<f64>,
    gram_factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl CorrectionSystem {
    pub fn empty() -> Self {
        Self {
            fields: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            gram_factor: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn from_fields(fields: Vec<SingularField>, gram: DMatrix<f64>) -> Result<Self, SingularError> {
        if fields.is_empty() {
            return Ok(Self::empty());
        }
        let smallest = gram.clone().symmetric_eigen().eigenvalues.min();
        if !(smallest > 0.0) {
            return Err(SingularError::GramNotSpd(smallest));
        }
        let factor = gram.clone().cholesky().ok_or(SingularError::GramNotSpd(smallest))?;
        Ok(Self {
            fields,
            gram,
            gram_factor: Some(factor),
        })
    }

    /// Coefficients `c` with `gram c = ((w, ξ_i))_i`.
    pub fn correction_coeffs(&self, w: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = self.fields.iter().map(|f| f.moment(w)).collect();
        self.solve_gram(&rhs)
    }

    pub fn solve_gram(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.gram_factor {
            None => Vec::new(),
            Some(factor) => factor.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec(),
        }
    }

    /// Subtracts `Σ_i c_i (φ_j, ξ_i)` from a load vector.
    pub fn subtract_correction(&self, load: &mut [f64], coeffs: &[f64]) {
        for (field, &c) in self.fields.iter().zip(coeffs) {
            for (l, b) in load.iter_mut().zip(&field.moment_b) {
                *l -= c * b;
            }
        }
    }
}

/// Builds one corrector per corner of the mesh and their Gram matrix.
pub fn build_correction_system(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    stiffness: &SpdSolver,
    mass: &SymmetricSparse,
) -> Result<CorrectionSystem, SingularError> {
    let fields = mesh
        .corners
        .iter()
        .map(|c| SingularField::build(mesh, dofs, stiffness, mass, c))
        .collect::<Result<Vec<_>, _>>()?;
    let n = fields.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        gram[(i, i)] = fields[i].norm_sq;
        for j in 0..i {
            let (fi, fj) = (&fields[i], &fields[j]);
            let ss = cross_s_integral(mesh, &fi.corner, &fj.corner)?;
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let zz = mass.inner(&fi.zeta, &fj.zeta);
            let v = ss + dot(&fi.zeta, &fj.moment_s) + dot(&fj.zeta, &fi.moment_s) + zz;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    CorrectionSystem::from_fields(fields, gram)
}
