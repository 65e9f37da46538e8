//! P1 Lagrange assembly on interior degrees of freedom.

pub mod quadrature;
pub mod solver;
pub mod sparse;

use thiserror::Error;

use crate::mesh::{signed_area, DofMap, Point, TriangleMesh};

pub use quadrature::QuadratureRule;
pub use solver::{solve_spd, SolverError, SolverKind, SolverOptions, SpdSolver};
pub use sparse::SymmetricSparse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("degenerate triangle {triangle}: signed area {area}")]
    Geometry { triangle: usize, area: f64 },
}

pub type LocalMatrix = [[f64; 3]; 3];

/// Gradients of the three barycentric coordinates and the triangle area.
pub fn barycentric_gradients(p: [Point; 3]) -> Option<([[f64; 2]; 3], f64)> {
    let area = signed_area(p);
    if area <= 0.0 || !area.is_finite() {
        return None;
    }
    let inv = 1.0 / (2.0 * area);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let (b, c) = (p[(a + 1) % 3], p[(a + 2) % 3]);
        g[a] = [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv];
    }
    Some((g, area))
}

/// Barycentric coordinates of `x` in triangle `p`.
pub fn barycentric(p: [Point; 3], x: Point) -> [f64; 3] {
    let area2 = 2.0 * signed_area(p);
    let sub = |a: Point, b: Point| (a[0] - x[0]) * (b[1] - x[1]) - (b[0] - x[0]) * (a[1] - x[1]);
    let l0 = sub(p[1], p[2]) / area2;
    let l1 = sub(p[2], p[0]) / area2;
    [l0, l1, 1.0 - l0 - l1]
}

pub fn local_stiffness(p: [Point; 3]) -> Option<LocalMatrix> {
    let (g, area) = barycentric_gradients(p)?;
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let v = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            k[a][b] = v;
            k[b][a] = v;
        }
    }
    Some(k)
}

pub fn local_mass(p: [Point; 3]) -> Option<LocalMatrix> {
    let area = signed_area(p);
    if area <= 0.0 || !area.is_finite() {
        return None;
    }
    let d = area / 6.0;
    let o = area / 12.0;
    Some([[d, o, o], [o, d, o], [o, o, d]])
}

/// Degree-of-freedom map that treats every vertex as an unknown (used for
/// checks that need boundary hats too).
pub fn all_vertices(mesh: &TriangleMesh) -> DofMap {
    DofMap {
        dof_of_vertex: (0..mesh.num_vertices()).map(Some).collect(),
        vertex_of_dof: (0..mesh.num_vertices()).collect(),
    }
}

fn sparsity(mesh: &TriangleMesh, dofs: &DofMap) -> SymmetricSparse {
    let mut rows = vec![Vec::new(); dofs.len()];
    for t in &mesh.triangles {
        for &a in t {
            if let Some(i) = dofs.dof_of_vertex[a] {
                rows[i].extend(t.iter().filter_map(|&b| dofs.dof_of_vertex[b]));
            }
        }
    }
    SymmetricSparse::with_pattern(rows)
}

fn assemble(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    local: fn([Point; 3]) -> Option<LocalMatrix>,
) -> Result<SymmetricSparse, FemError> {
    let mut m = sparsity(mesh, dofs);
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let p = mesh.triangle_points(ti);
        let k = local(p).ok_or(FemError::Geometry {
            triangle: ti,
            area: signed_area(p),
        })?;
        for a in 0..3 {
            let Some(i) = dofs.dof_of_vertex[t[a]] else { continue };
            for b in 0..3 {
                if let Some(j) = dofs.dof_of_vertex[t[b]] {
                    m.add(i, j, k[a][b]);
                }
            }
        }
    }
    Ok(m)
}

/// `A_ij = (grad phi_i, grad phi_j)` over the given unknowns.
pub fn assemble_stiffness(mesh: &TriangleMesh, dofs: &DofMap) -> Result<SymmetricSparse, FemError> {
    assemble(mesh, dofs, local_stiffness)
}

/// `M_ij = (phi_i, phi_j)` over the given unknowns.
pub fn assemble_mass(mesh: &TriangleMesh, dofs: &DofMap) -> Result<SymmetricSparse, FemError> {
    assemble(mesh, dofs, local_mass)
}

/// Sum over triangles of the area-weighted rule applied to `f(triangle, x)`.
pub fn integrate(mesh: &TriangleMesh, rule: &QuadratureRule, mut f: impl FnMut(usize, Point) -> f64) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(t);
        let area = signed_area(p);
        let s: f64 = (0..rule.len()).map(|q| rule.weights[q] * f(t, rule.map(q, &p))).sum();
        total += area * s;
    }
    total
}

/// Load vector `(f, phi_i)` over interior unknowns.
pub fn assemble_load(
    mesh: &TriangleMesh,
    dofs: &DofMap,
    rule: &QuadratureRule,
    mut f: impl FnMut(usize, Point) -> f64,
) -> Vec<f64> {
    let mut load = vec![0.0; dofs.len()];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let p = mesh.triangle_points(ti);
        let area = signed_area(p);
        for q in 0..rule.len() {
            let w = area * rule.weights[q] * f(ti, rule.map(q, &p));
            for a in 0..3 {
                if let Some(i) = dofs.dof_of_vertex[t[a]] {
                    load[i] += w * rule.points[q][a];
                }
            }
        }
    }
    load
}

/// Nodal interpolant of `f` on the interior unknowns.
pub fn interpolate(mesh: &TriangleMesh, dofs: &DofMap, f: impl Fn(Point) -> f64) -> Vec<f64> {
    dofs.vertex_of_dof.iter().map(|&v| f(mesh.vertices[v])).collect()
}

/// Value of the P1 function with interior coefficients `u` at `x` in triangle `t`.
pub fn evaluate(mesh: &TriangleMesh, dofs: &DofMap, u: &[f64], t: usize, x: Point) -> f64 {
    let l = barycentric(mesh.triangle_points(t), x);
    mesh.triangles[t]
        .iter()
        .zip(l)
        .filter_map(|(&v, l)| dofs.dof_of_vertex[v].map(|i| l * u[i]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, build_mesh, build_unit_square, interior_index, DomainKind};

    const UNIT: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn unit_triangle_stiffness() {
        let k = local_stiffness(UNIT).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((k[a][b] - expected[a][b]).abs() < 1e-15);
            }
            assert!(k[a].iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn stiffness_is_scale_invariant() {
        let p = [[0.1, 0.2], [0.7, 0.3], [0.2, 0.9]];
        let k = local_stiffness(p).unwrap();
        let s = 3.7;
        let ps = p.map(|q| [s * q[0], s * q[1]]);
        let ks = local_stiffness(ps).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((k[a][b] - ks[a][b]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn local_mass_matches_exact_integration() {
        let p = [[0.1, 0.2], [0.7, 0.3], [0.2, 0.9]];
        let m = local_mass(p).unwrap();
        let rule = QuadratureRule::of_order(4);
        let area = signed_area(p);
        for a in 0..3 {
            for b in 0..3 {
                let q: f64 = (0..rule.len())
                    .map(|i| area * rule.weights[i] * rule.points[i][a] * rule.points[i][b])
                    .sum();
                assert!((m[a][b] - q).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let mut mesh = build_unit_square(1);
        mesh.triangles[0].swap(1, 2);
        let dofs = all_vertices(&mesh);
        assert!(matches!(assemble_stiffness(&mesh, &dofs), Err(FemError::Geometry { triangle: 0, .. })));
        assert!(assemble_mass(&mesh, &dofs).is_err());
    }

    #[test]
    fn integrate_area_and_monomial() {
        let mesh = build_initial_mesh(DomainKind::LShape);
        let area = integrate(&mesh, &QuadratureRule::centroid(), |_, _| 1.0);
        assert!((area - 0.75).abs() < 1e-15);
        let tri = build_unit_square(1);
        let mut single = tri.clone();
        single.triangles = vec![[0, 1, 2]];
        single.vertices = UNIT.to_vec();
        let x = integrate(&single, &QuadratureRule::three_point(), |_, p| p[0]);
        assert!((x - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mass_partition_of_unity() {
        for domain in DomainKind::ALL {
            let mesh = build_mesh(domain, 2);
            let full = assemble_mass(&mesh, &all_vertices(&mesh)).unwrap();
            assert!((full.sum_entries() - domain.area()).abs() < 1e-13);
            let dofs = interior_index(&mesh);
            let m = assemble_mass(&mesh, &dofs).unwrap();
            let ones = vec![1.0; dofs.len()];
            assert!(m.inner(&ones, &ones) < domain.area());
        }
    }

    #[test]
    fn matrices_symmetric_positive_and_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for domain in DomainKind::ALL {
            let mesh = build_mesh(domain, 2);
            let dofs = interior_index(&mesh);
            let a = assemble_stiffness(&mesh, &dofs).unwrap();
            let m = assemble_mass(&mesh, &dofs).unwrap();
            assert!(a.is_symmetric() && m.is_symmetric());
            assert_eq!(a, assemble_stiffness(&mesh, &dofs).unwrap());
            assert_eq!(m, assemble_mass(&mesh, &dofs).unwrap());
            for _ in 0..100 {
                let x: Vec<f64> = (0..dofs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert!(a.inner(&x, &x) > 0.0);
                assert!(m.inner(&x, &x) > 0.0);
            }
        }
    }

    #[test]
    fn barycentric_roundtrip() {
        let p = [[0.1, 0.2], [0.7, 0.3], [0.2, 0.9]];
        let l = barycentric(p, [0.3, 0.4]);
        let x = [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ];
        assert!((x[0] - 0.3).abs() < 1e-15 && (x[1] - 0.4).abs() < 1e-15);
    }
}
