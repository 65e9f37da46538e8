//! Structured triangulations of the model domains, uniform red refinement,
//! interior degree-of-freedom indexing and corner-local polar coordinates.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

pub type Point = [f64; 2];

/// Tolerance on the local angle before a point is declared outside the sector.
pub const ANGLE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("point ({x}, {y}) has local angle {theta} outside [0, {omega}] for corner at ({qx}, {qy})")]
    AngleOutOfSector {
        x: f64,
        y: f64,
        theta: f64,
        omega: f64,
        qx: f64,
        qy: f64,
    },
    #[error("triangle {0} has non-positive signed area {1}")]
    DegenerateTriangle(usize, f64),
    #[error("unknown domain '{0}' (expected square, lshape, slit or ring)")]
    UnknownDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    UnitSquare,
    LShape,
    Slit,
    SquareRing,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] = [
        DomainKind::UnitSquare,
        DomainKind::LShape,
        DomainKind::Slit,
        DomainKind::SquareRing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::UnitSquare => "square",
            DomainKind::LShape => "lshape",
            DomainKind::Slit => "slit",
            DomainKind::SquareRing => "ring",
        }
    }

    pub fn area(self) -> f64 {
        match self {
            DomainKind::UnitSquare | DomainKind::Slit => 1.0,
            DomainKind::LShape => 0.75,
            DomainKind::SquareRing => 8.0 / 9.0,
        }
    }

    /// V - E + F of any conforming triangulation (slit sides counted apart).
    pub fn euler_characteristic(self) -> i64 {
        match self {
            DomainKind::SquareRing => 0,
            _ => 1,
        }
    }

    pub fn is_convex(self) -> bool {
        self == DomainKind::UnitSquare
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainKind {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "square" | "unit_square" | "unitsquare" => Ok(DomainKind::UnitSquare),
            "lshape" | "l_shape" | "l-shape" => Ok(DomainKind::LShape),
            "slit" => Ok(DomainKind::Slit),
            "ring" | "square_ring" | "squarering" => Ok(DomainKind::SquareRing),
            other => Err(MeshError::UnknownDomain(other.to_string())),
        }
    }
}

/// A boundary corner with interior angle `omega > pi`, together with the
/// cutoff parameters of its singular function.
///
/// The local frame puts the boundary ray `theta = 0` at `frame_angle`
/// (measured from the positive x-axis); the domain near the corner is the
/// sector `0 <= theta <= omega`, swept counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReentrantCorner {
    pub origin: Point,
    pub omega: f64,
    pub frame_angle: f64,
    pub tau: f64,
    pub radius: f64,
}

impl ReentrantCorner {
    /// Singular exponent `pi / omega`.
    pub fn alpha(&self) -> f64 {
        PI / self.omega
    }

    pub fn distance(&self, p: Point) -> f64 {
        (p[0] - self.origin[0]).hypot(p[1] - self.origin[1])
    }

    /// Converts a point to `(r, theta)` in the corner frame.
    ///
    /// `hint` is a point strictly inside the triangle the evaluation belongs
    /// to (its centroid); it picks the side of a slit for points lying on
    /// the `theta = 0` ray. The angle is unwrapped relative to the hint's own
    /// angle, so any point of the same triangle gets a consistent value.
    pub fn local_polar(&self, p: Point, hint: Point) -> Result<(f64, f64), MeshError> {
        let hint_theta = self.raw_angle(hint);
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        let r = dx.hypot(dy);
        if r == 0.0 {
            return Ok((0.0, hint_theta.clamp(0.0, self.omega)));
        }
        let phi = dy.atan2(dx) - self.frame_angle;
        let theta = hint_theta + wrap_pm_pi(phi - hint_theta);
        if theta < -ANGLE_TOL || theta > self.omega + ANGLE_TOL {
            return Err(MeshError::AngleOutOfSector {
                x: p[0],
                y: p[1],
                theta,
                omega: self.omega,
                qx: self.origin[0],
                qy: self.origin[1],
            });
        }
        Ok((r, theta.clamp(0.0, self.omega)))
    }

    /// Frame angle of a point in `[0, 2 pi)`, with no side disambiguation.
    fn raw_angle(&self, p: Point) -> f64 {
        let phi = (p[1] - self.origin[1]).atan2(p[0] - self.origin[0]) - self.frame_angle;
        phi.rem_euclid(2.0 * PI)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pm_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub domain: DomainKind,
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    pub level: usize,
    pub corners: Vec<ReentrantCorner>,
}

/// Cells per unit length of the unit-square initial mesh.
pub const UNIT_SQUARE_CELLS: usize = 4;

const LSHAPE_TAU: f64 = 1.0 / 8.0;
const LSHAPE_RADIUS: f64 = 1.0 / 4.0;
const RING_TAU: f64 = 1.0 / 8.0;
const RING_RADIUS: f64 = 1.0 / 6.0;

pub fn build_initial_mesh(domain: DomainKind) -> TriangleMesh {
    match domain {
        DomainKind::UnitSquare => build_unit_square(UNIT_SQUARE_CELLS),
        DomainKind::LShape => build_lshape(),
        DomainKind::Slit => build_slit(),
        DomainKind::SquareRing => build_square_ring(),
    }
}

/// Builds the mesh of `domain` refined `level` times.
pub fn build_mesh(domain: DomainKind, level: usize) -> TriangleMesh {
    let mut mesh = build_initial_mesh(domain);
    for _ in 0..level {
        mesh = refine_red(&mesh);
    }
    mesh
}

/// Unit square with `cells x cells` squares, each split along the
/// lower-left to upper-right diagonal.
pub fn build_unit_square(cells: usize) -> TriangleMesh {
    let mut b = GridBuilder::new(cells);
    for j in 0..cells {
        for i in 0..cells {
            b.cell(i, j, Diagonal::Rising);
        }
    }
    b.finish(DomainKind::UnitSquare, Vec::new())
}

fn build_lshape() -> TriangleMesh {
    let mut b = GridBuilder::new(2);
    b.cell(0, 0, Diagonal::Rising);
    b.cell(0, 1, Diagonal::Rising);
    b.cell(1, 1, Diagonal::Rising);
    let corner = ReentrantCorner {
        origin: [0.5, 0.5],
        omega: 1.5 * PI,
        frame_angle: 0.0,
        tau: LSHAPE_TAU,
        radius: LSHAPE_RADIUS,
    };
    b.finish(DomainKind::LShape, vec![corner])
}

fn build_slit() -> TriangleMesh {
    let mut b = GridBuilder::new(2);
    b.slit_row = Some(1);
    for j in 0..2 {
        for i in 0..2 {
            b.cell(i, j, Diagonal::Rising);
        }
    }
    let corner = ReentrantCorner {
        origin: [0.5, 0.5],
        omega: 2.0 * PI,
        frame_angle: 0.0,
        tau: LSHAPE_TAU,
        radius: LSHAPE_RADIUS,
    };
    b.finish(DomainKind::Slit, vec![corner])
}

fn build_square_ring() -> TriangleMesh {
    let mut b = GridBuilder::new(6);
    for j in 0..6 {
        for i in 0..6 {
            if (2..4).contains(&i) && (2..4).contains(&j) {
                continue;
            }
            // Diagonals point toward the hole center in every quadrant, which
            // keeps the mesh invariant under the symmetries of the square.
            let left = i < 3;
            let low = j < 3;
            let diag = if left == low {
                Diagonal::Rising
            } else {
                Diagonal::Falling
            };
            b.cell(i, j, diag);
        }
    }
    let (a, c) = (1.0 / 3.0, 2.0 / 3.0);
    let corner = |origin: Point, frame_angle: f64| ReentrantCorner {
        origin,
        omega: 1.5 * PI,
        frame_angle,
        tau: RING_TAU,
        radius: RING_RADIUS,
    };
    let corners = vec![
        corner([a, a], 0.5 * PI),
        corner([c, a], PI),
        corner([c, c], 1.5 * PI),
        corner([a, c], 0.0),
    ];
    b.finish(DomainKind::SquareRing, corners)
}

#[derive(Clone, Copy)]
enum Diagonal {
    Rising,
    Falling,
}

/// Collects cells of a uniform `n x n` grid on the unit square.
///
/// With `slit_row = Some(j)`, lattice points on the grid line `y = j / n`
/// strictly right of the slit tip are duplicated: triangles above the line
/// get one copy, triangles below it the other.
struct GridBuilder {
    n: usize,
    slit_row: Option<usize>,
    index: HashMap<(usize, usize, bool), usize>,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

impl GridBuilder {
    fn new(n: usize) -> Self {
        Self {
            n,
            slit_row: None,
            index: HashMap::new(),
            vertices: Vec::new(),
            triangles: Vec::new(),
        }
    }

    fn vertex(&mut self, i: usize, j: usize, upper: bool) -> usize {
        let on_slit = self.slit_row == Some(j) && 2 * i > self.n;
        let key = (i, j, on_slit && !upper);
        let n = self.n as f64;
        let vertices = &mut self.vertices;
        *self.index.entry(key).or_insert_with(|| {
            vertices.push([i as f64 / n, j as f64 / n]);
            vertices.len() - 1
        })
    }

    fn cell(&mut self, i: usize, j: usize, diag: Diagonal) {
        // lattice points of this cell: the lower edge belongs to the upper
        // side of any slit below, the upper edge to the lower side above.
        let ll = self.vertex(i, j, true);
        let lr = self.vertex(i + 1, j, true);
        let ul = self.vertex(i, j + 1, false);
        let ur = self.vertex(i + 1, j + 1, false);
        match diag {
            Diagonal::Rising => {
                self.triangles.push([ll, lr, ur]);
                self.triangles.push([ll, ur, ul]);
            }
            Diagonal::Falling => {
                self.triangles.push([ll, lr, ul]);
                self.triangles.push([lr, ur, ul]);
            }
        }
    }

    fn finish(self, domain: DomainKind, corners: Vec<ReentrantCorner>) -> TriangleMesh {
        let boundary = boundary_flags(self.vertices.len(), &self.triangles);
        TriangleMesh {
            domain,
            vertices: self.vertices,
            triangles: self.triangles,
            boundary,
            level: 0,
            corners,
        }
    }
}

fn sorted_edge(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Number of triangles sharing each edge.
fn edge_counts(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut counts = HashMap::with_capacity(triangles.len() * 2);
    for t in triangles {
        for e in 0..3 {
            *counts.entry(sorted_edge(t[e], t[(e + 1) % 3])).or_insert(0) += 1;
        }
    }
    counts
}

fn boundary_flags(nv: usize, triangles: &[[usize; 3]]) -> Vec<bool> {
    let mut flags = vec![false; nv];
    for ((a, b), count) in edge_counts(triangles) {
        if count == 1 {
            flags[a] = true;
            flags[b] = true;
        }
    }
    flags
}

/// Uniform red refinement: every triangle is split into four similar
/// children through its edge midpoints.
///
/// Midpoints are shared through the parent edge, so edges on opposite sides
/// of a slit (which have distinct endpoint copies) get distinct midpoints.
pub fn refine_red(mesh: &TriangleMesh) -> TriangleMesh {
    let mut vertices = mesh.vertices.clone();
    let mut boundary = mesh.boundary.clone();
    let counts = edge_counts(&mesh.triangles);
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(counts.len());
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());

    for t in &mesh.triangles {
        let mut m = [0usize; 3];
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            let key = sorted_edge(a, b);
            m[e] = *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                boundary.push(counts[&key] == 1);
                vertices.len() - 1
            });
        }
        // m[0] on edge (t0,t1), m[1] on (t1,t2), m[2] on (t2,t0)
        triangles.push([t[0], m[0], m[2]]);
        triangles.push([m[0], t[1], m[1]]);
        triangles.push([m[2], m[1], t[2]]);
        triangles.push([m[0], m[1], m[2]]);
    }

    TriangleMesh {
        domain: mesh.domain,
        vertices,
        triangles,
        boundary,
        level: mesh.level + 1,
        corners: mesh.corners.clone(),
    }
}

impl TriangleMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(self.triangle_points(t))
    }

    pub fn num_edges(&self) -> usize {
        edge_counts(&self.triangles).len()
    }

    /// Edge-sharing counts, sorted by edge; every entry must be 1 or 2.
    pub fn edge_multiplicities(&self) -> Vec<usize> {
        let mut v: Vec<_> = edge_counts(&self.triangles).into_iter().collect();
        v.sort_unstable();
        v.into_iter().map(|(_, c)| c).collect()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges() as i64 + self.num_triangles() as i64
    }

    /// Largest element diameter.
    pub fn max_diameter(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| diameter(self.triangle_points(t)))
            .fold(0.0, f64::max)
    }

    pub fn min_angle(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| min_angle(self.triangle_points(t)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Max over triangles of diameter / inscribed-circle diameter.
    pub fn shape_regularity(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| {
                let p = self.triangle_points(t);
                diameter(p) / inscribed_diameter(p)
            })
            .fold(0.0, f64::max)
    }

    pub fn check_orientation(&self) -> Result<(), MeshError> {
        for t in 0..self.num_triangles() {
            let a = self.signed_area(t);
            if a <= 0.0 {
                return Err(MeshError::DegenerateTriangle(t, a));
            }
        }
        Ok(())
    }

    /// Groups of vertex indices sharing the same coordinates (slit copies).
    pub fn duplicated_vertices(&self) -> Vec<Vec<usize>> {
        let mut by_coord: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
        for (i, p) in self.vertices.iter().enumerate() {
            by_coord.entry((p[0].to_bits(), p[1].to_bits())).or_default().push(i);
        }
        let mut groups: Vec<_> = by_coord.into_values().filter(|g| g.len() > 1).collect();
        groups.sort();
        groups
    }

    /// Plain-text dump: `nv nt level`, then `x y boundary_flag` per vertex,
    /// then `i j k` per triangle.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.num_vertices(), self.num_triangles(), self.level)?;
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            writeln!(out, "{} {} {}", p[0], p[1], u8::from(b))?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

pub fn signed_area(p: [Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

fn edge_lengths(p: [Point; 3]) -> [f64; 3] {
    let d = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    [d(p[1], p[2]), d(p[2], p[0]), d(p[0], p[1])]
}

pub fn diameter(p: [Point; 3]) -> f64 {
    edge_lengths(p).into_iter().fold(0.0, f64::max)
}

fn inscribed_diameter(p: [Point; 3]) -> f64 {
    let l = edge_lengths(p);
    4.0 * signed_area(p).abs() / (l[0] + l[1] + l[2])
}

fn min_angle(p: [Point; 3]) -> f64 {
    let [a, b, c] = edge_lengths(p);
    let angle = |opp: f64, s1: f64, s2: f64| ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0).acos();
    angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b))
}

/// Map between non-boundary vertices and contiguous unknown indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub dof_of_vertex: Vec<Option<usize>>,
    pub vertex_of_dof: Vec<usize>,
}

impl DofMap {
    pub fn len(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_of_dof.is_empty()
    }

    pub fn num_boundary(&self) -> usize {
        self.dof_of_vertex.len() - self.len()
    }
}

pub fn interior_index(mesh: &TriangleMesh) -> DofMap {
    let mut dof_of_vertex = vec![None; mesh.num_vertices()];
    let mut vertex_of_dof = Vec::new();
    for (v, &on_boundary) in mesh.boundary.iter().enumerate() {
        if !on_boundary {
            dof_of_vertex[v] = Some(vertex_of_dof.len());
            vertex_of_dof.push(v);
        }
    }
    DofMap {
        dof_of_vertex,
        vertex_of_dof,
    }
}
