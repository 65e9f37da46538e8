//! Gauss-Legendre rules on intervals and positive interior rules on triangles.

use std::f64::consts::PI;

use crate::mesh::Point;

/// Gauss-Legendre nodes and weights on `[0, 1]` (weights sum to 1).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n starting from the Chebyshev-like guess.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// A rule on the reference triangle in barycentric coordinates, with
/// weights normalized to sum to 1 (multiply by the element area).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub order: usize,
}

impl QuadratureRule {
    pub fn centroid() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            order: 1,
        }
    }

    /// Three interior points, exact for quadratics (P1 x P1 products).
    pub fn three_point() -> Self {
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        Self {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            order: 2,
        }
    }

    /// Collapsed (conical product) Gauss rule exact for total degree `order`.
    /// All nodes are interior and all weights positive.
    pub fn of_order(order: usize) -> Self {
        match order {
            0 | 1 => return Self::centroid(),
            2 => return Self::three_point(),
            _ => {}
        }
        let (nu, nv) = ((order + 2).div_ceil(2), (order + 1).div_ceil(2));
        let (us, wus) = gauss_legendre(nu);
        let (vs, wvs) = gauss_legendre(nv);
        let mut points = Vec::with_capacity(nu * nv);
        let mut weights = Vec::with_capacity(nu * nv);
        for (&u, &wu) in us.iter().zip(&wus) {
            for (&v, &wv) in vs.iter().zip(&wvs) {
                let xi = u;
                let eta = (1.0 - u) * v;
                points.push([1.0 - xi - eta, xi, eta]);
                weights.push(2.0 * wu * wv * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Physical coordinates of node `q` on triangle `p`.
    pub fn map(&self, q: usize, p: &[Point; 3]) -> Point {
        let l = self.points[q];
        [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]
    }
}

/// Default rule for P1 x P1 products.
pub const MASS_ORDER: usize = 2;
/// Default rule for smooth non-polynomial integrands.
pub const SMOOTH_ORDER: usize = 6;
