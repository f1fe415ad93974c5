//! Quadrature on the reference triangle `{(0,0), (1,0), (0,1)}` and the
//! reference edge `[0, 1]`.

use crate::error::{Error, Result};

/// Highest exactness degree either rule family will build.
pub const MAX_DEGREE: usize = 40;

/// Points and weights on a `D`-dimensional reference cell.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub degree: usize,
}

pub type TriangleRule = QuadratureRule<2>;
pub type EdgeRule = QuadratureRule<1>;

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; D], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, `n ≥ 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule on `[0, 1]` exact to `degree`.
pub fn quadrature_edge(degree: usize) -> Result<EdgeRule> {
    if degree > MAX_DEGREE {
        return Err(Error::QuadratureDegree { degree, max: MAX_DEGREE });
    }
    let n = degree / 2 + 1;
    let (x, w) = gauss_legendre(n);
    Ok(QuadratureRule {
        points: x.iter().map(|&xi| [0.5 * (xi + 1.0)]).collect(),
        weights: w.iter().map(|wi| 0.5 * wi).collect(),
        degree: 2 * n - 1,
    })
}

/// Triangle rule exact to at least `degree`, weights summing to 1/2.
///
/// Degrees 0 to 2 use the symmetric centroid and three-point rules; higher
/// degrees use the collapsed (Duffy) tensor product of Gauss–Legendre rules.
pub fn quadrature_triangle(degree: usize) -> Result<TriangleRule> {
    if degree > MAX_DEGREE {
        return Err(Error::QuadratureDegree { degree, max: MAX_DEGREE });
    }
    match degree {
        0 | 1 => Ok(QuadratureRule { points: vec![[1.0 / 3.0, 1.0 / 3.0]], weights: vec![0.5], degree: 1 }),
        2 => Ok(QuadratureRule {
            points: vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
            weights: vec![1.0 / 6.0; 3],
            degree: 2,
        }),
        _ => {
            // x = s, y = (1 - s) t with Jacobian (1 - s): degree + 1 in s
            let n = (degree + 2).div_ceil(2);
            let (g, gw) = gauss_legendre(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for (&si, &swi) in g.iter().zip(&gw) {
                let s = 0.5 * (si + 1.0);
                for (&ti, &twi) in g.iter().zip(&gw) {
                    let t = 0.5 * (ti + 1.0);
                    points.push([s, (1.0 - s) * t]);
                    weights.push(0.25 * swi * twi * (1.0 - s));
                }
            }
            Ok(QuadratureRule { points, weights, degree })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// ∫_T x^a y^b = a! b! / (a + b + 2)!
    fn monomial_integral(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn centroid_rule() {
        let r = quadrature_triangle(1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.weights[0], 0.5);
        assert_eq!(r.points[0], [1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn edge_degree_three_is_two_point() {
        let r = quadrature_edge(3).unwrap();
        assert_eq!(r.len(), 2);
        let off = 0.5 / 3f64.sqrt();
        assert!((r.points[0][0] - (0.5 - off)).abs() < 1e-15);
        assert!((r.points[1][0] - (0.5 + off)).abs() < 1e-15);
    }

    #[test]
    fn triangle_exactness() {
        for d in 0..=24usize {
            let r = quadrature_triangle(d).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14, "degree {d}");
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let q: f64 = r.iter().map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    let exact = monomial_integral(a, b);
                    assert!((q - exact).abs() < 1e-12, "degree {d}: x^{a} y^{b}: {q} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn edge_exactness() {
        for d in 0..=30usize {
            let r = quadrature_edge(d).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for k in 0..=d as i32 {
                let q: f64 = r.iter().map(|(p, w)| w * p[0].powi(k)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-12, "degree {d}, power {k}");
            }
        }
    }

    #[test]
    fn too_high_degree() {
        assert!(matches!(quadrature_triangle(MAX_DEGREE + 1), Err(Error::QuadratureDegree { .. })));
        assert!(quadrature_edge(MAX_DEGREE + 1).is_err());
    }
}
