//! Broken polynomial spaces on triangulations.
//!
//! A [`DgSpace`] is the space of vector fields with `n_components` entries
//! whose restriction to every triangle is a polynomial of degree at most
//! `degree`, with no continuity imposed across edges. Degrees of freedom are
//! nodal values at the equispaced Lagrange lattice of each element, laid out
//! element by element:
//!
//! ```text
//! index(K, node, comp) = K * dofs_per_element + node * n_components + comp
//! ```

pub mod quadrature;
pub mod tables;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

pub use quadrature::{quadrature_edge, quadrature_triangle, EdgeRule, QuadratureRule, TriangleRule};
pub use tables::{EdgeTable, ElementTable, SideTable};

/// Exactness degree for integrating `|v|^p` of a degree-`q` polynomial (exact for even integer `p`).
pub fn power_degree(q: usize, p: f64) -> usize {
    (q * p.ceil().max(1.0) as usize).clamp(1, quadrature::MAX_DEGREE)
}

/// Number of monomials of total degree `<= q` in two variables.
pub fn poly_dim(q: usize) -> usize {
    (q + 1) * (q + 2) / 2
}

/// Nodal Lagrange basis of degree `q` on the reference triangle.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    degree: usize,
    nodes: Vec<[f64; 2]>,
    exponents: Vec<(i32, i32)>,
    /// Column `j` holds the monomial coefficients of basis function `j`.
    coeffs: DMatrix<f64>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Self {
        let nodes: Vec<[f64; 2]> = if degree == 0 {
            vec![[1.0 / 3.0, 1.0 / 3.0]]
        } else {
            let q = degree as f64;
            let mut v = Vec::with_capacity(poly_dim(degree));
            // vertices first so that degree 1 matches the triangle's vertex order
            v.extend([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
            for j in 0..=degree {
                for i in 0..=(degree - j) {
                    let is_vertex = (i == 0 && j == 0) || (i == degree && j == 0) || (i == 0 && j == degree);
                    if !is_vertex {
                        v.push([i as f64 / q, j as f64 / q]);
                    }
                }
            }
            v
        };
        let mut exponents = Vec::with_capacity(nodes.len());
        for total in 0..=degree as i32 {
            for b in 0..=total {
                exponents.push((total - b, b));
            }
        }
        let n = nodes.len();
        let vandermonde = DMatrix::from_fn(n, n, |i, k| {
            let (a, b) = exponents[k];
            nodes[i][0].powi(a) * nodes[i][1].powi(b)
        });
        let coeffs = vandermonde.try_inverse().expect("Lagrange lattice is unisolvent");
        LagrangeBasis { degree, nodes, exponents, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn values(&self, xi: [f64; 2]) -> Vec<f64> {
        let mono: Vec<f64> = self.exponents.iter().map(|&(a, b)| xi[0].powi(a) * xi[1].powi(b)).collect();
        (0..self.dim())
            .map(|j| mono.iter().enumerate().map(|(k, m)| m * self.coeffs[(k, j)]).sum())
            .collect()
    }

    /// Reference-coordinate gradients of every basis function.
    pub fn gradients(&self, xi: [f64; 2]) -> Vec<[f64; 2]> {
        let dmono: Vec<[f64; 2]> = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                let dx = if a > 0 { a as f64 * xi[0].powi(a - 1) * xi[1].powi(b) } else { 0.0 };
                let dy = if b > 0 { b as f64 * xi[0].powi(a) * xi[1].powi(b - 1) } else { 0.0 };
                [dx, dy]
            })
            .collect();
        (0..self.dim())
            .map(|j| {
                let mut g = [0.0; 2];
                for (k, d) in dmono.iter().enumerate() {
                    g[0] += d[0] * self.coeffs[(k, j)];
                    g[1] += d[1] * self.coeffs[(k, j)];
                }
                g
            })
            .collect()
    }
}

/// Affine map `x = origin + jac · ξ` from the reference triangle onto an element.
#[derive(Clone, Copy, Debug)]
pub struct ElementMap {
    pub origin: Vector2<f64>,
    pub jac: Matrix2<f64>,
    pub jac_inv: Matrix2<f64>,
    pub det: f64,
}

impl ElementMap {
    pub fn new(verts: [[f64; 2]; 3]) -> Self {
        let [a, b, c] = verts;
        let jac = Matrix2::new(b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1]);
        let det = jac.determinant();
        let jac_inv = jac.try_inverse().unwrap_or_else(Matrix2::zeros);
        ElementMap { origin: Vector2::new(a[0], a[1]), jac, jac_inv, det }
    }

    pub fn to_physical(&self, xi: [f64; 2]) -> [f64; 2] {
        let x = self.origin + self.jac * Vector2::new(xi[0], xi[1]);
        [x[0], x[1]]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let xi = self.jac_inv * (Vector2::new(x[0], x[1]) - self.origin);
        [xi[0], xi[1]]
    }

    /// Pulls a reference gradient back to physical coordinates.
    pub fn physical_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let p = self.jac_inv.transpose() * Vector2::new(g[0], g[1]);
        [p[0], p[1]]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }
}

/// The broken space `V_h^q` of `n_components`-valued fields.
#[derive(Debug)]
pub struct DgSpace {
    mesh: Arc<Mesh>,
    basis: LagrangeBasis,
    n_components: usize,
    maps: Vec<ElementMap>,
}

impl DgSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize, n_components: usize) -> Result<Arc<Self>> {
        if degree == 0 {
            return Err(Error::Parameter("polynomial degree must be at least 1".into()));
        }
        if n_components == 0 {
            return Err(Error::Parameter("value dimension must be positive".into()));
        }
        let maps = (0..mesh.num_triangles()).map(|t| ElementMap::new(mesh.triangle_vertices(t))).collect();
        Ok(Arc::new(DgSpace { mesh, basis: LagrangeBasis::new(degree), n_components, maps }))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn num_elements(&self) -> usize {
        self.maps.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.basis.dim()
    }

    pub fn dofs_per_element(&self) -> usize {
        self.n_components * self.basis.dim()
    }

    pub fn total_dofs(&self) -> usize {
        self.num_elements() * self.dofs_per_element()
    }

    pub fn element_map(&self, k: usize) -> &ElementMap {
        &self.maps[k]
    }

    pub fn dof(&self, element: usize, node: usize, comp: usize) -> usize {
        element * self.dofs_per_element() + node * self.n_components + comp
    }

    /// Physical position of Lagrange node `node` of element `element`.
    pub fn node_position(&self, element: usize, node: usize) -> [f64; 2] {
        self.maps[element].to_physical(self.basis.nodes[node])
    }

    fn check_element(&self, element: usize) -> Result<()> {
        if element >= self.num_elements() {
            return Err(Error::ElementIndex { index: element, count: self.num_elements() });
        }
        Ok(())
    }

    /// Physical gradients of the basis functions of `element` at reference point `xi`.
    pub fn basis_gradients(&self, element: usize, xi: [f64; 2]) -> Vec<[f64; 2]> {
        let m = &self.maps[element];
        self.basis.gradients(xi).into_iter().map(|g| m.physical_gradient(g)).collect()
    }
}

/// Coefficient vector over a [`DgSpace`].
#[derive(Clone, Debug)]
pub struct DgField {
    space: Arc<DgSpace>,
    coeffs: Vec<f64>,
}

impl DgField {
    pub fn zeros(space: &Arc<DgSpace>) -> Self {
        DgField { space: space.clone(), coeffs: vec![0.0; space.total_dofs()] }
    }

    pub fn from_coeffs(space: &Arc<DgSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.total_dofs() {
            return Err(Error::Parameter(format!(
                "coefficient length {} does not match {} dofs",
                coeffs.len(),
                space.total_dofs()
            )));
        }
        Ok(DgField { space: space.clone(), coeffs })
    }

    /// Nodal interpolation of `f` element by element.
    pub fn interpolate<F, V>(space: &Arc<DgSpace>, f: F) -> Self
    where
        F: Fn([f64; 2]) -> V,
        V: AsRef<[f64]>,
    {
        let n = space.n_components();
        let mut coeffs = vec![0.0; space.total_dofs()];
        for k in 0..space.num_elements() {
            for j in 0..space.nodes_per_element() {
                let v = f(space.node_position(k, j));
                let v = v.as_ref();
                assert_eq!(v.len(), n, "interpolated function has the wrong value dimension");
                for c in 0..n {
                    coeffs[space.dof(k, j, c)] = v[c];
                }
            }
        }
        DgField { space: space.clone(), coeffs }
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Nodal coefficients of one element, `[node][comp]` flattened.
    pub fn element_coeffs(&self, element: usize) -> &[f64] {
        let d = self.space.dofs_per_element();
        &self.coeffs[element * d..(element + 1) * d]
    }

    /// Value of the restriction to `element` at reference point `xi`.
    pub fn eval(&self, element: usize, xi: [f64; 2]) -> Result<DVector<f64>> {
        self.space.check_element(element)?;
        let n = self.space.n_components();
        let phi = self.space.basis.values(xi);
        let c = self.element_coeffs(element);
        Ok(DVector::from_fn(n, |i, _| phi.iter().enumerate().map(|(j, p)| p * c[j * n + i]).sum()))
    }

    /// Value at a physical point `x`, evaluated with the polynomial of `element`.
    pub fn eval_physical(&self, element: usize, x: [f64; 2]) -> Result<DVector<f64>> {
        self.space.check_element(element)?;
        self.eval(element, self.space.maps[element].to_reference(x))
    }

    /// Exact gradients (`N × 2`) of the restriction to `element` at the given reference points.
    pub fn eval_gradient(&self, element: usize, points: &[[f64; 2]]) -> Result<Vec<DMatrix<f64>>> {
        self.space.check_element(element)?;
        let n = self.space.n_components();
        let c = self.element_coeffs(element);
        Ok(points
            .iter()
            .map(|&xi| {
                let grads = self.space.basis_gradients(element, xi);
                let mut g = DMatrix::zeros(n, 2);
                for (j, dphi) in grads.iter().enumerate() {
                    for i in 0..n {
                        g[(i, 0)] += c[j * n + i] * dphi[0];
                        g[(i, 1)] += c[j * n + i] * dphi[1];
                    }
                }
                g
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(nx: usize, q: usize, n: usize) -> Arc<DgSpace> {
        DgSpace::new(Arc::new(Mesh::crisscross(nx, nx, BBox::UNIT).unwrap()), q, n).unwrap()
    }

    #[test]
    fn dimensions() {
        for q in 1..=4 {
            let s = space(2, q, 2);
            assert_eq!(s.nodes_per_element(), (q + 1) * (q + 2) / 2);
            assert_eq!(s.dofs_per_element(), 2 * poly_dim(q));
            assert_eq!(s.total_dofs(), 16 * s.dofs_per_element());
        }
    }

    #[test]
    fn partition_of_unity_and_nodality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in 0..=4 {
            let b = LagrangeBasis::new(q);
            for _ in 0..20 {
                let s: f64 = rng.gen();
                let t: f64 = rng.gen::<f64>() * (1.0 - s);
                assert!((b.values([s, t]).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let gsum = b.gradients([s, t]).iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
                assert!(gsum[0].abs() < 1e-11 && gsum[1].abs() < 1e-11);
            }
            for (i, &node) in b.nodes().iter().enumerate() {
                for (j, v) in b.values(node).iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn affine_gradient_is_reproduced() {
        let s = space(3, 1, 2);
        let field = DgField::interpolate(&s, |x| [x[0], 0.9 * x[1]]);
        for k in 0..s.num_elements() {
            for g in field.eval_gradient(k, &[[0.2, 0.3], [0.0, 0.0]]).unwrap() {
                assert!((g[(0, 0)] - 1.0).abs() < 1e-13);
                assert!(g[(0, 1)].abs() < 1e-13);
                assert!(g[(1, 0)].abs() < 1e-13);
                assert!((g[(1, 1)] - 0.9).abs() < 1e-13);
            }
        }
        let zero = DgField::zeros(&s);
        assert!(zero.eval_gradient(0, &[[0.1, 0.1]]).unwrap()[0].iter().all(|&v| v == 0.0));
        let zero_interp = DgField::interpolate(&s, |_| [0.0, 0.0]);
        assert!(zero_interp.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn polynomial_reproduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for q in 1..=3 {
            let s = space(2, q, 1);
            // random polynomial of degree q
            let cs: Vec<f64> = (0..poly_dim(q)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let poly = |x: [f64; 2]| {
                let mut v = 0.0;
                let mut k = 0;
                for total in 0..=q as i32 {
                    for b in 0..=total {
                        v += cs[k] * x[0].powi(total - b) * x[1].powi(b);
                        k += 1;
                    }
                }
                v
            };
            let f = DgField::interpolate(&s, |x| [poly(x)]);
            let rule = quadrature_triangle(2 * q).unwrap();
            for k in 0..s.num_elements() {
                for (xi, _) in rule.iter() {
                    let x = s.element_map(k).to_physical(*xi);
                    assert!((f.eval(k, *xi).unwrap()[0] - poly(x)).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn x_squared_interpolant_nodal_values() {
        // q = 1 on the single-cell mesh: the interpolant of x² is linear per
        // triangle, so it matches x² at the vertices and overshoots inside.
        let s = space(1, 1, 2);
        let f = DgField::interpolate(&s, |x| [x[0] * x[0], 0.0]);
        for k in 0..4 {
            let verts = s.mesh().triangle_vertices(k);
            for (j, v) in verts.iter().enumerate() {
                assert_eq!(f.element_coeffs(k)[2 * j], v[0] * v[0]);
            }
            // centroid value is the mean of the vertex values
            let mean = verts.iter().map(|v| v[0] * v[0]).sum::<f64>() / 3.0;
            assert!((f.eval(k, [1.0 / 3.0, 1.0 / 3.0]).unwrap()[0] - mean).abs() < 1e-15);
        }
        // bottom (0) and right (1) triangles share the edge from (1,0) to the centre
        // and are continuous there since x² is sampled at shared vertices
        let mid = [0.75, 0.25];
        let a = f.eval_physical(0, mid).unwrap()[0];
        let b = f.eval_physical(1, mid).unwrap()[0];
        assert!((a - b).abs() < 1e-12);
        // but the P1 interpolant differs from x² at that point: (1 + 0.25)/2 vs 0.5625
        assert!((a - 0.625).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = space(1, 1, 2);
        let coeffs: Vec<f64> = (0..s.total_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = DgField::from_coeffs(&s, coeffs).unwrap();
        let k = 2;
        let c = s.mesh().centroid(k);
        let g = &f.eval_gradient(k, &[[1.0 / 3.0, 1.0 / 3.0]]).unwrap()[0];
        let step = 1e-6;
        for d in 0..2 {
            let mut xp = c;
            let mut xm = c;
            xp[d] += step;
            xm[d] -= step;
            let fd = (f.eval_physical(k, xp).unwrap() - f.eval_physical(k, xm).unwrap()) / (2.0 * step);
            for i in 0..2 {
                let rel = (fd[i] - g[(i, d)]).abs() / g[(i, d)].abs().max(1e-12);
                assert!(rel < 1e-7, "component {i}, direction {d}: {rel}");
            }
        }
    }

    #[test]
    fn errors() {
        let s = space(1, 1, 2);
        let f = DgField::zeros(&s);
        assert!(matches!(f.eval_gradient(4, &[[0.0, 0.0]]), Err(Error::ElementIndex { .. })));
        assert!(DgField::from_coeffs(&s, vec![0.0; 3]).is_err());
        assert!(DgSpace::new(s.mesh().clone(), 0, 2).is_err());
    }
}
