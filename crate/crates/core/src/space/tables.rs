//! Basis values and physical gradients tabulated at quadrature points.

use rayon::prelude::*;

use super::{DgSpace, EdgeRule, TriangleRule};

/// Basis data of one element at a set of points, `[point][basis]` flattened.
#[derive(Clone, Debug)]
pub struct SideTable {
    pub element: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl SideTable {
    fn new(space: &DgSpace, element: usize, points: &[[f64; 2]]) -> Self {
        let map = space.element_map(element);
        let nb = space.nodes_per_element();
        let mut values = Vec::with_capacity(points.len() * nb);
        let mut grads = Vec::with_capacity(points.len() * nb);
        for &x in points {
            let xi = map.to_reference(x);
            values.extend(space.basis().values(xi));
            grads.extend(space.basis_gradients(element, xi));
        }
        SideTable { element, values, grads }
    }

    /// Field value at point `q`, component by component, into `out`.
    #[inline]
    pub fn value_into(&self, q: usize, nb: usize, coeffs: &[f64], out: &mut [f64]) {
        let n = out.len();
        out.fill(0.0);
        let vals = &self.values[q * nb..(q + 1) * nb];
        for (j, &phi) in vals.iter().enumerate() {
            for c in 0..n {
                out[c] += phi * coeffs[j * n + c];
            }
        }
    }

    /// Field gradient at point `q` as `[comp][dir]` flattened into `out` (length `2n`).
    #[inline]
    pub fn gradient_into(&self, q: usize, nb: usize, coeffs: &[f64], out: &mut [f64]) {
        let n = out.len() / 2;
        out.fill(0.0);
        let grads = &self.grads[q * nb..(q + 1) * nb];
        for (j, g) in grads.iter().enumerate() {
            for c in 0..n {
                out[2 * c] += g[0] * coeffs[j * n + c];
                out[2 * c + 1] += g[1] * coeffs[j * n + c];
            }
        }
    }
}

/// Quadrature data of one element: physical points, weights (including the
/// Jacobian) and basis data.
#[derive(Clone, Debug)]
pub struct ElementTable {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub side: SideTable,
}

/// Quadrature data of one edge: physical points and weights (including the
/// edge length), canonical normal, and basis data from each incident element.
#[derive(Clone, Debug)]
pub struct EdgeTable {
    pub edge: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub normal: [f64; 2],
    pub length: f64,
    pub plus: SideTable,
    pub minus: Option<SideTable>,
}

impl EdgeTable {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn element_tables(space: &DgSpace, rule: &TriangleRule) -> Vec<ElementTable> {
    (0..space.num_elements())
        .into_par_iter()
        .map(|k| {
            let map = space.element_map(k);
            let points: Vec<[f64; 2]> = rule.points.iter().map(|&xi| map.to_physical(xi)).collect();
            let weights = rule.weights.iter().map(|w| w * map.det).collect();
            let side = SideTable::new(space, k, &points);
            ElementTable { points, weights, side }
        })
        .collect()
}

/// Physical points at edge parameters `t ∈ [0, 1]`, measured from the edge's first vertex.
pub fn edge_points(space: &DgSpace, edge: usize, params: &[f64]) -> Vec<[f64; 2]> {
    let mesh = space.mesh();
    let e = &mesh.edges()[edge];
    let [a, b] = e.vertices.map(|v| mesh.vertices()[v]);
    params.iter().map(|&t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]).collect()
}

pub fn edge_table(space: &DgSpace, edge: usize, params: &[f64], weights: &[f64]) -> EdgeTable {
    let e = &space.mesh().edges()[edge];
    let points = edge_points(space, edge, params);
    EdgeTable {
        edge,
        weights: weights.iter().map(|w| w * e.length).collect(),
        normal: e.normal,
        length: e.length,
        plus: SideTable::new(space, e.plus, &points),
        minus: e.minus.map(|m| SideTable::new(space, m, &points)),
        points,
    }
}

pub fn edge_tables(space: &DgSpace, rule: &EdgeRule) -> Vec<EdgeTable> {
    let params: Vec<f64> = rule.points.iter().map(|p| p[0]).collect();
    (0..space.mesh().num_edges())
        .into_par_iter()
        .map(|e| edge_table(space, e, &params, &rule.weights))
        .collect()
}
