//! Edge traces, broken norms, the lifting operator, and the continuous
//! reconstruction of broken fields.
//!
//! Sign conventions: on an internal edge `⟦v⟧ = v⁺ - v⁻` where `+` is the
//! incident triangle with the smaller index, and `⟦v ⊗ n⟧ = ⟦v⟧ ⊗ n` with the
//! canonical normal `n` pointing from `+` to `-`. On a boundary edge the jump
//! against a datum `u₀` is `v - u₀`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::space::tables::{edge_points, edge_table, EdgeTable};
use crate::space::{power_degree, quadrature_edge, quadrature_triangle, DgField, DgSpace, LagrangeBasis};

/// A pointwise vector-valued function, e.g. a boundary datum.
pub type PointFn<'a> = &'a (dyn Fn([f64; 2]) -> Vec<f64> + Sync);

/// Traces of a field on both sides of one edge.
#[derive(Clone, Debug)]
pub struct EdgeTraceBatch {
    pub edge: usize,
    pub points: Vec<[f64; 2]>,
    pub normal: [f64; 2],
    pub plus_values: Vec<DVector<f64>>,
    pub plus_gradients: Vec<DMatrix<f64>>,
    /// Empty on boundary edges.
    pub minus_values: Vec<DVector<f64>>,
    pub minus_gradients: Vec<DMatrix<f64>>,
}

/// Evaluates both traces at edge parameters `t ∈ [0, 1]`.
pub fn edge_traces(field: &DgField, edge: usize, params: &[f64]) -> Result<EdgeTraceBatch> {
    let space = field.space();
    let mesh = space.mesh();
    if edge >= mesh.num_edges() {
        return Err(Error::Parameter(format!("edge index {edge} out of range")));
    }
    let e = &mesh.edges()[edge];
    let points = edge_points(space, edge, params);
    let side = |k: usize| -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
        let map = space.element_map(k);
        let refs: Vec<[f64; 2]> = points.iter().map(|&x| map.to_reference(x)).collect();
        let vals = refs.iter().map(|&xi| field.eval(k, xi)).collect::<Result<Vec<_>>>()?;
        Ok((vals, field.eval_gradient(k, &refs)?))
    };
    let (plus_values, plus_gradients) = side(e.plus)?;
    let (minus_values, minus_gradients) = match e.minus {
        Some(m) => side(m)?,
        None => (Vec::new(), Vec::new()),
    };
    Ok(EdgeTraceBatch { edge, points, normal: e.normal, plus_values, plus_gradients, minus_values, minus_gradients })
}

/// `⟦v⟧` at edge parameters; boundary edges need `datum`.
pub fn jump(field: &DgField, edge: usize, params: &[f64], datum: Option<PointFn>) -> Result<Vec<DVector<f64>>> {
    let tr = edge_traces(field, edge, params)?;
    if tr.minus_values.is_empty() {
        let datum = datum.ok_or(Error::BoundaryEdge(edge))?;
        Ok(tr.plus_values.iter().zip(&tr.points).map(|(v, &x)| v - DVector::from_vec(datum(x))).collect())
    } else {
        Ok(tr.plus_values.iter().zip(&tr.minus_values).map(|(p, m)| p - m).collect())
    }
}

/// `{{∇v}}`: the mean of both gradient traces, or the single trace on the boundary.
pub fn average_gradient(field: &DgField, edge: usize, params: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let tr = edge_traces(field, edge, params)?;
    if tr.minus_gradients.is_empty() {
        Ok(tr.plus_gradients)
    } else {
        Ok(tr.plus_gradients.iter().zip(&tr.minus_gradients).map(|(p, m)| 0.5 * (p + m)).collect())
    }
}

/// `{{v}}`: the mean of both value traces, or the single trace on the boundary.
pub fn average(field: &DgField, edge: usize, params: &[f64]) -> Result<Vec<DVector<f64>>> {
    let tr = edge_traces(field, edge, params)?;
    if tr.minus_values.is_empty() {
        Ok(tr.plus_values)
    } else {
        Ok(tr.plus_values.iter().zip(&tr.minus_values).map(|(p, m)| 0.5 * (p + m)).collect())
    }
}

/// `⟦v ⊗ n⟧ = v⁺ ⊗ n⁺ + v⁻ ⊗ n⁻ = ⟦v⟧ ⊗ n`.
pub fn jump_dyadic(field: &DgField, edge: usize, params: &[f64], datum: Option<PointFn>) -> Result<Vec<DMatrix<f64>>> {
    let n = field.space().mesh().edges().get(edge).map(|e| e.normal).unwrap_or([0.0; 2]);
    Ok(jump(field, edge, params, datum)?
        .into_iter()
        .map(|j| DMatrix::from_fn(j.len(), 2, |a, b| j[a] * n[b]))
        .collect())
}

/// Which edges a jump sum runs over.
#[derive(Clone, Copy)]
pub enum EdgeSet<'a> {
    Internal,
    /// Boundary edges only, jumps taken against the datum.
    Boundary(Option<PointFn<'a>>),
    /// Internal and boundary edges.
    All(Option<PointFn<'a>>),
}

fn edge_params(q: usize, p: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = quadrature_edge((power_degree(q, p) + 2).min(crate::space::quadrature::MAX_DEGREE))?;
    Ok((rule.points.iter().map(|x| x[0]).collect(), rule.weights))
}

/// `Σ_e h_e^{h_power} ∫_e |⟦v⟧|^p` over the chosen edge set.
pub fn weighted_jump_sum(field: &DgField, p: f64, h_power: f64, edges: EdgeSet) -> Result<f64> {
    let space = field.space();
    let (params, weights) = edge_params(space.degree(), p)?;
    let mut total = 0.0;
    let zero_datum = |_: [f64; 2]| vec![0.0; space.n_components()];
    for (e, edge) in space.mesh().edges().iter().enumerate() {
        let datum: Option<PointFn> = match (edges, edge.is_internal()) {
            (EdgeSet::Internal, true) | (EdgeSet::All(_), true) => None,
            (EdgeSet::Boundary(d), false) | (EdgeSet::All(d), false) => Some(d.unwrap_or(&zero_datum)),
            _ => continue,
        };
        let jumps = jump(field, e, &params, datum)?;
        let s: f64 = jumps.iter().zip(&weights).map(|(j, w)| w * j.norm().powf(p)).sum();
        total += edge.length.powf(h_power) * edge.length * s;
    }
    Ok(total)
}

/// Components of `|v|^p_{W^{1,p}(Ω, T_h)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrokenSeminorm {
    /// `Σ_K ∫_K |∇v|^p`
    pub bulk: f64,
    /// `Σ_{e internal} h_e^{1-p} ∫_e |⟦v⟧|^p`
    pub jumps: f64,
}

impl BrokenSeminorm {
    pub fn value(&self) -> f64 {
        self.bulk + self.jumps
    }
}

/// `Σ_K ∫_K |∇v|^p` (Frobenius norm).
pub fn gradient_lp_pow(field: &DgField, p: f64) -> Result<f64> {
    let space = field.space();
    let q = space.degree();
    let rule = quadrature_triangle(power_degree(q - 1, p))?;
    let mut total = 0.0;
    for k in 0..space.num_elements() {
        let det = space.element_map(k).det;
        let grads = field.eval_gradient(k, &rule.points)?;
        total += det * grads.iter().zip(&rule.weights).map(|(g, w)| w * g.norm().powf(p)).sum::<f64>();
    }
    Ok(total)
}

/// `‖v‖^p_{L^p(Ω)}`.
pub fn lp_norm_pow(field: &DgField, p: f64) -> Result<f64> {
    let space = field.space();
    let rule = quadrature_triangle(power_degree(space.degree(), p))?;
    let mut total = 0.0;
    for k in 0..space.num_elements() {
        let det = space.element_map(k).det;
        for (xi, w) in rule.iter() {
            total += det * w * field.eval(k, *xi)?.norm().powf(p);
        }
    }
    Ok(total)
}

/// `‖v‖^p_{L^p(∂Ω)}` using the interior trace.
pub fn boundary_lp_norm_pow(field: &DgField, p: f64) -> Result<f64> {
    let space = field.space();
    let (params, weights) = edge_params(space.degree(), p)?;
    let mut total = 0.0;
    for (e, edge) in space.mesh().edges().iter().enumerate() {
        if edge.is_internal() {
            continue;
        }
        let tr = edge_traces(field, e, &params)?;
        total += edge.length * tr.plus_values.iter().zip(&weights).map(|(v, w)| w * v.norm().powf(p)).sum::<f64>();
    }
    Ok(total)
}

/// `‖∇v‖^p_{L^p(∂Ω)}` using the interior trace.
pub fn boundary_gradient_lp_pow(field: &DgField, p: f64) -> Result<f64> {
    let space = field.space();
    let (params, weights) = edge_params(space.degree(), p)?;
    let mut total = 0.0;
    for (e, edge) in space.mesh().edges().iter().enumerate() {
        if edge.is_internal() {
            continue;
        }
        let tr = edge_traces(field, e, &params)?;
        total += edge.length * tr.plus_gradients.iter().zip(&weights).map(|(g, w)| w * g.norm().powf(p)).sum::<f64>();
    }
    Ok(total)
}

/// `|v|^p_{W^{1,p}(Ω, T_h)}`: bulk gradients plus internal-edge jumps.
pub fn broken_seminorm(field: &DgField, p: f64) -> Result<BrokenSeminorm> {
    if p < 1.0 {
        return Err(Error::Parameter(format!("seminorm exponent must be at least 1, got {p}")));
    }
    Ok(BrokenSeminorm {
        bulk: gradient_lp_pow(field, p)?,
        jumps: weighted_jump_sum(field, p, 1.0 - p, EdgeSet::Internal)?,
    })
}

/// An `N × 2` matrix-valued field in the broken space of degree `q - 1`,
/// stored per element as nodal matrices `[element][node][row][col]`.
#[derive(Clone, Debug)]
pub struct MatrixField {
    space: Arc<DgSpace>,
    basis: LagrangeBasis,
    coeffs: Vec<f64>,
}

impl MatrixField {
    fn block(&self) -> usize {
        self.basis.dim() * self.space.n_components() * 2
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, element: usize, xi: [f64; 2]) -> DMatrix<f64> {
        let n = self.space.n_components();
        let psi = self.basis.values(xi);
        let c = &self.coeffs[element * self.block()..(element + 1) * self.block()];
        DMatrix::from_fn(n, 2, |a, b| psi.iter().enumerate().map(|(i, s)| s * c[(i * n + a) * 2 + b]).sum())
    }

    /// `∫_Ω |M|^p`.
    pub fn lp_norm_pow(&self, p: f64) -> Result<f64> {
        let rule = quadrature_triangle(power_degree(self.basis.degree(), p))?;
        let mut total = 0.0;
        for k in 0..self.space.num_elements() {
            let det = self.space.element_map(k).det;
            for (xi, w) in rule.iter() {
                total += det * w * self.eval(k, *xi).norm().powf(p);
            }
        }
        Ok(total)
    }
}

/// Lifting operator `R_h: V_h^q → (V_h^{q-1})^{N×2}`, defined element by
/// element through
///
/// ```text
/// ∫_K R_h(u) : ψ E = Σ_{e ⊂ ∂K internal} ∫_e ½ ψ E : ⟦u ⊗ n⟧
/// ```
///
/// for every scalar basis function `ψ` of degree `q - 1` on `K` and every
/// unit matrix `E`. Boundary edges do not contribute.
#[derive(Debug)]
pub struct Lifting {
    space: Arc<DgSpace>,
    basis: LagrangeBasis,
    mass_inv: Vec<DMatrix<f64>>,
    edges: Vec<LiftEdge>,
}

#[derive(Debug)]
struct LiftEdge {
    table: EdgeTable,
    psi_plus: Vec<f64>,
    psi_minus: Vec<f64>,
}

impl Lifting {
    pub fn new(space: &Arc<DgSpace>) -> Result<Self> {
        let q = space.degree();
        let basis = LagrangeBasis::new(q - 1);
        let nt = basis.dim();

        let rule = quadrature_triangle(2 * (q - 1))?;
        let mut ref_mass = DMatrix::zeros(nt, nt);
        for (xi, w) in rule.iter() {
            let psi = basis.values(*xi);
            for i in 0..nt {
                for j in 0..nt {
                    ref_mass[(i, j)] += w * psi[i] * psi[j];
                }
            }
        }
        let mut mass_inv = Vec::with_capacity(space.num_elements());
        for k in 0..space.num_elements() {
            let m = &ref_mass * space.element_map(k).det;
            let chol = m.cholesky().ok_or(Error::SingularMass(k))?;
            mass_inv.push(chol.inverse());
        }

        let erule = quadrature_edge(2 * q)?;
        let params: Vec<f64> = erule.points.iter().map(|x| x[0]).collect();
        let mut edges = Vec::new();
        for (e, edge) in space.mesh().edges().iter().enumerate() {
            let Some(minus) = edge.minus else { continue };
            let table = edge_table(space, e, &params, &erule.weights);
            let tab = |k: usize| -> Vec<f64> {
                let map = space.element_map(k);
                table.points.iter().flat_map(|&x| basis.values(map.to_reference(x))).collect()
            };
            let (psi_plus, psi_minus) = (tab(edge.plus), tab(minus));
            edges.push(LiftEdge { table, psi_plus, psi_minus });
        }
        Ok(Lifting { space: space.clone(), basis, mass_inv, edges })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    fn block(&self) -> usize {
        self.basis.dim() * self.space.n_components() * 2
    }

    /// Length of the lifted coefficient vector.
    pub fn output_len(&self) -> usize {
        self.space.num_elements() * self.block()
    }

    fn apply_mass_inv(&self, rhs: &mut [f64]) {
        let nt = self.basis.dim();
        let width = self.space.n_components() * 2;
        let block = self.block();
        let mut tmp = vec![0.0; block];
        for (k, minv) in self.mass_inv.iter().enumerate() {
            let r = &mut rhs[k * block..(k + 1) * block];
            tmp.fill(0.0);
            for i in 0..nt {
                for j in 0..nt {
                    let m = minv[(i, j)];
                    for c in 0..width {
                        tmp[i * width + c] += m * r[j * width + c];
                    }
                }
            }
            r.copy_from_slice(&tmp);
        }
    }

    /// Nodal coefficients of `R_h(u)`.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.space.n_components();
        let nb = self.space.nodes_per_element();
        let nt = self.basis.dim();
        let dpe = self.space.dofs_per_element();
        let block = self.block();
        let mut rhs = vec![0.0; self.output_len()];
        let (mut up, mut um) = (vec![0.0; n], vec![0.0; n]);
        for le in &self.edges {
            let t = &le.table;
            let minus = t.minus.as_ref().expect("internal edge");
            let (kp, km) = (t.plus.element, minus.element);
            for qp in 0..t.len() {
                t.plus.value_into(qp, nb, &coeffs[kp * dpe..(kp + 1) * dpe], &mut up);
                minus.value_into(qp, nb, &coeffs[km * dpe..(km + 1) * dpe], &mut um);
                let w = 0.5 * t.weights[qp];
                for (k, psi) in [(kp, &le.psi_plus), (km, &le.psi_minus)] {
                    for i in 0..nt {
                        let s = w * psi[qp * nt + i];
                        for a in 0..n {
                            let ja = s * (up[a] - um[a]);
                            for b in 0..2 {
                                rhs[k * block + (i * n + a) * 2 + b] += ja * t.normal[b];
                            }
                        }
                    }
                }
            }
        }
        self.apply_mass_inv(&mut rhs);
        rhs
    }

    /// `out += scale · Lᵀ g` where `R_h(u) = L u`.
    pub fn apply_transpose_add(&self, g: &[f64], scale: f64, out: &mut [f64]) {
        let n = self.space.n_components();
        let nb = self.space.nodes_per_element();
        let nt = self.basis.dim();
        let dpe = self.space.dofs_per_element();
        let block = self.block();
        let mut h = g.to_vec();
        self.apply_mass_inv(&mut h);
        let mut dj = vec![0.0; n];
        for le in &self.edges {
            let t = &le.table;
            let minus = t.minus.as_ref().expect("internal edge");
            let (kp, km) = (t.plus.element, minus.element);
            for qp in 0..t.len() {
                dj.fill(0.0);
                let w = 0.5 * t.weights[qp] * scale;
                for (k, psi) in [(kp, &le.psi_plus), (km, &le.psi_minus)] {
                    for i in 0..nt {
                        let s = w * psi[qp * nt + i];
                        for a in 0..n {
                            let hb = &h[k * block + (i * n + a) * 2..];
                            dj[a] += s * (hb[0] * t.normal[0] + hb[1] * t.normal[1]);
                        }
                    }
                }
                for j in 0..nb {
                    let (pp, pm) = (t.plus.values[qp * nb + j], minus.values[qp * nb + j]);
                    for a in 0..n {
                        out[kp * dpe + j * n + a] += pp * dj[a];
                        out[km * dpe + j * n + a] -= pm * dj[a];
                    }
                }
            }
        }
    }

    pub fn lift(&self, field: &DgField) -> MatrixField {
        MatrixField { space: self.space.clone(), basis: self.basis.clone(), coeffs: self.apply(field.coeffs()) }
    }

    /// `G_h(u) = ∇_h u - R_h(u)`, in the same nodal layout as the lifting.
    pub fn discrete_gradient(&self, field: &DgField) -> Result<MatrixField> {
        let n = self.space.n_components();
        let nt = self.basis.dim();
        let block = self.block();
        let mut coeffs = self.apply(field.coeffs());
        for c in coeffs.iter_mut() {
            *c = -*c;
        }
        for k in 0..self.space.num_elements() {
            let grads = field.eval_gradient(k, self.basis.nodes())?;
            for (i, g) in grads.iter().enumerate().take(nt) {
                for a in 0..n {
                    for b in 0..2 {
                        coeffs[k * block + (i * n + a) * 2 + b] += g[(a, b)];
                    }
                }
            }
        }
        Ok(MatrixField { space: self.space.clone(), basis: self.basis.clone(), coeffs })
    }
}

/// `R_h(u)` for a single field.
pub fn lift(field: &DgField) -> Result<MatrixField> {
    Ok(Lifting::new(field.space())?.lift(field))
}

/// `G_h(u) = ∇_h u - R_h(u)` for a single field.
pub fn discrete_gradient(field: &DgField) -> Result<MatrixField> {
    Lifting::new(field.space())?.discrete_gradient(field)
}

/// Groups element nodes that coincide geometrically (tolerance `1e-10`).
pub fn shared_nodes(space: &DgSpace) -> Vec<Vec<(usize, usize)>> {
    let scale = 1e10;
    let mut groups: HashMap<(i64, i64), usize> = HashMap::new();
    let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
    for k in 0..space.num_elements() {
        for j in 0..space.nodes_per_element() {
            let x = space.node_position(k, j);
            let key = ((x[0] * scale).round() as i64, (x[1] * scale).round() as i64);
            let g = *groups.entry(key).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[g].push((k, j));
        }
    }
    out
}

/// Conforming field whose value at every geometric Lagrange node is the mean
/// of the incident elements' nodal values.
pub fn reconstruct_continuous(field: &DgField) -> DgField {
    let space = field.space();
    let n = space.n_components();
    let mut out = field.clone();
    for group in shared_nodes(space) {
        for c in 0..n {
            let mean = group.iter().map(|&(k, j)| field.coeffs()[space.dof(k, j, c)]).sum::<f64>() / group.len() as f64;
            for &(k, j) in &group {
                out.coeffs_mut()[space.dof(k, j, c)] = mean;
            }
        }
    }
    out
}

/// Both sides of the reconstruction estimates for a field `u` and its
/// continuous reconstruction `w`.
#[derive(Clone, Copy, Debug)]
pub struct ReconstructionErrors {
    /// `Σ_K ‖u - w‖^p_{L^p(K)}`
    pub values: f64,
    /// `Σ_K ‖∇u - ∇w‖^p_{L^p(K)}`
    pub gradients: f64,
    /// `‖u - w‖^p_{L^p(∂Ω)}`
    pub boundary_values: f64,
    /// `Σ_{e internal} h_e ∫_e |⟦u⟧|^p`
    pub jumps_values: f64,
    /// `Σ_{e internal} h_e^{1-p} ∫_e |⟦u⟧|^p`
    pub jumps_gradients: f64,
    /// `Σ_{e internal} ∫_e |⟦u⟧|^p`
    pub jumps_boundary: f64,
}

impl ReconstructionErrors {
    pub fn compute(field: &DgField, p: f64) -> Result<Self> {
        let w = reconstruct_continuous(field);
        let diff: Vec<f64> = field.coeffs().iter().zip(w.coeffs()).map(|(a, b)| a - b).collect();
        let d = DgField::from_coeffs(field.space(), diff)?;
        Ok(ReconstructionErrors {
            values: lp_norm_pow(&d, p)?,
            gradients: gradient_lp_pow(&d, p)?,
            boundary_values: boundary_lp_norm_pow(&d, p)?,
            jumps_values: weighted_jump_sum(field, p, 1.0, EdgeSet::Internal)?,
            jumps_gradients: weighted_jump_sum(field, p, 1.0 - p, EdgeSet::Internal)?,
            jumps_boundary: weighted_jump_sum(field, p, 0.0, EdgeSet::Internal)?,
        })
    }

    pub fn value_ratio(&self) -> f64 {
        self.values / self.jumps_values
    }

    pub fn gradient_ratio(&self) -> f64 {
        self.gradients / self.jumps_gradients
    }

    pub fn boundary_ratio(&self) -> f64 {
        self.boundary_values / self.jumps_boundary
    }
}

/// Explicit constant `C(n, r)` in `Σ_i |c_i - m|^r <= C Σ_i |c_{i+1} - c_i|^r`.
///
/// Jensen gives `Σ_j |c_j - m|^r <= (2/n) Σ_{i<j} |c_j - c_i|^r`; each
/// `|c_j - c_i|^r` is at most `(j-i)^{r-1} Σ_{i<=k<j} |c_{k+1} - c_k|^r`, so
/// the constant is `(2/n) max_k Σ_{i<=k<j} (j-i)^{r-1}`.
pub fn mean_deviation_constant(n: usize, r: f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let worst = (0..n - 1)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..=k {
                for j in (k + 1)..n {
                    s += ((j - i) as f64).powf(r - 1.0);
                }
            }
            s
        })
        .fold(0.0, f64::max);
    2.0 / n as f64 * worst
}
