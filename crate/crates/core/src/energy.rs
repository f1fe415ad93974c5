//! Discrete energies on broken spaces and their exact gradients.
//!
//! Two formulations are assembled:
//!
//! * interior penalty:
//!   `Σ_K ∫_K W(∇u) - Σ_{e internal} ∫_e DW({{∇u}}) : ⟦u ⊗ n⟧ + α Pen(u)`
//! * lifted gradient: `Σ_K ∫_K W(∇_h u - R_h(u)) + α Pen(u)`
//!
//! The penalty couples the jump aggregate
//! `J = Σ_{e} h_e^{1-p} ∫_e |⟦u⟧|^p`, taken over internal edges and over
//! boundary edges with `⟦u⟧ = u - u₀`, to either the energy or the broken
//! seminorm:
//!
//! | variant          | `Pen(u)`                                   |
//! |------------------|--------------------------------------------|
//! | `energy_based`   | `(1 + ∫W(∇_h u) + J)^{(p-1)/p} J^{1/p}`    |
//! | `seminorm_based` | `(1 + |u|^p_{W^{1,p}})^{(p-1)/p} J^{1/p}`  |
//! | `convex_style`   | `(1 + |u|^{p-2}_{W^{1,p}}) J^{2/p}`        |
//!
//! `J^{1/p}` has an infinite derivative at `J = 0`, which is exactly where
//! good minimizers sit. The objective handed to the optimizer therefore uses
//! `(J + ε)^{1/p} - ε^{1/p}` (and likewise for the other fractional powers),
//! which vanishes at `J = 0` and is smooth; [`AssembledEnergy::total`] is
//! always the unsmoothed value.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{EnergyModel, Mat2};
use crate::space::quadrature::MAX_DEGREE;
use crate::space::tables::{edge_tables, element_tables};
use crate::space::{quadrature_edge, quadrature_triangle, DgField, DgSpace, EdgeTable, ElementTable, LagrangeBasis};
use crate::trace::Lifting;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    InteriorPenalty,
    LiftedGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyVariant {
    EnergyBased,
    #[default]
    SeminormBased,
    ConvexStyle,
}

impl PenaltyVariant {
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyVariant::EnergyBased => "energy_based",
            PenaltyVariant::SeminormBased => "seminorm_based",
            PenaltyVariant::ConvexStyle => "convex_style",
        }
    }
}

pub const DEFAULT_EPS_PEN: f64 = 1e-14;

fn default_eps() -> f64 {
    DEFAULT_EPS_PEN
}

/// Formulation and penalty settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub penalty_variant: PenaltyVariant,
    pub alpha: f64,
    /// Growth exponent; the model's exponent when absent.
    #[serde(default)]
    pub p: Option<f64>,
    /// Evaluate jumps as `h_e ∫ |⟦u⟧ / h_e|^p` and the energy-based penalty
    /// as `½ (∫(1 + W) + J)^{(p-1)/p} (2^p J)^{1/p}`.
    #[serde(default)]
    pub stable_rewrite: bool,
    #[serde(default = "default_eps")]
    pub eps_pen: f64,
}

impl EnergyConfig {
    pub fn new(alpha: f64) -> Self {
        EnergyConfig {
            formulation: Formulation::InteriorPenalty,
            penalty_variant: PenaltyVariant::SeminormBased,
            alpha,
            p: None,
            stable_rewrite: false,
            eps_pen: DEFAULT_EPS_PEN,
        }
    }

    pub fn with_variant(mut self, v: PenaltyVariant) -> Self {
        self.penalty_variant = v;
        self
    }

    pub fn with_formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn with_stable_rewrite(mut self, on: bool) -> Self {
        self.stable_rewrite = on;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_pen = eps;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }
}

/// Affine deformation `x ↦ A x + b`, used as boundary datum and reference solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    /// Row-major.
    pub matrix: [[f64; 2]; 2],
    #[serde(default)]
    pub offset: [f64; 2],
}

impl AffineMap {
    pub fn linear(m: &Mat2) -> Self {
        AffineMap { matrix: [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]], offset: [0.0; 2] }
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let a = &self.matrix;
        [a[0][0] * x[0] + a[0][1] * x[1] + self.offset[0], a[1][0] * x[0] + a[1][1] * x[1] + self.offset[1]]
    }

    pub fn gradient(&self) -> Mat2 {
        crate::models::mat_from_rows(self.matrix)
    }
}

/// Term-by-term breakdown of an assembled energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AssembledEnergy {
    /// `bulk + consistency + alpha * penalty`, unsmoothed.
    pub total: f64,
    /// The smoothed value the optimizer minimizes (equal to `total` when `eps_pen = 0`).
    pub objective: f64,
    /// `Σ ∫ W(∇u)`, or `Σ ∫ W(G_h u)` for the lifted formulation.
    pub bulk: f64,
    /// `Σ ∫ W(∇_h u)` in either formulation.
    pub broken_bulk: f64,
    pub consistency: f64,
    pub penalty: f64,
    pub alpha: f64,
    /// `J` over all edges.
    pub jumps: f64,
    pub internal_jumps: f64,
    pub boundary_jumps: f64,
    /// `|u|^p_{W^{1,p}(Ω, T_h)}`.
    pub seminorm: f64,
    pub p: f64,
}

/// Smoothed power `(x + ε)^s - ε^s` and its derivative.
fn smooth_pow(x: f64, s: f64, eps: f64) -> (f64, f64) {
    if eps > 0.0 {
        let v = (x + eps).powf(s) - eps.powf(s);
        (v, s * (x + eps).powf(s - 1.0))
    } else if x > 0.0 {
        (x.powf(s), s * x.powf(s - 1.0))
    } else {
        (0.0, if s < 1.0 { f64::INFINITY } else if s == 1.0 { 1.0 } else { 0.0 })
    }
}

/// Penalty value and partial derivatives with respect to `(broken bulk, J, seminorm)`.
#[derive(Clone, Copy, Debug, Default)]
struct PenaltyParts {
    exact: f64,
    smooth: f64,
    d_bulk: f64,
    d_jumps: f64,
    d_seminorm: f64,
}

/// Assembles [`AssembledEnergy`] and its gradient for a fixed space, model,
/// configuration and boundary datum.
pub struct DiscreteEnergy {
    space: Arc<DgSpace>,
    model: EnergyModel,
    config: EnergyConfig,
    p: f64,
    elements: Vec<ElementTable>,
    edges: Vec<EdgeTable>,
    /// Datum values at the quadrature points of each boundary edge.
    datum: Vec<Vec<[f64; 2]>>,
    lifting: Option<Lifting>,
    /// Degree `q - 1` basis values at the bulk quadrature points, `[qp][i]`.
    lift_psi: Vec<f64>,
    lift_dim: usize,
    domain_area: f64,
}

impl std::fmt::Debug for DiscreteEnergy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteEnergy")
            .field("model", &self.model)
            .field("config", &self.config)
            .field("dofs", &self.space.total_dofs())
            .finish()
    }
}

struct Buffers {
    d_bulk: Vec<f64>,
    d_broken: Vec<f64>,
    d_sbulk: Vec<f64>,
    d_cons: Vec<f64>,
    d_jint: Vec<f64>,
    d_jbdry: Vec<f64>,
}

impl DiscreteEnergy {
    pub fn new<D>(space: &Arc<DgSpace>, model: EnergyModel, config: EnergyConfig, datum: D) -> Result<Self>
    where
        D: Fn([f64; 2]) -> [f64; 2],
    {
        if space.n_components() != 2 {
            return Err(Error::Parameter("energy assembly needs 2-component deformations".into()));
        }
        let p = config.p.unwrap_or_else(|| model.growth_exponent());
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::Parameter(format!("growth exponent must exceed 1, got {p}")));
        }
        if !(config.alpha >= 0.0 && config.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be nonnegative, got {}", config.alpha)));
        }
        if !(config.eps_pen >= 0.0) {
            return Err(Error::Parameter(format!("eps_pen must be nonnegative, got {}", config.eps_pen)));
        }
        let q = space.degree();
        let pc = p.ceil() as usize;
        let bulk_degree = ((q - 1) * model.polynomial_degree().max(pc)).clamp(1, MAX_DEGREE);
        let edge_degree = (q * pc + 2).max((model.polynomial_degree() - 1) * (q - 1) + q).min(MAX_DEGREE);
        let trule = quadrature_triangle(bulk_degree)?;
        let erule = quadrature_edge(edge_degree)?;
        let elements = element_tables(space, &trule);
        let edges = edge_tables(space, &erule);
        let datum = edges
            .iter()
            .map(|t| if t.minus.is_none() { t.points.iter().map(|&x| datum(x)).collect() } else { Vec::new() })
            .collect();
        let (lifting, lift_psi, lift_dim) = match config.formulation {
            Formulation::InteriorPenalty => (None, Vec::new(), 0),
            Formulation::LiftedGradient => {
                let basis = LagrangeBasis::new(q - 1);
                let psi = trule.points.iter().flat_map(|&xi| basis.values(xi)).collect();
                (Some(Lifting::new(space)?), psi, basis.dim())
            }
        };
        Ok(DiscreteEnergy {
            domain_area: space.mesh().total_area(),
            space: space.clone(),
            model,
            config,
            p,
            elements,
            edges,
            datum,
            lifting,
            lift_psi,
            lift_dim,
        })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.config
    }

    /// Changes the penalty smoothing without rebuilding the quadrature tables.
    pub fn set_eps_pen(&mut self, eps: f64) -> Result<()> {
        if !(eps >= 0.0) {
            return Err(Error::Parameter(format!("eps_pen must be nonnegative, got {eps}")));
        }
        self.config.eps_pen = eps;
        Ok(())
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn num_dofs(&self) -> usize {
        self.space.total_dofs()
    }

    pub fn assemble(&self, coeffs: &[f64]) -> Result<AssembledEnergy> {
        Ok(self.evaluate(coeffs, false)?.0)
    }

    /// Energy breakdown and the exact gradient of [`AssembledEnergy::objective`].
    pub fn assemble_with_gradient(&self, coeffs: &[f64]) -> Result<(AssembledEnergy, Vec<f64>)> {
        let (e, g) = self.evaluate(coeffs, true)?;
        Ok((e, g.expect("gradient requested")))
    }

    pub fn objective(&self, coeffs: &[f64]) -> Result<f64> {
        Ok(self.assemble(coeffs)?.objective)
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.num_dofs() {
            return Err(Error::Parameter(format!(
                "coefficient length {} does not match {} dofs",
                coeffs.len(),
                self.num_dofs()
            )));
        }
        Ok(())
    }

    fn penalty_parts(&self, broken_bulk: f64, jumps: f64, seminorm: f64) -> PenaltyParts {
        let p = self.p;
        let eps = self.config.eps_pen;
        let a = (p - 1.0) / p;
        match self.config.penalty_variant {
            PenaltyVariant::SeminormBased | PenaltyVariant::EnergyBased => {
                let energy_based = self.config.penalty_variant == PenaltyVariant::EnergyBased;
                let base = if energy_based {
                    let one = if self.config.stable_rewrite { self.domain_area } else { 1.0 };
                    one + broken_bulk + jumps
                } else {
                    1.0 + seminorm
                };
                let outer = base.powf(a);
                let d_outer = a * base.powf(a - 1.0);
                let exact_root = if energy_based && self.config.stable_rewrite {
                    0.5 * (2f64.powf(p) * jumps).powf(1.0 / p)
                } else {
                    jumps.powf(1.0 / p)
                };
                let (root, d_root) = smooth_pow(jumps, 1.0 / p, eps);
                let mut parts = PenaltyParts {
                    exact: outer * exact_root,
                    smooth: outer * root,
                    d_jumps: outer * d_root,
                    ..Default::default()
                };
                if energy_based {
                    parts.d_bulk = d_outer * root;
                    parts.d_jumps += d_outer * root;
                } else {
                    parts.d_seminorm = d_outer * root;
                }
                parts
            }
            PenaltyVariant::ConvexStyle => {
                let b = (p - 2.0) / p;
                let (sb, d_sb) = smooth_pow(seminorm, b, eps);
                let (jr, d_jr) = smooth_pow(jumps, 2.0 / p, eps);
                let exact = (1.0 + seminorm.powf(b)) * jumps.powf(2.0 / p);
                PenaltyParts {
                    exact,
                    smooth: (1.0 + sb) * jr,
                    d_bulk: 0.0,
                    d_jumps: (1.0 + sb) * d_jr,
                    d_seminorm: d_sb * jr,
                }
            }
        }
    }

    fn evaluate(&self, coeffs: &[f64], want_grad: bool) -> Result<(AssembledEnergy, Option<Vec<f64>>)> {
        self.check_len(coeffs)?;
        let space = &*self.space;
        let nb = space.nodes_per_element();
        let dpe = space.dofs_per_element();
        let ndof = space.total_dofs();
        let p = self.p;
        let lifted = self.lifting.is_some();
        let nt = self.lift_dim;

        let lifted_coeffs = self.lifting.as_ref().map(|l| l.apply(coeffs));
        let lblock = nt * 4;

        let mut buf = want_grad.then(|| Buffers {
            d_bulk: vec![0.0; ndof],
            d_broken: if lifted { vec![0.0; ndof] } else { Vec::new() },
            d_sbulk: vec![0.0; ndof],
            d_cons: vec![0.0; ndof],
            d_jint: vec![0.0; ndof],
            d_jbdry: vec![0.0; ndof],
        });
        let mut d_lift = if want_grad && lifted { vec![0.0; self.lifting.as_ref().unwrap().output_len()] } else { Vec::new() };

        // ---- element terms
        struct ElementSums {
            bulk: f64,
            broken: f64,
            sbulk: f64,
            bad: bool,
        }
        let element_kernel = |k: usize,
                              gb: Option<&mut [f64]>,
                              gbb: Option<&mut [f64]>,
                              gs: Option<&mut [f64]>,
                              gl: Option<&mut [f64]>|
         -> ElementSums {
            let t = &self.elements[k];
            let c = &coeffs[k * dpe..(k + 1) * dpe];
            let mut sums = ElementSums { bulk: 0.0, broken: 0.0, sbulk: 0.0, bad: false };
            let (mut gb, mut gbb, mut gs, mut gl) = (gb, gbb, gs, gl);
            for qp in 0..t.weights.len() {
                let w = t.weights[qp];
                let mut gflat = [0.0; 4];
                t.side.gradient_into(qp, nb, c, &mut gflat);
                let f = Mat2::new(gflat[0], gflat[1], gflat[2], gflat[3]);
                let fnorm = f.norm();
                sums.sbulk += w * fnorm.powf(p);
                // sig_b: stress of the bulk integrand, sig_w: stress of W(∇_h u)
                let (wb, sig_b, sig_w) = if lifted {
                    let lc = lifted_coeffs.as_ref().unwrap();
                    let psi = &self.lift_psi[qp * nt..(qp + 1) * nt];
                    let mut r = Mat2::zeros();
                    for (i, s) in psi.iter().enumerate() {
                        let rb = &lc[k * lblock + i * 4..k * lblock + i * 4 + 4];
                        r += *s * Mat2::new(rb[0], rb[1], rb[2], rb[3]);
                    }
                    let g = f - r;
                    let (wg, sg) = self.model.eval(&g);
                    let (wf, sf) = if want_grad { self.model.eval(&f) } else { (self.model.energy(&f), Mat2::zeros()) };
                    sums.broken += w * wf;
                    if let Some(gl) = gl.as_deref_mut() {
                        for (i, s) in psi.iter().enumerate() {
                            for m in 0..4 {
                                gl[i * 4 + m] += w * s * sg[(m / 2, m % 2)];
                            }
                        }
                    }
                    (wg, sg, sf)
                } else {
                    let (wf, sf) = if want_grad { self.model.eval(&f) } else { (self.model.energy(&f), Mat2::zeros()) };
                    sums.broken += w * wf;
                    (wf, sf, sf)
                };
                if !wb.is_finite() {
                    sums.bad = true;
                }
                sums.bulk += w * wb;
                if want_grad {
                    let sig_s = if fnorm > 0.0 { p * fnorm.powf(p - 2.0) * f } else { Mat2::zeros() };
                    let grads = &t.side.grads[qp * nb..(qp + 1) * nb];
                    for (j, dphi) in grads.iter().enumerate() {
                        for a in 0..2 {
                            let idx = j * 2 + a;
                            let db = sig_b[(a, 0)] * dphi[0] + sig_b[(a, 1)] * dphi[1];
                            if let Some(g) = gb.as_deref_mut() {
                                g[idx] += w * db;
                            }
                            if let Some(g) = gbb.as_deref_mut() {
                                g[idx] += w * (sig_w[(a, 0)] * dphi[0] + sig_w[(a, 1)] * dphi[1]);
                            }
                            if let Some(g) = gs.as_deref_mut() {
                                g[idx] += w * (sig_s[(a, 0)] * dphi[0] + sig_s[(a, 1)] * dphi[1]);
                            }
                        }
                    }
                }
            }
            sums
        };

        let element_sums: Vec<ElementSums> = match buf.as_mut() {
            None => (0..space.num_elements()).into_par_iter().map(|k| element_kernel(k, None, None, None, None)).collect(),
            Some(b) => {
                let nel = space.num_elements();
                let mut broken_chunks: Vec<Option<&mut [f64]>> = if lifted {
                    b.d_broken.chunks_mut(dpe).map(Some).collect()
                } else {
                    (0..nel).map(|_| None).collect()
                };
                let mut lift_chunks: Vec<Option<&mut [f64]>> = if lifted {
                    d_lift.chunks_mut(lblock).map(Some).collect()
                } else {
                    (0..nel).map(|_| None).collect()
                };
                b.d_bulk
                    .par_chunks_mut(dpe)
                    .zip(b.d_sbulk.par_chunks_mut(dpe))
                    .zip(broken_chunks.par_iter_mut())
                    .zip(lift_chunks.par_iter_mut())
                    .enumerate()
                    .map(|(k, (((gb, gs), gbb), gl))| {
                        element_kernel(k, Some(gb), gbb.as_deref_mut(), Some(gs), gl.as_deref_mut())
                    })
                    .collect()
            }
        };

        let (mut bulk, mut broken, mut sbulk) = (0.0, 0.0, 0.0);
        for (k, s) in element_sums.iter().enumerate() {
            if s.bad {
                return Err(Error::NonFinite { what: "strain energy", element: k });
            }
            bulk += s.bulk;
            broken += s.broken;
            sbulk += s.sbulk;
        }
        if let (Some(b), Some(l)) = (buf.as_mut(), self.lifting.as_ref()) {
            // bulk depends on R_h(u) through G = ∇u - R
            l.apply_transpose_add(&d_lift, -1.0, &mut b.d_bulk);
        }

        // ---- edge terms
        struct EdgeSums {
            cons: f64,
            jump: f64,
        }
        let stable = self.config.stable_rewrite;
        let with_consistency = !lifted;
        let edge_kernel = |ei: usize, out: Option<&mut [f64]>| -> EdgeSums {
            let t = &self.edges[ei];
            let h = t.length;
            let kp = t.plus.element;
            let cp = &coeffs[kp * dpe..(kp + 1) * dpe];
            let mut sums = EdgeSums { cons: 0.0, jump: 0.0 };
            let n = t.normal;
            let mut out = out;
            let (mut up, mut um) = ([0.0; 2], [0.0; 2]);
            let (mut gp, mut gm) = ([0.0; 4], [0.0; 4]);
            for qp in 0..t.len() {
                let w = t.weights[qp];
                t.plus.value_into(qp, nb, cp, &mut up);
                let (jmp, avg_minus) = match &t.minus {
                    Some(minus) => {
                        let km = minus.element;
                        let cm = &coeffs[km * dpe..(km + 1) * dpe];
                        minus.value_into(qp, nb, cm, &mut um);
                        ([up[0] - um[0], up[1] - um[1]], Some((minus, cm)))
                    }
                    None => {
                        let d = self.datum[ei][qp];
                        ([up[0] - d[0], up[1] - d[1]], None)
                    }
                };
                let jn = (jmp[0] * jmp[0] + jmp[1] * jmp[1]).sqrt();
                let scaled = if stable { h * w * (jn / h).powf(p) } else { h.powf(1.0 - p) * w * jn.powf(p) };
                sums.jump += scaled;
                let gj = if jn > 0.0 { h.powf(1.0 - p) * w * p * jn.powf(p - 2.0) } else { 0.0 };

                // consistency on internal edges
                let mut cons_grad: Option<(Mat2, Mat2)> = None;
                if with_consistency {
                    if let Some((minus, cm)) = avg_minus {
                        t.plus.gradient_into(qp, nb, cp, &mut gp);
                        minus.gradient_into(qp, nb, cm, &mut gm);
                        let avg = 0.5 * Mat2::new(gp[0] + gm[0], gp[1] + gm[1], gp[2] + gm[2], gp[3] + gm[3]);
                        let m = Mat2::new(jmp[0] * n[0], jmp[0] * n[1], jmp[1] * n[0], jmp[1] * n[1]);
                        let sig = self.model.stress(&avg);
                        sums.cons -= w * sig.dot(&m);
                        if out.is_some() {
                            cons_grad = Some((sig, self.model.stress_derivative(&avg, &m)));
                        }
                    }
                }

                if let Some(o) = out.as_deref_mut() {
                    let (dc, dj) = o.split_at_mut(2 * dpe);
                    let pv = &t.plus.values[qp * nb..(qp + 1) * nb];
                    for (j, &phi) in pv.iter().enumerate() {
                        for a in 0..2 {
                            dj[j * 2 + a] += gj * jmp[a] * phi;
                        }
                    }
                    if let Some(minus) = &t.minus {
                        let mv = &minus.values[qp * nb..(qp + 1) * nb];
                        for (j, &phi) in mv.iter().enumerate() {
                            for a in 0..2 {
                                dj[dpe + j * 2 + a] -= gj * jmp[a] * phi;
                            }
                        }
                        if let Some((sig, hm)) = cons_grad {
                            let sn = [sig[(0, 0)] * n[0] + sig[(0, 1)] * n[1], sig[(1, 0)] * n[0] + sig[(1, 1)] * n[1]];
                            for (side, tab, sign) in [(0usize, &t.plus, 1.0), (1, minus, -1.0)] {
                                let vals = &tab.values[qp * nb..(qp + 1) * nb];
                                let grads = &tab.grads[qp * nb..(qp + 1) * nb];
                                for j in 0..nb {
                                    for a in 0..2 {
                                        let v = 0.5 * (hm[(a, 0)] * grads[j][0] + hm[(a, 1)] * grads[j][1])
                                            + sign * sn[a] * vals[j];
                                        dc[side * dpe + j * 2 + a] -= w * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            sums
        };

        let ne = self.edges.len();
        let mut edge_buf = if want_grad { vec![0.0; ne * 4 * dpe] } else { Vec::new() };
        let edge_sums: Vec<EdgeSums> = if want_grad {
            edge_buf.par_chunks_mut(4 * dpe).enumerate().map(|(e, o)| edge_kernel(e, Some(o))).collect()
        } else {
            (0..ne).into_par_iter().map(|e| edge_kernel(e, None)).collect()
        };
        let (mut cons, mut jint, mut jbdry) = (0.0, 0.0, 0.0);
        for (t, s) in self.edges.iter().zip(&edge_sums) {
            cons += s.cons;
            if t.minus.is_some() {
                jint += s.jump;
            } else {
                jbdry += s.jump;
            }
        }
        if let Some(b) = buf.as_mut() {
            for (ei, t) in self.edges.iter().enumerate() {
                let o = &edge_buf[ei * 4 * dpe..(ei + 1) * 4 * dpe];
                let (dc, dj) = o.split_at(2 * dpe);
                let target = if t.minus.is_some() { &mut b.d_jint } else { &mut b.d_jbdry };
                let kp = t.plus.element;
                for i in 0..dpe {
                    target[kp * dpe + i] += dj[i];
                    b.d_cons[kp * dpe + i] += dc[i];
                }
                if let Some(m) = &t.minus {
                    let km = m.element;
                    for i in 0..dpe {
                        target[km * dpe + i] += dj[dpe + i];
                        b.d_cons[km * dpe + i] += dc[dpe + i];
                    }
                }
            }
        }

        let jumps = jint + jbdry;
        let seminorm = sbulk + jint;
        let pen = self.penalty_parts(broken, jumps, seminorm);
        let alpha = self.config.alpha;
        let energy = AssembledEnergy {
            total: bulk + cons + alpha * pen.exact,
            objective: bulk + cons + alpha * pen.smooth,
            bulk,
            broken_bulk: broken,
            consistency: cons,
            penalty: pen.exact,
            alpha,
            jumps,
            internal_jumps: jint,
            boundary_jumps: jbdry,
            seminorm,
            p,
        };

        let grad = buf.map(|b| {
            let d_broken = if lifted { &b.d_broken } else { &b.d_bulk };
            (0..ndof)
                .map(|i| {
                    let dj = b.d_jint[i] + b.d_jbdry[i];
                    b.d_bulk[i]
                        + b.d_cons[i]
                        + alpha
                            * (pen.d_bulk * d_broken[i]
                                + pen.d_jumps * dj
                                + pen.d_seminorm * (b.d_sbulk[i] + b.d_jint[i]))
                })
                .collect()
        });
        Ok((energy, grad))
    }
}

/// One-shot assembly of the energy breakdown for `field`.
pub fn assemble_energy<D>(field: &DgField, model: &EnergyModel, config: &EnergyConfig, datum: D) -> Result<AssembledEnergy>
where
    D: Fn([f64; 2]) -> [f64; 2],
{
    DiscreteEnergy::new(field.space(), model.clone(), *config, datum)?.assemble(field.coeffs())
}

/// One-shot gradient of the (smoothed) objective at `field`.
pub fn assemble_gradient<D>(field: &DgField, model: &EnergyModel, config: &EnergyConfig, datum: D) -> Result<Vec<f64>>
where
    D: Fn([f64; 2]) -> [f64; 2],
{
    Ok(DiscreteEnergy::new(field.space(), model.clone(), *config, datum)?
        .assemble_with_gradient(field.coeffs())?
        .1)
}

/// [`assemble_energy`] with the lifted-gradient formulation.
pub fn assemble_energy_lifted<D>(field: &DgField, model: &EnergyModel, config: &EnergyConfig, datum: D) -> Result<AssembledEnergy>
where
    D: Fn([f64; 2]) -> [f64; 2],
{
    assemble_energy(field, model, &config.with_formulation(Formulation::LiftedGradient), datum)
}

/// [`assemble_gradient`] with the lifted-gradient formulation.
pub fn assemble_gradient_lifted<D>(field: &DgField, model: &EnergyModel, config: &EnergyConfig, datum: D) -> Result<Vec<f64>>
where
    D: Fn([f64; 2]) -> [f64; 2],
{
    assemble_gradient(field, model, &config.with_formulation(Formulation::LiftedGradient), datum)
}
