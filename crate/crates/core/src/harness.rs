//! Config-driven experiments: uniaxial compression, two-well microstructure,
//! and pointwise estimates of the quasiconvex envelope.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{AffineMap, AssembledEnergy, DiscreteEnergy, EnergyConfig, PenaltyVariant};
use crate::error::{Error, Result};
use crate::mesh::{BBox, Mesh};
use crate::minimize::{
    minimize_with_continuation, MinimizeOptions, MinimizeResult, Objective, SmoothedObjective, Termination,
};
use crate::models::{compression_gradient, EnergyModel, Mat2, ModelSpec};
use crate::space::tables::element_tables;
use crate::space::{quadrature_edge, quadrature_triangle, DgField, DgSpace};
use crate::twinning::solve_twinning;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Compression,
    Twowell,
    QcEnvelope,
    Custom,
}

/// Mesh size as squares per side, or as `[nx, ny]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Square(usize),
    Rect([usize; 2]),
}

impl Resolution {
    pub fn cells(&self) -> (usize, usize) {
        match *self {
            Resolution::Square(n) => (n, n),
            Resolution::Rect([nx, ny]) => (nx, ny),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub bbox: BBox,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { nx: 16, ny: 16, bbox: BBox::UNIT }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub degree: usize,
    pub components: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig { degree: 1, components: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcConfig {
    /// Row-major `F`; the two-well midpoint `0.5 I + 0.5 R₁V` when absent.
    pub matrix: Option<[[f64; 2]; 2]>,
    pub restarts: usize,
    /// Perturbation amplitude in units of the mesh size.
    pub amplitude: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig { matrix: None, restarts: 5, amplitude: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    pub model: ModelSpec,
    pub energy: EnergyConfig,
    #[serde(default)]
    pub minimize: MinimizeOptions,
    /// Penalty weights to sweep; `energy.alpha` alone when empty.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Meshes to sweep; `mesh` alone when empty.
    #[serde(default)]
    pub resolutions: Vec<Resolution>,
    /// Penalty variants to sweep; `energy.penalty_variant` alone when empty.
    #[serde(default)]
    pub variants: Vec<PenaltyVariant>,
    /// Decreasing smoothing values run before the final `energy.eps_pen`.
    #[serde(default)]
    pub continuation: Vec<f64>,
    /// Boundary datum for `custom` runs.
    #[serde(default)]
    pub datum: Option<AffineMap>,
    #[serde(default)]
    pub qc: QcConfig,
    #[serde(default)]
    pub write_vtk: bool,
    /// Samples of the displacement profile along the diagonal.
    #[serde(default = "default_profile")]
    pub profile_samples: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_profile() -> usize {
    201
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let sweep = matches!(self.experiment, ExperimentKind::Compression | ExperimentKind::Twowell);
        if sweep && self.resolutions.is_empty() {
            return Err(Error::Config("sweep experiments need a non-empty `resolutions` list".into()));
        }
        if self.experiment == ExperimentKind::Compression && self.alphas.is_empty() {
            return Err(Error::Config("compression needs a non-empty `alphas` list".into()));
        }
        if self.experiment == ExperimentKind::Custom && self.datum.is_none() {
            return Err(Error::Config("custom runs need a `datum`".into()));
        }
        if self.space.components != 2 {
            return Err(Error::Config("deformations have exactly 2 components".into()));
        }
        if self.space.degree == 0 {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        let model = self.model.build()?;
        match (self.experiment, &model) {
            (ExperimentKind::Compression, EnergyModel::DetSquared) => {}
            (ExperimentKind::Compression, _) => return Err(Error::Config("compression uses the det_squared model".into())),
            (ExperimentKind::Twowell, EnergyModel::TwoWell { .. }) => {}
            (ExperimentKind::Twowell, _) => return Err(Error::Config("twowell uses the two_well model".into())),
            _ => {}
        }
        if self.continuation.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("continuation values must be positive".into()));
        }
        self.minimize.validate()
    }
}

/// One minimization in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: String,
    pub nx: usize,
    pub ny: usize,
    pub triangles: usize,
    pub alpha: f64,
    pub variant: String,
    pub total: f64,
    pub objective: f64,
    pub bulk: f64,
    pub consistency: f64,
    pub penalty: f64,
    pub jumps: f64,
    pub l1_error: f64,
    pub w11_error: f64,
    pub l2_error: f64,
    pub iterations: usize,
    pub termination: String,
    pub wall_time: f64,
}

const REPORT_HEADER: &str = "run,nx,ny,triangles,alpha,variant,total,objective,bulk,consistency,penalty,jumps,\
l1_error,w11_error,l2_error,iterations,termination,wall_time";

/// Seventeen significant digits, enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunRecord {
    fn csv_row(&self) -> String {
        [
            self.run.clone(),
            self.nx.to_string(),
            self.ny.to_string(),
            self.triangles.to_string(),
            num(self.alpha),
            self.variant.clone(),
            num(self.total),
            num(self.objective),
            num(self.bulk),
            num(self.consistency),
            num(self.penalty),
            num(self.jumps),
            num(self.l1_error),
            num(self.w11_error),
            num(self.l2_error),
            self.iterations.to_string(),
            self.termination.clone(),
            num(self.wall_time),
        ]
        .join(",")
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 18 {
            return Err(Error::Config(format!("report row has {} fields, expected 18", f.len())));
        }
        let fl = |i: usize| f[i].parse::<f64>().map_err(|e| Error::Config(format!("field {i}: {e}")));
        let us = |i: usize| f[i].parse::<usize>().map_err(|e| Error::Config(format!("field {i}: {e}")));
        Ok(RunRecord {
            run: f[0].to_string(),
            nx: us(1)?,
            ny: us(2)?,
            triangles: us(3)?,
            alpha: fl(4)?,
            variant: f[5].to_string(),
            total: fl(6)?,
            objective: fl(7)?,
            bulk: fl(8)?,
            consistency: fl(9)?,
            penalty: fl(10)?,
            jumps: fl(11)?,
            l1_error: fl(12)?,
            w11_error: fl(13)?,
            l2_error: fl(14)?,
            iterations: us(15)?,
            termination: f[16].to_string(),
            wall_time: fl(17)?,
        })
    }

    fn numbers(&self) -> [f64; 11] {
        [
            self.alpha,
            self.total,
            self.objective,
            self.bulk,
            self.consistency,
            self.penalty,
            self.jumps,
            self.l1_error,
            self.w11_error,
            self.l2_error,
            self.wall_time,
        ]
    }
}

/// Per-triangle quantities of a computed deformation, evaluated at centroids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldExport {
    pub centroid: Vec<[f64; 2]>,
    pub deformed_centroid: Vec<[f64; 2]>,
    pub inv_det: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub energy_density: Vec<f64>,
}

/// `|u| = |y(x) - x|` sampled along the diagonal from the lower-left to the upper-right corner.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Profile {
    pub s: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub displacement: Vec<f64>,
}

/// A run record together with its exports.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub fields: FieldExport,
    pub profile: Profile,
    pub trace: Vec<TraceRow>,
    pub coeffs: Vec<f64>,
}

/// One accepted iterate with its term breakdown.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub stage: usize,
    pub iteration: usize,
    pub grad_inf: f64,
    pub step: f64,
    pub energy: AssembledEnergy,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub runs: Vec<RunOutput>,
    /// Runs that could not be set up, with the reason.
    pub failures: Vec<(String, String)>,
}

impl RunReport {
    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records())
    }

    pub fn find(&self, run: &str) -> Option<&RunOutput> {
        self.runs.iter().find(|r| r.record.run == run)
    }

    /// Writes `report.csv` and the per-run files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        for r in &self.runs {
            let id = &r.record.run;
            fs::write(dir.join(format!("trace_{id}.csv")), trace_csv(&r.trace))?;
            fs::write(dir.join(format!("fields_{id}.csv")), fields_csv(&r.fields))?;
            fs::write(dir.join(format!("profile_{id}.csv")), profile_csv(&r.profile))?;
        }
        if !self.failures.is_empty() {
            let mut s = String::from("run,error\n");
            for (run, msg) in &self.failures {
                let _ = writeln!(s, "{run},\"{}\"", msg.replace('"', "'"));
            }
            fs::write(dir.join("failures.csv"), s)?;
        }
        Ok(())
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        _ => return Err(Error::Config("missing or unexpected report header".into())),
    }
    lines.filter(|l| !l.is_empty()).map(RunRecord::parse).collect()
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("stage,iteration,objective,total,bulk,consistency,penalty,jumps,grad_inf,step\n");
    for t in trace {
        let e = &t.energy;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            t.stage,
            t.iteration,
            num(e.objective),
            num(e.total),
            num(e.bulk),
            num(e.consistency),
            num(e.penalty),
            num(e.jumps),
            num(t.grad_inf),
            num(t.step)
        );
    }
    s
}

fn fields_csv(f: &FieldExport) -> String {
    let mut s = String::from("triangle,x,y,deformed_x,deformed_y,inv_det,lambda_max,energy_density\n");
    for k in 0..f.centroid.len() {
        let _ = writeln!(
            s,
            "{k},{},{},{},{},{},{},{}",
            num(f.centroid[k][0]),
            num(f.centroid[k][1]),
            num(f.deformed_centroid[k][0]),
            num(f.deformed_centroid[k][1]),
            num(f.inv_det[k]),
            num(f.lambda_max[k]),
            num(f.energy_density[k])
        );
    }
    s
}

fn profile_csv(p: &Profile) -> String {
    let mut s = String::from("s,x,y,displacement\n");
    for i in 0..p.s.len() {
        let _ = writeln!(s, "{},{},{},{}", num(p.s[i]), num(p.points[i][0]), num(p.points[i][1]), num(p.displacement[i]));
    }
    s
}

/// Legacy VTK unstructured grid of a degree-1 field with per-triangle data.
pub fn write_vtk(path: &Path, field: &DgField, fields: &FieldExport) -> Result<()> {
    let space = field.space();
    let mesh = space.mesh();
    let nt = mesh.num_triangles();
    let mut s = String::from("# vtk DataFile Version 3.0\ndgrelax\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", 3 * nt);
    let mut disp = Vec::with_capacity(3 * nt);
    for k in 0..nt {
        let v = mesh.triangle_vertices(k);
        for x in &v {
            let _ = writeln!(s, "{} {} 0", x[0], x[1]);
            let y = field.eval(k, space.element_map(k).to_reference(*x))?;
            disp.push([y[0] - x[0], y[1] - x[1]]);
        }
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for k in 0..nt {
        let _ = writeln!(s, "3 {} {} {}", 3 * k, 3 * k + 1, 3 * k + 2);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "CELL_DATA {nt}");
    for (name, data) in [
        ("inv_det", &fields.inv_det),
        ("lambda_max", &fields.lambda_max),
        ("energy_density", &fields.energy_density),
    ] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in data {
            let _ = writeln!(s, "{v}");
        }
    }
    let _ = writeln!(s, "POINT_DATA {}\nVECTORS displacement double", 3 * nt);
    for d in disp {
        let _ = writeln!(s, "{} {} 0", d[0], d[1]);
    }
    fs::write(path, s)?;
    Ok(())
}

/// `(‖y_h - y₀‖_{L¹}, ‖y_h - y₀‖_{L²}, |y_h - y₀|_{W^{1,1}})`, the last being the broken
/// seminorm: elementwise gradients plus unweighted internal jumps.
pub fn error_norms<Y, G>(field: &DgField, y0: Y, grad_y0: G) -> Result<(f64, f64, f64)>
where
    Y: Fn([f64; 2]) -> [f64; 2],
    G: Fn([f64; 2]) -> Mat2,
{
    let space = field.space();
    let q = space.degree();
    let rule = quadrature_triangle(2 * q + 6)?;
    let tables = element_tables(space, &rule);
    let nb = space.nodes_per_element();
    let (mut l1, mut l2, mut w11) = (0.0, 0.0, 0.0);
    let (mut v, mut g) = ([0.0; 2], [0.0; 4]);
    for (k, t) in tables.iter().enumerate() {
        let c = field.element_coeffs(k);
        for qp in 0..t.weights.len() {
            let x = t.points[qp];
            let w = t.weights[qp];
            t.side.value_into(qp, nb, c, &mut v);
            t.side.gradient_into(qp, nb, c, &mut g);
            let y = y0(x);
            let dy = grad_y0(x);
            let e = (v[0] - y[0]).hypot(v[1] - y[1]);
            l1 += w * e;
            l2 += w * e * e;
            let de = Mat2::new(g[0], g[1], g[2], g[3]) - dy;
            w11 += w * de.norm();
        }
    }
    let erule = quadrature_edge(2 * q + 6)?;
    let params: Vec<f64> = erule.points.iter().map(|p| p[0]).collect();
    let mesh = space.mesh();
    for (e, edge) in mesh.edges().iter().enumerate() {
        if !edge.is_internal() {
            continue;
        }
        let jumps = crate::trace::jump(field, e, &params, None)?;
        for (j, w) in jumps.iter().zip(&erule.weights) {
            w11 += w * edge.length * j.norm();
        }
    }
    Ok((l1, l2.sqrt(), w11))
}

/// Element containing `x` and the reference coordinates of `x` in it.
fn locate(space: &DgSpace, x: [f64; 2]) -> Option<(usize, [f64; 2])> {
    let tol = -1e-12;
    (0..space.num_elements()).find_map(|k| {
        let xi = space.element_map(k).to_reference(x);
        (xi[0] >= tol && xi[1] >= tol && 1.0 - xi[0] - xi[1] >= tol).then_some((k, xi))
    })
}

pub fn field_exports(field: &DgField, model: &EnergyModel) -> Result<FieldExport> {
    let space = field.space();
    let mesh = space.mesh();
    let mut out = FieldExport::default();
    let centre = [1.0 / 3.0, 1.0 / 3.0];
    for k in 0..mesh.num_triangles() {
        let g = &field.eval_gradient(k, &[centre])?[0];
        let f = Mat2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
        let y = field.eval(k, centre)?;
        out.centroid.push(mesh.centroid(k));
        out.deformed_centroid.push([y[0], y[1]]);
        out.inv_det.push(1.0 / f.determinant());
        out.lambda_max.push(f.singular_values().max());
        out.energy_density.push(model.energy(&f));
    }
    Ok(out)
}

pub fn diagonal_profile(field: &DgField, samples: usize) -> Result<Profile> {
    let space = field.space();
    let b = space.mesh().bbox();
    let mut out = Profile::default();
    let n = samples.max(2);
    for i in 0..n {
        let s = i as f64 / (n - 1) as f64;
        let x = [b.x0 + s * b.width(), b.y0 + s * b.height()];
        let (k, xi) = locate(space, x).ok_or_else(|| Error::Mesh(format!("point {x:?} outside the mesh")))?;
        let y = field.eval(k, xi)?;
        out.s.push(s);
        out.points.push(x);
        out.displacement.push((y[0] - x[0]).hypot(y[1] - x[1]));
    }
    Ok(out)
}

/// Records the term breakdown at every point where a gradient is requested,
/// which for the minimizer is exactly once per accepted iterate.
struct Recorder<'a> {
    energy: &'a mut DiscreteEnergy,
    log: RefCell<Vec<AssembledEnergy>>,
}

impl Objective for Recorder<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.energy.objective(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (e, g) = self.energy.assemble_with_gradient(x)?;
        self.log.borrow_mut().push(e);
        Ok((e.objective, g))
    }
}

impl SmoothedObjective for Recorder<'_> {
    fn eps_pen(&self) -> f64 {
        self.energy.config().eps_pen
    }

    fn set_eps_pen(&mut self, eps: f64) -> Result<()> {
        self.energy.set_eps_pen(eps)
    }
}

/// Everything needed for one minimization.
pub struct RunSpec<'a> {
    pub id: String,
    pub space: Arc<DgSpace>,
    pub model: &'a EnergyModel,
    pub energy: EnergyConfig,
    pub datum: AffineMap,
    pub options: &'a MinimizeOptions,
    pub continuation: &'a [f64],
    pub profile_samples: usize,
}

/// Minimizes from `x0` (the interpolated datum when `None`) and evaluates all outputs.
pub fn run_single(spec: &RunSpec<'_>, x0: Option<Vec<f64>>) -> Result<RunOutput> {
    let start = Instant::now();
    let datum = spec.datum;
    let mut energy = DiscreteEnergy::new(&spec.space, spec.model.clone(), spec.energy, move |x| datum.apply(x))?;
    let x0 = x0.unwrap_or_else(|| DgField::interpolate(&spec.space, |x| datum.apply(x)).into_coeffs());
    let mut rec = Recorder { energy: &mut energy, log: RefCell::new(Vec::new()) };
    let result: MinimizeResult = minimize_with_continuation(&mut rec, &x0, spec.options, spec.continuation)?;
    let log = rec.log.into_inner();
    let trace = build_trace(&result, &log);
    let e = energy.assemble(&result.x)?;
    let field = DgField::from_coeffs(&spec.space, result.x.clone())?;
    let grad = datum.gradient();
    let (l1, l2, w11) = error_norms(&field, |x| datum.apply(x), |_| grad)?;
    let fields = field_exports(&field, spec.model)?;
    let profile = diagonal_profile(&field, spec.profile_samples)?;
    let mesh = spec.space.mesh();
    let (nx, ny) = cells_of(mesh);
    let record = RunRecord {
        run: spec.id.clone(),
        nx,
        ny,
        triangles: mesh.num_triangles(),
        alpha: spec.energy.alpha,
        variant: spec.energy.penalty_variant.name().to_string(),
        total: e.total,
        objective: e.objective,
        bulk: e.bulk,
        consistency: e.consistency,
        penalty: e.penalty,
        jumps: e.jumps,
        l1_error: l1,
        w11_error: w11,
        l2_error: l2,
        iterations: result.iterations,
        termination: termination_label(&result.termination),
        wall_time: start.elapsed().as_secs_f64(),
    };
    let nums = record.numbers();
    if let Some(i) = nums.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "report entry", element: i });
    }
    Ok(RunOutput { record, fields, profile, trace, coeffs: result.x })
}

fn termination_label(t: &Termination) -> String {
    match t {
        Termination::NonFinite(_) => "non_finite".to_string(),
        other => other.to_string(),
    }
}

fn build_trace(result: &MinimizeResult, log: &[AssembledEnergy]) -> Vec<TraceRow> {
    // each stage re-evaluates its start, so the log and the trace line up entry by entry
    result
        .trace
        .iter()
        .zip(log)
        .map(|(t, e)| TraceRow { stage: t.stage, iteration: t.iteration, grad_inf: t.grad_inf, step: t.step, energy: *e })
        .collect()
}

fn cells_of(mesh: &Mesh) -> (usize, usize) {
    // criss-cross meshes: 4 triangles per cell, and cell widths recoverable from edge lengths
    let b = mesh.bbox();
    let mut hx = f64::INFINITY;
    let mut hy = f64::INFINITY;
    for e in mesh.edges() {
        let [a, c] = e.vertices.map(|v| mesh.vertices()[v]);
        let (dx, dy) = ((c[0] - a[0]).abs(), (c[1] - a[1]).abs());
        if dy < 1e-14 && dx > 0.0 {
            hx = hx.min(dx);
        }
        if dx < 1e-14 && dy > 0.0 {
            hy = hy.min(dy);
        }
    }
    ((b.width() / hx).round() as usize, (b.height() / hy).round() as usize)
}

fn build_space(cfg: &RunConfig, res: Option<Resolution>) -> Result<Arc<DgSpace>> {
    let (nx, ny) = res.map(|r| r.cells()).unwrap_or((cfg.mesh.nx, cfg.mesh.ny));
    let mesh = Mesh::crisscross(nx, ny, cfg.mesh.bbox)?;
    DgSpace::new(Arc::new(mesh), cfg.space.degree, cfg.space.components)
}

/// `∇y₀ = 0.5 I + 0.5 R₁ V` for a two-well model.
pub fn twowell_datum(model: &EnergyModel) -> Result<Mat2> {
    let EnergyModel::TwoWell { well, .. } = model else {
        return Err(Error::Config("the two-well datum needs a two_well model".into()));
    };
    let tw = solve_twinning(well)?;
    Ok(0.5 * Mat2::identity() + 0.5 * tw.first.rotation * well)
}

fn sweep(cfg: &RunConfig, model: &EnergyModel, datum: AffineMap, prefix: &str) -> RunReport {
    let alphas = if cfg.alphas.is_empty() { vec![cfg.energy.alpha] } else { cfg.alphas.clone() };
    let variants = if cfg.variants.is_empty() { vec![cfg.energy.penalty_variant] } else { cfg.variants.clone() };
    let resolutions: Vec<Option<Resolution>> =
        if cfg.resolutions.is_empty() { vec![None] } else { cfg.resolutions.iter().copied().map(Some).collect() };
    let mut report = RunReport::default();
    for res in &resolutions {
        let space = match build_space(cfg, *res) {
            Ok(s) => s,
            Err(e) => {
                report.failures.push((format!("{prefix}_{res:?}"), e.to_string()));
                continue;
            }
        };
        let (nx, ny) = cells_of(space.mesh());
        for &variant in &variants {
            for &alpha in &alphas {
                let id = format!("{prefix}_{nx}x{ny}_{}_a{alpha}", variant.name());
                let spec = RunSpec {
                    id: id.clone(),
                    space: space.clone(),
                    model,
                    energy: EnergyConfig { alpha, penalty_variant: variant, ..cfg.energy },
                    datum,
                    options: &cfg.minimize,
                    continuation: &cfg.continuation,
                    profile_samples: cfg.profile_samples,
                };
                match run_single(&spec, None) {
                    Ok(out) => report.runs.push(out),
                    Err(e) => report.failures.push((id, e.to_string())),
                }
            }
        }
    }
    report
}

/// Uniaxial compression `y₀ = F₀ x` with the `det²` model over the configured sweeps.
pub fn run_compression(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    Ok(sweep(cfg, &model, AffineMap::linear(&compression_gradient()), "compression"))
}

/// Two-well microstructure with `∇y₀ = 0.5 I + 0.5 R₁ V` over the resolution sweep.
pub fn run_twowell(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let f = twowell_datum(&model)?;
    Ok(sweep(cfg, &model, AffineMap::linear(&f), "twowell"))
}

pub fn run_custom(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let datum = cfg.datum.expect("validated");
    Ok(sweep(cfg, &model, datum, "custom"))
}

/// Result of a quasiconvex-envelope estimate.
#[derive(Clone, Debug)]
pub struct QcEstimate {
    /// `min E_h / |Ω|` over the affine start and all restarts.
    pub estimate: f64,
    /// `W(F)`.
    pub pointwise: f64,
    /// Exact energies per attempt; index 0 is the unperturbed start.
    pub attempts: Vec<f64>,
    pub best: Option<RunOutput>,
}

/// Estimates `W^qc(F)` by minimizing with `u₀ = F x` from the affine interpolant
/// and from `restarts` seeded perturbations of amplitude `amplitude · h`.
pub fn run_qc_envelope(
    model: &EnergyModel,
    f: &Mat2,
    resolution: Resolution,
    cfg: &RunConfig,
) -> Result<QcEstimate> {
    let space = build_space(cfg, Some(resolution))?;
    let area = space.mesh().total_area();
    let datum = AffineMap::linear(f);
    let base = DgField::interpolate(&space, |x| datum.apply(x)).into_coeffs();
    let h = space.mesh().h_max();
    let pointwise = model.energy(f);
    let spec = |i: usize| RunSpec {
        id: format!("qc_{}x{}_r{i}", resolution.cells().0, resolution.cells().1),
        space: space.clone(),
        model,
        energy: cfg.energy,
        datum,
        options: &cfg.minimize,
        continuation: &cfg.continuation,
        profile_samples: cfg.profile_samples,
    };
    let e0 = DiscreteEnergy::new(&space, model.clone(), cfg.energy, move |x| datum.apply(x))?.assemble(&base)?;
    let mut attempts = vec![e0.total / area];
    let mut best: Option<RunOutput> = None;
    for i in 0..=cfg.qc.restarts {
        let x0 = if i == 0 {
            base.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.minimize.seed.wrapping_add(i as u64));
            let amp = cfg.qc.amplitude * h;
            base.iter().map(|c| c + amp * rng.gen_range(-1.0..1.0)).collect()
        };
        let out = run_single(&spec(i), Some(x0))?;
        attempts.push(out.record.total / area);
        if best.as_ref().is_none_or(|b| out.record.total < b.record.total) {
            best = Some(out);
        }
    }
    let estimate = attempts.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(QcEstimate { estimate, pointwise, attempts, best })
}

/// Runs the experiment named in `cfg` and writes all outputs under its output directory.
pub fn run_config(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let report = match cfg.experiment {
        ExperimentKind::Compression => run_compression(cfg)?,
        ExperimentKind::Twowell => run_twowell(cfg)?,
        ExperimentKind::Custom => run_custom(cfg)?,
        ExperimentKind::QcEnvelope => {
            let model = cfg.model.build()?;
            let f = match cfg.qc.matrix {
                Some(m) => crate::models::mat_from_rows(m),
                None => twowell_datum(&model)?,
            };
            let resolutions = if cfg.resolutions.is_empty() {
                vec![Resolution::Rect([cfg.mesh.nx, cfg.mesh.ny])]
            } else {
                cfg.resolutions.clone()
            };
            let mut report = RunReport::default();
            let mut summary = String::from("nx,ny,estimate,pointwise\n");
            for res in resolutions {
                let est = run_qc_envelope(&model, &f, res, cfg)?;
                let (nx, ny) = res.cells();
                let _ = writeln!(summary, "{nx},{ny},{},{}", num(est.estimate), num(est.pointwise));
                report.runs.extend(est.best);
            }
            fs::create_dir_all(&cfg.output_dir)?;
            fs::write(cfg.output_dir.join("qc_envelope.csv"), summary)?;
            report
        }
    };
    report.write(&cfg.output_dir)?;
    if cfg.write_vtk {
        for r in &report.runs {
            let (nx, ny) = (r.record.nx, r.record.ny);
            let space = build_space(cfg, Some(Resolution::Rect([nx, ny])))?;
            let field = DgField::from_coeffs(&space, r.coeffs.clone())?;
            write_vtk(&cfg.output_dir.join(format!("fields_{}.vtk", r.record.run)), &field, &r.fields)?;
        }
    }
    Ok(report)
}

/// Outcome of one built-in consistency check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome { name, passed: value.is_finite() && value <= tol, detail: format!("{value:.3e} (tolerance {tol:.0e})") }
}

fn noisy(space: &Arc<DgSpace>, datum: AffineMap, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DgField::interpolate(space, |x| datum.apply(x)).into_coeffs().into_iter().map(|c| c + amp * rng.gen_range(-1.0..1.0)).collect()
}

/// Gradient and operator self-tests on small meshes.
pub fn self_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let s4 = DgSpace::new(Arc::new(Mesh::crisscross(4, 4, BBox::UNIT)?), 1, 2)?;
    let s3 = DgSpace::new(Arc::new(Mesh::crisscross(3, 3, BBox::UNIT)?), 1, 2)?;
    let comp = AffineMap::linear(&compression_gradient());
    let det2 = EnergyModel::det_squared();

    let u = DgField::interpolate(&s4, |x| comp.apply(x));
    let e = DiscreteEnergy::new(&s4, det2.clone(), EnergyConfig::new(20.0), move |x| comp.apply(x))?.assemble(u.coeffs())?;
    out.push(outcome("affine exactness", (e.total - 0.81).abs().max(e.consistency.abs()).max(e.penalty), 1e-12));

    let (tw, twins) = EnergyModel::two_well(0.9)?;
    let quad = EnergyModel::quadratic(compression_gradient());
    let cases: [(&'static str, &EnergyModel, bool, f64, f64); 3] = [
        ("gradient check, quadratic", &quad, false, 1e-6, 1e-8),
        ("gradient check, det squared", &det2, false, 1e-6, 1e-6),
        ("gradient check, two-well", &tw, true, 1e-5, 1e-5),
    ];
    for (name, model, stable, step, tol) in cases {
        let cfg = EnergyConfig::new(20.0).with_stable_rewrite(stable);
        let en = DiscreteEnergy::new(&s3, (*model).clone(), cfg, move |x| comp.apply(x))?;
        let x = noisy(&s3, comp, 0.05, 7);
        out.push(outcome(name, crate::minimize::check_gradient(&en, &x, step)?, tol));
    }

    let lifting = crate::trace::Lifting::new(&s3)?;
    let x = noisy(&s3, comp, 0.1, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g: Vec<f64> = (0..lifting.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lx = lifting.apply(&x);
    let mut ltg = vec![0.0; x.len()];
    lifting.apply_transpose_add(&g, 1.0, &mut ltg);
    let lhs: f64 = lx.iter().zip(&g).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&ltg).map(|(a, b)| a * b).sum();
    out.push(outcome("lifting adjoint", (lhs - rhs).abs() / lhs.abs().max(1.0), 1e-12));
    let cont = DgField::interpolate(&s3, |x| [x[0] * x[0], (2.0 * x[1]).sin()]);
    let zero = lifting.apply(cont.coeffs()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.push(outcome("lifting of continuous field", zero, 1e-12));

    let cfg = EnergyConfig::new(20.0);
    let a = DiscreteEnergy::new(&s3, tw.clone(), cfg, |x| x)?.assemble(cont.coeffs())?;
    let b = DiscreteEnergy::new(&s3, tw.clone(), cfg.with_formulation(crate::energy::Formulation::LiftedGradient), |x| x)?
        .assemble(cont.coeffs())?;
    out.push(outcome("formulation cross-check", (a.bulk - b.bulk).abs(), 1e-12));

    let n1 = (twins.first.normal - nalgebra::Vector2::new(1.0, 0.0)).norm();
    let n2 = (twins.second.normal - nalgebra::Vector2::new(0.0, 1.0)).norm();
    let res = twins.first.residual(&twins.well).max(twins.second.residual(&twins.well));
    out.push(outcome("twinning normals", n1.max(n2), 1e-8));
    out.push(outcome("twinning residual", res, 1e-10));
    Ok(out)
}
