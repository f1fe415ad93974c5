//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! before asserting.

use std::io::Write;
use std::sync::Arc;

use dgrelax::energy::{AffineMap, DiscreteEnergy, EnergyConfig, Formulation, PenaltyVariant};
use dgrelax::harness::{run_compression, run_qc_envelope, run_twowell, Resolution, RunConfig};
use dgrelax::mesh::{BBox, Mesh};
use dgrelax::minimize::check_gradient;
use dgrelax::models::{compression_gradient, mat_from_rows, EnergyModel, Mat2};
use dgrelax::space::{DgField, DgSpace};
use dgrelax::trace::{broken_seminorm, weighted_jump_sum, EdgeSet, Lifting, ReconstructionErrors};
use dgrelax::twinning::solve_twinning;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, name: &str, passed: bool, detail: &str) {
    // written to the real stdout so the line survives the test harness capturing output
    let line = format!("criterion {n:>2} {:<4} {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(passed, "criterion {n} ({name}) failed: {detail}");
}

fn space(nx: usize, ny: usize, q: usize) -> Arc<DgSpace> {
    DgSpace::new(Arc::new(Mesh::crisscross(nx, ny, BBox::UNIT).unwrap()), q, 2).unwrap()
}

fn random_field(s: &Arc<DgSpace>, rng: &mut ChaCha8Rng) -> DgField {
    let c = (0..s.total_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DgField::from_coeffs(s, c).unwrap()
}

fn perturbed(s: &Arc<DgSpace>, datum: AffineMap, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    DgField::interpolate(s, |x| datum.apply(x)).into_coeffs().into_iter().map(|c| c + amp * rng.gen_range(-1.0..1.0)).collect()
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::MIN, f64::max);
    let lo = values.iter().copied().fold(f64::MAX, f64::min);
    hi / lo
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", ")
}

#[test]
fn criterion_01_affine_exactness() {
    let f0 = AffineMap::linear(&compression_gradient());
    let mut worst = 0.0f64;
    for (nx, ny) in [(1, 1), (2, 1), (3, 5), (8, 8), (16, 16)] {
        let s = space(nx, ny, 1);
        let u = DgField::interpolate(&s, |x| f0.apply(x));
        for variant in [PenaltyVariant::SeminormBased, PenaltyVariant::EnergyBased, PenaltyVariant::ConvexStyle] {
            for formulation in [Formulation::InteriorPenalty, Formulation::LiftedGradient] {
                let cfg = EnergyConfig::new(20.0).with_variant(variant).with_formulation(formulation);
                let e = DiscreteEnergy::new(&s, EnergyModel::det_squared(), cfg, move |x| f0.apply(x))
                    .unwrap()
                    .assemble(u.coeffs())
                    .unwrap();
                worst = worst.max((e.total - 0.81).abs()).max(e.consistency.abs()).max(e.penalty.abs());
            }
        }
    }
    verdict(1, "affine exactness", worst <= 1e-12, &format!("max deviation {worst:.3e} (tolerance 1e-12)"));
}

#[test]
fn criterion_02_gradient_checks() {
    let s = space(4, 4, 1);
    let f0 = AffineMap::linear(&compression_gradient());
    let (tw, _) = EnergyModel::two_well(0.9).unwrap();
    let cases = [
        ("det squared", EnergyModel::det_squared(), false, 1e-6, 1e-6),
        ("quadratic", EnergyModel::quadratic(compression_gradient()), false, 1e-6, 1e-6),
        ("two-well", tw, true, 1e-5, 1e-5),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, model, stable, step, tol) in cases {
        let cfg = EnergyConfig::new(20.0).with_stable_rewrite(stable);
        let e = DiscreteEnergy::new(&s, model, cfg, move |x| f0.apply(x)).unwrap();
        let worst = (0..5)
            .map(|_| check_gradient(&e, &perturbed(&s, f0, 0.05, &mut rng), step).unwrap())
            .fold(0.0f64, f64::max);
        ok &= worst < tol;
        detail.push(format!("{name} {worst:.2e} (< {tol:.0e})"));
    }
    verdict(2, "gradient checks", ok, &detail.join(", "));
}

#[test]
fn criterion_03_lifting_stability() {
    let p = 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut constants = Vec::new();
    for n in [8, 16, 32] {
        let s = space(n, n, 1);
        let lifting = Lifting::new(&s).unwrap();
        let worst = (0..10)
            .map(|_| {
                let u = random_field(&s, &mut rng);
                let r = lifting.lift(&u).lp_norm_pow(p).unwrap();
                r / weighted_jump_sum(&u, p, 1.0 - p, EdgeSet::Internal).unwrap()
            })
            .fold(0.0f64, f64::max);
        constants.push(worst);
    }
    let ratio = spread(&constants);
    verdict(3, "lifting stability", ratio < 2.0, &format!("C per level [{}], spread {ratio:.3} (< 2)", fmt_list(&constants)));
}

#[test]
fn criterion_04_reconstruction_estimates() {
    let p = 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut values, mut grads) = (Vec::new(), Vec::new());
    for n in [4, 8, 16] {
        let s = space(n, n, 1);
        let (mut v, mut g) = (0.0f64, 0.0f64);
        for _ in 0..10 {
            let r = ReconstructionErrors::compute(&random_field(&s, &mut rng), p).unwrap();
            v = v.max(r.value_ratio());
            g = g.max(r.gradient_ratio());
        }
        values.push(v);
        grads.push(g);
    }
    let (sv, sg) = (spread(&values), spread(&grads));
    verdict(
        4,
        "reconstruction estimates",
        sv < 2.0 && sg < 2.0,
        &format!("value ratios [{}] spread {sv:.3}, gradient ratios [{}] spread {sg:.3} (< 2)", fmt_list(&values), fmt_list(&grads)),
    );
}

#[test]
fn criterion_05_penalty_dominance_and_coercivity() {
    let f0 = AffineMap::linear(&compression_gradient());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = 4.0;
    let mut dominance = f64::INFINITY;
    let mut constants = Vec::new();
    for n in [4, 8, 16] {
        let s = space(n, n, 1);
        let e = DiscreteEnergy::new(&s, EnergyModel::det_squared(), EnergyConfig::new(20.0), move |x| f0.apply(x)).unwrap();
        let mut c = 0.0f64;
        for i in 0..20 {
            let amp = [0.01, 0.1, 0.5, 2.0][i % 4];
            let x = perturbed(&s, f0, amp, &mut rng);
            let a = e.assemble(&x).unwrap();
            dominance = dominance.min(a.penalty / a.internal_jumps);
            let u = DgField::from_coeffs(&s, x).unwrap();
            c = c.max(broken_seminorm(&u, p).unwrap().value() / (1.0 + a.total));
        }
        constants.push(c);
    }
    // stable: the constant observed on finer meshes never exceeds twice the coarsest one
    let growth = constants.iter().copied().fold(0.0f64, f64::max) / constants[0];
    let ok = dominance >= 1.0 && growth < 2.0;
    verdict(
        5,
        "penalty dominance and coercivity",
        ok,
        &format!("min Pen/J_int {dominance:.3} (>= 1); coercivity constants [{}], growth {growth:.3} (< 2)", fmt_list(&constants)),
    );
}

fn compression_config(variant: &str, alphas: &str) -> RunConfig {
    RunConfig::from_toml(&format!(
        r#"
        experiment = "compression"
        alphas = {alphas}
        resolutions = [16]
        variants = ["{variant}"]
        model = {{ id = "det_squared" }}
        energy = {{ alpha = 20.0 }}
        "#
    ))
    .unwrap()
}

#[test]
fn criterion_06_compression_penalty_comparison() {
    let new = run_compression(&compression_config("seminorm_based", "[20.0]")).unwrap();
    assert!(new.failures.is_empty(), "{:?}", new.failures);
    let rec = &new.runs[0].record;
    let convex = run_compression(&compression_config("convex_style", "[20.0, 40.0, 80.0, 160.0]")).unwrap();
    assert!(convex.failures.is_empty(), "{:?}", convex.failures);
    let errs: Vec<f64> = convex.runs.iter().map(|r| r.record.w11_error).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let ok = (0.809..=0.82).contains(&rec.total) && rec.w11_error <= 1e-3 && errs[0] >= 10.0 * rec.w11_error && decreasing;
    verdict(
        6,
        "compression penalty comparison",
        ok,
        &format!(
            "new penalty total {:.6} W11 error {:.3e}; convex-style W11 errors [{}] ({:.0}x)",
            rec.total,
            rec.w11_error,
            fmt_list(&errs),
            errs[0] / rec.w11_error
        ),
    );
}

#[test]
fn criterion_07_twowell_microstructure() {
    let cfg = RunConfig::from_toml(
        r#"
        experiment = "twowell"
        resolutions = [5, 10, 20]
        continuation = [1e-14, 1e-20, 1e-30, 1e-40, 1e-60]
        model = { id = "two_well", b0 = 0.9 }
        energy = { alpha = 80.0, eps_pen = 1e-80 }
        minimize = { g_tol = 1e-6 }
        "#,
    )
    .unwrap();
    let report = run_twowell(&cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let totals: Vec<f64> = report.runs.iter().map(|r| r.record.total).collect();
    let errs: Vec<f64> = report.runs.iter().map(|r| r.record.l2_error).collect();
    let monotone = totals.windows(2).all(|w| w[1] < w[0]) && errs.windows(2).all(|w| w[1] < w[0]);

    // A triangle belongs to a transition layer when its energy density exceeds 1e-5.
    let wells = [1.0, 1.19f64.sqrt()];
    let mut layer_ok = true;
    let mut layer_detail = Vec::new();
    for run in &report.runs {
        let f = &run.fields;
        let outside: Vec<usize> = (0..f.lambda_max.len()).filter(|&k| f.energy_density[k] <= 1e-5).collect();
        let dist = outside
            .iter()
            .map(|&k| wells.iter().map(|w| (f.lambda_max[k] - w).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0f64, f64::max);
        let fraction = outside.len() as f64 / f.lambda_max.len() as f64;
        layer_ok &= !outside.is_empty() && dist <= 1e-2;
        layer_detail.push(format!("{}x{}: {:.0}% outside layers, max distance {dist:.2e}", run.record.nx, run.record.ny, 100.0 * fraction));
    }
    let finest = report.runs.last().unwrap();
    let finest_fraction =
        finest.fields.energy_density.iter().filter(|w| **w <= 1e-5).count() as f64 / finest.fields.energy_density.len() as f64;
    layer_ok &= finest_fraction >= 0.5;
    verdict(
        7,
        "two-well microstructure",
        monotone && layer_ok,
        &format!("totals [{}], L2 errors [{}]; {}", fmt_list(&totals), fmt_list(&errs), layer_detail.join("; ")),
    );
}

#[test]
fn criterion_08_twinning() {
    let v = dgrelax::models::two_well_matrix(0.9).unwrap();
    let t = solve_twinning(&v).unwrap();
    let n1 = (t.first.normal - nalgebra::Vector2::new(1.0, 0.0)).norm();
    let n2 = (t.second.normal - nalgebra::Vector2::new(0.0, 1.0)).norm();
    let res = t.first.residual(&v).max(t.second.residual(&v));
    let ok = n1 <= 1e-8 && n2 <= 1e-8 && res <= 1e-10;
    verdict(8, "twinning", ok, &format!("normal errors {n1:.2e}, {n2:.2e}; residual {res:.2e}"));
}

#[test]
fn criterion_09_qc_envelope() {
    let quad_cfg = RunConfig::from_toml(
        r#"
        experiment = "qc_envelope"
        resolutions = [4]
        continuation = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12]
        model = { id = "quadratic", target = [[1.0, 0.0], [0.0, 0.9]] }
        energy = { alpha = 20.0 }
        qc = { restarts = 2 }
        "#,
    )
    .unwrap();
    let quad = quad_cfg.model.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let f = mat_from_rows([[rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5)], [rng.gen_range(-0.5..0.5), rng.gen_range(0.5..1.5)]]);
        let est = run_qc_envelope(&quad, &f, Resolution::Square(4), &quad_cfg).unwrap();
        worst = worst.max((est.estimate - est.pointwise).abs());
    }

    let tw_cfg = RunConfig::from_toml(
        r#"
        experiment = "qc_envelope"
        resolutions = [20]
        continuation = [1e-14, 1e-20, 1e-30, 1e-40, 1e-60]
        model = { id = "two_well", b0 = 0.9 }
        energy = { alpha = 80.0, eps_pen = 1e-80 }
        minimize = { g_tol = 1e-6 }
        qc = { restarts = 5 }
        "#,
    )
    .unwrap();
    let tw = tw_cfg.model.build().unwrap();
    let f: Mat2 = dgrelax::harness::twowell_datum(&tw).unwrap();
    let est = run_qc_envelope(&tw, &f, Resolution::Square(20), &tw_cfg).unwrap();
    let ok = worst <= 1e-6 && est.estimate < est.pointwise;
    verdict(
        9,
        "quasiconvex envelope estimates",
        ok,
        &format!(
            "quadratic max |estimate - W(F)| {worst:.2e}; two-well estimate {:.4e} vs W(F) {:.4e}",
            est.estimate, est.pointwise
        ),
    );
}

#[test]
fn criterion_10_formulation_cross_check() {
    let (tw, _) = EnergyModel::two_well(0.9).unwrap();
    let models = [EnergyModel::det_squared(), EnergyModel::quadratic(compression_gradient()), tw];
    let fields: [fn([f64; 2]) -> [f64; 2]; 3] = [
        |x| [x[0] + 0.1 * x[1] * x[1], 0.9 * x[1] + 0.05 * x[0] * x[1]],
        |x| [x[0] + 0.05 * (3.0 * x[1]).sin(), x[1] - 0.05 * (2.0 * x[0]).cos()],
        |x| [1.1 * x[0] - 0.1 * x[1], 0.95 * x[1] + 0.02 * x[0] * x[0]],
    ];
    let mut worst = 0.0f64;
    for q in [1, 2] {
        let s = space(6, 5, q);
        for model in &models {
            for f in fields {
                let u = DgField::interpolate(&s, f);
                let base = EnergyConfig::new(20.0);
                let a = DiscreteEnergy::new(&s, model.clone(), base, f).unwrap().assemble(u.coeffs()).unwrap();
                let lifted = base.with_formulation(Formulation::LiftedGradient);
                let b = DiscreteEnergy::new(&s, model.clone(), lifted, f).unwrap().assemble(u.coeffs()).unwrap();
                worst = worst.max((a.bulk - b.bulk).abs());
            }
        }
    }
    verdict(10, "formulation cross-check", worst <= 1e-12, &format!("max bulk difference {worst:.3e} (tolerance 1e-12)"));
}
