//! Strain-energy densities on 2×2 deformation gradients.
//!
//! All matrix norms are Frobenius norms.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twinning::{solve_twinning, TwinningSystem};

pub type Mat2 = Matrix2<f64>;

/// Cofactor matrix; `d det(F) / dF = cof(F)`.
pub fn cofactor(f: &Mat2) -> Mat2 {
    Mat2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)])
}

pub fn frob2(f: &Mat2) -> f64 {
    f.norm_squared()
}

/// Compression datum `diag(1, 0.9)`.
pub fn compression_gradient() -> Mat2 {
    Mat2::new(1.0, 0.0, 0.0, 0.9)
}

/// A strain-energy density `W` together with its derivative `DW`.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergyModel {
    /// `W(F) = |F - target|²`.
    Quadratic { target: Mat2 },
    /// `W(F) = (det F)²`.
    DetSquared,
    /// Frame-indifferent two-well energy with wells `SO(2)` and `SO(2) V`.
    ///
    /// With `C = FᵀF`: `W = |C - V²|² |C - I|²` when `squared` is set,
    /// otherwise `W = |C - V²| |C - I|²`.
    TwoWell { well: Mat2, well_sq: Mat2, squared: bool },
}

/// Serializable model selector used by run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Quadratic {
        /// Row-major `[[a, b], [c, d]]`.
        target: [[f64; 2]; 2],
    },
    DetSquared,
    TwoWell {
        #[serde(default = "default_b0")]
        b0: f64,
        #[serde(default = "default_true")]
        squared: bool,
    },
}

fn default_b0() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn build(&self) -> Result<EnergyModel> {
        match *self {
            ModelSpec::Quadratic { target } => Ok(EnergyModel::quadratic(mat_from_rows(target))),
            ModelSpec::DetSquared => Ok(EnergyModel::DetSquared),
            ModelSpec::TwoWell { b0, squared } => {
                let (mut model, _) = EnergyModel::two_well(b0)?;
                if let EnergyModel::TwoWell { squared: s, .. } = &mut model {
                    *s = squared;
                }
                Ok(model)
            }
        }
    }
}

pub fn mat_from_rows(r: [[f64; 2]; 2]) -> Mat2 {
    Mat2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

/// Well matrix `V` with eigenvalues `b0` (along `(1,1)`) and `a0 = √(2 - b0²)` (along `(1,-1)`).
pub fn two_well_matrix(b0: f64) -> Result<Mat2> {
    if !(b0 > 0.0 && b0 < 1.0) {
        return Err(Error::Parameter(format!("b0 must lie in (0, 1), got {b0}")));
    }
    let a0 = (2.0 - b0 * b0).sqrt();
    Ok(Mat2::new(0.5 * (a0 + b0), 0.5 * (b0 - a0), 0.5 * (b0 - a0), 0.5 * (a0 + b0)))
}

impl EnergyModel {
    pub fn quadratic(target: Mat2) -> Self {
        EnergyModel::Quadratic { target }
    }

    pub fn det_squared() -> Self {
        EnergyModel::DetSquared
    }

    /// Two-well model for `b0 ∈ (0, 1)` and the twinning solutions of its well.
    pub fn two_well(b0: f64) -> Result<(Self, TwinningSystem)> {
        let well = two_well_matrix(b0)?;
        let twins = solve_twinning(&well)?;
        Ok((EnergyModel::TwoWell { well, well_sq: well * well, squared: true }, twins))
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnergyModel::Quadratic { .. } => "quadratic",
            EnergyModel::DetSquared => "det_squared",
            EnergyModel::TwoWell { squared: true, .. } => "two_well",
            EnergyModel::TwoWell { squared: false, .. } => "two_well_unsquared",
        }
    }

    /// Growth exponent `p`.
    pub fn growth_exponent(&self) -> f64 {
        match self {
            EnergyModel::Quadratic { .. } => 2.0,
            EnergyModel::DetSquared => 4.0,
            EnergyModel::TwoWell { squared: true, .. } => 8.0,
            EnergyModel::TwoWell { squared: false, .. } => 6.0,
        }
    }

    /// Total polynomial degree of `W` in the entries of `F` (used to size quadrature).
    pub fn polynomial_degree(&self) -> usize {
        match self {
            EnergyModel::Quadratic { .. } => 2,
            EnergyModel::DetSquared => 4,
            EnergyModel::TwoWell { squared: true, .. } => 8,
            // not a polynomial; integrate as if degree 8
            EnergyModel::TwoWell { squared: false, .. } => 8,
        }
    }

    /// Constants `(c0, c1, c2)` for `-c0 + c1 |F|^p <= W(F) <= c2 (1 + |F|^p)`.
    ///
    /// `(det F)²` has no lower bound of this form (it vanishes on rank-one
    /// matrices), so its `c1` is zero.
    pub fn growth_constants(&self) -> (f64, f64, f64) {
        match self {
            EnergyModel::Quadratic { target } => {
                let t2 = frob2(target);
                // |F - T|² >= |F|²/2 - |T|² and <= 2|F|² + 2|T|²
                (t2, 0.5, 2.0 * (1.0 + t2))
            }
            // det² <= |F|⁴/4
            EnergyModel::DetSquared => (0.0, 0.0, 0.25),
            EnergyModel::TwoWell { well_sq, squared, .. } => {
                let v = frob2(well_sq).sqrt();
                let s = 2f64.sqrt();
                // |C| <= |F|², |C| >= |F|²/√2; bounds below use (x - a)_+ expansions
                if *squared {
                    let upper = (1.0 + v).powi(2) * (1.0 + s).powi(2);
                    (64.0 * (1.0 + v).powi(8), 1.0 / 64.0, 16.0 * upper)
                } else {
                    let upper = (1.0 + v) * (1.0 + s).powi(2);
                    (64.0 * (1.0 + v).powi(6), 1.0 / 32.0, 16.0 * upper)
                }
            }
        }
    }

    /// Constant `L` in `|W(a) - W(b)| <= L (1 + |a|^{p-1} + |b|^{p-1}) |a - b|`.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            EnergyModel::Quadratic { target } => 2.0 * (1.0 + frob2(target).sqrt()),
            EnergyModel::DetSquared => 2.0,
            EnergyModel::TwoWell { well_sq, .. } => {
                let v = frob2(well_sq).sqrt();
                64.0 * (1.0 + v).powi(4)
            }
        }
    }

    pub fn energy(&self, f: &Mat2) -> f64 {
        match self {
            EnergyModel::Quadratic { target } => frob2(&(f - target)),
            EnergyModel::DetSquared => f.determinant().powi(2),
            EnergyModel::TwoWell { well_sq, squared, .. } => {
                let c = f.transpose() * f;
                let a = frob2(&(c - well_sq));
                let b = frob2(&(c - Mat2::identity()));
                if *squared {
                    a * b
                } else {
                    a.sqrt() * b
                }
            }
        }
    }

    /// `DW(F)`, the derivative of `W` with respect to `F`.
    pub fn stress(&self, f: &Mat2) -> Mat2 {
        match self {
            EnergyModel::Quadratic { target } => 2.0 * (f - target),
            EnergyModel::DetSquared => 2.0 * f.determinant() * cofactor(f),
            EnergyModel::TwoWell { well_sq, squared, .. } => {
                let c = f.transpose() * f;
                let da = c - well_sq;
                let db = c - Mat2::identity();
                let a = frob2(&da);
                let b = frob2(&db);
                // dW/dC, then DW = 2 F dW/dC for symmetric dW/dC
                let dw_dc = if *squared {
                    2.0 * b * da + 2.0 * a * db
                } else {
                    let na = a.sqrt();
                    let ua = if na > 0.0 { da / na } else { Mat2::zeros() };
                    b * ua + 2.0 * na * db
                };
                2.0 * f * dw_dc
            }
        }
    }

    /// Directional derivative of the stress, `D²W(F)[M]`.
    pub fn stress_derivative(&self, f: &Mat2, m: &Mat2) -> Mat2 {
        match self {
            EnergyModel::Quadratic { .. } => 2.0 * m,
            EnergyModel::DetSquared => {
                let cof = cofactor(f);
                2.0 * cof.dot(m) * cof + 2.0 * f.determinant() * cofactor(m)
            }
            EnergyModel::TwoWell { well_sq, squared, .. } => {
                let c = f.transpose() * f;
                let dc = m.transpose() * f + f.transpose() * m;
                let da = c - well_sq;
                let db = c - Mat2::identity();
                let a = frob2(&da);
                let b = frob2(&db);
                let (a_dot, b_dot) = (2.0 * da.dot(&dc), 2.0 * db.dot(&dc));
                let (s, s_dot) = if *squared {
                    (2.0 * b * da + 2.0 * a * db, 2.0 * b_dot * da + 2.0 * b * dc + 2.0 * a_dot * db + 2.0 * a * dc)
                } else {
                    let na = a.sqrt();
                    if na > 0.0 {
                        let na_dot = 0.5 * a_dot / na;
                        let s = b * da / na + 2.0 * na * db;
                        let s_dot = b_dot * da / na + b * (dc / na - da * (na_dot / a))
                            + 2.0 * na_dot * db
                            + 2.0 * na * dc;
                        (s, s_dot)
                    } else {
                        (Mat2::zeros(), Mat2::zeros())
                    }
                };
                2.0 * m * s + 2.0 * f * s_dot
            }
        }
    }

    /// Energy and stress together.
    pub fn eval(&self, f: &Mat2) -> (f64, Mat2) {
        (self.energy(f), self.stress(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation(theta: f64) -> Mat2 {
        Mat2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos())
    }

    fn random_mat(rng: &mut impl Rng, scale: f64) -> Mat2 {
        Mat2::from_fn(|_, _| rng.gen_range(-scale..scale))
    }

    /// Central differences of W entry by entry.
    fn fd_stress(model: &EnergyModel, f: &Mat2) -> Mat2 {
        let h = 1e-6 * (1.0 + f.norm());
        Mat2::from_fn(|i, j| {
            let mut p = *f;
            let mut m = *f;
            p[(i, j)] += h;
            m[(i, j)] -= h;
            (model.energy(&p) - model.energy(&m)) / (2.0 * h)
        })
    }

    fn max_rel_err(a: &Mat2, b: &Mat2) -> f64 {
        (a - b).abs().max() / b.abs().max().max(1e-3)
    }

    #[test]
    fn quadratic_values() {
        let t = Mat2::new(1.0, 0.2, -0.3, 0.8);
        let m = EnergyModel::quadratic(t);
        assert_eq!(m.energy(&t), 0.0);
        let s = 0.37;
        assert!((m.energy(&(t + Mat2::new(s, 0.0, 0.0, 0.0))) - s * s).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let f = random_mat(&mut rng, 2.0);
            assert!(max_rel_err(&m.stress(&f), &fd_stress(&m, &f)) < 1e-8);
        }
    }

    #[test]
    fn det_squared_values() {
        let m = EnergyModel::det_squared();
        assert!((m.energy(&compression_gradient()) - 0.81).abs() < 1e-15);
        assert_eq!(m.energy(&Mat2::identity()), 1.0);
        assert_eq!(m.stress(&Mat2::identity()), 2.0 * Mat2::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let f = random_mat(&mut rng, 2.0);
            assert!(max_rel_err(&m.stress(&f), &fd_stress(&m, &f)) < 1e-7);
        }
    }

    #[test]
    fn two_well_wells_and_eigenvalues() {
        let (m, tw) = EnergyModel::two_well(0.9).unwrap();
        let v = two_well_matrix(0.9).unwrap();
        let eig = v.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        assert!((lo - 0.9).abs() < 1e-14);
        assert!((hi - 1.19f64.sqrt()).abs() < 1e-14);
        assert!((hi - 1.0908712114635715).abs() < 1e-14);
        for f in [Mat2::identity(), v, tw.first.rotation * v, tw.second.rotation * v] {
            assert!(m.energy(&f).abs() < 1e-24, "{}", m.energy(&f));
            assert!(m.stress(&f).norm() < 1e-12);
        }
    }

    #[test]
    fn two_well_rejects_bad_b0() {
        for b0 in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(EnergyModel::two_well(b0), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn two_well_derivative_and_frame_indifference() {
        let (m, _) = EnergyModel::two_well(0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let f = random_mat(&mut rng, 1.5);
            assert!(max_rel_err(&m.stress(&f), &fd_stress(&m, &f)) < 1e-6);
            let q = rotation(rng.gen_range(-3.0..3.0));
            let (w, wq) = (m.energy(&f), m.energy(&(q * f)));
            assert!((w - wq).abs() <= 1e-12 * w.abs().max(1e-300));
        }
        let unsq = ModelSpec::TwoWell { b0: 0.9, squared: false }.build().unwrap();
        for _ in 0..20 {
            let f = random_mat(&mut rng, 1.5);
            assert!(max_rel_err(&unsq.stress(&f), &fd_stress(&unsq, &f)) < 1e-6);
        }
    }

    #[test]
    fn stress_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (tw, _) = EnergyModel::two_well(0.9).unwrap();
        let models = [
            EnergyModel::quadratic(compression_gradient()),
            EnergyModel::det_squared(),
            tw,
            ModelSpec::TwoWell { b0: 0.9, squared: false }.build().unwrap(),
        ];
        for model in &models {
            for _ in 0..20 {
                let f = random_mat(&mut rng, 1.5);
                let m = random_mat(&mut rng, 1.0);
                let h = 1e-6;
                let fd = (model.stress(&(f + h * m)) - model.stress(&(f - h * m))) / (2.0 * h);
                let got = model.stress_derivative(&f, &m);
                assert!(max_rel_err(&got, &fd) < 1e-6, "{}: {got} vs {fd}", model.name());
            }
        }
    }

    #[test]
    fn growth_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (tw, _) = EnergyModel::two_well(0.9).unwrap();
        let models = [
            EnergyModel::quadratic(compression_gradient()),
            EnergyModel::det_squared(),
            tw,
            ModelSpec::TwoWell { b0: 0.9, squared: false }.build().unwrap(),
        ];
        for m in &models {
            let p = m.growth_exponent();
            let (c0, c1, c2) = m.growth_constants();
            for _ in 0..500 {
                let dir = random_mat(&mut rng, 1.0);
                let r = 10f64.powf(rng.gen_range(-1.0..1.0));
                let f = dir * (r / dir.norm());
                let w = m.energy(&f);
                let n = f.norm().powf(p);
                assert!(w >= -c0 + c1 * n - 1e-12, "{}: lower bound at |F| = {r}", m.name());
                assert!(w <= c2 * (1.0 + n), "{}: upper bound at |F| = {r}", m.name());
            }
        }
    }

    #[test]
    fn lipschitz_growth() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (tw, _) = EnergyModel::two_well(0.9).unwrap();
        for m in [EnergyModel::quadratic(compression_gradient()), EnergyModel::det_squared(), tw] {
            let p = m.growth_exponent();
            let l = m.lipschitz_constant();
            for _ in 0..500 {
                let a = random_mat(&mut rng, 3.0);
                let b = a + random_mat(&mut rng, 0.5);
                let lhs = (m.energy(&a) - m.energy(&b)).abs();
                let rhs = l * (1.0 + a.norm().powf(p - 1.0) + b.norm().powf(p - 1.0)) * (a - b).norm();
                assert!(lhs <= rhs, "{}", m.name());
            }
        }
    }

    #[test]
    fn spec_roundtrip() {
        let s: ModelSpec = toml::from_str("id = \"two_well\"\nb0 = 0.8\n").unwrap();
        assert_eq!(s, ModelSpec::TwoWell { b0: 0.8, squared: true });
        let s: ModelSpec = toml::from_str("id = \"det_squared\"").unwrap();
        assert_eq!(s.build().unwrap(), EnergyModel::DetSquared);
    }
}
