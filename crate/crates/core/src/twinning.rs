//! Rank-one connections between the wells `SO(2)` and `SO(2) V`.
//!
//! Solves `R V - I = d ⊗ n` for `R ∈ SO(2)`: with `R = R(θ)` the
//! rank-one condition is the scalar equation `det(R(θ) V - I) = 0`, which is
//! bracketed on a grid over `(-π, π]` and refined by bisection. The rank-one
//! matrix is then split into `d ⊗ n` through its leading singular pair.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::models::Mat2;

/// One solution `(R, d, n)` of the twinning equation.
#[derive(Clone, Copy, Debug)]
pub struct TwinSolution {
    pub angle: f64,
    pub rotation: Mat2,
    pub shear: Vector2<f64>,
    /// Unit normal with its first nonzero component positive.
    pub normal: Vector2<f64>,
}

impl TwinSolution {
    /// `|R V - I - d ⊗ n|` in the Frobenius norm.
    pub fn residual(&self, well: &Mat2) -> f64 {
        (self.rotation * well - Mat2::identity() - self.shear * self.normal.transpose()).norm()
    }
}

/// Both twinning solutions for a well `V`; `first` has the normal closest to `(1, 0)`.
#[derive(Clone, Copy, Debug)]
pub struct TwinningSystem {
    pub well: Mat2,
    pub first: TwinSolution,
    pub second: TwinSolution,
}

pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

fn rank_one_defect(well: &Mat2, theta: f64) -> f64 {
    (rotation(theta) * well - Mat2::identity()).determinant()
}

const SCAN_INTERVALS: usize = 3600;

pub fn solve_twinning(well: &Mat2) -> Result<TwinningSystem> {
    if (well - well.transpose()).norm() > 1e-12 * well.norm() {
        return Err(Error::Parameter("well matrix must be symmetric".into()));
    }
    let eig = well.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0 && lo < 1.0 && hi > 1.0) {
        return Err(Error::Parameter(format!(
            "well eigenvalues must satisfy 0 < λ1 < 1 < λ2, got ({lo}, {hi})"
        )));
    }

    let pi = std::f64::consts::PI;
    let step = 2.0 * pi / SCAN_INTERVALS as f64;
    let mut roots = Vec::new();
    let mut a = -pi;
    let mut fa = rank_one_defect(well, a);
    for k in 1..=SCAN_INTERVALS {
        let b = -pi + k as f64 * step;
        let fb = rank_one_defect(well, b);
        if fb == 0.0 {
            roots.push(b);
        } else if fa * fb < 0.0 {
            roots.push(bisect(well, a, b, fa));
        }
        a = b;
        fa = fb;
    }
    if roots.len() != 2 {
        return Err(Error::Infeasible(format!("expected two rank-one rotations, found {}", roots.len())));
    }

    let mut sols = [factor(well, roots[0])?, factor(well, roots[1])?];
    if sols[1].normal[0].abs() > sols[0].normal[0].abs() {
        sols.swap(0, 1);
    }
    Ok(TwinningSystem { well: *well, first: sols[0], second: sols[1] })
}

fn bisect(well: &Mat2, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = rank_one_defect(well, m);
        if fm == 0.0 || (b - a) < 4.0 * f64::EPSILON {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

fn factor(well: &Mat2, theta: f64) -> Result<TwinSolution> {
    let r = rotation(theta);
    let m = r * well - Mat2::identity();
    let defect = m.determinant();
    if defect.abs() > 1e-13 {
        return Err(Error::Infeasible(format!("|det(RV - I)| = {defect:e} at θ = {theta}")));
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let (i1, i2) = if svd.singular_values[0] >= svd.singular_values[1] { (0, 1) } else { (1, 0) };
    if svd.singular_values[i2] > 1e-10 {
        return Err(Error::Infeasible(format!(
            "second singular value {:e} is not negligible",
            svd.singular_values[i2]
        )));
    }
    let mut normal = Vector2::new(vt[(i1, 0)], vt[(i1, 1)]);
    let mut shear = svd.singular_values[i1] * Vector2::new(u[(0, i1)], u[(1, i1)]);
    let lead = if normal[0].abs() > 1e-12 { normal[0] } else { normal[1] };
    if lead < 0.0 {
        normal = -normal;
        shear = -shear;
    }
    Ok(TwinSolution { angle: theta, rotation: r, shear, normal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::two_well_matrix;

    #[test]
    fn normals_for_b0_09() {
        let v = two_well_matrix(0.9).unwrap();
        let tw = solve_twinning(&v).unwrap();
        assert!((tw.first.normal - Vector2::new(1.0, 0.0)).norm() < 1e-8);
        assert!((tw.second.normal - Vector2::new(0.0, 1.0)).norm() < 1e-8);
        for s in [tw.first, tw.second] {
            assert!(s.residual(&v) < 1e-10);
            assert!((s.rotation.determinant() - 1.0).abs() < 1e-12);
            assert!((s.rotation.transpose() * s.rotation - Mat2::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn angle_matches_trace_identity() {
        // for symmetric V: det(R V - I) = det V + 1 - cos θ tr V
        for b0 in [0.5, 0.8, 0.9, 0.99] {
            let v = two_well_matrix(b0).unwrap();
            let tw = solve_twinning(&v).unwrap();
            let c = (1.0 + v.determinant()) / v.trace();
            let theta = c.acos();
            let mut got = [tw.first.angle.abs(), tw.second.angle.abs()];
            got.sort_by(f64::total_cmp);
            assert!((got[0] - theta).abs() < 1e-12 && (got[1] - theta).abs() < 1e-12);
            assert!(tw.first.angle * tw.second.angle < 0.0);
        }
    }

    #[test]
    fn rejects_identity_and_non_straddling_wells() {
        assert!(matches!(solve_twinning(&Mat2::identity()), Err(Error::Parameter(_))));
        assert!(solve_twinning(&Mat2::new(1.2, 0.0, 0.0, 1.5)).is_err());
        assert!(solve_twinning(&Mat2::new(1.0, 0.3, 0.0, 1.0)).is_err());
    }

    #[test]
    fn generic_diagonal_well() {
        let v = Mat2::new(0.8, 0.0, 0.0, 1.3);
        let tw = solve_twinning(&v).unwrap();
        for s in [tw.first, tw.second] {
            assert!(s.residual(&v) < 1e-10);
            assert!((s.normal.norm() - 1.0).abs() < 1e-14);
        }
    }
}
