//! Shaped potential for nonholonomic pose regulation, its gradients and the
//! body-frame error vector.

use nalgebra::{Matrix3, Vector3, Vector6};

use super::{ControllerGains, ErrorState};
use crate::error::{Error, Result};
use crate::geom::{quarter_turn, so3_exp, vee_unchecked};

/// Minimum planar distance for which the target direction is defined.
pub const DIRECTION_EPS: f64 = 1e-3;

const AXIS_EPS: f64 = 1e-8;

/// `R(p_e)` and the two alignment rotations built from it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionFrame {
    pub r_pe: Matrix3<f64>,
    pub r_d1: Matrix3<f64>,
    pub r_d2: Matrix3<f64>,
}

/// `V_d` and its three orientation terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialTerms {
    pub vd: f64,
    pub vr1: f64,
    pub vr2: f64,
    pub vr3: f64,
}

/// Analytic position and rotation gradients of the orientation terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialGradients {
    pub dvr1_dp: Vector3<f64>,
    pub dvr2_dp: Vector3<f64>,
    pub dvr3_dp: Vector3<f64>,
    pub dvr1_dre: Matrix3<f64>,
    pub dvr3_dre: Matrix3<f64>,
    /// `∂R(p_e)/∂p_ei` for `i = 1, 2, 3`.
    pub dr_dp: [Matrix3<f64>; 3],
}

fn planar_distance(p_e: &Vector3<f64>) -> Result<f64> {
    let n = p_e.x.hypot(p_e.y);
    if !(n > DIRECTION_EPS) {
        return Err(Error::DegenerateDirection(n));
    }
    Ok(n)
}

/// Unit rotation axis of `r`; `e3` at zero angle, sign fixed towards `+e3`
/// at a half turn.
fn unit_axis(r: &Matrix3<f64>) -> Vector3<f64> {
    let a = vee_unchecked(&(r - r.transpose()));
    if a.norm() > AXIS_EPS {
        return a.normalize();
    }
    if r.trace() > 1.0 {
        return Vector3::z();
    }
    let b = (r + Matrix3::identity()) * 0.5;
    let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(2);
    let mut axis = b.column(k).normalize();
    let lead = if axis.z.abs() > AXIS_EPS {
        axis.z
    } else if axis.y.abs() > AXIS_EPS {
        axis.y
    } else {
        axis.x
    };
    if lead < 0.0 {
        axis = -axis;
    }
    axis
}

/// `R(p_e) = [d, U d, e3]` with `d = −p̄/‖p̄‖` from the planar part of `p_e`.
pub fn direction_matrix(p_e: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let n = planar_distance(p_e)?;
    let d = Vector3::new(-p_e.x / n, -p_e.y / n, 0.0);
    Ok(Matrix3::from_columns(&[d, quarter_turn() * d, Vector3::z()]))
}

pub fn target_direction_frame(p_e: &Vector3<f64>, r_star: &Matrix3<f64>) -> Result<DirectionFrame> {
    let r_pe = direction_matrix(p_e)?;
    let u = quarter_turn();
    let half = std::f64::consts::FRAC_PI_2;
    let axis1 = unit_axis(&(u.transpose() * r_star.transpose() * r_pe));
    let r_d1 = u * so3_exp(&(axis1 * half));
    let axis2 = unit_axis(&(r_star.transpose() * r_d1.transpose() * r_pe));
    let r_d2 = so3_exp(&(axis2 * half));
    Ok(DirectionFrame { r_pe, r_d1, r_d2 })
}

/// Exact `∂R(p_e)/∂p_ei`; the `e3` column is constant and `p_e3` does not
/// enter the planar construction.
pub fn direction_frame_derivative(p_e: &Vector3<f64>, i: usize) -> Result<Matrix3<f64>> {
    let n = planar_distance(p_e)?;
    if i >= 2 {
        return Ok(Matrix3::zeros());
    }
    let pbar = Vector3::new(p_e.x, p_e.y, 0.0);
    let dd = -(Vector3::ith(i, 1.0) / n - pbar * (pbar[i] / n.powi(3)));
    Ok(Matrix3::from_columns(&[dd, quarter_turn() * dd, Vector3::zeros()]))
}

fn terms(e: &ErrorState, f: &DirectionFrame, gains: &ControllerGains) -> PotentialTerms {
    let i3 = Matrix3::identity();
    let r = e.r();
    let vr1 = 0.5 * (i3 - f.r_d2.transpose() * f.r_pe.transpose() * f.r_d1 * r).trace();
    let vr2 = 0.5 * gains.k_r1 * (i3 - e.r_star.transpose() * f.r_d1.transpose() * f.r_pe).trace();
    let vr3 = 0.5 * gains.k_r2 * (i3 - f.r_pe.transpose() * f.r_d1 * r).trace();
    let vd = 0.5 * gains.k_p * e.p_e.norm_squared() + vr1 * vr2 + vr3;
    PotentialTerms { vd, vr1, vr2, vr3 }
}

pub fn shaped_potential(e: &ErrorState, gains: &ControllerGains) -> Result<PotentialTerms> {
    let f = target_direction_frame(&e.p_e, &e.r_star)?;
    Ok(terms(e, &f, gains))
}

/// Potential used once the position error is inside the terminal band:
/// `k_p/2 ‖p_e‖² + k_R2/2 tr(I − R_e)`.
pub fn terminal_potential(e: &ErrorState, gains: &ControllerGains) -> f64 {
    0.5 * gains.k_p * e.p_e.norm_squared() + 0.5 * gains.k_r2 * (Matrix3::identity() - e.r_e).trace()
}

pub fn potential_gradients(e: &ErrorState, gains: &ControllerGains) -> Result<PotentialGradients> {
    let f = target_direction_frame(&e.p_e, &e.r_star)?;
    let dr_dp = [
        direction_frame_derivative(&e.p_e, 0)?,
        direction_frame_derivative(&e.p_e, 1)?,
        direction_frame_derivative(&e.p_e, 2)?,
    ];
    let rs = &e.r_star;
    let re = &e.r_e;
    let a1 = f.r_d2 * re.transpose() * rs.transpose() * f.r_d1.transpose();
    let a2 = rs.transpose() * f.r_d1.transpose();
    let a3 = re.transpose() * rs.transpose() * f.r_d1.transpose();
    let grad = |a: &Matrix3<f64>, c: f64| Vector3::from_fn(|i, _| c * (a * dr_dp[i]).trace());
    Ok(PotentialGradients {
        dvr1_dp: grad(&a1, -0.5),
        dvr2_dp: grad(&a2, -0.5 * gains.k_r1),
        dvr3_dp: grad(&a3, -0.5 * gains.k_r2),
        dvr1_dre: -0.5 * rs.transpose() * f.r_d1.transpose() * f.r_pe * f.r_d2,
        dvr3_dre: -0.5 * gains.k_r2 * rs.transpose() * f.r_d1.transpose() * f.r_pe,
        dr_dp,
    })
}

fn skew_vee(a: &Matrix3<f64>) -> Vector3<f64> {
    vee_unchecked(&(a - a.transpose()))
}

/// `e = [e_v; e_ω]`, the body-frame gradient of the shaped potential.
pub fn error_vector(e: &ErrorState, gains: &ControllerGains) -> Result<Vector6<f64>> {
    let f = target_direction_frame(&e.p_e, &e.r_star)?;
    let t = terms(e, &f, gains);
    let g = potential_gradients(e, gains)?;
    let r = e.r();
    let world = gains.k_p * e.p_e + t.vr2 * g.dvr1_dp + t.vr1 * g.dvr2_dp + g.dvr3_dp;
    let ev = r.transpose() * world;
    let a3 = f.r_pe.transpose() * f.r_d1 * r;
    let a1 = f.r_d2.transpose() * a3;
    let ew = 0.5 * gains.k_r2 * skew_vee(&a3) + 0.5 * t.vr2 * skew_vee(&a1);
    Ok(stack(&ev, &ew))
}

/// Error vector of the terminal potential.
pub fn terminal_error_vector(e: &ErrorState, gains: &ControllerGains) -> Vector6<f64> {
    let ev = e.r().transpose() * (gains.k_p * e.p_e);
    let ew = 0.5 * gains.k_r2 * skew_vee(&e.r_e);
    stack(&ev, &ew)
}

fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{expm_var, hat_var, Tape, Tensor, Var};
    use crate::geom::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn err(p_e: Vector3<f64>, r: &Matrix3<f64>, r_star: &Matrix3<f64>) -> ErrorState {
        ErrorState { p_e, r_e: r_star.transpose() * r, r_star: *r_star, pm_e: Vector6::zeros() }
    }

    fn random_planar(rng: &mut ChaCha8Rng) -> ErrorState {
        loop {
            let p = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
            if p.norm() < 0.1 {
                continue;
            }
            let r = *Rotation::from_yaw(rng.random_range(-3.1..3.1)).matrix();
            let rs = *Rotation::from_yaw(rng.random_range(-3.1..3.1)).matrix();
            return err(p, &r, &rs);
        }
    }

    fn fd_stable(e: &ErrorState, h: f64) -> bool {
        let f = target_direction_frame(&e.p_e, &e.r_star).unwrap();
        (0..2).all(|i| {
            [h, -h].iter().all(|s| {
                let mut p = e.p_e;
                p[i] += s;
                let g = target_direction_frame(&p, &e.r_star).unwrap();
                (g.r_d1 - f.r_d1).norm() < 1e-9 && (g.r_d2 - f.r_d2).norm() < 1e-9
            })
        })
    }

    #[test]
    fn direction_matrix_examples() {
        assert!((direction_matrix(&Vector3::new(-1.0, 0.0, 0.0)).unwrap() - Matrix3::identity()).norm() < 1e-15);
        let r = direction_matrix(&Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert!((r - Rotation::from_yaw(std::f64::consts::FRAC_PI_2).matrix()).norm() < 1e-15);
        assert!(matches!(direction_matrix(&Vector3::new(0.0, 0.0, 1.0)), Err(Error::DegenerateDirection(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
            let r = direction_matrix(&p).unwrap();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_rotations_are_planar_quarter_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let e = random_planar(&mut rng);
            let f = target_direction_frame(&e.p_e, &e.r_star).unwrap();
            let d1_ok = (f.r_d1 - Matrix3::identity()).norm() < 1e-9
                || (f.r_d1 - Rotation::from_yaw(std::f64::consts::PI).matrix()).norm() < 1e-9;
            assert!(d1_ok, "{}", f.r_d1);
            assert!((f.r_d2[(0, 0)]).abs() < 1e-9 && (f.r_d2[(2, 2)] - 1.0).abs() < 1e-9);
        }
        let e = err(Vector3::new(-1.0, 0.0, 0.0), &Matrix3::identity(), &quarter_turn().transpose());
        let f = target_direction_frame(&e.p_e, &e.r_star).unwrap();
        assert!((f.r_d1 - Rotation::from_yaw(std::f64::consts::PI).matrix()).norm() < 1e-12);
    }

    #[test]
    fn potential_examples() {
        let g = ControllerGains::paper();
        let rs = Matrix3::identity();
        let aligned = err(Vector3::new(-1.0, 0.0, 0.0), &Matrix3::identity(), &rs);
        let t = shaped_potential(&aligned, &g).unwrap();
        assert!(t.vr2.abs() < 1e-15 && t.vr3.abs() < 1e-15, "{t:?}");
        assert!((t.vd - 0.6 - t.vr1 * t.vr2).abs() < 1e-15);
        let e = err(Vector3::new(1.0, 0.0, 0.0), &Matrix3::identity(), &rs);
        let zero = ControllerGains { k_r1: 0.0, k_r2: 0.0, ..g };
        let t = shaped_potential(&e, &zero).unwrap();
        assert!((t.vd - 0.6).abs() < 1e-15);
        let ev = error_vector(&e, &zero).unwrap();
        assert!((ev - Vector6::new(1.2, 0.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e = random_planar(&mut rng);
            let t = shaped_potential(&e, &g).unwrap();
            assert!(t.vd >= 0.0 && t.vr1 >= -1e-12 && t.vr2 >= -1e-12 && t.vr3 >= -1e-12);
        }
    }

    #[test]
    fn terminal_error_vanishes_at_target() {
        let g = ControllerGains::paper();
        let rs = *Rotation::from_yaw(0.4).matrix();
        let e = err(Vector3::zeros(), &rs, &rs);
        assert!(terminal_error_vector(&e, &g).norm() < 1e-10);
        assert!(terminal_potential(&e, &g).abs() < 1e-12);
    }

    #[test]
    fn frame_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        let check = |p: Vector3<f64>| {
            for i in 0..3 {
                let mut a = p;
                let mut b = p;
                a[i] -= h;
                b[i] += h;
                let fd = (direction_matrix(&b).unwrap() - direction_matrix(&a).unwrap()) / (2.0 * h);
                let an = direction_frame_derivative(&p, i).unwrap();
                assert!((fd - an).norm() < 1e-6 * an.norm().max(1.0), "{i} {fd} {an}");
            }
        };
        check(Vector3::new(1.0, 0.0, 0.0));
        for _ in 0..500 {
            check(Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = ControllerGains::paper();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 500 {
            let e = random_planar(&mut rng);
            if !fd_stable(&e, h) {
                continue;
            }
            checked += 1;
            let an = potential_gradients(&e, &g).unwrap();
            let t0 = shaped_potential(&e, &g).unwrap();
            for i in 0..3 {
                let mut a = e;
                let mut b = e;
                a.p_e[i] -= h;
                b.p_e[i] += h;
                let (ta, tb) = (shaped_potential(&a, &g).unwrap(), shaped_potential(&b, &g).unwrap());
                let fd = [(tb.vr1 - ta.vr1) / (2.0 * h), (tb.vr2 - ta.vr2) / (2.0 * h), (tb.vr3 - ta.vr3) / (2.0 * h)];
                let ex = [an.dvr1_dp[i], an.dvr2_dp[i], an.dvr3_dp[i]];
                for k in 0..3 {
                    assert!(
                        (fd[k] - ex[k]).abs() < 1e-5 * ex[k].abs().max(1.0),
                        "term {k} axis {i}: {} vs {}",
                        fd[k],
                        ex[k]
                    );
                }
            }
            let f = target_direction_frame(&e.p_e, &e.r_star).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    let mut a = e;
                    let mut b = e;
                    a.r_e[(r, c)] -= h;
                    b.r_e[(r, c)] += h;
                    let (ta, tb) = (terms(&a, &f, &g), terms(&b, &f, &g));
                    assert!(((tb.vr1 - ta.vr1) / (2.0 * h) - an.dvr1_dre[(r, c)]).abs() < 1e-6);
                    assert!(((tb.vr3 - ta.vr3) / (2.0 * h) - an.dvr3_dre[(r, c)]).abs() < 1e-6);
                }
            }
            assert!(t0.vd.is_finite());
        }
    }

    fn vd_var<'t>(
        tape: &'t Tape,
        e: &ErrorState,
        f: &DirectionFrame,
        g: &ControllerGains,
    ) -> (Var<'t>, Var<'t>, Var<'t>) {
        let pe = tape.row(e.p_e.as_slice());
        let delta = tape.row(&[0.0; 3]);
        let c = |m: &Matrix3<f64>| tape.leaf(Tensor::from_matrix(m));
        let planar = pe.matmul(c(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))));
        let inv_n = planar.square_norm().sqrt().recip();
        let d = planar.scale(-1.0).mul_scalar(inv_n);
        let e3 = tape.row(&[0.0, 0.0, 1.0]);
        let r_pe = Var::concat(&[d, d.matmul(c(&quarter_turn().transpose())), e3], 0).t();
        let r = c(&e.r()).matmul(expm_var(hat_var(delta)));
        let id = c(&Matrix3::identity());
        let (rd1, rd2, rs) = (c(&f.r_d1), c(&f.r_d2), c(&e.r_star));
        let vr1 = (id - rd2.t().matmul(r_pe.t()).matmul(rd1).matmul(r)).trace().scale(0.5);
        let vr2 = (id - rs.t().matmul(rd1.t()).matmul(r_pe)).trace().scale(0.5 * g.k_r1);
        let vr3 = (id - r_pe.t().matmul(rd1).matmul(r)).trace().scale(0.5 * g.k_r2);
        let vd = pe.square_norm().scale(0.5 * g.k_p) + vr1.mul_scalar(vr2) + vr3;
        (vd, pe, delta)
    }

    #[test]
    fn error_vector_matches_autodiff() {
        let g = ControllerGains::paper();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let e = random_planar(&mut rng);
            let f = target_direction_frame(&e.p_e, &e.r_star).unwrap();
            let tape = Tape::new();
            let (vd, pe, delta) = vd_var(&tape, &e, &f, &g);
            assert!((vd.item() - shaped_potential(&e, &g).unwrap().vd).abs() < 1e-12);
            let grads = tape.gradients(vd, &[pe, delta]).unwrap();
            let world: Vector3<f64> = grads[0].to_vector();
            let ad = stack(&(e.r().transpose() * world), &grads[1].to_vector());
            let an = error_vector(&e, &g).unwrap();
            assert!((ad - an).norm() < 1e-6 * an.norm().max(1e-3), "{ad} {an}");
        }
    }

    #[test]
    fn critical_point_has_zero_position_gradient() {
        let g = ControllerGains::paper();
        let rs = Matrix3::identity();
        let e = err(Vector3::new(-1.0, 0.0, 0.0), &Matrix3::identity(), &rs);
        let an = potential_gradients(&e, &g).unwrap();
        assert!(an.dvr2_dp.norm() < 1e-8 && an.dvr3_dp.norm() < 1e-8, "{an:?}");
    }
}
