//! Linearisation of the united (omega, theta, gamma) system above the
//! upper power limit, the off-diagonal part B and its spectrum, and a
//! numerical stability certificate.

use nalgebra::{Complex, Matrix3 as NMatrix3, Vector3};

use crate::error::StabilityError;
use crate::vsg::VsgParams;

pub type Matrix3 = NMatrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationPoint {
    pub omega0: f64,
    pub theta0: f64,
    pub gamma0: f64,
    pub t0: f64,
    /// `f(theta0 - c_theta gamma0, t0) - P_ref`.
    pub f_ref0: f64,
    pub grad_f_ref0: f64,
    pub grad_f_max0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub a: Matrix3,
    pub det_a: f64,
    /// Determinant after scaling every row of A to unit max-norm.
    pub det_balanced: f64,
    pub eigenvalues_a: Vec<Complex<f64>>,
    pub stable: bool,
}

const DET_THRESHOLD: f64 = 1e-12;
const RE_THRESHOLD: f64 = 1e-9;

/// `(f - P_ref, f - P_max)` at `(theta, t)`.
pub fn evaluate_shifted_functions(
    f: impl Fn(f64, f64) -> f64,
    p_ref: f64,
    p_max: f64,
    theta: f64,
    t: f64,
) -> (f64, f64) {
    let v = f(theta, t);
    (v - p_ref, v - p_max)
}

/// Right-hand side of the united system with `alpha = c_alpha gamma`.
pub fn united_rhs(params: &VsgParams, f: impl Fn(f64, f64) -> f64, x: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let (omega, theta, gamma) = (x[0], x[1], x[2]);
    let (f_ref, f_max) = evaluate_shifted_functions(&f, params.p_ref, params.p_max, theta - params.c_theta * gamma, t);
    Vector3::new(
        (-omega - params.c_alpha * gamma * f_ref) / params.tau_omega,
        omega - params.c_omega * gamma,
        (-gamma + f_max) / params.tau_gamma,
    )
}

/// Exact Jacobian of [`united_rhs`] at the point.
pub fn linearized_a(point: &LinearizationPoint, params: &VsgParams) -> Matrix3 {
    let (tw, tg) = (params.tau_omega, params.tau_gamma);
    let (ca, ct, cw) = (params.c_alpha, params.c_theta, params.c_omega);
    let (g0, kr, km) = (point.gamma0, point.grad_f_ref0, point.grad_f_max0);
    Matrix3::new(
        -1.0 / tw,
        -ca * g0 * kr / tw,
        -ca / tw * (point.f_ref0 - ct * g0 * kr),
        1.0,
        0.0,
        -cw,
        0.0,
        km / tg,
        -(1.0 + ct * km) / tg,
    )
}

/// A with its diagonal removed.
pub fn off_diagonal_b(point: &LinearizationPoint, params: &VsgParams) -> Matrix3 {
    let mut b = linearized_a(point, params);
    b.fill_diagonal(0.0);
    b
}

/// Coefficients `(p, q)` of `det(lambda I - B) = lambda^3 + p lambda + q`.
pub fn characteristic_coefficients_b(point: &LinearizationPoint, params: &VsgParams) -> (f64, f64) {
    let b = off_diagonal_b(point, params);
    let p = params.c_omega * b[(2, 1)] - b[(0, 1)];
    let q = -b[(0, 2)] * b[(2, 1)];
    (p, q)
}

/// Roots of `lambda^3 + p lambda + q` in closed form, real root first.
pub fn characteristic_roots_b(
    point: &LinearizationPoint,
    params: &VsgParams,
) -> Result<[Complex<f64>; 3], StabilityError> {
    if point.gamma0 < 0.0 {
        return Err(StabilityError::Precondition(format!("gamma0 must be non-negative, got {}", point.gamma0)));
    }
    if point.grad_f_ref0 < 0.0 || point.grad_f_max0 < 0.0 {
        return Err(StabilityError::Precondition(format!(
            "gradients must be non-negative, got {} and {}",
            point.grad_f_ref0, point.grad_f_max0
        )));
    }
    let (p, q) = characteristic_coefficients_b(point, params);
    if p < 0.0 {
        return Err(StabilityError::Precondition(format!("linear coefficient is negative ({p})")));
    }
    if !p.is_finite() || !q.is_finite() {
        return Err(StabilityError::NonFinite(if p.is_finite() { 1 } else { 0 }));
    }
    Ok(depressed_cubic_roots(p, q))
}

fn depressed_cubic_roots(p: f64, q: f64) -> [Complex<f64>; 3] {
    if q == 0.0 {
        let s = p.sqrt();
        return [Complex::new(0.0, 0.0), Complex::new(0.0, s), Complex::new(0.0, -s)];
    }
    // p >= 0 leaves exactly one real root
    let disc = (0.5 * q).powi(2) + (p / 3.0).powi(3);
    let sq = disc.sqrt();
    let mut r = (-0.5 * q + sq).cbrt() + (-0.5 * q - sq).cbrt();
    for _ in 0..3 {
        let fr = r * r * r + p * r + q;
        let dfr = 3.0 * r * r + p;
        if dfr == 0.0 {
            break;
        }
        r -= fr / dfr;
    }
    // remaining quadratic lambda^2 + r lambda + (p + r^2)
    let im = (p + 0.75 * r * r).sqrt();
    [Complex::new(r, 0.0), Complex::new(-0.5 * r, im), Complex::new(-0.5 * r, -im)]
}

pub fn check_stability(point: &LinearizationPoint, params: &VsgParams) -> StabilityReport {
    let a = linearized_a(point, params);
    let mut balanced = a;
    for mut row in balanced.row_iter_mut() {
        let scale = row.amax();
        if scale > 0.0 {
            row /= scale;
        }
    }
    let det_balanced = balanced.determinant();
    let eigenvalues_a: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    let max_re = eigenvalues_a.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    StabilityReport {
        a,
        det_a: a.determinant(),
        det_balanced,
        stable: det_balanced.abs() > DET_THRESHOLD && max_re <= RE_THRESHOLD,
        eigenvalues_a,
    }
}

/// Central-difference Jacobian of `dynamics` at `x`.
pub fn finite_difference_jacobian(
    dynamics: impl Fn(&Vector3<f64>) -> Vector3<f64>,
    x: &Vector3<f64>,
    h: f64,
) -> Result<Matrix3, StabilityError> {
    if !(h > 0.0) {
        return Err(StabilityError::Precondition(format!("step must be positive, got {h}")));
    }
    let mut jac = Matrix3::zeros();
    for j in 0..3 {
        let mut plus = *x;
        let mut minus = *x;
        plus[j] += h;
        minus[j] -= h;
        let (fp, fm) = (dynamics(&plus), dynamics(&minus));
        for i in 0..3 {
            if !fp[i].is_finite() || !fm[i].is_finite() {
                return Err(StabilityError::NonFinite(i));
            }
        }
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_params() -> VsgParams {
        VsgParams { tau_omega: 1.0, tau_gamma: 1.0, c_alpha: 1.0, c_theta: 1.0, c_omega: 1.0, ..VsgParams::default() }
    }

    fn point(gamma0: f64, f_ref0: f64, grad: f64) -> LinearizationPoint {
        LinearizationPoint { omega0: 0.0, theta0: 0.0, gamma0, t0: 0.0, f_ref0, grad_f_ref0: grad, grad_f_max0: grad }
    }

    #[test]
    fn shifted_functions() {
        let (r, m) = evaluate_shifted_functions(|_, _| 1.2, 0.8, 1.0, 0.0, 0.0);
        assert_abs_diff_eq!(r, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(m, 0.2, epsilon = 1e-15);
        let (r, m) = evaluate_shifted_functions(|_, _| 1.2, 1.0, 1.0, 0.0, 0.0);
        assert_eq!(r, m);
        assert_eq!(evaluate_shifted_functions(|_, _| 1.0, 0.5, 1.0, 0.0, 0.0).1, 0.0);
    }

    #[test]
    fn a_at_zero_gamma() {
        let a = linearized_a(&point(0.0, 0.5, 1.0), &unit_params());
        assert_eq!(a, Matrix3::new(-1.0, 0.0, -0.5, 1.0, 0.0, -1.0, 0.0, 1.0, -2.0));
    }

    #[test]
    fn a_at_unit_gamma() {
        let a = linearized_a(&point(1.0, 0.0, 1.0), &unit_params());
        assert_eq!(a, Matrix3::new(-1.0, -1.0, 1.0, 1.0, 0.0, -1.0, 0.0, 1.0, -2.0));
        let b = off_diagonal_b(&point(1.0, 0.0, 1.0), &unit_params());
        assert_eq!(b, Matrix3::new(0.0, -1.0, 1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        let d = a - b;
        assert_eq!(d, Matrix3::from_diagonal(&Vector3::new(-1.0, 0.0, -2.0)));
    }

    #[test]
    fn roots_are_exact_imaginary_pair_when_q_vanishes() {
        // f_ref0 = c_theta gamma0 grad zeroes the (0, 2) entry
        let roots = characteristic_roots_b(&point(1.0, 1.0, 1.0), &unit_params()).unwrap();
        assert_eq!(roots[0], Complex::new(0.0, 0.0));
        assert_eq!(roots[1], Complex::new(0.0, 2f64.sqrt()));
        assert_eq!(roots[2], Complex::new(0.0, -(2f64.sqrt())));

        let p = VsgParams { tau_omega: 2.0, tau_gamma: 0.5, ..unit_params() };
        let roots = characteristic_roots_b(&point(1.0, 1.0, 1.0), &p).unwrap();
        assert_abs_diff_eq!(roots[1].im, 2.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn zero_gamma_and_zero_reference_gives_roots_on_axis() {
        let p = VsgParams { c_omega: 0.5, ..unit_params() };
        let roots = characteristic_roots_b(&point(0.0, 0.0, 1.0), &p).unwrap();
        for r in roots {
            assert_eq!(r.re, 0.0);
        }
    }

    #[test]
    fn roots_match_numeric_eigenvalues() {
        let pt = point(0.7, 0.3, 1.3);
        let p = VsgParams { tau_omega: 0.8, tau_gamma: 0.2, c_alpha: 2.0, c_theta: 0.4, c_omega: 0.9, ..unit_params() };
        let mut roots = characteristic_roots_b(&pt, &p).unwrap().to_vec();
        let mut eig: Vec<_> = off_diagonal_b(&pt, &p).complex_eigenvalues().iter().copied().collect();
        let key = |c: &Complex<f64>| (c.im * 1e6).round() as i64;
        roots.sort_by_key(key);
        eig.sort_by_key(key);
        for (r, e) in roots.iter().zip(&eig) {
            assert!((r - e).norm() < 1e-9, "{r} vs {e}");
        }
    }

    #[test]
    fn negative_gamma_is_a_precondition_error() {
        assert!(characteristic_roots_b(&point(-0.1, 0.0, 1.0), &unit_params()).is_err());
    }

    #[test]
    fn stability_report_examples() {
        let r = check_stability(&point(1.0, 0.0, 1.0), &unit_params());
        assert_abs_diff_eq!(r.det_a, -2.0, epsilon = 1e-12);
        assert!(r.stable, "{:?}", r.eigenvalues_a);

        // det A = -(K/(tau_w tau_g))(c_w + c_a f_ref0) vanishes here
        let r = check_stability(&point(0.0, -1.0, 1.0), &unit_params());
        assert_abs_diff_eq!(r.det_a, 0.0, epsilon = 1e-15);
        assert!(!r.stable);
    }

    #[test]
    fn fd_recovers_linear_map() {
        let a = Matrix3::new(1.0, 2.0, 3.0, -4.0, 5.0, -6.0, 0.5, 0.25, -0.125);
        let j = finite_difference_jacobian(|x| a * x, &Vector3::new(0.3, -0.2, 0.9), 1e-3).unwrap();
        assert!((j - a).amax() < 1e-12);
    }

    #[test]
    fn fd_reports_non_finite() {
        let err =
            finite_difference_jacobian(|x| Vector3::new(x[0], f64::NAN, 0.0), &Vector3::zeros(), 1e-6).unwrap_err();
        assert_eq!(err, StabilityError::NonFinite(1));
    }

    #[test]
    fn fd_matches_analytic_jacobian() {
        let params = VsgParams {
            tau_omega: 0.7,
            tau_gamma: 0.3,
            c_alpha: 1.5,
            c_theta: 0.4,
            c_omega: 0.8,
            p_ref: 0.5,
            p_max: 0.9,
            ..unit_params()
        };
        let (a0, k) = (1.1, 1.7);
        let f = move |th: f64, _t: f64| a0 + k * th;
        let x = Vector3::new(0.05, 0.2, 0.3);
        let shifted = x[1] - params.c_theta * x[2];
        let pt = LinearizationPoint {
            omega0: x[0],
            theta0: x[1],
            gamma0: x[2],
            t0: 0.0,
            f_ref0: f(shifted, 0.0) - params.p_ref,
            grad_f_ref0: k,
            grad_f_max0: k,
        };
        let j = finite_difference_jacobian(|s| united_rhs(&params, f, s, 0.0), &x, 1e-6).unwrap();
        let a = linearized_a(&pt, &params);
        assert!((j - a).norm() / a.norm() < 1e-8);
    }
}
