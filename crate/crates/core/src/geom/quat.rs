use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Quaternions are `(w, x, y, z)`.
pub fn normalize_quat<T: Real>(q: &[T; 4]) -> Result<[T; 4]> {
    let n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if !(n2 > T::zero()) || !n2.is_finite() {
        return Err(Error::InvalidInput(format!(
            "quaternion norm must be positive and finite, got {q:?}"
        )));
    }
    let inv = T::one() / n2.sqrt();
    Ok([q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv])
}

/// Gradient of `q / |q|` pulled back onto the unnormalised `q`.
pub fn normalize_quat_backward<T: Real>(q: &[T; 4], d_unit: &[T; 4]) -> [T; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let dot = u[0] * d_unit[0] + u[1] * d_unit[1] + u[2] * d_unit[2] + u[3] * d_unit[3];
    let mut out = [T::zero(); 4];
    for k in 0..4 {
        out[k] = (d_unit[k] - u[k] * dot) / n;
    }
    out
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotation<T: Real>(q: &[T; 4]) -> Matrix3<T> {
    let [w, x, y, z] = *q;
    let one = T::one();
    let two = T::lit(2.0);
    Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back onto the unit quaternion that produced `R`.
pub fn rotation_backward<T: Real>(q: &[T; 4], g: &Matrix3<T>) -> [T; 4] {
    let [w, x, y, z] = *q;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let dw = two * z * (g[(1, 0)] - g[(0, 1)])
        + two * y * (g[(0, 2)] - g[(2, 0)])
        + two * x * (g[(2, 1)] - g[(1, 2)]);
    let dx = two * y * (g[(0, 1)] + g[(1, 0)])
        + two * z * (g[(0, 2)] + g[(2, 0)])
        + two * w * (g[(2, 1)] - g[(1, 2)])
        - four * x * (g[(1, 1)] + g[(2, 2)]);
    let dy = two * x * (g[(0, 1)] + g[(1, 0)])
        + two * w * (g[(0, 2)] - g[(2, 0)])
        + two * z * (g[(1, 2)] + g[(2, 1)])
        - four * y * (g[(0, 0)] + g[(2, 2)]);
    let dz = two * w * (g[(1, 0)] - g[(0, 1)])
        + two * x * (g[(0, 2)] + g[(2, 0)])
        + two * y * (g[(1, 2)] + g[(2, 1)])
        - four * z * (g[(0, 0)] + g[(1, 1)]);
    [dw, dx, dy, dz]
}

/// `R diag(s²) Rᵀ` for a (possibly unnormalised) quaternion and positive scales.
pub fn build_covariance<T: Real>(q: &[T; 4], scale: &Vector3<T>) -> Result<Matrix3<T>> {
    let r = quat_to_rotation(&normalize_quat(q)?);
    let m = r * Matrix3::from_diagonal(scale);
    Ok(m * m.transpose())
}

/// Given `dL/dΣ` (full-matrix convention), returns `(dL/dq_raw, dL/dscale)`.
///
/// Panics if `q` has zero norm; callers validate in the forward pass.
pub fn build_covariance_backward<T: Real>(
    q: &[T; 4],
    scale: &Vector3<T>,
    d_cov: &Matrix3<T>,
) -> ([T; 4], Vector3<T>) {
    let unit = normalize_quat(q).expect("quaternion validated in forward pass");
    let r = quat_to_rotation(&unit);
    let m = r * Matrix3::from_diagonal(scale);
    let d_m = (d_cov + d_cov.transpose()) * m;
    let mut d_scale = Vector3::zeros();
    let mut d_r = d_m;
    for k in 0..3 {
        let mut acc = T::zero();
        for i in 0..3 {
            acc += d_m[(i, k)] * r[(i, k)];
            d_r[(i, k)] = d_m[(i, k)] * scale[k];
        }
        d_scale[k] = acc;
    }
    let d_unit = rotation_backward(&unit, &d_r);
    (normalize_quat_backward(q, &d_unit), d_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - b[(i, j)]).abs() < tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_rotation_unit_scale_is_identity() {
        let c = build_covariance(&[1.0, 0.0, 0.0, 0.0], &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_mat_close(&c, &Matrix3::identity(), 1e-12);
    }

    #[test]
    fn axis_aligned_scale() {
        let c = build_covariance(&[1.0, 0.0, 0.0, 0.0], &Vector3::new(2.0, 1.0, 0.5)).unwrap();
        assert_mat_close(&c, &Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 0.25)), 1e-12);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        // Oracle: explicit R S Sᵀ Rᵀ with R = [[0,-1,0],[1,0,0],[0,0,1]].
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let s = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let expected = r * s * s.transpose() * r.transpose();
        assert_mat_close(&expected, &Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), 1e-12);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = build_covariance(&[h, 0.0, 0.0, h], &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        assert_mat_close(&c, &expected, 1e-12);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        let err = build_covariance(&[0.0f32; 4], &Vector3::new(1.0, 1.0, 1.0));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn antipodal_quaternions_agree() {
        let q = [0.3, -0.2, 0.8, 0.4];
        let nq = [-0.3, 0.2, -0.8, -0.4];
        let s = Vector3::new(0.7, 1.3, 0.2);
        assert_mat_close(
            &build_covariance(&q, &s).unwrap(),
            &build_covariance(&nq, &s).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let q = [0.9, 0.2, -0.35, 0.1];
        let s = Vector3::new(0.4, 1.1, 0.7);
        let w = Matrix3::new(0.3, -1.2, 0.5, 0.7, 0.1, -0.4, 1.5, 0.2, -0.8);
        let f = |q: &[f64; 4], s: &Vector3<f64>| build_covariance(q, s).unwrap().component_mul(&w).sum();
        let (dq, ds) = build_covariance_backward(&q, &s, &w);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (f(&qp, &s) - f(&qm, &s)) / (2.0 * h);
            assert!((fd - dq[k]).abs() < 1e-6 * fd.abs().max(1.0), "q{k}: {fd} vs {}", dq[k]);
        }
        for k in 0..3 {
            let mut sp = s;
            let mut sm = s;
            sp[k] += h;
            sm[k] -= h;
            let fd = (f(&q, &sp) - f(&q, &sm)) / (2.0 * h);
            assert!((fd - ds[k]).abs() < 1e-6 * fd.abs().max(1.0), "s{k}: {fd} vs {}", ds[k]);
        }
    }
}
