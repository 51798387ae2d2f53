use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::Camera;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointProjection<T: Real> {
    pub uv: Vector2<T>,
    pub depth: T,
    pub p_cam: Vector3<T>,
}

/// Pinhole projection; `None` when the point is at or in front of `z_near`.
pub fn project_point<T: Real>(
    p_world: &Vector3<T>,
    cam: &Camera,
    z_near: T,
) -> Option<PointProjection<T>> {
    let p_cam = cam.to_camera(p_world);
    if !(p_cam.z > z_near) {
        return None;
    }
    let inv_z = T::one() / p_cam.z;
    let uv = Vector2::new(
        T::lit(cam.fx) * p_cam.x * inv_z + T::lit(cam.cx),
        T::lit(cam.fy) * p_cam.y * inv_z + T::lit(cam.cy),
    );
    Some(PointProjection {
        uv,
        depth: p_cam.z,
        p_cam,
    })
}

/// Jacobian of the perspective map `(x, y, z) -> (fx x/z, fy y/z)`.
pub fn projection_jacobian<T: Real>(p_cam: &Vector3<T>, fx: T, fy: T) -> Matrix2x3<T> {
    let inv_z = T::one() / p_cam.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        fx * inv_z,
        T::zero(),
        -fx * p_cam.x * inv_z2,
        T::zero(),
        fy * inv_z,
        -fy * p_cam.y * inv_z2,
    )
}

/// EWA transport `J W Σ Wᵀ Jᵀ + dilation·I`, with `W` the camera rotation.
pub fn project_covariance<T: Real>(
    cov3d: &Matrix3<T>,
    cam_rotation: &Matrix3<T>,
    jac: &Matrix2x3<T>,
    dilation: T,
) -> Matrix2<T> {
    let m = jac * cam_rotation;
    let mut c = m * cov3d * m.transpose();
    c[(0, 0)] += dilation;
    c[(1, 1)] += dilation;
    // Exact symmetry regardless of rounding in the triple product.
    let off = (c[(0, 1)] + c[(1, 0)]) * T::lit(0.5);
    c[(0, 1)] = off;
    c[(1, 0)] = off;
    c
}

/// Backward of [`project_covariance`] followed by the dependence of `J` on
/// the camera-space centre.
///
/// Returns `(dL/dΣ3d, dL/dp_cam)` given `dL/dΣ2d` in full-matrix convention.
pub fn project_covariance_backward<T: Real>(
    cov3d: &Matrix3<T>,
    cam_rotation: &Matrix3<T>,
    p_cam: &Vector3<T>,
    fx: T,
    fy: T,
    d_cov2d: &Matrix2<T>,
) -> (Matrix3<T>, Vector3<T>) {
    let jac = projection_jacobian(p_cam, fx, fy);
    let m = jac * cam_rotation;
    let g = (d_cov2d + d_cov2d.transpose()) * T::lit(0.5);
    let d_cov3d = m.transpose() * g * m;
    let d_m = (g + g.transpose()) * m * cov3d;
    let d_j = d_m * cam_rotation.transpose();

    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let inv_z = T::one() / z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let two = T::lit(2.0);
    let d_x = -fx * inv_z2 * d_j[(0, 2)];
    let d_y = -fy * inv_z2 * d_j[(1, 2)];
    let d_z = -fx * inv_z2 * d_j[(0, 0)]
        + two * fx * x * inv_z3 * d_j[(0, 2)]
        - fy * inv_z2 * d_j[(1, 1)]
        + two * fy * y * inv_z3 * d_j[(1, 2)];
    (d_cov3d, Vector3::new(d_x, d_y, d_z))
}

#[cfg(test)]
mod tests {
    use nalgebra::Matrix4;

    use super::*;

    fn axis_camera() -> Camera {
        Camera::new(64, 64, 100.0, 100.0, 32.0, 32.0, Matrix4::identity(), 0.0).unwrap()
    }

    #[test]
    fn on_axis_point_lands_on_principal_point() {
        let p = project_point(&Vector3::new(0.0, 0.0, 2.0), &axis_camera(), 0.01).unwrap();
        assert_eq!(p.uv, Vector2::new(32.0, 32.0));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn off_axis_point() {
        let p = project_point(&Vector3::new(1.0f64, 0.0, 2.0), &axis_camera(), 0.01).unwrap();
        assert!((p.uv.x - 82.0).abs() < 1e-12);
    }

    #[test]
    fn points_behind_or_at_near_plane_are_culled() {
        let cam = axis_camera();
        assert!(project_point(&Vector3::new(0.0, 0.0, -1.0), &cam, 0.01).is_none());
        assert!(project_point(&Vector3::new(0.0, 0.0, 0.01), &cam, 0.01).is_none());
    }

    #[test]
    fn jacobian_closed_form() {
        let j = projection_jacobian(&Vector3::new(0.0, 0.0, 2.0), 100.0, 100.0);
        assert_eq!(j, Matrix2x3::new(50.0, 0.0, 0.0, 0.0, 50.0, 0.0));
        let j = projection_jacobian(&Vector3::new(1.0, 0.0, 2.0), 100.0, 100.0);
        assert_eq!(j.row(0).into_owned(), Matrix2x3::new(50.0, 0.0, -25.0, 0.0, 0.0, 0.0).row(0));
        let j4 = projection_jacobian(&Vector3::new(0.0, 0.0, 4.0), 100.0, 100.0);
        assert_eq!(j4[(0, 0)] * 2.0, 50.0);
        assert_eq!(j4[(1, 1)] * 2.0, 50.0);
    }

    #[test]
    fn jacobian_matches_finite_differences_of_projection() {
        let cam = Camera::look_at(
            64,
            48,
            70.0,
            Vector3::new(1.0, -3.0, 0.5),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            0.0,
        )
        .unwrap();
        let w = cam.rotation::<f64>();
        let h = 1e-4;
        for p in [
            Vector3::new(0.2, 0.1, -0.3),
            Vector3::new(-0.5, 0.4, 0.2),
            Vector3::new(0.0, 0.9, 0.7),
        ] {
            let pc = cam.to_camera(&p);
            let analytic = projection_jacobian(&pc, cam.fx, cam.fy) * w;
            for k in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[k] += h;
                pm[k] -= h;
                let up = project_point(&pp, &cam, 0.01).unwrap().uv;
                let um = project_point(&pm, &cam, 0.01).unwrap().uv;
                let fd = (up - um) / (2.0 * h);
                for r in 0..2 {
                    let a = analytic[(r, k)];
                    let rel = (a - fd[r]).abs() / a.abs().max(fd[r].abs()).max(1e-8);
                    assert!(rel < 1e-4, "entry ({r},{k}): analytic {a}, fd {}", fd[r]);
                }
            }
        }
    }

    #[test]
    fn unit_covariance_projection() {
        let j = Matrix2x3::new(50.0, 0.0, 0.0, 0.0, 50.0, 0.0);
        let c = project_covariance(&Matrix3::identity(), &Matrix3::identity(), &j, 0.3);
        assert!((c - Matrix2::new(2500.3, 0.0, 0.0, 2500.3)).abs().max() < 1e-9);
        let c0 = project_covariance(&Matrix3::zeros(), &Matrix3::identity(), &j, 0.3);
        assert_eq!(c0, Matrix2::new(0.3, 0.0, 0.0, 0.3));
    }
}
