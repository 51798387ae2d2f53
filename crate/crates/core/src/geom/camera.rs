use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Pinhole camera with a rigid world-to-camera pose and a normalised timestamp.
///
/// Camera space follows the computer-vision convention: +x right, +y down,
/// +z forward. Pixel `(i, j)` samples the image plane at `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Matrix4<f64>,
    pub time: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: Matrix4<f64>,
        time: f64,
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
            time,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera resolution must be non-zero".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..=1.0).contains(&self.time) {
            return Err(Error::InvalidInput(format!("camera time {} outside [0, 1]", self.time)));
        }
        let r = self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err < 1e-5) {
            return Err(Error::InvalidInput(format!(
                "camera rotation is not orthonormal (|RᵀR - I|∞ = {err:e})"
            )));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`; `up` is the approximate world up.
    pub fn look_at(
        width: u32,
        height: u32,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        time: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Camera::new(
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rigid(&r, &t),
            time,
        )
    }

    /// Builds a camera from a camera-to-world matrix in the OpenGL/Blender
    /// convention (+y up, camera looking down -z), as stored in NeRF-style
    /// `transforms_*.json` manifests.
    pub fn from_gl_camera_to_world(
        width: u32,
        height: u32,
        focal: f64,
        c2w_gl: &Matrix4<f64>,
        time: f64,
    ) -> Result<Self> {
        let mut c2w = *c2w_gl;
        for row in 0..3 {
            c2w[(row, 1)] = -c2w[(row, 1)];
            c2w[(row, 2)] = -c2w[(row, 2)];
        }
        let r_c2w = c2w.fixed_view::<3, 3>(0, 0).into_owned();
        let center = Vector3::new(c2w[(0, 3)], c2w[(1, 3)], c2w[(2, 3)]);
        let r = r_c2w.transpose();
        let t = -(r * center);
        Camera::new(
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rigid(&r, &t),
            time,
        )
    }

    /// Inverse of [`Camera::from_gl_camera_to_world`]'s pose conversion.
    pub fn gl_camera_to_world(&self) -> Matrix4<f64> {
        let r = self.rotation::<f64>();
        let center = self.center();
        let mut c2w = rigid(&r.transpose(), &center);
        for row in 0..3 {
            c2w[(row, 1)] = -c2w[(row, 1)];
            c2w[(row, 2)] = -c2w[(row, 2)];
        }
        c2w
    }

    pub fn rotation<T: Real>(&self) -> Matrix3<T> {
        Matrix3::from_fn(|i, j| T::lit(self.world_to_camera[(i, j)]))
    }

    pub fn translation<T: Real>(&self) -> Vector3<T> {
        Vector3::from_fn(|i, _| T::lit(self.world_to_camera[(i, 3)]))
    }

    /// World-space position of the optical centre.
    pub fn center(&self) -> Vector3<f64> {
        let r = self.rotation::<f64>();
        -(r.transpose() * self.translation::<f64>())
    }

    pub fn to_camera<T: Real>(&self, p_world: &Vector3<T>) -> Vector3<T> {
        self.rotation::<T>() * p_world + self.translation::<T>()
    }

    pub fn with_time(&self, time: f64) -> Self {
        Camera { time, ..self.clone() }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

pub(crate) fn rigid(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at(
            64,
            64,
            100.0,
            Vector3::new(3.0, 1.0, -2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            0.0,
        )
        .unwrap();
        let p = cam.to_camera(&Vector3::<f64>::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - 14f64.sqrt()).abs() < 1e-12);
        assert!((cam.center() - Vector3::new(3.0, 1.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn gl_pose_roundtrip() {
        let cam = Camera::look_at(
            32,
            32,
            40.0,
            Vector3::new(0.5, -4.0, 1.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            0.25,
        )
        .unwrap();
        let c2w = cam.gl_camera_to_world();
        let back = Camera::from_gl_camera_to_world(32, 32, 40.0, &c2w, 0.25).unwrap();
        assert!((back.world_to_camera - cam.world_to_camera).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_bad_cameras() {
        let id = Matrix4::identity();
        assert!(Camera::new(8, 8, 0.0, 1.0, 4.0, 4.0, id, 0.0).is_err());
        assert!(Camera::new(8, 8, 1.0, 1.0, 4.0, 4.0, id, 1.5).is_err());
        let mut skew = id;
        skew[(0, 1)] = 0.1;
        assert!(Camera::new(8, 8, 1.0, 1.0, 4.0, 4.0, skew, 0.0).is_err());
    }
}
