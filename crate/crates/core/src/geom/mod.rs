//! Differentiable geometry: rotations, 3D covariances, pinhole projection,
//! EWA covariance transport and spherical-harmonics colour.

mod camera;
mod cloud;
mod projection;
mod quat;
mod sh;

pub use camera::Camera;
pub use cloud::GaussianCloud;
pub use projection::{
    project_covariance, project_covariance_backward, project_point, projection_jacobian,
    PointProjection,
};
pub use quat::{
    build_covariance, build_covariance_backward, normalize_quat, normalize_quat_backward,
    quat_to_rotation, rotation_backward,
};
pub use sh::{eval_sh, eval_sh_backward, sh_basis, sh_coeff_count, MAX_SH_DEGREE, SH_C0};

/// Camera-space depth below which a Gaussian centre is culled.
pub const Z_NEAR: f64 = 0.01;

/// Low-pass term added to the diagonal of every projected 2D covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;
