//! Real spherical harmonics up to degree 3, in the layout used by 3D Gaussian
//! splatting. Colours are `Σ_k basis_k · coeff_k + 0.5`, clamped below at 0.

use nalgebra::Vector3;

use crate::real::Real;

pub const MAX_SH_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;

/// Degree-0 basis constant; DC coefficient `c` displays as `0.5 + SH_C0 · c`.
pub const SH_C0: f64 = C0;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for a given degree, `(deg + 1)²`.
pub const fn sh_coeff_count(deg: usize) -> usize {
    (deg + 1) * (deg + 1)
}

/// Basis values for a unit direction; entries past `(deg + 1)²` are zero.
pub fn sh_basis<T: Real>(dir: &Vector3<T>, deg: usize) -> [T; 16] {
    let mut b = [T::zero(); 16];
    b[0] = T::lit(C0);
    if deg == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let c1 = T::lit(C1);
    b[1] = -c1 * y;
    b[2] = c1 * z;
    b[3] = -c1 * x;
    if deg == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let two = T::lit(2.0);
    b[4] = T::lit(C2[0]) * xy;
    b[5] = T::lit(C2[1]) * yz;
    b[6] = T::lit(C2[2]) * (two * zz - xx - yy);
    b[7] = T::lit(C2[3]) * xz;
    b[8] = T::lit(C2[4]) * (xx - yy);
    if deg == 2 {
        return b;
    }
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    b[9] = T::lit(C3[0]) * y * (three * xx - yy);
    b[10] = T::lit(C3[1]) * xy * z;
    b[11] = T::lit(C3[2]) * y * (four * zz - xx - yy);
    b[12] = T::lit(C3[3]) * z * (two * zz - three * xx - three * yy);
    b[13] = T::lit(C3[4]) * x * (four * zz - xx - yy);
    b[14] = T::lit(C3[5]) * z * (xx - yy);
    b[15] = T::lit(C3[6]) * x * (xx - three * yy);
    b
}

/// Partial derivatives of each basis function w.r.t. the (x, y, z) components
/// of the direction, treating them as independent.
fn sh_basis_jacobian<T: Real>(dir: &Vector3<T>, deg: usize) -> [[T; 3]; 16] {
    let mut d = [[T::zero(); 3]; 16];
    if deg == 0 {
        return d;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let c1 = T::lit(C1);
    d[1] = [T::zero(), -c1, T::zero()];
    d[2] = [T::zero(), T::zero(), c1];
    d[3] = [-c1, T::zero(), T::zero()];
    if deg == 1 {
        return d;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    let six = T::lit(6.0);
    let eight = T::lit(8.0);
    let c2: [T; 5] = C2.map(T::lit);
    d[4] = [c2[0] * y, c2[0] * x, T::zero()];
    d[5] = [T::zero(), c2[1] * z, c2[1] * y];
    d[6] = [-two * c2[2] * x, -two * c2[2] * y, four * c2[2] * z];
    d[7] = [c2[3] * z, T::zero(), c2[3] * x];
    d[8] = [two * c2[4] * x, -two * c2[4] * y, T::zero()];
    if deg == 2 {
        return d;
    }
    let c3: [T; 7] = C3.map(T::lit);
    d[9] = [six * c3[0] * x * y, c3[0] * (three * xx - three * yy), T::zero()];
    d[10] = [c3[1] * y * z, c3[1] * x * z, c3[1] * x * y];
    d[11] = [
        -two * c3[2] * x * y,
        c3[2] * (four * zz - xx - three * yy),
        eight * c3[2] * y * z,
    ];
    d[12] = [
        -six * c3[3] * x * z,
        -six * c3[3] * y * z,
        c3[3] * (six * zz - three * xx - three * yy),
    ];
    d[13] = [
        c3[4] * (four * zz - three * xx - yy),
        -two * c3[4] * x * y,
        eight * c3[4] * x * z,
    ];
    d[14] = [two * c3[5] * x * z, -two * c3[5] * y * z, c3[5] * (xx - yy)];
    d[15] = [c3[6] * (three * xx - three * yy), -six * c3[6] * x * y, T::zero()];
    d
}

/// Evaluates RGB for `coeffs` laid out as `[k][channel]` (at least
/// `(deg + 1)²` rows). Returns the colour and a per-channel flag telling
/// whether the lower clamp was active.
pub fn eval_sh<T: Real>(coeffs: &[[T; 3]], dir: &Vector3<T>, deg: usize) -> ([T; 3], [bool; 3]) {
    let deg = deg.min(MAX_SH_DEGREE);
    let n = sh_coeff_count(deg);
    debug_assert!(coeffs.len() >= n);
    let basis = sh_basis(dir, deg);
    let mut rgb = [T::lit(0.5); 3];
    for (b, c) in basis.iter().zip(coeffs).take(n) {
        for ch in 0..3 {
            rgb[ch] += *b * c[ch];
        }
    }
    let mut clamped = [false; 3];
    for ch in 0..3 {
        if rgb[ch] < T::zero() {
            rgb[ch] = T::zero();
            clamped[ch] = true;
        }
    }
    (rgb, clamped)
}

/// Backward of [`eval_sh`] where `dir_raw` is the *unnormalised* view vector
/// the forward pass normalised. Writes `dL/dcoeff` into `d_coeffs` (added)
/// and returns `dL/d(dir_raw)`.
pub fn eval_sh_backward<T: Real>(
    coeffs: &[[T; 3]],
    dir_raw: &Vector3<T>,
    deg: usize,
    clamped: [bool; 3],
    d_rgb: [T; 3],
    d_coeffs: &mut [[T; 3]],
) -> Vector3<T> {
    let deg = deg.min(MAX_SH_DEGREE);
    let n = sh_coeff_count(deg);
    let mut g = d_rgb;
    for ch in 0..3 {
        if clamped[ch] {
            g[ch] = T::zero();
        }
    }
    let norm = dir_raw.norm();
    let dir = dir_raw / norm;
    let basis = sh_basis(&dir, deg);
    for k in 0..n {
        for ch in 0..3 {
            d_coeffs[k][ch] += basis[k] * g[ch];
        }
    }
    if deg == 0 {
        return Vector3::zeros();
    }
    let jac = sh_basis_jacobian(&dir, deg);
    let mut d_dir = Vector3::zeros();
    for k in 1..n {
        let w = coeffs[k][0] * g[0] + coeffs[k][1] * g[1] + coeffs[k][2] * g[2];
        for a in 0..3 {
            d_dir[a] += jac[k][a] * w;
        }
    }
    // Through dir = v / |v|.
    (d_dir - dir * dir.dot(&d_dir)) / norm
}
