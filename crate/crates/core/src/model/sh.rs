//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Basis ordering and sign conventions follow the reference 3DGS renderer.
//! The evaluated color is shifted by +0.5 and left unclamped.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values `Y_k(d)` and their gradients with respect to `d`, for the
/// first `coeff_count(degree)` functions.
pub fn basis_with_grad(degree: usize, d: &Vector3<f64>) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut b = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        g[1] = [0.0, -SH_C1, 0.0];
        b[2] = SH_C1 * z;
        g[2] = [0.0, 0.0, SH_C1];
        b[3] = -SH_C1 * x;
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        b[5] = SH_C2[1] * y * z;
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        b[7] = SH_C2[3] * x * z;
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        b[8] = SH_C2[4] * (xx - yy);
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        g[9] = [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ];
        b[10] = SH_C3[1] * x * y * z;
        g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        g[11] = [
            SH_C3[2] * (-2.0 * x * y),
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ];
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        g[12] = [
            SH_C3[3] * (-6.0 * x * z),
            SH_C3[3] * (-6.0 * y * z),
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        g[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * (-2.0 * x * y),
            SH_C3[4] * 8.0 * x * z,
        ];
        b[14] = SH_C3[5] * z * (xx - yy);
        g[14] = [
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * (-2.0 * y * z),
            SH_C3[5] * (xx - yy),
        ];
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        g[15] = [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * (-6.0 * x * y),
            0.0,
        ];
    }
    (b, g)
}

/// Evaluates `Σ c_k Y_k(dir) + 0.5` using the first `coeff_count(degree)`
/// coefficients of `coeffs` (laid out `[coefficient][rgb]`).
pub fn sh_evaluate(coeffs: &[f64], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let (b, _) = basis_with_grad(degree, dir);
    let mut rgb = [0.5; 3];
    for (k, bk) in b.iter().enumerate().take(coeff_count(degree)) {
        for c in 0..3 {
            rgb[c] += coeffs[3 * k + c] * bk;
        }
    }
    rgb
}

/// Reverse of [`sh_evaluate`]: accumulates `∂L/∂c` into `d_coeffs` and returns
/// `∂L/∂dir`.
pub fn sh_backward(
    coeffs: &[f64],
    degree: usize,
    dir: &Vector3<f64>,
    d_rgb: [f64; 3],
    d_coeffs: &mut [f64],
) -> Vector3<f64> {
    let (b, g) = basis_with_grad(degree, dir);
    let mut d_dir = Vector3::zeros();
    for k in 0..coeff_count(degree) {
        let mut dy = 0.0;
        for c in 0..3 {
            d_coeffs[3 * k + c] += d_rgb[c] * b[k];
            dy += d_rgb[c] * coeffs[3 * k + c];
        }
        d_dir += Vector3::from(g[k]) * dy;
    }
    d_dir
}

/// Unit direction from `origin` to `p` and the backward map of the
/// normalization (`∂L/∂p` from `∂L/∂dir`).
pub fn view_direction(p: &Vector3<f64>, origin: &Vector3<f64>) -> Vector3<f64> {
    (p - origin).normalize()
}

pub fn view_direction_backward(
    p: &Vector3<f64>,
    origin: &Vector3<f64>,
    d_dir: &Vector3<f64>,
) -> Vector3<f64> {
    let v = p - origin;
    let n = v.norm();
    let u = v / n;
    (d_dir - u * u.dot(d_dir)) / n
}
