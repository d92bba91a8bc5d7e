//! Real spherical harmonics in the layout used by 3DGS assets.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

pub fn coefficient_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn degree_for_len(len: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| coefficient_count(d) == len)
}

/// Basis values `Y_lm(dir)` for bands `0..=degree`, in coefficient order.
pub fn basis(dir: &Vector3<f64>, degree: usize) -> [f64; 16] {
    let mut y = [0.0; 16];
    y[0] = SH_C0;
    if degree == 0 {
        return y;
    }
    let (x, yy, z) = (dir.x, dir.y, dir.z);
    y[1] = -SH_C1 * yy;
    y[2] = SH_C1 * z;
    y[3] = -SH_C1 * x;
    if degree == 1 {
        return y;
    }
    let (xx, y2, zz) = (x * x, yy * yy, z * z);
    let (xy, yz, xz) = (x * yy, yy * z, x * z);
    y[4] = SH_C2[0] * xy;
    y[5] = SH_C2[1] * yz;
    y[6] = SH_C2[2] * (2.0 * zz - xx - y2);
    y[7] = SH_C2[3] * xz;
    y[8] = SH_C2[4] * (xx - y2);
    if degree == 2 {
        return y;
    }
    y[9] = SH_C3[0] * yy * (3.0 * xx - y2);
    y[10] = SH_C3[1] * xy * z;
    y[11] = SH_C3[2] * yy * (4.0 * zz - xx - y2);
    y[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
    y[13] = SH_C3[4] * x * (4.0 * zz - xx - y2);
    y[14] = SH_C3[5] * z * (xx - y2);
    y[15] = SH_C3[6] * x * (xx - 3.0 * y2);
    y
}

/// View-dependent color `max(0, 0.5 + Σ c_lm Y_lm(dir))` per channel.
///
/// `sh` must hold exactly `(degree + 1)^2` coefficients.
pub fn eval_sh_color(sh: &[[f64; 3]], dir: &Vector3<f64>, degree: usize) -> Result<[f64; 3]> {
    if degree > MAX_DEGREE || sh.len() != coefficient_count(degree) {
        return Err(Error::Shape(format!(
            "degree {degree} needs {} coefficients, got {}",
            coefficient_count(degree.min(MAX_DEGREE)),
            sh.len()
        )));
    }
    let y = basis(dir, degree);
    let mut rgb = [0.5; 3];
    for (c, yv) in sh.iter().zip(y.iter()) {
        for ch in 0..3 {
            rgb[ch] += c[ch] * yv;
        }
    }
    Ok(rgb.map(|v| v.max(0.0)))
}
