//! Real spherical-harmonics color evaluation, degree ≤ 3.

const C0: f32 = 0.282_094_8;
const C1: f32 = 0.488_602_5;
const C2: [f32; 5] = [1.092_548_4, -1.092_548_4, 0.315_391_57, -1.092_548_4, 0.546_274_2];
const C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_33,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

/// RGB of `coeffs` (`[coef][rgb]`) seen along unit direction `dir`, offset
/// by 0.5 and clamped at zero.
pub fn eval_sh(degree: usize, coeffs: &[f32], dir: [f32; 3]) -> [f32; 3] {
    let c = |k: usize, ch: usize| coeffs[k * 3 + ch];
    let mut out = [0.0f32; 3];
    let [x, y, z] = dir;
    for (ch, o) in out.iter_mut().enumerate() {
        let mut r = C0 * c(0, ch);
        if degree >= 1 {
            r += -C1 * y * c(1, ch) + C1 * z * c(2, ch) - C1 * x * c(3, ch);
            if degree >= 2 {
                let (xx, yy, zz) = (x * x, y * y, z * z);
                let (xy, yz, xz) = (x * y, y * z, x * z);
                r += C2[0] * xy * c(4, ch)
                    + C2[1] * yz * c(5, ch)
                    + C2[2] * (2.0 * zz - xx - yy) * c(6, ch)
                    + C2[3] * xz * c(7, ch)
                    + C2[4] * (xx - yy) * c(8, ch);
                if degree >= 3 {
                    r += C3[0] * y * (3.0 * xx - yy) * c(9, ch)
                        + C3[1] * xy * z * c(10, ch)
                        + C3[2] * y * (4.0 * zz - xx - yy) * c(11, ch)
                        + C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * c(12, ch)
                        + C3[4] * x * (4.0 * zz - xx - yy) * c(13, ch)
                        + C3[5] * z * (xx - yy) * c(14, ch)
                        + C3[6] * x * (xx - 3.0 * yy) * c(15, ch);
                }
            }
        }
        *o = (r + 0.5).max(0.0);
    }
    out
}

/// Degree-0 coefficient producing `rgb` in [`eval_sh`].
pub fn rgb_to_sh0(rgb: f32) -> f32 {
    (rgb - 0.5) / C0
}
