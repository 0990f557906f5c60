//! Small fixed-size vector, matrix and quaternion helpers.
//!
//! Matrices are row-major `[[T; 3]; 3]`. Quaternions are `[w, x, y, z]`.

pub type Vec3 = [f32; 3];
pub type Vec3d = [f64; 3];
pub type Mat3d = [[f64; 3]; 3];
pub type Quat = [f32; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];
pub const IDENTITY_MAT: Mat3d = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Below this angle axis-angle vectors use the first-order series instead of
/// the closed form.
pub const RODRIGUES_SERIES_THRESHOLD: f64 = 1e-8;

#[inline]
pub fn add3(a: Vec3d, b: Vec3d) -> Vec3d {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3d, b: Vec3d) -> Vec3d {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: Vec3d, s: f64) -> Vec3d {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3d, b: Vec3d) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3d, b: Vec3d) -> Vec3d {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3d) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn to_f64(v: Vec3) -> Vec3d {
    [v[0] as f64, v[1] as f64, v[2] as f64]
}

#[inline]
pub fn to_f32(v: Vec3d) -> Vec3 {
    [v[0] as f32, v[1] as f32, v[2] as f32]
}

#[inline]
pub fn mat_vec(m: &Mat3d, v: Vec3d) -> Vec3d {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

pub fn mat_mul(a: &Mat3d, b: &Mat3d) -> Mat3d {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_sub(a: &Mat3d, b: &Mat3d) -> Mat3d {
    let mut out = *a;
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] -= b[r][c];
        }
    }
    out
}

pub fn transpose(m: &Mat3d) -> Mat3d {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

/// Rotation matrix of an axis-angle vector (Rodrigues' formula).
///
/// The zero vector maps to the identity exactly.
pub fn rodrigues(r: Vec3d) -> Mat3d {
    let theta = norm3(r);
    let k = [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]];
    if theta < RODRIGUES_SERIES_THRESHOLD {
        let mut m = IDENTITY_MAT;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += k[i][j];
            }
        }
        return m;
    }
    let (s, c) = theta.sin_cos();
    let a = s / theta;
    let b = (1.0 - c) / (theta * theta);
    let k2 = mat_mul(&k, &k);
    let mut m = IDENTITY_MAT;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    m
}

/// Inverse of [`rodrigues`] for rotations with angle in `[0, π)`.
pub fn axis_angle(m: &Mat3d) -> Vec3d {
    let cos = ((m[0][0] + m[1][1] + m[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if theta < 1e-12 {
        return scale3(v, 0.5);
    }
    scale3(v, theta / (2.0 * theta.sin()))
}

/// Hamilton product `a ⊗ b`.
#[inline]
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix of a unit quaternion.
#[inline]
pub fn quat_to_mat(q: Quat) -> [[f32; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rodrigues_zero_is_identity() {
        assert_eq!(rodrigues([0.0; 3]), IDENTITY_MAT);
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let m = rodrigues([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let v = mat_vec(&m, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn axis_angle_round_trip() {
        for r in [[0.3, -0.2, 0.1], [0.0, 1.2, 0.0], [1e-9, 0.0, 0.0]] {
            let back = axis_angle(&rodrigues(r));
            for i in 0..3 {
                assert!((back[i] - r[i]).abs() < 1e-9, "{r:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn softplus_pair() {
        for y in [1e-3, 0.5, 3.0, 20.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn quat_identity_product() {
        let q = [0.5, 0.5, -0.5, 0.5];
        assert_eq!(quat_mul(IDENTITY_QUAT, q), q);
    }
}
