use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3, Vec3d};

/// Pinhole camera. `w2c` is a row-major 4×4 rigid world-to-camera transform;
/// the camera looks down +z with +y pointing down the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
    pub w2c: [f32; 16],
}

impl Camera {
    pub fn rotation(&self) -> [[f32; 3]; 3] {
        let m = &self.w2c;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> Vec3 {
        [self.w2c[3], self.w2c[7], self.w2c[11]]
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3 {
        let r = self.rotation();
        let t = self.translation();
        let mut c = [0.0f32; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = -(r[0][i] * t[0] + r[1][i] * t[1] + r[2][i] * t[2]);
        }
        c
    }

    #[inline]
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let m = &self.w2c;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param(format!(
                "image size must be non-zero, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::param("focal lengths must be positive"));
        }
        if !self.w2c.iter().chain(&[self.cx, self.cy]).all(|x| x.is_finite()) {
            return Err(Error::param("camera has non-finite entries"));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let d: f32 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-5 {
                    return Err(Error::param("camera rotation is not orthonormal"));
                }
            }
        }
        if self.w2c[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::param("camera transform last row must be (0,0,0,1)"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, `up` roughly the world up axis.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f32, width: u32, height: u32) -> Self {
        let e = math::to_f64(eye);
        let fwd = normalize(math::sub3(math::to_f64(target), e));
        // image +y points down, so the camera y axis is −up projected
        let right = normalize(math::cross3(math::scale3(math::to_f64(up), -1.0), fwd));
        let down = math::cross3(fwd, right);
        let rows = [right, down, fwd];
        let mut w2c = [0.0f32; 16];
        for (i, row) in rows.iter().enumerate() {
            w2c[i * 4] = row[0] as f32;
            w2c[i * 4 + 1] = row[1] as f32;
            w2c[i * 4 + 2] = row[2] as f32;
            w2c[i * 4 + 3] = -math::dot3(*row, e) as f32;
        }
        w2c[15] = 1.0;
        Self {
            fx,
            fy: fx,
            cx: width as f32 * 0.5,
            cy: height as f32 * 0.5,
            width,
            height,
            w2c,
        }
    }

    /// Orbit around `target` (y-up world, azimuth about +y measured from +z,
    /// elevation towards +y), focal length `focal_ratio · width`.
    pub fn orbit(
        azimuth: f32,
        elevation: f32,
        distance: f32,
        target: Vec3,
        focal_ratio: f32,
        width: u32,
        height: u32,
    ) -> Self {
        let (sa, ca) = (azimuth as f64).sin_cos();
        let (se, ce) = (elevation as f64).sin_cos();
        let d = distance as f64;
        let t = math::to_f64(target);
        let eye = math::add3(t, [d * ce * sa, d * se, d * ce * ca]);
        Self::look_at(
            math::to_f32(eye),
            target,
            [0.0, 1.0, 0.0],
            focal_ratio * width as f32,
            width,
            height,
        )
    }

    /// Frontal view of a head centered at the origin.
    pub fn default_head(width: u32, height: u32) -> Self {
        Self::orbit(0.0, 0.0, 0.6, [0.0, 0.0, 0.0], 2.0, width, height)
    }
}

fn normalize(v: Vec3d) -> Vec3d {
    math::scale3(v, 1.0 / math::norm3(v))
}
