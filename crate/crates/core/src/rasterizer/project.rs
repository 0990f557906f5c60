use rayon::prelude::*;

use super::{sh::eval_sh, Camera, DILATION, NEAR_PLANE};
use crate::compose::GaussianCloud;
use crate::math;

/// A Gaussian after EWA projection to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub index: u32,
    pub mean2d: [f32; 2],
    /// Inverse 2D covariance `(a, b, c)` of `[[a, b], [b, c]]`.
    pub conic: [f32; 3],
    pub depth: f32,
    pub rgb: [f32; 3],
    pub alpha: f32,
    /// Pixel radius outside which `α′ < 1/255`.
    pub radius: f32,
    /// Square root of the larger eigenvalue of the 2D covariance.
    pub sigma: f32,
    /// Exponents below this give `α′ < 1/255` with margin to spare, so the
    /// blender can skip them without evaluating `exp`.
    pub min_power: f32,
    /// Half-widths along x and y of the ellipse `power ≥ min_power`.
    pub extent: [f32; 2],
}

/// Slack on [`ProjectedSplat::min_power`], far above f32 `exp`/`ln` error.
const MIN_POWER_MARGIN: f32 = 1e-2;

#[derive(Debug, Clone, Default)]
pub struct Projection {
    pub splats: Vec<ProjectedSplat>,
    pub culled: usize,
}

/// Projects one Gaussian; `None` when culled.
pub fn project_one(cloud: &GaussianCloud, i: usize, cam: &Camera) -> Option<ProjectedSplat> {
    let alpha = cloud.opacity[i];
    if !(alpha * 255.0 > 1.0) {
        return None;
    }
    let p = cam.to_camera(cloud.mu[i]);
    let z = p[2];
    if !(z > NEAR_PLANE) {
        return None;
    }
    let w = cam.rotation();
    let rq = math::quat_to_mat(cloud.rotation[i]);
    let s = cloud.scale[i];
    // M = R·diag(s); Σ = M·Mᵀ
    let mut m = [[0.0f32; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = rq[r][c] * s[c];
        }
    }
    let mut sigma3 = [[0.0f32; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            sigma3[r][c] = m[r][0] * m[c][0] + m[r][1] * m[c][1] + m[r][2] * m[c][2];
        }
    }
    let (fx, fy) = (cam.fx, cam.fy);
    let inv_z = 1.0 / z;
    let j = [
        [fx * inv_z, 0.0, -fx * p[0] * inv_z * inv_z],
        [0.0, fy * inv_z, -fy * p[1] * inv_z * inv_z],
    ];
    // T = J·W (2×3)
    let mut t = [[0.0f32; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    // Σ2d = T·Σ·Tᵀ
    let mut ts = [[0.0f32; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = t[r][0] * sigma3[0][c] + t[r][1] * sigma3[1][c] + t[r][2] * sigma3[2][c];
        }
    }
    let dot = |a: &[f32; 3], b: &[f32; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let a = dot(&ts[0], &t[0]) + DILATION;
    let b = dot(&ts[0], &t[1]);
    let c = dot(&ts[1], &t[1]) + DILATION;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.1).sqrt();
    let sigma = lambda_max.sqrt();
    let level = 2.0 * (255.0 * alpha).ln();
    let radius = sigma * level.max(0.0).sqrt();
    let mean2d = [fx * p[0] * inv_z + cam.cx, fy * p[1] * inv_z + cam.cy];
    let (wf, hf) = (cam.width as f32, cam.height as f32);
    if mean2d[0] + radius < 0.0
        || mean2d[0] - radius > wf
        || mean2d[1] + radius < 0.0
        || mean2d[1] - radius > hf
        || !mean2d.iter().all(|v| v.is_finite())
    {
        return None;
    }
    let min_power = -0.5 * level - MIN_POWER_MARGIN;
    let rgb = if cloud.sh_degree == 0 {
        eval_sh(0, cloud.sh_of(i), [0.0, 0.0, 1.0])
    } else {
        let ctr = cam.center();
        let mu = cloud.mu[i];
        let d = [mu[0] - ctr[0], mu[1] - ctr[1], mu[2] - ctr[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
        eval_sh(cloud.sh_degree, cloud.sh_of(i), [d[0] / n, d[1] / n, d[2] / n])
    };
    Some(ProjectedSplat {
        index: i as u32,
        mean2d,
        conic,
        depth: z,
        rgb,
        alpha,
        radius,
        sigma,
        min_power,
        extent: [(-2.0 * min_power * a).sqrt(), (-2.0 * min_power * c).sqrt()],
    })
}

/// EWA projection of every Gaussian; culled ones are counted, not returned.
/// Output order follows Gaussian index.
pub fn project(cloud: &GaussianCloud, cam: &Camera) -> Projection {
    let n = cloud.len();
    let per_chunk: Vec<Vec<ProjectedSplat>> = (0..n.div_ceil(4096))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * 4096;
            let hi = (lo + 4096).min(n);
            (lo..hi).filter_map(|i| project_one(cloud, i, cam)).collect()
        })
        .collect();
    let splats: Vec<ProjectedSplat> = per_chunk.into_iter().flatten().collect();
    Projection {
        culled: n - splats.len(),
        splats,
    }
}
