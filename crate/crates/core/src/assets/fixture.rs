//! Procedural stand-in for a licensed head model plus a trained identity.
//!
//! The head is a UV sphere (longitude `u`, colatitude `v`) stretched into an
//! ellipsoid, with a nose, brow ridge, chin and a mouth pocket: the lip rows
//! meet at the mouth line and the rows between them fold back into the head
//! as the cavity. Four joints (`root`, `neck`, `jaw`, `eyes`) drive it. The
//! face looks down +z, +y is up, model units are meters.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{assemble_asset, AssetMeta, AvatarAsset};
use crate::compose::{ActivationConfig, LinearDeformationBasis};
use crate::error::{Error, Result};
use crate::headmodel::{derive_mouth_cavity_weights, HeadModel, Region};
use crate::math::{self, Vec3d};
use crate::rasterizer::rgb_to_sh0;
use crate::uvatlas::AttributeMaps;

pub const FIXTURE_RESOLUTIONS: [usize; 4] = [64, 128, 256, 512];

const NU: usize = 128;
const NV: usize = 96;
const RADII: [f64; 3] = [0.078, 0.102, 0.095];
const SHAPE_DIM: usize = 8;
const EXPRESSION_DIM: usize = 10;
const JOINTS: [&str; 4] = ["root", "neck", "jaw", "eyes"];
const DEFORMATION_MAX_RESOLUTION: usize = 128;

const MOUTH_ROW: usize = 60;
const UPPER_LIP_ROWS: [usize; 2] = [57, 58];
const CAVITY_ROWS: [usize; 3] = [59, 60, 61];
const LOWER_LIP_ROWS: [usize; 2] = [62, 63];
const MOUTH_HALF_WIDTH: f64 = 0.45;
const CAVITY_DEPTH: f64 = 0.025;
const LIP_GAP: f64 = 0.004;
const EYE: (f64, f64) = (0.43 * PI, 0.33);

fn theta_of_row(j: usize) -> f64 {
    PI * j as f64 / NV as f64
}

fn mouth_theta() -> f64 {
    theta_of_row(MOUTH_ROW)
}

fn phi_of(u: f64) -> f64 {
    2.0 * PI * u - PI
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Horizontal mouth profile: 1 at the center, 0 beyond the corners.
fn mouth_weight(phi: f64) -> f64 {
    if phi.abs() >= MOUTH_HALF_WIDTH {
        return 0.0;
    }
    (0.5 * PI * phi / MOUTH_HALF_WIDTH).cos().powi(2)
}

fn in_mouth(phi: f64) -> bool {
    mouth_weight(phi) > 0.05
}

fn unit_dir(theta: f64, phi: f64) -> Vec3d {
    [theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos()]
}

/// Great-circle distance between two (θ, φ) directions.
fn angular_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    math::dot3(unit_dir(a.0, a.1), unit_dir(b.0, b.1)).clamp(-1.0, 1.0).acos()
}

/// Compactly supported bump, `(1 − d²/ρ²)²` inside radius `ρ`.
fn bump(d: f64, rho: f64) -> f64 {
    if d >= rho {
        0.0
    } else {
        let q = 1.0 - (d / rho).powi(2);
        q * q
    }
}

fn gauss(theta: f64, phi: f64, center: (f64, f64), s: (f64, f64)) -> f64 {
    (-((theta - center.0) / s.0).powi(2) - ((phi - center.1) / s.1).powi(2)).exp()
}

/// Colatitude of row `j` at longitude `phi`, with the lip rows pulled onto
/// the mouth line and the cavity rows folded between them.
fn remapped_theta(j: usize, phi: f64) -> f64 {
    let base = theta_of_row(j);
    let w = mouth_weight(phi);
    if w == 0.0 {
        return base;
    }
    let tm = mouth_theta();
    let (top, bottom) = (54usize, 66usize);
    let upper_end = *UPPER_LIP_ROWS.last().unwrap();
    let lower_start = LOWER_LIP_ROWS[0];
    let target = if (top..=upper_end).contains(&j) {
        let s = (j - top) as f64 / (upper_end - top) as f64;
        theta_of_row(top) + s * (tm - 0.5 * LIP_GAP - theta_of_row(top))
    } else if CAVITY_ROWS.contains(&j) {
        tm + (cavity_param(j) - 0.5) * LIP_GAP * 0.6
    } else if (lower_start..=bottom).contains(&j) {
        let s = (j - lower_start) as f64 / (bottom - lower_start) as f64;
        tm + 0.5 * LIP_GAP + s * (theta_of_row(bottom) - tm - 0.5 * LIP_GAP)
    } else {
        base
    };
    base + w * (target - base)
}

/// Position of a cavity row across the pocket, in (0, 1).
fn cavity_param(j: usize) -> f64 {
    let k = CAVITY_ROWS.iter().position(|&r| r == j).unwrap();
    (k + 1) as f64 / (CAVITY_ROWS.len() + 1) as f64
}

fn region_of(j: usize, phi: f64) -> Region {
    if !in_mouth(phi) {
        return Region::Skin;
    }
    if UPPER_LIP_ROWS.contains(&j) {
        Region::UpperLip
    } else if LOWER_LIP_ROWS.contains(&j) {
        Region::LowerLip
    } else if CAVITY_ROWS.contains(&j) {
        let t = (PI * cavity_param(j)).sin() * mouth_weight(phi);
        Region::Cavity { depth: t as f32 }
    } else {
        Region::Skin
    }
}

/// Outward surface relief in meters at (θ, φ).
fn relief(theta: f64, phi: f64) -> f64 {
    let nose = 0.022 * gauss(theta, phi, (0.5 * PI, 0.0), (0.12, 0.16));
    let brow = 0.004 * gauss(theta, phi, (0.38 * PI, 0.0), (0.05, 0.5));
    let chin = 0.006 * gauss(theta, phi, (0.75 * PI, 0.0), (0.08, 0.25));
    let lips = 0.004 * mouth_weight(phi) * gauss(theta, 0.0, (mouth_theta(), 0.0), (0.06, 1.0));
    let sockets =
        -0.004 * (gauss(theta, phi, EYE, (0.06, 0.1)) + gauss(theta, phi, (EYE.0, -EYE.1), (0.06, 0.1)));
    nose + brow + chin + lips + sockets
}

fn surface_point(theta: f64, phi: f64) -> (Vec3d, Vec3d) {
    let d = unit_dir(theta, phi);
    let p = [RADII[0] * d[0], RADII[1] * d[1], RADII[2] * d[2]];
    let n = {
        let g = [p[0] / RADII[0].powi(2), p[1] / RADII[1].powi(2), p[2] / RADII[2].powi(2)];
        let l = math::norm3(g).max(1e-12);
        math::scale3(g, 1.0 / l)
    };
    (math::add3(p, math::scale3(n, relief(theta, phi))), n)
}

struct Vertex {
    pos: Vec3d,
    normal: Vec3d,
    theta: f64,
    phi: f64,
    region: Region,
}

fn vertex_grid() -> Vec<Vertex> {
    let mut out = Vec::with_capacity((NU + 1) * (NV + 1));
    for j in 0..=NV {
        for i in 0..=NU {
            let phi = phi_of(i as f64 / NU as f64);
            let region = region_of(j, phi);
            let theta = remapped_theta(j, phi);
            let (mut pos, normal) = surface_point(theta, phi);
            if let Region::Cavity { depth } = region {
                pos = math::add3(pos, math::scale3(normal, -CAVITY_DEPTH * depth as f64));
            }
            out.push(Vertex {
                pos,
                normal,
                theta: theta_of_row(j),
                phi,
                region,
            });
        }
    }
    out
}

fn grid_index(i: usize, j: usize) -> usize {
    j * (NU + 1) + i
}

fn triangles() -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(2 * NU * NV);
    for j in 0..NV {
        for i in 0..NU {
            let a = grid_index(i, j) as u32;
            let b = grid_index(i + 1, j) as u32;
            let c = grid_index(i, j + 1) as u32;
            let d = grid_index(i + 1, j + 1) as u32;
            out.push([a, c, b]);
            out.push([b, c, d]);
        }
    }
    out
}

fn skinning_row(v: &Vertex) -> [f64; 4] {
    let mw = mouth_weight(v.phi);
    // the jaw line follows the mouth between the corners and drops along the cheeks
    let line = mouth_theta() + 0.12 * (1.0 - mw);
    let below = smoothstep(line, line + 0.05, v.theta);
    let front = smoothstep(-0.2, 0.35, v.phi.cos());
    let above_neck = 1.0 - smoothstep(0.84 * PI, 0.92 * PI, v.theta);
    let jaw = below * front * above_neck;
    let eyes = 0.9 * (gauss(v.theta, v.phi, EYE, (0.06, 0.08)) + gauss(v.theta, v.phi, (EYE.0, -EYE.1), (0.06, 0.08)));
    let root = smoothstep(0.86 * PI, 0.97 * PI, v.theta);
    let mut w = [root, 0.0, jaw, eyes.min(1.0)];
    let total = w[0] + w[2] + w[3];
    if total > 1.0 {
        for x in &mut w {
            *x /= total;
        }
    }
    w[1] = 1.0 - (w[0] + w[2] + w[3]);
    w
}

struct Bump {
    center: (f64, f64),
    radius: f64,
    mirror: bool,
    amp: f64,
    /// World direction, or radial when `None`.
    dir: Option<Vec3d>,
}

fn expression_bumps() -> [Bump; EXPRESSION_DIM] {
    let tm = mouth_theta();
    let b = |center, radius, mirror, amp, dir| Bump {
        center,
        radius,
        mirror,
        amp,
        dir,
    };
    [
        b((0.38 * PI, -0.3), 0.25, false, 0.006, Some([0.0, 1.0, 0.0])),
        b((0.38 * PI, 0.3), 0.25, false, 0.006, Some([0.0, 1.0, 0.0])),
        b((tm, -0.42), 0.22, false, 0.008, Some([-0.3, 0.85, -0.4])),
        b((tm, 0.42), 0.22, false, 0.008, Some([0.3, 0.85, -0.4])),
        b((tm - 0.05, 0.0), 0.2, false, 0.005, Some([0.0, 0.95, 0.3])),
        b((tm + 0.06, 0.0), 0.2, false, 0.005, Some([0.0, -0.95, 0.2])),
        b((tm, 0.0), 0.25, false, 0.008, None),
        b((0.58 * PI, 0.55), 0.25, true, 0.01, None),
        b((0.47 * PI, 0.0), 0.15, false, 0.004, Some([0.0, 1.0, 0.0])),
        b(EYE, 0.12, true, 0.004, Some([0.0, -1.0, 0.0])),
    ]
}

impl Bump {
    fn weight(&self, theta: f64, phi: f64) -> f64 {
        let mut w = bump(angular_distance((theta, phi), self.center), self.radius);
        if self.mirror {
            w += bump(angular_distance((theta, phi), (self.center.0, -self.center.1)), self.radius);
        }
        w
    }

    fn displacement(&self, theta: f64, phi: f64, normal: Vec3d) -> Vec3d {
        let w = self.amp * self.weight(theta, phi);
        let d = match self.dir {
            Some(d) => {
                let l = math::norm3(d);
                let mut d = math::scale3(d, 1.0 / l);
                if self.mirror && phi > 0.0 {
                    d[0] = -d[0];
                }
                d
            }
            None => normal,
        };
        math::scale3(d, w)
    }
}

fn shape_factor(k: usize, p: Vec3d) -> f64 {
    let (a, b, c) = (p[0] / RADII[0], p[1] / RADII[1], p[2] / RADII[2]);
    match k {
        0 => 1.0,
        1 => a * a,
        2 => b,
        3 => c * c - 0.5,
        4 => b * b,
        5 => b * c,
        6 => c.max(0.0).powi(3),
        _ => a * a * b,
    }
}

fn build_model() -> Result<HeadModel> {
    let verts = vertex_grid();
    let v = verts.len();
    let k = JOINTS.len();
    let dp = 9 * (k - 1);
    let jaw = 2;

    let mut shape_basis = vec![0.0f32; v * 3 * SHAPE_DIM];
    let mut expression_basis = vec![0.0f32; v * 3 * EXPRESSION_DIM];
    let mut pose_basis = vec![0.0f32; v * 3 * dp];
    let mut skinning_weights = vec![0.0f32; v * k];
    let bumps = expression_bumps();
    for (vi, vx) in verts.iter().enumerate() {
        for s in 0..SHAPE_DIM {
            let f = 0.008 * shape_factor(s, vx.pos);
            for c in 0..3 {
                shape_basis[(vi * 3 + c) * SHAPE_DIM + s] = (f * vx.normal[c]) as f32;
            }
        }
        for (e, b) in bumps.iter().enumerate() {
            let d = b.displacement(vx.theta, vx.phi, vx.normal);
            for c in 0..3 {
                expression_basis[(vi * 3 + c) * EXPRESSION_DIM + e] = d[c] as f32;
            }
        }
        let w = skinning_row(vx);
        for (j, wj) in w.iter().enumerate() {
            skinning_weights[vi * k + j] = *wj as f32;
        }
        // jaw correctives: chin pushes forward and cheeks widen as the jaw opens
        let base = (jaw - 1) * 9;
        let chin = w[2] * gauss(vx.theta, vx.phi, (0.72 * PI, 0.0), (0.15, 0.5));
        pose_basis[(vi * 3 + 2) * dp + base + 7] = (0.015 * chin) as f32;
        let cheek = w[2] * (1.0 - mouth_weight(vx.phi));
        pose_basis[vi * 3 * dp + base + 4] = (-0.01 * cheek * vx.pos[0].signum()) as f32;
        // neck bending bulges the lower back of the head slightly
        let nape = smoothstep(0.7 * PI, 0.9 * PI, vx.theta) * smoothstep(0.0, 0.6, -vx.phi.cos());
        pose_basis[(vi * 3 + 2) * dp + 5] = (-0.005 * nape) as f32;
    }

    let mut joint_regressor = vec![0.0f32; k * v];
    let mut set_mean = |joint: usize, members: &[usize]| {
        let w = 1.0 / members.len() as f32;
        for &m in members {
            joint_regressor[joint * v + m] += w;
        }
    };
    set_mean(0, &(0..NU).map(|i| grid_index(i, 88)).collect::<Vec<_>>());
    set_mean(1, &(0..NU).map(|i| grid_index(i, 80)).collect::<Vec<_>>());
    set_mean(2, &[grid_index(NU / 4, 56), grid_index(3 * NU / 4, 56)]);
    let eye_members: Vec<usize> = verts
        .iter()
        .enumerate()
        .filter(|(_, x)| {
            angular_distance((x.theta, x.phi), EYE) < 0.06 || angular_distance((x.theta, x.phi), (EYE.0, -EYE.1)) < 0.06
        })
        .map(|(i, _)| i)
        .collect();
    if eye_members.is_empty() {
        return Err(Error::Model("fixture eye region is empty".into()));
    }
    set_mean(3, &eye_members);

    let tris = triangles();
    let uv_coords = (0..=NV)
        .flat_map(|j| (0..=NU).map(move |i| [i as f32 / NU as f32, j as f32 / NV as f32]))
        .collect();
    let model = HeadModel {
        template_vertices: verts.iter().map(|x| math::to_f32(x.pos)).collect(),
        uv_triangles: tris.clone(),
        triangles: tris,
        uv_coords,
        shape_dim: SHAPE_DIM,
        shape_basis,
        expression_dim: EXPRESSION_DIM,
        expression_basis,
        pose_basis,
        joint_regressor,
        skinning_weights,
        joint_parents: vec![-1, 0, 1, 1],
        joint_names: JOINTS.iter().map(|s| s.to_string()).collect(),
        regions: verts.iter().map(|x| x.region).collect(),
    };
    derive_mouth_cavity_weights(&model)
}

/// Smoothly varying low-amplitude field with seeded phases.
struct Wobble {
    phase: [f64; 6],
}

impl Wobble {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            phase: std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI)),
        }
    }

    fn at(&self, theta: f64, phi: f64, k: usize) -> f64 {
        let p = &self.phase;
        match k % 3 {
            0 => (7.0 * phi + p[0]).sin() * (5.0 * theta + p[1]).sin(),
            1 => (6.0 * phi + p[2]).cos() * (4.0 * theta + p[3]).sin(),
            _ => (3.0 * phi + p[4]).sin() * (5.0 * theta + p[5]).cos(),
        }
    }
}

fn mix3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + t * (b[c] - a[c]))
}

fn albedo(theta: f64, phi: f64, v: f64, wob: &Wobble) -> [f64; 3] {
    let skin = [0.80, 0.62, 0.52];
    let mut c = [0, 1, 2].map(|k| skin[k] + 0.03 * wob.at(theta, phi, k));
    let hair = [0.22, 0.15, 0.10];
    let top = 1.0 - smoothstep(0.24 * PI, 0.32 * PI, theta);
    let back = smoothstep(-0.1, -0.45, phi.cos()) * (1.0 - smoothstep(0.55 * PI, 0.65 * PI, theta));
    c = mix3(c, hair, top.max(back));
    for side in [-1.0, 1.0] {
        let brow = gauss(theta, phi, (0.375 * PI, side * 0.3), (0.02, 0.12));
        c = mix3(c, hair, brow);
        let eye_d = angular_distance((theta, phi), (EYE.0, side * EYE.1));
        let sclera = 1.0 - smoothstep(0.04, 0.055, eye_d);
        c = mix3(c, [0.92, 0.92, 0.90], sclera);
        let iris = 1.0 - smoothstep(0.018, 0.026, eye_d);
        c = mix3(c, [0.25, 0.18, 0.12], iris);
    }
    // lip and cavity bands are laid out by grid row in v
    let row = v * NV as f64;
    let mw = mouth_weight(phi);
    if mw > 0.0 {
        let lip = smoothstep(55.5, 56.5, row) * (1.0 - smoothstep(63.5, 64.5, row));
        c = mix3(c, [0.72, 0.36, 0.38], lip * mw.sqrt());
        let cavity = smoothstep(58.7, 59.3, row) * (1.0 - smoothstep(61.7, 62.3, row));
        c = mix3(c, [0.25, 0.06, 0.08], cavity * mw.sqrt());
    }
    c
}

fn attribute_maps(r: usize, cfg: &ActivationConfig, rng: &mut ChaCha8Rng) -> AttributeMaps {
    let wob_pos = Wobble::new(rng);
    let wob_scale = Wobble::new(rng);
    let wob_rot = Wobble::new(rng);
    let wob_col = Wobble::new(rng);
    let wob_opa = Wobble::new(rng);
    let s_max = cfg.s_max as f64;
    let bias = math::softplus_inv(cfg.s_init as f64 - s_max);
    let mean_radius = (RADII[0] + RADII[1] + RADII[2]) / 3.0;
    let n = r * r;

    let texel = |t: usize| {
        let (i, j) = (t % r, t / r);
        let u = (i as f64 + 0.5) / r as f64;
        let v = (j as f64 + 0.5) / r as f64;
        (PI * v, phi_of(u), v)
    };
    // 16 channels: offset 3, log-scale 3, rotation 4, color 3, opacity 1
    let mut rows = vec![[0.0f32; 14]; n];
    rows.par_iter_mut().enumerate().for_each(|(t, row)| {
        let (theta, phi, v) = texel(t);
        for k in 0..3 {
            row[k] = (0.01 * wob_pos.at(theta, phi, k)) as f32;
        }
        let spacing = mean_radius * PI / r as f64 * (2.0 * theta.sin()).max(0.1).sqrt();
        let aniso = [1.0, 1.0, 0.6];
        for k in 0..3 {
            let s = 0.9 * spacing * aniso[k] * (1.0 + 0.1 * wob_scale.at(theta, phi, k));
            row[3 + k] = (math::softplus_inv(-s.ln() - s_max) - bias) as f32;
        }
        row[6] = 1.0;
        row[7] = (0.15 * wob_rot.at(theta, phi, 0)) as f32;
        row[8] = (0.15 * wob_rot.at(theta, phi, 1)) as f32;
        row[9] = (0.1 * wob_rot.at(theta, phi, 2)) as f32;
        let col = albedo(theta, phi, v, &wob_col);
        for k in 0..3 {
            row[10 + k] = rgb_to_sh0(col[k] as f32);
        }
        row[13] = (5.0 + 0.5 * wob_opa.at(theta, phi, 0)) as f32;
    });
    let mut maps = AttributeMaps::zeros(r, 0);
    let fill = |data: &mut Vec<f32>, first: usize, channels: usize| {
        for c in 0..channels {
            for (t, row) in rows.iter().enumerate() {
                data[c * n + t] = row[first + c];
            }
        }
    };
    fill(&mut maps.position_offset.data, 0, 3);
    fill(&mut maps.log_scale.data, 3, 3);
    fill(&mut maps.rotation.data, 6, 4);
    fill(&mut maps.color.data, 10, 3);
    fill(&mut maps.opacity_logit.data, 13, 1);
    maps
}

fn deformation_basis(r: usize) -> LinearDeformationBasis {
    let mut basis = LinearDeformationBasis::zeros(r, EXPRESSION_DIM);
    let bumps = expression_bumps();
    let tm = mouth_theta();
    let jaw_bumps = [
        Bump {
            center: (tm + 0.12, 0.0),
            radius: 0.45,
            mirror: false,
            amp: 0.01,
            dir: Some([0.0, -0.4, 0.3]),
        },
        Bump {
            center: (tm + 0.12, 0.0),
            radius: 0.35,
            mirror: false,
            amp: 0.004,
            dir: Some([1.0, 0.0, 0.0]),
        },
        Bump {
            center: (tm + 0.12, 0.0),
            radius: 0.35,
            mirror: false,
            amp: 0.004,
            dir: Some([0.0, 1.0, 0.0]),
        },
    ];
    let drivers: Vec<(&Bump, f64, f64)> = bumps
        .iter()
        .enumerate()
        .map(|(k, b)| (b, if k % 2 == 0 { -0.15 } else { 0.1 }, 0.08))
        .chain(jaw_bumps.iter().map(|b| (b, 0.3, 0.1)))
        .collect();
    for (d, (b, ds, dq)) in drivers.iter().enumerate() {
        for t in 0..r * r {
            let (i, j) = (t % r, t / r);
            let theta = PI * (j as f64 + 0.5) / r as f64;
            let phi = phi_of((i as f64 + 0.5) / r as f64);
            let w = b.weight(theta, phi);
            if w == 0.0 {
                continue;
            }
            let normal = unit_dir(theta, phi);
            let dm = math::scale3(b.displacement(theta, phi, normal), 0.2);
            for c in 0..3 {
                basis.plane_mut(d, c)[t] = dm[c] as f32;
                basis.plane_mut(d, 3 + c)[t] = (ds * w) as f32;
            }
            basis.plane_mut(d, 7)[t] = (dq * w) as f32;
        }
    }
    basis
}

/// Deterministic procedural head model and avatar at UV resolution `r`.
/// The same `(seed, r)` always yields bitwise-identical output.
pub fn generate_synthetic_fixture(seed: u64, r: usize) -> Result<(HeadModel, AvatarAsset)> {
    if !FIXTURE_RESOLUTIONS.contains(&r) {
        return Err(Error::param(format!(
            "fixture resolution must be one of {FIXTURE_RESOLUTIONS:?}, got {r}"
        )));
    }
    let model = build_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity_shape: Vec<f32> = (0..SHAPE_DIM).map(|_| rng.random_range(-0.8f32..0.8)).collect();
    let config = ActivationConfig::default();
    let maps = attribute_maps(r, &config, &mut rng);
    let deformation = deformation_basis(r.min(DEFORMATION_MAX_RESOLUTION));
    let meta = AssetMeta {
        identity: format!("synthetic-{seed}"),
        identity_shape,
        seed: Some(seed),
        ..AssetMeta::default()
    };
    let asset = assemble_asset(model.clone(), maps, config, Some(deformation), meta)?;
    Ok((model, asset))
}
