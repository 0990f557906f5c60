//! UV-grid construction, bilinear attribute sampling and barycentric
//! surface interpolation.
//!
//! Texel `(i, j)` of an `R × R` plane has its center at
//! `((i + 0.5) / R, (j + 0.5) / R)`; `j` indexes `v`. Planes are stored
//! row-major (`j * R + i`), channels planar.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::{HeadModel, Mesh};
use crate::math::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvSample {
    /// Flat texel index `j * R + i`.
    pub texel: u32,
    pub uv: [f32; 2],
    pub triangle: u32,
    pub barycentric: [f32; 3],
}

/// Texel centers covered by the UV atlas, in row-major texel order.
#[derive(Debug, Clone, PartialEq)]
pub struct UvGrid {
    pub resolution: usize,
    pub samples: Vec<UvSample>,
    /// Zero-area UV triangles that were ignored.
    pub degenerate_triangles: usize,
}

impl UvGrid {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn uvs(&self) -> Vec<[f32; 2]> {
        self.samples.iter().map(|s| s.uv).collect()
    }
}

pub fn texel_center(index: usize, resolution: usize) -> f32 {
    ((index as f64 + 0.5) / resolution as f64) as f32
}

/// Rasterizes the model's UV triangles over texel centers. Texels on shared
/// edges go to the lowest triangle index.
pub fn build_uv_grid(model: &HeadModel, resolution: usize) -> Result<UvGrid> {
    if resolution == 0 {
        return Err(Error::param("uv grid resolution must be positive"));
    }
    if model.uv_triangles.len() != model.triangles.len() {
        return Err(Error::Model("uv_triangles and triangles differ in length".into()));
    }
    let r = resolution;
    let rf = r as f64;
    const UNCLAIMED: u32 = u32::MAX;
    let mut owner = vec![UNCLAIMED; r * r];
    let mut bary = vec![[0.0f32; 3]; r * r];
    let mut degenerate = 0usize;
    for (t, tri) in model.uv_triangles.iter().enumerate() {
        let mut p = [[0.0f64; 2]; 3];
        for (k, &idx) in tri.iter().enumerate() {
            let uv = model
                .uv_coords
                .get(idx as usize)
                .ok_or_else(|| Error::Model(format!("uv_triangles[{t}] out of range")))?;
            p[k] = [uv[0] as f64, uv[1] as f64];
        }
        let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        if area2.abs() < 1e-14 {
            degenerate += 1;
            continue;
        }
        let min_u = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_u = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_v = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_v = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let i0 = ((min_u * rf - 0.5).floor().max(0.0)) as usize;
        let i1 = ((max_u * rf - 0.5).ceil().min(rf - 1.0)).max(0.0) as usize;
        let j0 = ((min_v * rf - 0.5).floor().max(0.0)) as usize;
        let j1 = ((max_v * rf - 0.5).ceil().min(rf - 1.0)).max(0.0) as usize;
        for j in j0..=j1 {
            let y = (j as f64 + 0.5) / rf;
            for i in i0..=i1 {
                let texel = j * r + i;
                if owner[texel] != UNCLAIMED {
                    continue;
                }
                let x = (i as f64 + 0.5) / rf;
                if let Some(b) = barycentric_2d(&p, area2, [x, y]) {
                    owner[texel] = t as u32;
                    bary[texel] = b;
                }
            }
        }
    }
    if degenerate > 0 {
        log::warn!("build_uv_grid: skipped {degenerate} zero-area uv triangles");
    }
    let samples = owner
        .iter()
        .enumerate()
        .filter(|(_, &o)| o != UNCLAIMED)
        .map(|(texel, &o)| UvSample {
            texel: texel as u32,
            uv: [texel_center(texel % r, r), texel_center(texel / r, r)],
            triangle: o,
            barycentric: bary[texel],
        })
        .collect();
    Ok(UvGrid {
        resolution: r,
        samples,
        degenerate_triangles: degenerate,
    })
}

/// Barycentric coordinates of `q` in the 2D triangle `p`, or `None` if
/// outside. Edges are inclusive.
fn barycentric_2d(p: &[[f64; 2]; 3], area2: f64, q: [f64; 2]) -> Option<[f32; 3]> {
    let edge = |a: [f64; 2], b: [f64; 2]| {
        ((b[0] - a[0]) * (q[1] - a[1]) - (q[0] - a[0]) * (b[1] - a[1])) / area2
    };
    let l0 = edge(p[1], p[2]);
    let l1 = edge(p[2], p[0]);
    let l2 = edge(p[0], p[1]);
    const EPS: f64 = -1e-12;
    if l0 < EPS || l1 < EPS || l2 < EPS {
        return None;
    }
    let (l0, l1, l2) = (l0.max(0.0), l1.max(0.0), l2.max(0.0));
    let s = l0 + l1 + l2;
    Some([(l0 / s) as f32, (l1 / s) as f32, (l2 / s) as f32])
}

/// A named group of planar channels (e.g. `rotation` has 4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGroup {
    pub name: String,
    pub channels: usize,
    #[serde(skip)]
    pub data: Vec<f32>,
}

impl ChannelGroup {
    pub fn zeros(name: &str, channels: usize, resolution: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            data: vec![0.0; channels * resolution * resolution],
        }
    }

    pub fn plane(&self, channel: usize, resolution: usize) -> &[f32] {
        let n = resolution * resolution;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize, resolution: usize) -> &mut [f32] {
        let n = resolution * resolution;
        &mut self.data[channel * n..(channel + 1) * n]
    }
}

pub const POSITION_OFFSET: &str = "position_offset";
pub const LOG_SCALE: &str = "log_scale";
pub const ROTATION: &str = "rotation";
pub const COLOR: &str = "color";
pub const OPACITY_LOGIT: &str = "opacity_logit";

/// Canonical pre-activation attribute planes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMaps {
    pub resolution: usize,
    pub sh_degree: usize,
    pub position_offset: ChannelGroup,
    pub log_scale: ChannelGroup,
    pub rotation: ChannelGroup,
    pub color: ChannelGroup,
    pub opacity_logit: ChannelGroup,
}

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

impl AttributeMaps {
    pub fn zeros(resolution: usize, sh_degree: usize) -> Self {
        Self {
            resolution,
            sh_degree,
            position_offset: ChannelGroup::zeros(POSITION_OFFSET, 3, resolution),
            log_scale: ChannelGroup::zeros(LOG_SCALE, 3, resolution),
            rotation: ChannelGroup::zeros(ROTATION, 4, resolution),
            color: ChannelGroup::zeros(COLOR, 3 * sh_coeff_count(sh_degree), resolution),
            opacity_logit: ChannelGroup::zeros(OPACITY_LOGIT, 1, resolution),
        }
    }

    pub fn groups(&self) -> [&ChannelGroup; 5] {
        [
            &self.position_offset,
            &self.log_scale,
            &self.rotation,
            &self.color,
            &self.opacity_logit,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut ChannelGroup; 5] {
        [
            &mut self.position_offset,
            &mut self.log_scale,
            &mut self.rotation,
            &mut self.color,
            &mut self.opacity_logit,
        ]
    }

    pub fn total_channels(&self) -> usize {
        self.groups().iter().map(|g| g.channels).sum()
    }
}

/// Four-texel bilinear footprint of one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub texels: [u32; 4],
    pub weights: [f32; 4],
}

/// Continuous texel coordinate along one axis: clamped texel index pair and
/// interpolation fraction. Positions within 1e-9 texels of a center snap to it.
fn axis(coord: f32, r: usize) -> (usize, usize, f32) {
    let x = coord.clamp(0.0, 1.0) as f64 * r as f64 - 0.5;
    let rounded = x.round();
    let x = if (x - rounded).abs() < 1e-9 { rounded } else { x };
    let base = x.floor();
    let frac = (x - base) as f32;
    let i0 = base.clamp(0.0, (r - 1) as f64) as usize;
    let i1 = (base + 1.0).clamp(0.0, (r - 1) as f64) as usize;
    (i0, i1, frac)
}

/// Bilinear footprint with texel-center alignment and clamp-to-edge.
/// Coordinates outside `[0, 1]` are clamped; NaN is rejected.
pub fn stencil(uv: [f32; 2], resolution: usize) -> Result<Stencil> {
    if uv[0].is_nan() || uv[1].is_nan() {
        return Err(Error::param("NaN uv coordinate"));
    }
    let r = resolution;
    let (i0, i1, fx) = axis(uv[0], r);
    let (j0, j1, fy) = axis(uv[1], r);
    Ok(Stencil {
        texels: [
            (j0 * r + i0) as u32,
            (j0 * r + i1) as u32,
            (j1 * r + i0) as u32,
            (j1 * r + i1) as u32,
        ],
        weights: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    })
}

pub fn stencils(points: &[[f32; 2]], resolution: usize) -> Result<Vec<Stencil>> {
    points.iter().map(|&p| stencil(p, resolution)).collect()
}

#[inline]
pub fn apply_stencil(plane: &[f32], s: &Stencil) -> f32 {
    let w = s.weights;
    let t = s.texels;
    w[0] * plane[t[0] as usize]
        + w[1] * plane[t[1] as usize]
        + w[2] * plane[t[2] as usize]
        + w[3] * plane[t[3] as usize]
}

/// Samples every channel of `group` at each stencil: output row-major
/// `N × channels`.
pub fn sample_group(group: &ChannelGroup, resolution: usize, stencils: &[Stencil]) -> Vec<f32> {
    let c = group.channels;
    let mut out = vec![0.0f32; stencils.len() * c];
    out.par_chunks_mut(c * 4096)
        .enumerate()
        .for_each(|(chunk, dst)| {
            for (o, row) in dst.chunks_exact_mut(c).enumerate() {
                let s = &stencils[chunk * 4096 + o];
                for (ch, x) in row.iter_mut().enumerate() {
                    *x = apply_stencil(group.plane(ch, resolution), s);
                }
            }
        });
    out
}

/// Per-point attribute rows of every group, in the order of
/// [`AttributeMaps::groups`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAttributes {
    pub position_offset: Vec<f32>,
    pub log_scale: Vec<f32>,
    pub rotation: Vec<f32>,
    pub color: Vec<f32>,
    pub opacity_logit: Vec<f32>,
}

impl SampledAttributes {
    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logit.is_empty()
    }
}

/// `GridSample(F_uv, x_uv)`: bilinear sampling of every channel.
pub fn grid_sample(maps: &AttributeMaps, points: &[[f32; 2]]) -> Result<SampledAttributes> {
    let st = stencils(points, maps.resolution)?;
    Ok(sample_with_stencils(maps, &st))
}

pub fn sample_with_stencils(maps: &AttributeMaps, st: &[Stencil]) -> SampledAttributes {
    let r = maps.resolution;
    SampledAttributes {
        position_offset: sample_group(&maps.position_offset, r, st),
        log_scale: sample_group(&maps.log_scale, r, st),
        rotation: sample_group(&maps.rotation, r, st),
        color: sample_group(&maps.color, r, st),
        opacity_logit: sample_group(&maps.opacity_logit, r, st),
    }
}

/// Barycentric interpolation of `mesh` at every grid sample.
pub fn surface_interpolate(mesh: &Mesh, triangles: &[[u32; 3]], grid: &UvGrid) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    surface_interpolate_into(mesh, triangles, grid, &mut out)?;
    Ok(out)
}

pub fn surface_interpolate_into(
    mesh: &Mesh,
    triangles: &[[u32; 3]],
    grid: &UvGrid,
    out: &mut Vec<Vec3>,
) -> Result<()> {
    let nv = mesh.vertices.len();
    for s in &grid.samples {
        let ok = triangles
            .get(s.triangle as usize)
            .is_some_and(|t| t.iter().all(|&i| (i as usize) < nv));
        if !ok {
            return Err(Error::Asset(format!(
                "uv sample references triangle {} which is out of range",
                s.triangle
            )));
        }
    }
    out.resize(grid.samples.len(), [0.0; 3]);
    out.par_chunks_mut(4096)
        .zip(grid.samples.par_chunks(4096))
        .for_each(|(dst, samples)| {
            for (o, s) in dst.iter_mut().zip(samples) {
                let t = triangles[s.triangle as usize];
                let mut p = [0.0f64; 3];
                for k in 0..3 {
                    let v = math::to_f64(mesh.vertices[t[k] as usize]);
                    p = math::add3(p, math::scale3(v, s.barycentric[k] as f64));
                }
                *o = math::to_f32(p);
            }
        });
    Ok(())
}
