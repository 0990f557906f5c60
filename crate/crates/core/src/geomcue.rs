//! Geometry-derived cues: displacement fields of the head model, their UV
//! bake for identity conditioning, and displacement-colored mesh renders.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::{self, ExpressionState, HeadModel, Mesh};
use crate::math::{self, Vec3};
use crate::rasterizer::{Camera, NEAR_PLANE};
use crate::uvatlas::{self, UvGrid};

pub const DEFAULT_ENCODING_SCALE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementKind {
    Expression,
    Shape,
}

/// Per-vertex displacement relative to the neutral head.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub kind: DisplacementKind,
    pub vectors: Vec<Vec3>,
}

impl DisplacementField {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn max_norm(&self) -> f32 {
        self.vectors
            .iter()
            .map(|v| math::norm3(math::to_f64(*v)) as f32)
            .fold(0.0, f32::max)
    }
}

/// How jaw rotation enters the expression displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JawMode {
    /// Jaw pose is applied through skinning and pose correctives.
    #[default]
    Skinning,
    /// Only ψ contributes; the jaw stays at rest.
    Excluded,
}

/// `M(0, ψ, θ_jaw) − M(0, 0, 0)`: neutral shape, every pose slot other than
/// the jaw at rest.
pub fn expression_displacement(model: &HeadModel, psi: &[f32], jaw: [f32; 3]) -> Result<DisplacementField> {
    expression_displacement_with(model, psi, jaw, JawMode::Skinning)
}

pub fn expression_displacement_with(
    model: &HeadModel,
    psi: &[f32],
    jaw: [f32; 3],
    mode: JawMode,
) -> Result<DisplacementField> {
    let jaw = match mode {
        JawMode::Skinning => jaw,
        JawMode::Excluded => [0.0; 3],
    };
    let posed = headmodel::articulate(model, &model.expression_state(psi, jaw)?)?;
    let rest = headmodel::articulate(model, &model.neutral_state())?;
    Ok(DisplacementField {
        kind: DisplacementKind::Expression,
        vectors: posed
            .vertices
            .iter()
            .zip(&rest.vertices)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect(),
    })
}

/// `M(β, 0, 0) − M(0, 0, 0) = S·β`.
pub fn shape_displacement(model: &HeadModel, beta: &[f32]) -> Result<DisplacementField> {
    let shaped = headmodel::shaped_template(model, beta)?;
    Ok(DisplacementField {
        kind: DisplacementKind::Shape,
        vectors: shaped
            .iter()
            .zip(&model.template_vertices)
            .map(|(s, t)| math::to_f32(math::sub3(*s, math::to_f64(*t))))
            .collect(),
    })
}

/// UV-space displacement map, three planar `R × R` channels (x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningMap {
    pub resolution: usize,
    pub planes: Vec<f32>,
    pub covered: Vec<bool>,
    /// The standard deviation the baked values were divided by; 1 when the
    /// field had no variance.
    pub scale: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSidecar {
    pub resolution: usize,
    pub channels: usize,
    pub layout: String,
    pub scale: f64,
    pub zero_variance: bool,
    pub covered_texels: usize,
}

impl ConditioningMap {
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.resolution * self.resolution;
        &self.planes[channel * n..(channel + 1) * n]
    }

    /// Population mean and standard deviation over covered texels and all
    /// channels.
    pub fn covered_stats(&self) -> (f64, f64) {
        covered_stats(&self.planes, &self.covered)
    }

    pub fn sidecar(&self) -> ConditioningSidecar {
        ConditioningSidecar {
            resolution: self.resolution,
            channels: 3,
            layout: "planar f32 little-endian, channel-major, row-major texels".into(),
            scale: self.scale,
            zero_variance: self.zero_variance,
            covered_texels: self.covered.iter().filter(|&&c| c).count(),
        }
    }

    /// Writes `<path>` as raw planar f32 and `<path>.json` as the sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.planes.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let json = serde_json::to_string_pretty(&self.sidecar())
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(side, json)?;
        Ok(())
    }
}

fn covered_stats(planes: &[f32], covered: &[bool]) -> (f64, f64) {
    let n = covered.len();
    let values = || {
        (0..3).flat_map(move |c| {
            covered
                .iter()
                .enumerate()
                .filter(|(_, &k)| k)
                .map(move |(t, _)| planes[c * n + t] as f64)
        })
    };
    let count = values().count();
    if count == 0 {
        return (0.0, 0.0);
    }
    let mean = values().sum::<f64>() / count as f64;
    let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var.sqrt())
}

/// Bakes `field` into UV space at resolution `r` and divides the map by its
/// standard deviation over covered texels. A field without variance is left
/// unnormalized and flagged.
pub fn bake_conditioning_map(model: &HeadModel, field: &DisplacementField, r: usize) -> Result<ConditioningMap> {
    let grid = uvatlas::build_uv_grid(model, r)?;
    bake_on_grid(model, field, &grid)
}

pub fn bake_on_grid(model: &HeadModel, field: &DisplacementField, grid: &UvGrid) -> Result<ConditioningMap> {
    if field.len() != model.vertex_count() {
        return Err(Error::param(format!(
            "displacement field has {} vectors, model has {} vertices",
            field.len(),
            model.vertex_count()
        )));
    }
    if !field.vectors.as_flattened().iter().all(|v| v.is_finite()) {
        return Err(Error::param("displacement field is not finite"));
    }
    let r = grid.resolution;
    let n = r * r;
    let mesh = Mesh {
        vertices: field.vectors.clone(),
    };
    let values = uvatlas::surface_interpolate(&mesh, &model.triangles, grid)?;
    let mut planes = vec![0.0f32; 3 * n];
    let mut covered = vec![false; n];
    for (s, v) in grid.samples.iter().zip(&values) {
        let t = s.texel as usize;
        covered[t] = true;
        for c in 0..3 {
            planes[c * n + t] = v[c];
        }
    }
    let (_, std) = covered_stats(&planes, &covered);
    let peak = planes.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let zero_variance = !(std > 1e-5 * peak) || std == 0.0;
    let scale = if zero_variance { 1.0 } else { std };
    if !zero_variance {
        for v in &mut planes {
            *v = (*v as f64 / std) as f32;
        }
    }
    Ok(ConditioningMap {
        resolution: r,
        planes,
        covered,
        scale,
        zero_variance,
    })
}

/// Displacement-colored rendering of the articulated head.
#[derive(Debug, Clone, PartialEq)]
pub struct CueImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f32; 3]>,
    pub encoding_scale: f32,
}

impl CueImage {
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn to_rgba8(&self) -> Vec<u8> {
        self.rgb
            .iter()
            .flat_map(|p| {
                let q = |c: f32| (c.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8;
                [q(p[0]), q(p[1]), q(p[2]), 255]
            })
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        crate::rasterizer::encode_png(
            std::io::BufWriter::new(file),
            self.width as u32,
            self.height as u32,
            &self.to_rgba8(),
        )
    }
}

/// `clamp(0.5 + d / (2·scale), 0, 1)` per axis.
#[inline]
pub fn encode_displacement(d: Vec3, scale: f32) -> [f32; 3] {
    d.map(|x| (0.5 + x / (2.0 * scale)).clamp(0.0, 1.0))
}

/// Renders the head articulated at `state`, colored by the expression
/// displacement of `(state.expression, jaw pose)` on the neutral-shape head.
/// The background encodes zero displacement.
pub fn render_cue(model: &HeadModel, state: &ExpressionState, cam: &Camera, encoding_scale: f32) -> Result<CueImage> {
    render_cue_with(model, state, cam, encoding_scale, JawMode::default())
}

/// Per-vertex cue colors for `state`. Only `state.expression` and the jaw
/// pose enter; the shape code does not.
pub fn cue_vertex_colors(
    model: &HeadModel,
    state: &ExpressionState,
    encoding_scale: f32,
    jaw_mode: JawMode,
) -> Result<Vec<[f32; 3]>> {
    let jaw = state
        .pose
        .get(model.jaw_joint()?)
        .copied()
        .ok_or_else(|| Error::param("pose is missing the jaw joint"))?;
    let field = expression_displacement_with(model, &state.expression, jaw, jaw_mode)?;
    Ok(field
        .vectors
        .iter()
        .map(|d| encode_displacement(*d, encoding_scale))
        .collect())
}

pub fn render_cue_with(
    model: &HeadModel,
    state: &ExpressionState,
    cam: &Camera,
    encoding_scale: f32,
    jaw_mode: JawMode,
) -> Result<CueImage> {
    if !(encoding_scale > 0.0 && encoding_scale.is_finite()) {
        return Err(Error::param("encoding scale must be positive"));
    }
    cam.validate()?;
    let colors = cue_vertex_colors(model, state, encoding_scale, jaw_mode)?;
    let mesh = headmodel::articulate(model, state)?;
    let bg = encode_displacement([0.0; 3], encoding_scale);
    let rgb = rasterize_colored_mesh(cam, &mesh.vertices, &model.triangles, &colors, bg)?;
    Ok(CueImage {
        width: cam.width as usize,
        height: cam.height as usize,
        rgb,
        encoding_scale,
    })
}

const BAND_ROWS: usize = 16;

struct ScreenTri {
    p: [[f32; 2]; 3],
    inv_z: [f32; 3],
    area: f32,
    ymin: usize,
    ymax: usize,
    xmin: usize,
    xmax: usize,
}

/// Z-buffered triangle fill with perspective-correct color interpolation.
/// Pixels are covered when their center lies inside or on a triangle edge;
/// at equal depth the earlier triangle is kept. Triangles crossing the near
/// plane are skipped.
pub fn rasterize_colored_mesh(
    cam: &Camera,
    vertices: &[Vec3],
    triangles: &[[u32; 3]],
    colors: &[[f32; 3]],
    background: [f32; 3],
) -> Result<Vec<[f32; 3]>> {
    cam.validate()?;
    if colors.len() != vertices.len() {
        return Err(Error::param("one color per vertex required"));
    }
    if triangles.iter().flatten().any(|&i| i as usize >= vertices.len()) {
        return Err(Error::param("triangle index out of range"));
    }
    let (w, h) = (cam.width as usize, cam.height as usize);
    let screen: Vec<[f32; 3]> = vertices
        .par_iter()
        .map(|&v| {
            let p = cam.to_camera(v);
            [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy, p[2]]
        })
        .collect();
    let tris: Vec<Option<ScreenTri>> = triangles
        .par_iter()
        .map(|t| {
            let v = t.map(|i| screen[i as usize]);
            if v.iter().any(|p| !(p[2] > NEAR_PLANE)) {
                return None;
            }
            let p = v.map(|q| [q[0], q[1]]);
            let area = edge(p[0], p[1], p[2]);
            if area == 0.0 || !area.is_finite() {
                return None;
            }
            let lo = |k: usize| v.iter().map(|q| q[k]).fold(f32::INFINITY, f32::min);
            let hi = |k: usize| v.iter().map(|q| q[k]).fold(f32::NEG_INFINITY, f32::max);
            // pixel x covers center x + 0.5
            let xmin = (lo(0) - 0.5).ceil().max(0.0) as usize;
            let ymin = (lo(1) - 0.5).ceil().max(0.0) as usize;
            let xmax_f = (hi(0) - 0.5).floor();
            let ymax_f = (hi(1) - 0.5).floor();
            if xmax_f < 0.0 || ymax_f < 0.0 || xmin >= w || ymin >= h {
                return None;
            }
            Some(ScreenTri {
                p,
                inv_z: v.map(|q| 1.0 / q[2]),
                area,
                xmin,
                ymin,
                xmax: (xmax_f as usize).min(w - 1),
                ymax: (ymax_f as usize).min(h - 1),
            })
        })
        .collect();

    let mut rgb = vec![background; w * h];
    rgb.par_chunks_mut(BAND_ROWS * w)
        .enumerate()
        .for_each(|(band, out)| {
            let y0 = band * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(h);
            let mut depth = vec![f32::INFINITY; (y1 - y0) * w];
            for (ti, tri) in tris.iter().enumerate() {
                let Some(tri) = tri else { continue };
                if tri.ymax < y0 || tri.ymin >= y1 {
                    continue;
                }
                let idx = triangles[ti];
                let col = idx.map(|i| colors[i as usize]);
                for y in tri.ymin.max(y0)..=tri.ymax.min(y1 - 1) {
                    let py = y as f32 + 0.5;
                    for x in tri.xmin..=tri.xmax {
                        let q = [x as f32 + 0.5, py];
                        let b = [
                            edge(tri.p[1], tri.p[2], q) / tri.area,
                            edge(tri.p[2], tri.p[0], q) / tri.area,
                            edge(tri.p[0], tri.p[1], q) / tri.area,
                        ];
                        if b.iter().any(|&bi| bi < 0.0) {
                            continue;
                        }
                        let wz = [b[0] * tri.inv_z[0], b[1] * tri.inv_z[1], b[2] * tri.inv_z[2]];
                        let inv = wz[0] + wz[1] + wz[2];
                        let z = 1.0 / inv;
                        let slot = (y - y0) * w + x;
                        if !(z < depth[slot]) {
                            continue;
                        }
                        depth[slot] = z;
                        let mut c = [0.0f32; 3];
                        for (k, ck) in c.iter_mut().enumerate() {
                            *ck = (wz[0] * col[0][k] + wz[1] * col[1][k] + wz[2] * col[2][k]) * z;
                        }
                        out[slot] = c;
                    }
                }
            }
        });
    Ok(rgb)
}

#[inline]
fn edge(a: [f32; 2], b: [f32; 2], p: [f32; 2]) -> f32 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}
