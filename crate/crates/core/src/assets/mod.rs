//! File formats, parameter tracks, the synthetic fixture generator, asset
//! validation and regularizer metrics.
//!
//! Two container files share one layout (see [`container`]):
//! `.aghm` holds a [`HeadModel`], `.agav` an [`AvatarAsset`] with its head
//! model embedded.

pub mod container;
mod fixture;
mod metrics;
mod track;
mod validate;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compose::{ActivationConfig, LinearDeformationBasis, RESIDUAL_CHANNELS};
use crate::error::{Error, FormatError, Result};
use crate::headmodel::{HeadModel, Region};
use crate::uvatlas::{self, AttributeMaps, ChannelGroup, UvGrid, UvSample};
use container::{Container, Writer};

pub use fixture::{generate_synthetic_fixture, FIXTURE_RESOLUTIONS};
pub use metrics::{avatar_regularizer_metrics, regularizer_metrics, RegularizerReport, RegularizerWeights};
pub use track::{parse_track, read_track, ParamRecord};
pub use validate::{validate_asset, Violation};

pub const HEAD_MODEL_MAGIC: &[u8; 8] = b"GHMODEL\0";
pub const AVATAR_MAGIC: &[u8; 8] = b"GHAVATAR";

/// Identity-level settings stored with an avatar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub identity: String,
    /// Shape code `β` of the identity.
    pub identity_shape: Vec<f32>,
    /// Order of residual and canonical rotation in the quaternion product.
    pub rotation_composition: String,
    /// Displacement magnitude mapped to the full color range in cue renders.
    pub encoding_scale: f32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for AssetMeta {
    fn default() -> Self {
        Self {
            identity: "unnamed".into(),
            identity_shape: Vec::new(),
            rotation_composition: "residual_left".into(),
            encoding_scale: crate::geomcue::DEFAULT_ENCODING_SCALE,
            seed: None,
        }
    }
}

/// Everything needed to animate one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AvatarAsset {
    pub model: HeadModel,
    pub grid: UvGrid,
    pub maps: AttributeMaps,
    pub config: ActivationConfig,
    pub deformation: Option<LinearDeformationBasis>,
    pub meta: AssetMeta,
}

impl AvatarAsset {
    pub fn resolution(&self) -> usize {
        self.maps.resolution
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    vertex_count: usize,
    triangle_count: usize,
    uv_count: usize,
    shape_dim: usize,
    expression_dim: usize,
    joint_names: Vec<String>,
    joint_parents: Vec<i32>,
}

fn meta_err(e: serde_json::Error) -> FormatError {
    FormatError::Metadata(e.to_string())
}

fn model_header(m: &HeadModel) -> ModelHeader {
    ModelHeader {
        vertex_count: m.vertex_count(),
        triangle_count: m.triangles.len(),
        uv_count: m.uv_coords.len(),
        shape_dim: m.shape_dim,
        expression_dim: m.expression_dim,
        joint_names: m.joint_names.clone(),
        joint_parents: m.joint_parents.clone(),
    }
}

fn write_model(w: &mut Writer, prefix: &str, m: &HeadModel) {
    let n = |s: &str| format!("{prefix}{s}");
    w.f32(&n("template_vertices"), m.template_vertices.as_flattened());
    w.u32(&n("triangles"), m.triangles.as_flattened());
    w.f32(&n("uv_coords"), m.uv_coords.as_flattened());
    w.u32(&n("uv_triangles"), m.uv_triangles.as_flattened());
    w.f32(&n("shape_basis"), &m.shape_basis);
    w.f32(&n("expression_basis"), &m.expression_basis);
    w.f32(&n("pose_basis"), &m.pose_basis);
    w.f32(&n("joint_regressor"), &m.joint_regressor);
    w.f32(&n("skinning_weights"), &m.skinning_weights);
    let codes: Vec<u32> = m.regions.iter().map(|r| r.code()).collect();
    let depths: Vec<f32> = m.regions.iter().map(|r| r.depth()).collect();
    w.u32(&n("region_codes"), &codes);
    w.f32(&n("region_depths"), &depths);
}

fn read_model(c: &mut Container, prefix: &str, h: ModelHeader) -> Result<HeadModel, FormatError> {
    let n = |s: &str| format!("{prefix}{s}");
    let v = h.vertex_count;
    let k = h.joint_parents.len();
    if h.joint_names.len() != k {
        return Err(FormatError::Metadata("joint names and parents differ in length".into()));
    }
    let dp = 9 * k.saturating_sub(1);
    let triples = |x: Vec<f32>| -> Vec<[f32; 3]> { x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let tris = |x: Vec<u32>| -> Vec<[u32; 3]> { x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let template_vertices = triples(c.take_f32(&n("template_vertices"), v * 3)?);
    let triangles = tris(c.take_u32(&n("triangles"), h.triangle_count * 3)?);
    let uv_coords = c
        .take_f32(&n("uv_coords"), h.uv_count * 2)?
        .chunks_exact(2)
        .map(|p| [p[0], p[1]])
        .collect();
    let uv_triangles = tris(c.take_u32(&n("uv_triangles"), h.triangle_count * 3)?);
    let shape_basis = c.take_f32(&n("shape_basis"), v * 3 * h.shape_dim)?;
    let expression_basis = c.take_f32(&n("expression_basis"), v * 3 * h.expression_dim)?;
    let pose_basis = c.take_f32(&n("pose_basis"), v * 3 * dp)?;
    let joint_regressor = c.take_f32(&n("joint_regressor"), k * v)?;
    let skinning_weights = c.take_f32(&n("skinning_weights"), v * k)?;
    let codes = c.take_u32(&n("region_codes"), v)?;
    let depths = c.take_f32(&n("region_depths"), v)?;
    let regions = codes
        .iter()
        .zip(&depths)
        .map(|(&code, &d)| {
            Region::from_code(code, d).ok_or_else(|| FormatError::Metadata(format!("unknown region code {code}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HeadModel {
        template_vertices,
        triangles,
        uv_coords,
        uv_triangles,
        shape_dim: h.shape_dim,
        shape_basis,
        expression_dim: h.expression_dim,
        expression_basis,
        pose_basis,
        joint_regressor,
        skinning_weights,
        joint_parents: h.joint_parents,
        joint_names: h.joint_names,
        regions,
    })
}

pub fn encode_head_model(model: &HeadModel) -> Vec<u8> {
    let header = serde_json::to_value(model_header(model)).expect("header serializes");
    let mut w = Writer::new(HEAD_MODEL_MAGIC, &json!({ "kind": "head_model", "model": header }));
    write_model(&mut w, "", model);
    w.into_bytes()
}

pub fn decode_head_model(bytes: &[u8]) -> Result<HeadModel> {
    let mut c = container::decode(bytes, HEAD_MODEL_MAGIC)?;
    let header: ModelHeader = serde_json::from_value(c.metadata["model"].clone()).map_err(meta_err)?;
    Ok(read_model(&mut c, "", header)?)
}

pub fn save_head_model(model: &HeadModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_head_model(model))?;
    Ok(())
}

pub fn load_head_model(path: impl AsRef<Path>) -> Result<HeadModel> {
    decode_head_model(&std::fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
struct AssetHeader {
    kind: String,
    meta: AssetMeta,
    config: ActivationConfig,
    resolution: usize,
    sh_degree: usize,
    groups: Vec<ChannelGroup>,
    grid_samples: usize,
    grid_degenerate_triangles: usize,
    deformation_resolution: Option<usize>,
    deformation_channels: usize,
    model: ModelHeader,
}

pub fn encode_asset(asset: &AvatarAsset) -> Vec<u8> {
    let maps = &asset.maps;
    let header = AssetHeader {
        kind: "avatar".into(),
        meta: asset.meta.clone(),
        config: asset.config,
        resolution: maps.resolution,
        sh_degree: maps.sh_degree,
        groups: maps.groups().iter().map(|g| (*g).clone()).collect(),
        grid_samples: asset.grid.len(),
        grid_degenerate_triangles: asset.grid.degenerate_triangles,
        deformation_resolution: asset.deformation.as_ref().map(|d| d.resolution),
        deformation_channels: RESIDUAL_CHANNELS,
        model: model_header(&asset.model),
    };
    let mut w = Writer::new(AVATAR_MAGIC, &serde_json::to_value(header).expect("header serializes"));
    write_model(&mut w, "model/", &asset.model);
    let s = &asset.grid.samples;
    w.u32("grid/texel", &s.iter().map(|x| x.texel).collect::<Vec<_>>());
    w.f32("grid/uv", &s.iter().flat_map(|x| x.uv).collect::<Vec<_>>());
    w.u32("grid/triangle", &s.iter().map(|x| x.triangle).collect::<Vec<_>>());
    w.f32("grid/barycentric", &s.iter().flat_map(|x| x.barycentric).collect::<Vec<_>>());
    for g in maps.groups() {
        w.f32(&format!("maps/{}", g.name), &g.data);
    }
    if let Some(d) = &asset.deformation {
        w.f32("deformation/planes", &d.planes);
    }
    w.into_bytes()
}

pub fn decode_asset(bytes: &[u8]) -> Result<AvatarAsset> {
    let mut c = container::decode(bytes, AVATAR_MAGIC)?;
    let h: AssetHeader = serde_json::from_value(c.metadata.clone()).map_err(meta_err)?;
    if h.kind != "avatar" {
        return Err(FormatError::Metadata(format!("expected kind \"avatar\", found {:?}", h.kind)).into());
    }
    let expression_dim = h.model.expression_dim;
    let model = read_model(&mut c, "model/", h.model)?;
    let r = h.resolution;
    let mut maps = AttributeMaps::zeros(r, h.sh_degree);
    let names: Vec<(String, usize)> = h.groups.iter().map(|g| (g.name.clone(), g.channels)).collect();
    for g in maps.groups_mut() {
        let Some((_, channels)) = names.iter().find(|(n, _)| *n == g.name) else {
            return Err(FormatError::Metadata(format!("missing map group {}", g.name)).into());
        };
        if *channels != g.channels {
            return Err(FormatError::Metadata(format!(
                "map group {} has {channels} channels, expected {}",
                g.name, g.channels
            ))
            .into());
        }
        g.data = c.take_f32(&format!("maps/{}", g.name), g.channels * r * r)?;
    }
    let n = h.grid_samples;
    let texel = c.take_u32("grid/texel", n)?;
    let uv = c.take_f32("grid/uv", 2 * n)?;
    let tri = c.take_u32("grid/triangle", n)?;
    let bary = c.take_f32("grid/barycentric", 3 * n)?;
    let samples = (0..n)
        .map(|i| UvSample {
            texel: texel[i],
            uv: [uv[2 * i], uv[2 * i + 1]],
            triangle: tri[i],
            barycentric: [bary[3 * i], bary[3 * i + 1], bary[3 * i + 2]],
        })
        .collect();
    let grid = UvGrid {
        resolution: r,
        samples,
        degenerate_triangles: h.grid_degenerate_triangles,
    };
    let deformation = match h.deformation_resolution {
        Some(dr) => {
            if h.deformation_channels != RESIDUAL_CHANNELS {
                return Err(FormatError::Metadata(format!(
                    "deformation basis has {} channels, expected {RESIDUAL_CHANNELS}",
                    h.deformation_channels
                ))
                .into());
            }
            let mut b = LinearDeformationBasis::zeros(dr, expression_dim);
            let len = b.planes.len();
            b.planes = c.take_f32("deformation/planes", len)?;
            Some(b)
        }
        None => None,
    };
    Ok(AvatarAsset {
        model,
        grid,
        maps,
        config: h.config,
        deformation,
        meta: h.meta,
    })
}

pub fn save_asset(asset: &AvatarAsset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_asset(asset))?;
    Ok(())
}

pub fn load_asset(path: impl AsRef<Path>) -> Result<AvatarAsset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Asset(format!("no asset at {}", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    decode_asset(&bytes)
}

/// Builds an asset from its parts, deriving the UV grid from the model.
pub fn assemble_asset(
    model: HeadModel,
    maps: AttributeMaps,
    config: ActivationConfig,
    deformation: Option<LinearDeformationBasis>,
    meta: AssetMeta,
) -> Result<AvatarAsset> {
    let grid = uvatlas::build_uv_grid(&model, maps.resolution)?;
    Ok(AvatarAsset {
        model,
        grid,
        maps,
        config,
        deformation,
        meta,
    })
}
