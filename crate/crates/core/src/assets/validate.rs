use serde::{Deserialize, Serialize};

use super::AvatarAsset;
use crate::uvatlas::sh_coeff_count;

/// One failed invariant. `category` is one of `model`, `config`,
/// `resolution`, `grid`, `deformation`, `finiteness`, `meta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub category: String,
    pub message: String,
}

impl Violation {
    fn new(category: &str, message: impl Into<String>) -> Self {
        Self {
            category: category.into(),
            message: message.into(),
        }
    }
}

/// Checks every structural invariant of `asset`; an empty list means valid.
pub fn validate_asset(asset: &AvatarAsset) -> Vec<Violation> {
    let mut out: Vec<Violation> = asset
        .model
        .invariant_violations()
        .into_iter()
        .map(|m| Violation::new("model", m))
        .collect();

    if let Err(e) = asset.config.validate() {
        out.push(Violation::new("config", e.to_string()));
    }

    let maps = &asset.maps;
    let r = maps.resolution;
    if r == 0 {
        out.push(Violation::new("resolution", "map resolution is zero"));
    }
    if maps.sh_degree > 3 {
        out.push(Violation::new("resolution", format!("SH degree {} exceeds 3", maps.sh_degree)));
    }
    if maps.color.channels != 3 * sh_coeff_count(maps.sh_degree) {
        out.push(Violation::new(
            "resolution",
            format!(
                "color has {} channels, SH degree {} needs {}",
                maps.color.channels,
                maps.sh_degree,
                3 * sh_coeff_count(maps.sh_degree)
            ),
        ));
    }
    for g in maps.groups() {
        if g.data.len() != g.channels * r * r {
            out.push(Violation::new(
                "resolution",
                format!("map {} has {} values, expected {}", g.name, g.data.len(), g.channels * r * r),
            ));
            continue;
        }
        for c in 0..g.channels {
            let bad = g.plane(c, r).iter().filter(|v| !v.is_finite()).count();
            if bad > 0 {
                out.push(Violation::new(
                    "finiteness",
                    format!("map {} channel {c} has {bad} non-finite values", g.name),
                ));
            }
        }
    }

    let grid = &asset.grid;
    if grid.resolution != r {
        out.push(Violation::new(
            "resolution",
            format!("uv grid resolution {} differs from map resolution {r}", grid.resolution),
        ));
    }
    let tri_count = asset.model.triangles.len() as u32;
    let mut bad_samples = 0usize;
    let mut last_texel = None;
    for s in &grid.samples {
        let ok = (s.texel as usize) < grid.resolution * grid.resolution
            && s.triangle < tri_count
            && s.uv.iter().chain(&s.barycentric).all(|x| x.is_finite())
            && (s.barycentric.iter().sum::<f32>() - 1.0).abs() < 1e-4
            && last_texel.is_none_or(|t| s.texel > t);
        if !ok {
            bad_samples += 1;
        }
        last_texel = Some(s.texel);
    }
    if bad_samples > 0 {
        out.push(Violation::new("grid", format!("{bad_samples} malformed uv samples")));
    }
    if grid.is_empty() {
        out.push(Violation::new("grid", "uv grid has no samples"));
    }

    if let Some(d) = &asset.deformation {
        if let Err(e) = d.check() {
            out.push(Violation::new("deformation", e.to_string()));
        }
        if d.expression_dim != asset.model.expression_dim {
            out.push(Violation::new(
                "deformation",
                format!(
                    "basis drives {} expressions, model has {}",
                    d.expression_dim, asset.model.expression_dim
                ),
            ));
        }
        let bad = d.planes.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            out.push(Violation::new(
                "finiteness",
                format!("deformation basis has {bad} non-finite values"),
            ));
        }
    }

    let meta = &asset.meta;
    if meta.identity_shape.len() != asset.model.shape_dim {
        out.push(Violation::new(
            "meta",
            format!(
                "identity shape has {} entries, model expects {}",
                meta.identity_shape.len(),
                asset.model.shape_dim
            ),
        ));
    }
    if !meta.identity_shape.iter().all(|x| x.is_finite()) {
        out.push(Violation::new("finiteness", "identity shape has non-finite values"));
    }
    if !(meta.encoding_scale > 0.0 && meta.encoding_scale.is_finite()) {
        out.push(Violation::new("meta", "encoding scale must be positive"));
    }
    if meta.rotation_composition != "residual_left" {
        out.push(Violation::new(
            "meta",
            format!("unsupported rotation composition {:?}", meta.rotation_composition),
        ));
    }
    out
}
