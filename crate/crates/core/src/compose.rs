//! Activations, residual composition, deformation providers and 3D lifting.
//!
//! Canonical attributes come from the identity's UV maps and are sampled once
//! per identity ([`Avatar`]). Per frame, a [`DeformationProvider`] produces
//! residuals `{Δμ, Δs, Δq}` that are composed onto them:
//!
//! * positions: `γ·tanh(raw) + Δμ` (summation after the canonical activation),
//! * log-scales: `raw + Δs`, then the bounded scale activation,
//! * rotations: `normalize(q(Δq) ⊗ q_canonical)` with the residual on the left.
//!
//! Color and opacity are not touched by residuals.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assets::AvatarAsset;
use crate::error::{Error, Result};
use crate::headmodel::{Articulator, ExpressionState, HeadModel, Mesh};
use crate::math::{self, Quat, Vec3, IDENTITY_QUAT};
use crate::uvatlas::{self, SampledAttributes, Stencil, UvGrid};

const ROW_CHUNK: usize = 4096;

/// Opacities are clamped to `[OPACITY_EPS, 1 − OPACITY_EPS]`.
pub const OPACITY_EPS: f64 = 1e-4;

/// Residual channel layout of a [`LinearDeformationBasis`].
pub const RESIDUAL_CHANNELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    /// Largest canonical position offset, model units.
    pub gamma_pos: f32,
    /// Scales never exceed `e^{−s_max}`.
    pub s_max: f32,
    /// Scales start at `e^{−s_init}` for a zero raw value.
    pub s_init: f32,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.05,
            s_max: 1.0,
            s_init: 5.0,
        }
    }
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos > 0.0 && self.gamma_pos.is_finite()) {
            return Err(Error::Config(format!("gamma_pos must be positive, got {}", self.gamma_pos)));
        }
        if !(self.s_max.is_finite() && self.s_init.is_finite()) {
            return Err(Error::Config("s_max and s_init must be finite".into()));
        }
        if self.s_init <= self.s_max {
            return Err(Error::Config(format!(
                "s_init ({}) must exceed s_max ({})",
                self.s_init, self.s_max
            )));
        }
        Ok(())
    }

    /// Bias that makes a zero raw log-scale land exactly on `e^{−s_init}`.
    fn scale_bias(&self) -> f64 {
        math::softplus_inv(self.s_init as f64 - self.s_max as f64)
    }
}

#[inline]
fn position_one(raw: f32, gamma: f64) -> f32 {
    // tanh rounds to ±1 for large inputs; stay inside the open interval
    let bound = f32::from_bits((gamma as f32).to_bits() - 1);
    ((gamma * (raw as f64).tanh()) as f32).clamp(-bound, bound)
}

#[inline]
fn scale_one(raw: f32, s_max: f64, bias: f64) -> f32 {
    let s = (-s_max - math::softplus(raw as f64 + bias)).exp() as f32;
    s.max(f32::MIN_POSITIVE)
}

#[inline]
fn opacity_one(raw: f32) -> f32 {
    math::sigmoid(raw as f64).clamp(OPACITY_EPS, 1.0 - OPACITY_EPS) as f32
}

#[inline]
fn rotation_one(raw: Quat) -> Quat {
    let n = raw.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if !(n >= 1e-8) {
        return IDENTITY_QUAT;
    }
    raw.map(|x| (x as f64 / n) as f32)
}

/// `γ_pos · tanh(raw)`, elementwise.
pub fn activate_position(raw: &[f32], cfg: &ActivationConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let g = cfg.gamma_pos as f64;
    Ok(raw.iter().map(|&x| position_one(x, g)).collect())
}

/// `exp(−s_max − softplus(raw + c0))` with `c0 = softplus⁻¹(s_init − s_max)`.
pub fn activate_scale(raw_log: &[f32], cfg: &ActivationConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let (s_max, bias) = (cfg.s_max as f64, cfg.scale_bias());
    Ok(raw_log.iter().map(|&x| scale_one(x, s_max, bias)).collect())
}

/// Logistic sigmoid clamped to `[1e-4, 1 − 1e-4]`.
pub fn activate_opacity(raw: &[f32]) -> Vec<f32> {
    raw.iter().map(|&x| opacity_one(x)).collect()
}

/// Normalizes each quaternion; near-zero rows become the identity.
pub fn activate_rotation(raw: &[Quat]) -> Vec<Quat> {
    raw.iter().map(|&q| rotation_one(q)).collect()
}

/// Expression-dependent residuals for every UV sample. `d_rot` is the raw
/// network-style output; `(1, 0, 0, 0)` is added before normalization so an
/// all-zero residual is the identity rotation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualAttributes {
    pub d_mu: Vec<Vec3>,
    pub d_log_scale: Vec<Vec3>,
    pub d_rot: Vec<Quat>,
}

impl ResidualAttributes {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu: vec![[0.0; 3]; n],
            d_log_scale: vec![[0.0; 3]; n],
            d_rot: vec![[0.0; 4]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mu.is_empty()
    }

    fn resize(&mut self, n: usize) {
        self.d_mu.resize(n, [0.0; 3]);
        self.d_log_scale.resize(n, [0.0; 3]);
        self.d_rot.resize(n, [0.0; 4]);
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.d_mu.len() != n || self.d_log_scale.len() != n || self.d_rot.len() != n {
            return Err(Error::param(format!(
                "residuals have {}/{}/{} rows, expected {n}",
                self.d_mu.len(),
                self.d_log_scale.len(),
                self.d_rot.len()
            )));
        }
        Ok(())
    }
}

/// Renderable Gaussians. `sh` holds `3·(L+1)²` coefficients per Gaussian,
/// coefficient-major (`[coef][rgb]`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub mu: Vec<Vec3>,
    pub scale: Vec<Vec3>,
    pub rotation: Vec<Quat>,
    pub sh_degree: usize,
    pub sh: Vec<f32>,
    pub opacity: Vec<f32>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sh_stride(&self) -> usize {
        3 * uvatlas::sh_coeff_count(self.sh_degree)
    }

    pub fn sh_of(&self, i: usize) -> &[f32] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if self.scale.len() != n
            || self.rotation.len() != n
            || self.opacity.len() != n
            || self.sh.len() != n * self.sh_stride()
        {
            return Err(Error::param("gaussian cloud arrays have inconsistent lengths"));
        }
        if self.sh_degree > 3 {
            return Err(Error::param(format!("SH degree {} exceeds 3", self.sh_degree)));
        }
        Ok(())
    }
}

/// Composed geometric attributes before lifting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComposedAttributes {
    pub offsets: Vec<Vec3>,
    pub scale: Vec<Vec3>,
    pub rotation: Vec<Quat>,
}

#[inline]
fn residual_quat(d: Quat) -> Quat {
    rotation_one([d[0] + 1.0, d[1], d[2], d[3]])
}

#[inline]
fn compose_rotation(residual: Quat, canonical: Quat) -> Quat {
    if residual == IDENTITY_QUAT {
        return canonical;
    }
    rotation_one(math::quat_mul(residual, canonical))
}

/// Composes raw canonical rows with residuals. Color and opacity are not
/// part of the result; they pass through unchanged.
pub fn compose(
    canonical: &SampledAttributes,
    residuals: &ResidualAttributes,
    cfg: &ActivationConfig,
) -> Result<ComposedAttributes> {
    cfg.validate()?;
    let n = canonical.len();
    residuals.check(n)?;
    let g = cfg.gamma_pos as f64;
    let (s_max, bias) = (cfg.s_max as f64, cfg.scale_bias());
    let mut out = ComposedAttributes {
        offsets: vec![[0.0; 3]; n],
        scale: vec![[0.0; 3]; n],
        rotation: vec![[0.0; 4]; n],
    };
    for i in 0..n {
        for c in 0..3 {
            out.offsets[i][c] = position_one(canonical.position_offset[i * 3 + c], g) + residuals.d_mu[i][c];
            out.scale[i][c] =
                scale_one(canonical.log_scale[i * 3 + c] + residuals.d_log_scale[i][c], s_max, bias);
        }
        let q_can = rotation_one([
            canonical.rotation[i * 4],
            canonical.rotation[i * 4 + 1],
            canonical.rotation[i * 4 + 2],
            canonical.rotation[i * 4 + 3],
        ]);
        out.rotation[i] = compose_rotation(residual_quat(residuals.d_rot[i]), q_can);
    }
    Ok(out)
}

/// `μ = base + offset`.
pub fn lift(base: &[Vec3], offsets: &[Vec3]) -> Result<Vec<Vec3>> {
    if base.len() != offsets.len() {
        return Err(Error::param(format!(
            "{} base positions but {} offsets",
            base.len(),
            offsets.len()
        )));
    }
    Ok(base
        .iter()
        .zip(offsets)
        .map(|(b, o)| [b[0] + o[0], b[1] + o[1], b[2] + o[2]])
        .collect())
}

/// Source of expression-dependent residuals for one identity, driven by
/// `(ψ, jaw axis-angle)`.
pub trait DeformationProvider: Send + Sync {
    /// Number of expression parameters expected.
    fn expression_dim(&self) -> usize;

    /// Number of Gaussians the residuals cover.
    fn sample_count(&self) -> usize;

    fn evaluate(&self, psi: &[f32], jaw: [f32; 3], out: &mut ResidualAttributes) -> Result<()>;
}

/// Always returns zero residuals.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDeformation {
    pub expression_dim: usize,
    pub sample_count: usize,
}

impl DeformationProvider for ZeroDeformation {
    fn expression_dim(&self) -> usize {
        self.expression_dim
    }

    fn sample_count(&self) -> usize {
        self.sample_count
    }

    fn evaluate(&self, psi: &[f32], _jaw: [f32; 3], out: &mut ResidualAttributes) -> Result<()> {
        check_driver(psi, self.expression_dim)?;
        out.resize(self.sample_count);
        out.d_mu.fill([0.0; 3]);
        out.d_log_scale.fill([0.0; 3]);
        out.d_rot.fill([0.0; 4]);
        Ok(())
    }
}

fn check_driver(psi: &[f32], dim: usize) -> Result<()> {
    if psi.len() != dim {
        return Err(Error::param(format!(
            "expected {dim} expression parameters, got {}",
            psi.len()
        )));
    }
    Ok(())
}

/// Residual planes that respond linearly to the driver vector `[ψ, jaw]`.
///
/// `planes` is laid out `[driver][channel][texel]` with the ten residual
/// channels `Δμ(3), Δs(3), Δq(4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDeformationBasis {
    pub resolution: usize,
    pub expression_dim: usize,
    pub planes: Vec<f32>,
}

impl LinearDeformationBasis {
    pub fn zeros(resolution: usize, expression_dim: usize) -> Self {
        let drivers = expression_dim + 3;
        Self {
            resolution,
            expression_dim,
            planes: vec![0.0; drivers * RESIDUAL_CHANNELS * resolution * resolution],
        }
    }

    pub fn driver_count(&self) -> usize {
        self.expression_dim + 3
    }

    pub fn plane(&self, driver: usize, channel: usize) -> &[f32] {
        let n = self.resolution * self.resolution;
        let start = (driver * RESIDUAL_CHANNELS + channel) * n;
        &self.planes[start..start + n]
    }

    pub fn plane_mut(&mut self, driver: usize, channel: usize) -> &mut [f32] {
        let n = self.resolution * self.resolution;
        let start = (driver * RESIDUAL_CHANNELS + channel) * n;
        &mut self.planes[start..start + n]
    }

    pub fn check(&self) -> Result<()> {
        let want = self.driver_count() * RESIDUAL_CHANNELS * self.resolution * self.resolution;
        if self.planes.len() != want {
            return Err(Error::Asset(format!(
                "deformation basis has {} values, expected {want}",
                self.planes.len()
            )));
        }
        Ok(())
    }

    /// Half-open texel range outside of which every plane of `driver` is zero.
    fn support(&self, driver: usize) -> (usize, usize) {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for c in 0..RESIDUAL_CHANNELS {
            let p = self.plane(driver, c);
            if let Some(first) = p.iter().position(|&x| x != 0.0) {
                lo = lo.min(first);
                hi = hi.max(p.iter().rposition(|&x| x != 0.0).unwrap() + 1);
            }
        }
        if lo == usize::MAX {
            (0, 0)
        } else {
            (lo, hi)
        }
    }
}

/// [`DeformationProvider`] backed by a [`LinearDeformationBasis`] sampled at
/// a fixed UV grid.
#[derive(Debug, Clone)]
pub struct LinearDeformation {
    basis: Arc<LinearDeformationBasis>,
    stencils: Arc<Vec<Stencil>>,
    support: Vec<(usize, usize)>,
}

impl LinearDeformation {
    pub fn new(basis: Arc<LinearDeformationBasis>, grid: &UvGrid) -> Result<Self> {
        let stencils = Arc::new(uvatlas::stencils(&grid.uvs(), basis.resolution)?);
        Self::with_stencils(basis, stencils)
    }

    pub fn with_stencils(basis: Arc<LinearDeformationBasis>, stencils: Arc<Vec<Stencil>>) -> Result<Self> {
        basis.check()?;
        let support = (0..basis.driver_count()).map(|d| basis.support(d)).collect();
        Ok(Self {
            basis,
            stencils,
            support,
        })
    }

    pub fn basis(&self) -> &LinearDeformationBasis {
        &self.basis
    }
}

impl DeformationProvider for LinearDeformation {
    fn expression_dim(&self) -> usize {
        self.basis.expression_dim
    }

    fn sample_count(&self) -> usize {
        self.stencils.len()
    }

    fn evaluate(&self, psi: &[f32], jaw: [f32; 3], out: &mut ResidualAttributes) -> Result<()> {
        check_driver(psi, self.basis.expression_dim)?;
        if !psi.iter().chain(&jaw).all(|x| x.is_finite()) {
            return Err(Error::param("non-finite deformation driver"));
        }
        let driver: Vec<f32> = psi.iter().copied().chain(jaw).collect();
        let b = &*self.basis;
        let n = b.resolution * b.resolution;
        // Accumulated planes, [channel][texel].
        let mut acc = vec![0.0f32; RESIDUAL_CHANNELS * n];
        acc.par_chunks_mut(n).enumerate().for_each(|(c, plane)| {
            for (d, &w) in driver.iter().enumerate() {
                let (lo, hi) = self.support[d];
                if w == 0.0 || lo >= hi {
                    continue;
                }
                let src = &b.plane(d, c)[lo..hi];
                for (a, &s) in plane[lo..hi].iter_mut().zip(src) {
                    *a += w * s;
                }
            }
        });
        let m = self.stencils.len();
        out.resize(m);
        let ResidualAttributes {
            d_mu,
            d_log_scale,
            d_rot,
        } = out;
        d_mu.par_chunks_mut(ROW_CHUNK)
            .zip(d_log_scale.par_chunks_mut(ROW_CHUNK))
            .zip(d_rot.par_chunks_mut(ROW_CHUNK))
            .zip(self.stencils.par_chunks(ROW_CHUNK))
            .for_each(|(((mu, ls), rot), st)| {
                for (k, s) in st.iter().enumerate() {
                    let at = |c: usize| uvatlas::apply_stencil(&acc[c * n..(c + 1) * n], s);
                    mu[k] = [at(0), at(1), at(2)];
                    ls[k] = [at(3), at(4), at(5)];
                    rot[k] = [at(6), at(7), at(8), at(9)];
                }
            });
        Ok(())
    }
}

/// Σ_k driver_k · basis_k, sampled at `grid`.
pub fn eval_linear_deformation(
    basis: &LinearDeformationBasis,
    grid: &UvGrid,
    psi: &[f32],
    jaw: [f32; 3],
) -> Result<ResidualAttributes> {
    let provider = LinearDeformation::new(Arc::new(basis.clone()), grid)?;
    let mut out = ResidualAttributes::default();
    provider.evaluate(psi, jaw, &mut out)?;
    Ok(out)
}

/// Identity-independent of the frame: canonical rows sampled and activated
/// once.
#[derive(Debug, Clone)]
struct CanonicalCache {
    raw_log_scale: Vec<Vec3>,
    offset: Vec<Vec3>,
    scale: Vec<Vec3>,
    rotation: Vec<Quat>,
    sh: Vec<f32>,
    opacity: Vec<f32>,
}

/// Per-frame wall-clock split of [`Avatar::build_cloud_into`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimes {
    pub articulate: Duration,
    pub residuals: Duration,
    pub compose_lift: Duration,
}

/// Caller-owned buffers reused across frames.
#[derive(Debug, Default)]
pub struct FrameScratch {
    blended: Vec<Vec3>,
    pub mesh: Mesh,
    base: Vec<Vec3>,
    pub residuals: ResidualAttributes,
    pub cloud: GaussianCloud,
}

/// Identity cache for one avatar asset. Immutable after construction and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct Avatar {
    asset: Arc<AvatarAsset>,
    articulator: Articulator,
    canonical: Arc<CanonicalCache>,
    linear: Option<LinearDeformation>,
}

impl Avatar {
    pub fn new(asset: Arc<AvatarAsset>) -> Result<Self> {
        asset.config.validate()?;
        let model = &asset.model;
        let n = asset.grid.len();
        let stencils = Arc::new(uvatlas::stencils(&asset.grid.uvs(), asset.maps.resolution)?);
        let raw = uvatlas::sample_with_stencils(&asset.maps, &stencils);
        let cfg = asset.config;
        let g = cfg.gamma_pos as f64;
        let (s_max, bias) = (cfg.s_max as f64, cfg.scale_bias());
        let rows3 = |v: &[f32]| -> Vec<Vec3> { v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
        let raw_log_scale = rows3(&raw.log_scale);
        let canonical = CanonicalCache {
            offset: rows3(&raw.position_offset)
                .into_iter()
                .map(|r| r.map(|x| position_one(x, g)))
                .collect(),
            scale: raw_log_scale
                .iter()
                .map(|r| r.map(|x| scale_one(x, s_max, bias)))
                .collect(),
            raw_log_scale,
            rotation: raw
                .rotation
                .chunks_exact(4)
                .map(|q| rotation_one([q[0], q[1], q[2], q[3]]))
                .collect(),
            sh: raw.color,
            opacity: raw.opacity_logit.iter().map(|&x| opacity_one(x)).collect(),
        };
        debug_assert_eq!(canonical.opacity.len(), n);
        let linear = match &asset.deformation {
            Some(b) => Some(LinearDeformation::with_stencils(
                Arc::new(b.clone()),
                if b.resolution == asset.maps.resolution {
                    stencils.clone()
                } else {
                    Arc::new(uvatlas::stencils(&asset.grid.uvs(), b.resolution)?)
                },
            )?),
            None => None,
        };
        let articulator = Articulator::new(model, &asset.meta.identity_shape)?;
        Ok(Self {
            asset,
            articulator,
            canonical: Arc::new(canonical),
            linear,
        })
    }

    pub fn asset(&self) -> &AvatarAsset {
        &self.asset
    }

    pub fn model(&self) -> &HeadModel {
        &self.asset.model
    }

    pub fn gaussian_count(&self) -> usize {
        self.asset.grid.len()
    }

    /// The asset's linear deformation provider, if it has a basis.
    pub fn linear_provider(&self) -> Option<&LinearDeformation> {
        self.linear.as_ref()
    }

    pub fn zero_provider(&self) -> ZeroDeformation {
        ZeroDeformation {
            expression_dim: self.asset.model.expression_dim,
            sample_count: self.gaussian_count(),
        }
    }

    /// Default provider: the linear basis when present, otherwise zero.
    pub fn default_provider(&self) -> Box<dyn DeformationProvider + '_> {
        match &self.linear {
            Some(l) => Box::new(l.clone()),
            None => Box::new(self.zero_provider()),
        }
    }

    /// Neutral state carrying the identity's shape code.
    pub fn neutral_state(&self) -> ExpressionState {
        let mut s = self.asset.model.neutral_state();
        s.shape = self.articulator.shape().to_vec();
        s
    }

    /// State with the identity's shape, the given expression and jaw pose.
    pub fn state(&self, psi: &[f32], jaw: [f32; 3]) -> Result<ExpressionState> {
        let mut s = self.asset.model.expression_state(psi, jaw)?;
        s.shape = self.articulator.shape().to_vec();
        Ok(s)
    }

    pub fn build_cloud(
        &self,
        state: &ExpressionState,
        provider: Option<&dyn DeformationProvider>,
    ) -> Result<GaussianCloud> {
        let mut scratch = FrameScratch::default();
        self.build_cloud_into(state, provider, &mut scratch)?;
        Ok(scratch.cloud)
    }

    /// Full per-frame path into `scratch.cloud`. With `provider = None` the
    /// canonical attributes are lifted without any composition.
    pub fn build_cloud_into(
        &self,
        state: &ExpressionState,
        provider: Option<&dyn DeformationProvider>,
        scratch: &mut FrameScratch,
    ) -> Result<StageTimes> {
        let model = &self.asset.model;
        let mut times = StageTimes::default();
        let t0 = Instant::now();
        if state.shape.as_slice() == self.articulator.shape() {
            self.articulator
                .articulate_into(model, state, &mut scratch.blended, &mut scratch.mesh.vertices)?;
        } else {
            Articulator::new(model, &state.shape)?.articulate_into(
                model,
                state,
                &mut scratch.blended,
                &mut scratch.mesh.vertices,
            )?;
        }
        uvatlas::surface_interpolate_into(&scratch.mesh, &model.triangles, &self.asset.grid, &mut scratch.base)?;
        times.articulate = t0.elapsed();

        let t1 = Instant::now();
        let n = self.gaussian_count();
        let composed = match provider {
            Some(p) => {
                if p.sample_count() != n {
                    return Err(Error::param(format!(
                        "provider covers {} samples, avatar has {n}",
                        p.sample_count()
                    )));
                }
                let jaw = state.pose[model.jaw_joint()?];
                p.evaluate(&state.expression, jaw, &mut scratch.residuals)?;
                scratch.residuals.check(n)?;
                true
            }
            None => false,
        };
        times.residuals = t1.elapsed();

        let t2 = Instant::now();
        let cfg = self.asset.config;
        let (s_max, bias) = (cfg.s_max as f64, cfg.scale_bias());
        let can = &*self.canonical;
        let cloud = &mut scratch.cloud;
        cloud.mu.resize(n, [0.0; 3]);
        cloud.scale.resize(n, [0.0; 3]);
        cloud.rotation.resize(n, [0.0; 4]);
        cloud.sh_degree = self.asset.maps.sh_degree;
        cloud.sh.clear();
        cloud.sh.extend_from_slice(&can.sh);
        cloud.opacity.clear();
        cloud.opacity.extend_from_slice(&can.opacity);
        let base = &scratch.base;
        let res = &scratch.residuals;
        cloud
            .mu
            .par_chunks_mut(ROW_CHUNK)
            .zip(cloud.scale.par_chunks_mut(ROW_CHUNK))
            .zip(cloud.rotation.par_chunks_mut(ROW_CHUNK))
            .enumerate()
            .for_each(|(chunk, ((mu, scale), rot))| {
                let start = chunk * ROW_CHUNK;
                for k in 0..mu.len() {
                    let i = start + k;
                    let mut offset = can.offset[i];
                    if composed {
                        let dm = res.d_mu[i];
                        offset = [offset[0] + dm[0], offset[1] + dm[1], offset[2] + dm[2]];
                        let ds = res.d_log_scale[i];
                        scale[k] = if ds == [0.0; 3] {
                            can.scale[i]
                        } else {
                            let raw = can.raw_log_scale[i];
                            [0, 1, 2].map(|c| scale_one(raw[c] + ds[c], s_max, bias))
                        };
                        rot[k] = compose_rotation(residual_quat(res.d_rot[i]), can.rotation[i]);
                    } else {
                        scale[k] = can.scale[i];
                        rot[k] = can.rotation[i];
                    }
                    let b = base[i];
                    mu[k] = [b[0] + offset[0], b[1] + offset[1], b[2] + offset[2]];
                }
            });
        times.compose_lift = t2.elapsed();
        Ok(times)
    }
}

/// One-shot convenience over [`Avatar`]: builds the identity cache and a
/// single cloud.
pub fn build_cloud(
    asset: Arc<AvatarAsset>,
    state: &ExpressionState,
    provider: Option<&dyn DeformationProvider>,
) -> Result<GaussianCloud> {
    Avatar::new(asset)?.build_cloud(state, provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ActivationConfig {
        ActivationConfig::default()
    }

    #[test]
    fn position_activation_examples() {
        let c = ActivationConfig { gamma_pos: 0.05, ..cfg() };
        assert_eq!(activate_position(&[0.0], &c).unwrap(), vec![0.0]);
        let top = activate_position(&[1e6], &c).unwrap()[0];
        assert!(top < 0.05 && top > 0.05 - 1e-8);
        let v = activate_position(&[1.0], &c).unwrap()[0];
        assert!((v as f64 - 0.05 * 1f64.tanh()).abs() < 1e-8);
        assert!((v as f64 - 0.0380797).abs() < 1e-7);
    }

    #[test]
    fn scale_activation_examples() {
        let c = ActivationConfig {
            gamma_pos: 0.05,
            s_max: 2.0,
            s_init: 5.0,
        };
        let s0 = activate_scale(&[0.0], &c).unwrap()[0] as f64;
        assert!((s0 - (-5f64).exp()).abs() < 1e-7);
        let inf = activate_scale(&[-1e4], &c).unwrap()[0];
        assert_eq!(inf, (-2f64).exp() as f32);
        let one = activate_scale(&[1.0], &c).unwrap()[0] as f64;
        let oracle = (-2.0 - math::softplus(1.0 + math::softplus_inv(3.0))).exp();
        assert!((one - oracle).abs() < 1e-9);
        let ramp = activate_scale(&[-3.0, -1.0, 0.0, 1.0, 3.0], &c).unwrap();
        assert!(ramp.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn scale_activation_rejects_bad_config() {
        let c = ActivationConfig {
            gamma_pos: 0.05,
            s_max: 3.0,
            s_init: 3.0,
        };
        assert!(matches!(activate_scale(&[0.0], &c), Err(Error::Config(_))));
    }

    #[test]
    fn opacity_activation_examples() {
        assert_eq!(activate_opacity(&[0.0]), vec![0.5]);
        assert_eq!(activate_opacity(&[1e6])[0], (1.0 - 1e-4) as f32);
        assert_eq!(activate_opacity(&[-1e6])[0], 1e-4f64 as f32);
        let v = activate_opacity(&[2.0])[0] as f64;
        assert!((v - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn rotation_activation_examples() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let out = activate_rotation(&[[1.0, 0.0, 0.0, 0.0], [0.0; 4], [2.0, 0.0, 0.0, 2.0]]);
        assert_eq!(out[0], IDENTITY_QUAT);
        assert_eq!(out[1], IDENTITY_QUAT);
        assert!((out[2][0] - h).abs() < 1e-7 && (out[2][3] - h).abs() < 1e-7);
    }

    fn random_rows(seed: u64, n: usize) -> SampledAttributes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |len: usize, s: f32| -> Vec<f32> {
            (0..len).map(|_| (rng.random::<f32>() * 2.0 - 1.0) * s).collect()
        };
        SampledAttributes {
            position_offset: r(n * 3, 2.0),
            log_scale: r(n * 3, 2.0),
            rotation: r(n * 4, 1.0),
            color: r(n * 3, 1.0),
            opacity_logit: r(n, 3.0),
        }
    }

    #[test]
    fn zero_residuals_reproduce_canonical_path() {
        let rows = random_rows(1, 64);
        let out = compose(&rows, &ResidualAttributes::zeros(64), &cfg()).unwrap();
        assert_eq!(out.offsets.as_flattened(), activate_position(&rows.position_offset, &cfg()).unwrap());
        assert_eq!(out.scale.as_flattened(), activate_scale(&rows.log_scale, &cfg()).unwrap());
        let rots: Vec<Quat> = rows.rotation.chunks_exact(4).map(|q| [q[0], q[1], q[2], q[3]]).collect();
        assert_eq!(out.rotation, activate_rotation(&rots));
    }

    #[test]
    fn quarter_turn_residual_on_identity() {
        let mut rows = random_rows(2, 1);
        rows.rotation = vec![1.0, 0.0, 0.0, 0.0];
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let mut res = ResidualAttributes::zeros(1);
        res.d_rot[0] = [h - 1.0, 0.0, 0.0, h];
        let out = compose(&rows, &res, &cfg()).unwrap();
        let q = out.rotation[0];
        assert!((q[0] - h).abs() < 1e-6 && q[1].abs() < 1e-7 && q[2].abs() < 1e-7 && (q[3] - h).abs() < 1e-6);
    }

    #[test]
    fn random_residual_composition_matches_row_oracle() {
        let n = 200;
        let rows = random_rows(3, n);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r = |s: f32| (rng.random::<f32>() * 2.0 - 1.0) * s;
        let res = ResidualAttributes {
            d_mu: (0..n).map(|_| [r(0.01), r(0.01), r(0.01)]).collect(),
            d_log_scale: (0..n).map(|_| [r(1.0), r(1.0), r(1.0)]).collect(),
            d_rot: (0..n).map(|_| [r(0.5), r(0.5), r(0.5), r(0.5)]).collect(),
        };
        let c = cfg();
        let out = compose(&rows, &res, &c).unwrap();
        for i in 0..n {
            let qn: f64 = out.rotation[i].iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((qn - 1.0).abs() < 1e-6);
            for k in 0..3 {
                let ls = rows.log_scale[i * 3 + k] as f64 + res.d_log_scale[i][k] as f64;
                let c0 = math::softplus_inv((c.s_init - c.s_max) as f64);
                let oracle = (-(c.s_max as f64) - math::softplus(ls + c0)).exp();
                assert!((out.scale[i][k] as f64 - oracle).abs() < 1e-6 * oracle.max(1e-3));
                let off = c.gamma_pos as f64 * (rows.position_offset[i * 3 + k] as f64).tanh()
                    + res.d_mu[i][k] as f64;
                assert!((out.offsets[i][k] as f64 - off).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn compose_rejects_row_mismatch() {
        let rows = random_rows(5, 4);
        assert!(matches!(
            compose(&rows, &ResidualAttributes::zeros(3), &cfg()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn lift_examples() {
        let base = vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        assert_eq!(lift(&base, &[[0.0; 3]; 2]).unwrap(), base);
        let m = lift(&base, &[[0.01, -0.02, 0.0], [1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(m[0], [1.0 + 0.01, 2.0 - 0.02, 3.0]);
        assert_eq!(m[1], [1.0; 3]);
        assert!(lift(&base, &[[0.0; 3]]).is_err());
    }

    fn small_basis(r: usize, d_psi: usize, seed: u64) -> (LinearDeformationBasis, UvGrid) {
        let mut b = LinearDeformationBasis::zeros(r, d_psi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in b.planes.iter_mut() {
            *x = rng.random::<f32>() - 0.5;
        }
        let samples = (0..40)
            .map(|_| uvatlas::UvSample {
                texel: 0,
                uv: [rng.random(), rng.random()],
                triangle: 0,
                barycentric: [1.0, 0.0, 0.0],
            })
            .collect();
        (
            b,
            UvGrid {
                resolution: r,
                samples,
                degenerate_triangles: 0,
            },
        )
    }

    #[test]
    fn linear_deformation_zero_driver_is_zero() {
        let (b, g) = small_basis(8, 4, 1);
        let out = eval_linear_deformation(&b, &g, &[0.0; 4], [0.0; 3]).unwrap();
        assert_eq!(out, ResidualAttributes::zeros(40));
    }

    #[test]
    fn linear_deformation_one_hot_samples_one_plane() {
        let (b, g) = small_basis(8, 4, 2);
        let out = eval_linear_deformation(&b, &g, &[0.0, 1.0, 0.0, 0.0], [0.0; 3]).unwrap();
        let st = uvatlas::stencils(&g.uvs(), 8).unwrap();
        for (i, s) in st.iter().enumerate() {
            assert_eq!(out.d_mu[i][1], uvatlas::apply_stencil(b.plane(1, 1), s));
            assert_eq!(out.d_rot[i][3], uvatlas::apply_stencil(b.plane(1, 9), s));
        }
        let jaw = eval_linear_deformation(&b, &g, &[0.0; 4], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(jaw.d_log_scale[5][0], uvatlas::apply_stencil(b.plane(6, 3), &st[5]));
    }

    #[test]
    fn linear_deformation_matches_dense_accumulation() {
        let (b, g) = small_basis(8, 4, 3);
        let psi = [0.3, -1.2, 0.7, 2.0];
        let jaw = [0.1, -0.05, 0.2];
        let out = eval_linear_deformation(&b, &g, &psi, jaw).unwrap();
        let driver: Vec<f64> = psi.iter().chain(&jaw).map(|&x| x as f64).collect();
        for (i, s) in g.samples.iter().enumerate() {
            let st = uvatlas::stencil(s.uv, 8).unwrap();
            for c in 0..RESIDUAL_CHANNELS {
                let mut expect = 0.0f64;
                for (d, w) in driver.iter().enumerate() {
                    for k in 0..4 {
                        expect += w * st.weights[k] as f64 * b.plane(d, c)[st.texels[k] as usize] as f64;
                    }
                }
                let got = match c {
                    0..=2 => out.d_mu[i][c],
                    3..=5 => out.d_log_scale[i][c - 3],
                    _ => out.d_rot[i][c - 6],
                } as f64;
                assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn linear_deformation_rejects_wrong_psi_len() {
        let (b, g) = small_basis(4, 3, 4);
        assert!(eval_linear_deformation(&b, &g, &[0.0; 2], [0.0; 3]).is_err());
    }
}
