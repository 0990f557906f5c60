//! Parametric head model: blendshapes, joint regression, linear blend
//! skinning and mouth-cavity weight derivation.
//!
//! Dimensions (`d_β`, `d_ψ`, joint count) are data-driven. Blendshape
//! tensors are stored flat as `V × 3 × d` (vertex-major, then coordinate,
//! then basis column). The pose-corrective basis has `9·(K−1)` columns, one
//! per entry of `R(θ_k) − I` for every non-root joint.
//!
//! All accumulation happens in `f64` and is rounded to `f32` once per vertex,
//! so the neutral state reproduces the template bit-for-bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3d, Vec3, Vec3d};

/// Vertices processed per parallel work item. Output ranges are disjoint, so
/// the result does not depend on the thread count.
const VERTEX_CHUNK: usize = 1024;

/// Semantic per-vertex tag. `Cavity::depth` runs from 0 at the lip line to 1
/// at the deepest point of the mouth interior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Region {
    #[default]
    Skin,
    UpperLip,
    LowerLip,
    Cavity {
        depth: f32,
    },
}

impl Region {
    pub fn code(self) -> u32 {
        match self {
            Region::Skin => 0,
            Region::UpperLip => 1,
            Region::LowerLip => 2,
            Region::Cavity { .. } => 3,
        }
    }

    pub fn from_code(code: u32, depth: f32) -> Option<Region> {
        Some(match code {
            0 => Region::Skin,
            1 => Region::UpperLip,
            2 => Region::LowerLip,
            3 => Region::Cavity { depth },
            _ => return None,
        })
    }

    pub fn depth(self) -> f32 {
        match self {
            Region::Cavity { depth } => depth,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub template_vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub uv_coords: Vec<[f32; 2]>,
    /// Same length as `triangles`; indexes `uv_coords`.
    pub uv_triangles: Vec<[u32; 3]>,
    pub shape_dim: usize,
    pub shape_basis: Vec<f32>,
    pub expression_dim: usize,
    pub expression_basis: Vec<f32>,
    pub pose_basis: Vec<f32>,
    /// Dense `K × V`.
    pub joint_regressor: Vec<f32>,
    /// Dense `V × K`, rows sum to one.
    pub skinning_weights: Vec<f32>,
    /// `-1` for the root; every other parent index is smaller than its child.
    pub joint_parents: Vec<i32>,
    pub joint_names: Vec<String>,
    pub regions: Vec<Region>,
}

/// Shape, expression and per-joint axis-angle pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionState {
    pub shape: Vec<f32>,
    pub expression: Vec<f32>,
    pub pose: Vec<[f32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
}

impl HeadModel {
    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_parents.len()
    }

    pub fn pose_feature_dim(&self) -> usize {
        9 * self.joint_count().saturating_sub(1)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Index of the jaw joint (named `"jaw"`).
    pub fn jaw_joint(&self) -> Result<usize> {
        self.joint_index("jaw")
            .ok_or_else(|| Error::Model("no joint named \"jaw\"".into()))
    }

    pub fn neutral_state(&self) -> ExpressionState {
        ExpressionState {
            shape: vec![0.0; self.shape_dim],
            expression: vec![0.0; self.expression_dim],
            pose: vec![[0.0; 3]; self.joint_count()],
        }
    }

    /// Neutral state with the jaw set to `jaw` and the expression to `psi`.
    pub fn expression_state(&self, psi: &[f32], jaw: [f32; 3]) -> Result<ExpressionState> {
        let mut state = self.neutral_state();
        if psi.len() != self.expression_dim {
            return Err(Error::param(format!(
                "expected {} expression parameters, got {}",
                self.expression_dim,
                psi.len()
            )));
        }
        state.expression.copy_from_slice(psi);
        state.pose[self.jaw_joint()?] = jaw;
        Ok(state)
    }

    pub fn template_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.template_vertices.clone(),
        }
    }

    /// Lists every violated structural invariant; empty when the model is valid.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let v = self.vertex_count();
        let k = self.joint_count();
        let expect = |out: &mut Vec<String>, name: &str, got: usize, want: usize| {
            if got != want {
                out.push(format!("{name}: length {got}, expected {want}"));
            }
        };
        expect(&mut out, "shape_basis", self.shape_basis.len(), v * 3 * self.shape_dim);
        expect(
            &mut out,
            "expression_basis",
            self.expression_basis.len(),
            v * 3 * self.expression_dim,
        );
        expect(&mut out, "pose_basis", self.pose_basis.len(), v * 3 * self.pose_feature_dim());
        expect(&mut out, "joint_regressor", self.joint_regressor.len(), k * v);
        expect(&mut out, "skinning_weights", self.skinning_weights.len(), v * k);
        expect(&mut out, "joint_names", self.joint_names.len(), k);
        expect(&mut out, "regions", self.regions.len(), v);
        expect(&mut out, "uv_triangles", self.uv_triangles.len(), self.triangles.len());
        if k == 0 {
            out.push("joint_parents: no joints".into());
        }
        for (j, &p) in self.joint_parents.iter().enumerate() {
            let ok = if j == 0 { p == -1 } else { p >= 0 && (p as usize) < j };
            if !ok {
                out.push(format!(
                    "joint_parents[{j}] = {p}: joint 0 must be the only root and parents must precede children"
                ));
            }
        }
        if let Some(t) = self
            .triangles
            .iter()
            .position(|t| t.iter().any(|&i| i as usize >= v))
        {
            out.push(format!("triangles[{t}] references a vertex >= {v}"));
        }
        let uvn = self.uv_coords.len();
        if let Some(t) = self
            .uv_triangles
            .iter()
            .position(|t| t.iter().any(|&i| i as usize >= uvn))
        {
            out.push(format!("uv_triangles[{t}] references a uv >= {uvn}"));
        }
        if let Some(i) = self
            .uv_coords
            .iter()
            .position(|uv| !uv.iter().all(|c| (0.0..=1.0).contains(c)))
        {
            out.push(format!("uv_coords[{i}] outside the unit square"));
        }
        if self.skinning_weights.len() == v * k && k > 0 {
            for (i, row) in self.skinning_weights.chunks_exact(k).enumerate() {
                let sum: f64 = row.iter().map(|&w| w as f64).sum();
                if row.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-5 {
                    out.push(format!("skinning_weights row {i} not row-stochastic (sum {sum})"));
                    break;
                }
            }
        }
        let finite = |name: &str, data: &[f32], out: &mut Vec<String>| {
            if data.iter().any(|x| !x.is_finite()) {
                out.push(format!("{name}: non-finite value"));
            }
        };
        finite(
            "template_vertices",
            self.template_vertices.as_flattened(),
            &mut out,
        );
        finite("shape_basis", &self.shape_basis, &mut out);
        finite("expression_basis", &self.expression_basis, &mut out);
        finite("pose_basis", &self.pose_basis, &mut out);
        finite("joint_regressor", &self.joint_regressor, &mut out);
        for (i, r) in self.regions.iter().enumerate() {
            if let Region::Cavity { depth } = r {
                if !(0.0..=1.0).contains(depth) {
                    out.push(format!("regions[{i}]: cavity depth {depth} outside [0,1]"));
                    break;
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.invariant_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Model(v.join("; ")))
        }
    }

    fn check_state(&self, state: &ExpressionState) -> Result<()> {
        if state.shape.len() != self.shape_dim {
            return Err(Error::param(format!(
                "shape has {} parameters, model expects {}",
                state.shape.len(),
                self.shape_dim
            )));
        }
        if state.expression.len() != self.expression_dim {
            return Err(Error::param(format!(
                "expression has {} parameters, model expects {}",
                state.expression.len(),
                self.expression_dim
            )));
        }
        if state.pose.len() != self.joint_count() {
            return Err(Error::param(format!(
                "pose has {} joints, model expects {}",
                state.pose.len(),
                self.joint_count()
            )));
        }
        let finite = state
            .shape
            .iter()
            .chain(&state.expression)
            .chain(state.pose.as_flattened())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::param("non-finite parameter"));
        }
        Ok(())
    }
}

/// Adds `basis · coeffs` for one vertex into `acc`.
#[inline]
fn accumulate_basis(acc: &mut Vec3d, basis: &[f32], vertex: usize, coeffs: &[f64]) {
    let d = coeffs.len();
    if d == 0 {
        return;
    }
    for (c, a) in acc.iter_mut().enumerate() {
        let row = &basis[(vertex * 3 + c) * d..(vertex * 3 + c + 1) * d];
        let mut s = 0.0;
        for (b, x) in row.iter().zip(coeffs) {
            s += *b as f64 * x;
        }
        *a += s;
    }
}

/// Flattened `R(θ_k) − I` over non-root joints.
pub fn pose_features(pose: &[[f32; 3]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(9 * pose.len().saturating_sub(1));
    for p in pose.iter().skip(1) {
        let r = math::rodrigues(math::to_f64(*p));
        let d = math::mat_sub(&r, &math::IDENTITY_MAT);
        out.extend(d.iter().flatten());
    }
    out
}

/// `T̄ + S·β` in full precision, the expression-independent part of the
/// template blend.
pub fn shaped_template(model: &HeadModel, shape: &[f32]) -> Result<Vec<Vec3d>> {
    if shape.len() != model.shape_dim {
        return Err(Error::param(format!(
            "shape has {} parameters, model expects {}",
            shape.len(),
            model.shape_dim
        )));
    }
    let beta: Vec<f64> = shape.iter().map(|&x| x as f64).collect();
    let mut out = vec![[0.0f64; 3]; model.vertex_count()];
    out.par_chunks_mut(VERTEX_CHUNK)
        .enumerate()
        .for_each(|(chunk, dst)| {
            for (o, acc) in dst.iter_mut().enumerate() {
                let v = chunk * VERTEX_CHUNK + o;
                *acc = math::to_f64(model.template_vertices[v]);
                accumulate_basis(acc, &model.shape_basis, v, &beta);
            }
        });
    Ok(out)
}

/// Adds expression and pose-corrective offsets to a shaped template.
pub(crate) fn finish_blend(
    model: &HeadModel,
    shaped: &[Vec3d],
    expression: &[f32],
    pose: &[[f32; 3]],
    out: &mut Vec<Vec3>,
) {
    let psi: Vec<f64> = expression.iter().map(|&x| x as f64).collect();
    let feat = pose_features(pose);
    let use_pose = feat.iter().any(|&f| f != 0.0);
    out.resize(model.vertex_count(), [0.0; 3]);
    out.par_chunks_mut(VERTEX_CHUNK)
        .enumerate()
        .for_each(|(chunk, dst)| {
            for (o, slot) in dst.iter_mut().enumerate() {
                let v = chunk * VERTEX_CHUNK + o;
                let mut acc = shaped[v];
                accumulate_basis(&mut acc, &model.expression_basis, v, &psi);
                if use_pose {
                    accumulate_basis(&mut acc, &model.pose_basis, v, &feat);
                }
                *slot = math::to_f32(acc);
            }
        });
}

/// `T_P = T̄ + S·β + E·ψ + P·posefeat(θ)`.
pub fn blend_template(model: &HeadModel, state: &ExpressionState) -> Result<Mesh> {
    model.check_state(state)?;
    let shaped = shaped_template(model, &state.shape)?;
    let mut vertices = Vec::new();
    finish_blend(model, &shaped, &state.expression, &state.pose, &mut vertices);
    Ok(Mesh { vertices })
}

fn regress(model: &HeadModel, verts: impl Fn(usize) -> Vec3d) -> Vec<Vec3d> {
    let n = model.vertex_count();
    (0..model.joint_count())
        .map(|j| {
            let row = &model.joint_regressor[j * n..(j + 1) * n];
            let mut acc = [0.0; 3];
            for (v, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    acc = math::add3(acc, math::scale3(verts(v), w as f64));
                }
            }
            acc
        })
        .collect()
}

/// `J · vertices` for each joint.
pub fn joint_locations(model: &HeadModel, shaped: &Mesh) -> Result<Vec<Vec3>> {
    if shaped.vertices.len() != model.vertex_count() {
        return Err(Error::param(format!(
            "mesh has {} vertices, model has {}",
            shaped.vertices.len(),
            model.vertex_count()
        )));
    }
    Ok(regress(model, |v| math::to_f64(shaped.vertices[v]))
        .into_iter()
        .map(math::to_f32)
        .collect())
}

pub(crate) fn joint_locations_f64(model: &HeadModel, shaped: &[Vec3d]) -> Vec<Vec3d> {
    regress(model, |v| shaped[v])
}

/// Per-joint skinning transform in displacement form:
/// `x ↦ x + linear·x + offset`. Both parts are exactly zero for an
/// unrotated joint.
#[derive(Debug, Clone, Copy)]
struct JointDelta {
    linear: Mat3d,
    offset: Vec3d,
}

fn joint_deltas(model: &HeadModel, joints: &[Vec3d], pose: &[[f32; 3]]) -> Vec<JointDelta> {
    let k = model.joint_count();
    let mut world: Vec<Mat3d> = Vec::with_capacity(k);
    // Posed joint location minus rest joint location.
    let mut moved: Vec<Vec3d> = Vec::with_capacity(k);
    for j in 0..k {
        let local = math::rodrigues(math::to_f64(pose[j]));
        if j == 0 {
            world.push(local);
            moved.push([0.0; 3]);
        } else {
            let p = model.joint_parents[j] as usize;
            let parent_delta = math::mat_sub(&world[p], &math::IDENTITY_MAT);
            let bone = math::sub3(joints[j], joints[p]);
            moved.push(math::add3(moved[p], math::mat_vec(&parent_delta, bone)));
            world.push(math::mat_mul(&world[p], &local));
        }
    }
    (0..k)
        .map(|j| {
            let linear = math::mat_sub(&world[j], &math::IDENTITY_MAT);
            let offset = math::sub3(moved[j], math::mat_vec(&linear, joints[j]));
            JointDelta { linear, offset }
        })
        .collect()
}

pub(crate) fn skin_into(
    model: &HeadModel,
    rest: &[Vec3],
    joints: &[Vec3d],
    pose: &[[f32; 3]],
    out: &mut Vec<Vec3>,
) {
    let k = model.joint_count();
    out.resize(rest.len(), [0.0; 3]);
    if pose.iter().all(|p| *p == [0.0; 3]) {
        out.copy_from_slice(rest);
        return;
    }
    let deltas = joint_deltas(model, joints, pose);
    let active: Vec<bool> = deltas
        .iter()
        .map(|d| d.linear != [[0.0; 3]; 3] || d.offset != [0.0; 3])
        .collect();
    out.par_chunks_mut(VERTEX_CHUNK)
        .enumerate()
        .for_each(|(chunk, dst)| {
            for (o, slot) in dst.iter_mut().enumerate() {
                let v = chunk * VERTEX_CHUNK + o;
                let weights = &model.skinning_weights[v * k..(v + 1) * k];
                let x = math::to_f64(rest[v]);
                let mut m = [[0.0f64; 3]; 3];
                let mut b = [0.0f64; 3];
                for (j, &w) in weights.iter().enumerate() {
                    if w == 0.0 || !active[j] {
                        continue;
                    }
                    let w = w as f64;
                    let d = &deltas[j];
                    for r in 0..3 {
                        for c in 0..3 {
                            m[r][c] += w * d.linear[r][c];
                        }
                        b[r] += w * d.offset[r];
                    }
                }
                let disp = math::add3(math::mat_vec(&m, x), b);
                *slot = math::to_f32(math::add3(x, disp));
            }
        });
}

/// Linear blend skinning of `rest` about `joints` by `pose`.
pub fn skin(model: &HeadModel, rest: &Mesh, joints: &[Vec3], pose: &[[f32; 3]]) -> Result<Mesh> {
    if pose.len() != model.joint_count() || joints.len() != model.joint_count() {
        return Err(Error::param(format!(
            "pose/joints must have {} entries",
            model.joint_count()
        )));
    }
    if rest.vertices.len() != model.vertex_count() {
        return Err(Error::param("rest mesh vertex count mismatch"));
    }
    if !pose.as_flattened().iter().all(|x| x.is_finite()) {
        return Err(Error::param("non-finite pose"));
    }
    let joints: Vec<Vec3d> = joints.iter().map(|&j| math::to_f64(j)).collect();
    let mut vertices = Vec::new();
    skin_into(model, &rest.vertices, &joints, pose, &mut vertices);
    Ok(Mesh { vertices })
}

/// `M(β, ψ, θ)`: blend, regress joints from the β-only mesh, then skin.
pub fn articulate(model: &HeadModel, state: &ExpressionState) -> Result<Mesh> {
    model.check_state(state)?;
    let shaped = shaped_template(model, &state.shape)?;
    let joints = joint_locations_f64(model, &shaped);
    let mut blended = Vec::new();
    finish_blend(model, &shaped, &state.expression, &state.pose, &mut blended);
    let mut vertices = Vec::new();
    skin_into(model, &blended, &joints, &state.pose, &mut vertices);
    Ok(Mesh { vertices })
}

/// Per-identity articulation cache: the β-shaped template and its joints
/// are computed once, each frame only adds expression/pose terms and skins.
/// Produces bit-identical output to [`articulate`].
#[derive(Debug, Clone)]
pub struct Articulator {
    shape: Vec<f32>,
    shaped: Vec<Vec3d>,
    joints: Vec<Vec3d>,
}

impl Articulator {
    pub fn new(model: &HeadModel, shape: &[f32]) -> Result<Self> {
        let shaped = shaped_template(model, shape)?;
        let joints = joint_locations_f64(model, &shaped);
        Ok(Self {
            shape: shape.to_vec(),
            shaped,
            joints,
        })
    }

    pub fn shape(&self) -> &[f32] {
        &self.shape
    }

    pub fn joints(&self) -> Vec<Vec3> {
        self.joints.iter().map(|&j| math::to_f32(j)).collect()
    }

    /// Articulates into caller-owned buffers. `state.shape` must equal the
    /// cached shape.
    pub fn articulate_into(
        &self,
        model: &HeadModel,
        state: &ExpressionState,
        blended: &mut Vec<Vec3>,
        out: &mut Vec<Vec3>,
    ) -> Result<()> {
        model.check_state(state)?;
        if state.shape != self.shape {
            return Err(Error::param("state shape differs from the cached identity shape"));
        }
        finish_blend(model, &self.shaped, &state.expression, &state.pose, blended);
        skin_into(model, blended, &self.joints, &state.pose, out);
        Ok(())
    }
}

/// Rewrites skinning weights and blendshape rows of mouth-cavity vertices
/// from the surrounding lips.
///
/// For a cavity vertex at depth `t`, with `near`/`far` the closest vertex of
/// the nearer and the other lip (template distance, ties go to the upper
/// lip):
///
/// * skinning weights and pose correctives: `(1 − t/2)·near + (t/2)·far`,
///   an even 50/50 mix at the deepest point;
/// * shape and expression rows: copied from `near`.
pub fn derive_mouth_cavity_weights(model: &HeadModel) -> Result<HeadModel> {
    let upper: Vec<usize> = indices_of(model, |r| r == Region::UpperLip);
    let lower: Vec<usize> = indices_of(model, |r| r == Region::LowerLip);
    let cavity: Vec<usize> = indices_of(model, |r| matches!(r, Region::Cavity { .. }));
    if upper.is_empty() || lower.is_empty() {
        return Err(Error::Model("missing upper_lip/lower_lip region labels".into()));
    }
    if cavity.is_empty() {
        return Err(Error::Model("missing cavity region labels".into()));
    }
    if model.regions.len() != model.vertex_count() {
        return Err(Error::Model("region label count does not match vertex count".into()));
    }
    let k = model.joint_count();
    let nearest = |v: usize, set: &[usize]| -> (usize, f64) {
        let p = math::to_f64(model.template_vertices[v]);
        set.iter()
            .map(|&s| {
                let d = math::sub3(math::to_f64(model.template_vertices[s]), p);
                (s, math::dot3(d, d))
            })
            .fold((usize::MAX, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            })
    };
    let mut out = model.clone();
    let dp = model.pose_feature_dim();
    for &v in &cavity {
        let t = model.regions[v].depth() as f64;
        let (u, du) = nearest(v, &upper);
        let (l, dl) = nearest(v, &lower);
        let (near, far) = if du <= dl { (u, l) } else { (l, u) };
        let (wn, wf) = (1.0 - 0.5 * t, 0.5 * t);

        for j in 0..k {
            let a = model.skinning_weights[near * k + j] as f64;
            let b = model.skinning_weights[far * k + j] as f64;
            out.skinning_weights[v * k + j] = (wn * a + wf * b) as f32;
        }
        for c in 0..3 {
            for f in 0..dp {
                let a = model.pose_basis[(near * 3 + c) * dp + f] as f64;
                let b = model.pose_basis[(far * 3 + c) * dp + f] as f64;
                out.pose_basis[(v * 3 + c) * dp + f] = (wn * a + wf * b) as f32;
            }
        }
        copy_rows(&mut out.shape_basis, &model.shape_basis, model.shape_dim, near, v);
        copy_rows(
            &mut out.expression_basis,
            &model.expression_basis,
            model.expression_dim,
            near,
            v,
        );
    }
    Ok(out)
}

fn indices_of(model: &HeadModel, pred: impl Fn(Region) -> bool) -> Vec<usize> {
    model
        .regions
        .iter()
        .enumerate()
        .filter(|(_, r)| pred(**r))
        .map(|(i, _)| i)
        .collect()
}

fn copy_rows(dst: &mut [f32], src: &[f32], d: usize, from: usize, to: usize) {
    let n = 3 * d;
    dst[to * n..(to + 1) * n].copy_from_slice(&src[from * n..(from + 1) * n]);
}
