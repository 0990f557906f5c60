//! CPU runtime for animatable 3D Gaussian head avatars.
//!
//! The pipeline anchors a UV-sampled set of Gaussians on an articulated
//! parametric head mesh:
//!
//! ```text
//! (β, ψ, θ) ──► headmodel::articulate ──► uvatlas::surface_interpolate ─┐
//!                                                                        ├─► compose::lift ──► rasterizer::render
//! canonical maps ──► uvatlas::grid_sample ──► compose::compose ◄── residuals (DeformationProvider)
//! ```
//!
//! Everything that depends only on the identity (UV grid, sampled canonical
//! attributes, shaped mesh, joint locations) is computed once by
//! [`compose::Avatar`]; a frame then costs articulation, residual evaluation,
//! composition, lifting and rasterization.

pub mod assets;
pub mod compose;
mod error;
pub mod frame;
pub mod geomcue;
pub mod headmodel;
pub mod math;
pub mod rasterizer;
pub mod uvatlas;

pub use error::{Error, FormatError, Result};
pub use frame::{FramePipeline, FrameTimes};

pub use assets::{AvatarAsset, ParamRecord};
pub use compose::{
    ActivationConfig, Avatar, DeformationProvider, GaussianCloud, LinearDeformation,
    ResidualAttributes, ZeroDeformation,
};
pub use headmodel::{ExpressionState, HeadModel, Mesh, Region};
pub use rasterizer::{Camera, FrameBuffer, Renderer};
pub use uvatlas::{AttributeMaps, UvGrid};
