//! CPU tile-based Gaussian splatting.
//!
//! Protocol constants follow the usual 3DGS conventions: 0.3 px² low-pass
//! dilation, α′ capped at 0.99, fragments below 1/255 skipped, per-pixel
//! termination once transmittance drops below 1e-4, 16×16 tiles. Splats are
//! depth-sorted by camera-space z with ties broken by Gaussian index, and
//! every tile is blended sequentially by a single worker, so the output does
//! not depend on the thread count.
//!
//! A splat is binned to the tiles its `α′ ≥ 1/255` ellipse touches (with a
//! small margin) rather than a fixed 3σ box; outside that ellipse every
//! fragment would be skipped anyway, so the result matches a renderer that
//! visits every splat at every pixel.
//!
//! Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.

mod blend;
mod camera;
mod framebuffer;
mod project;
mod reference;
mod sh;
mod tiled;

pub use blend::{blend_pixel, splat_alpha, BlendResult, Fragment};
pub use camera::Camera;
pub use framebuffer::FrameBuffer;
pub(crate) use framebuffer::encode_png;
pub use project::{project, project_one, ProjectedSplat, Projection};
pub use reference::render_reference;
pub use sh::{eval_sh, rgb_to_sh0};
pub use tiled::{render, RenderStats, Renderer};

pub const TILE_SIZE: usize = 16;
pub const NEAR_PLANE: f32 = 0.01;
pub const DILATION: f32 = 0.3;
pub const ALPHA_MAX: f32 = 0.99;
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f32 = 1e-4;
