//! The full per-frame path with reusable buffers.

use std::time::{Duration, Instant};

use crate::compose::{Avatar, FrameScratch, GaussianCloud, StageTimes};
use crate::error::Result;
use crate::headmodel::ExpressionState;
use crate::rasterizer::{Camera, FrameBuffer, RenderStats, Renderer};

/// Stage timings of one [`FramePipeline::render`] call.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameTimes {
    pub stages: StageTimes,
    pub render: RenderStats,
    pub total: Duration,
}

/// Articulate, evaluate residuals, compose, lift and render, reusing the
/// same buffers every frame. Runs inside the renderer's pool.
#[derive(Debug)]
pub struct FramePipeline {
    scratch: FrameScratch,
    frame: FrameBuffer,
}

impl Default for FramePipeline {
    fn default() -> Self {
        Self {
            scratch: FrameScratch::default(),
            frame: FrameBuffer::new(0, 0, [0.0; 3]),
        }
    }
}

impl FramePipeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Renders `state` with the avatar's default deformation provider.
    pub fn render(
        &mut self,
        avatar: &Avatar,
        renderer: &Renderer,
        state: &ExpressionState,
        cam: &Camera,
        background: [f32; 3],
    ) -> Result<FrameTimes> {
        let start = Instant::now();
        let Self { scratch, frame } = self;
        renderer.install(|| {
            let provider = avatar.default_provider();
            let stages = avatar.build_cloud_into(state, Some(provider.as_ref()), scratch)?;
            let render = renderer.render_into(&scratch.cloud, cam, background, frame)?;
            Ok(FrameTimes {
                stages,
                render,
                total: start.elapsed(),
            })
        })
    }

    /// The most recently rendered frame.
    pub fn frame(&self) -> &FrameBuffer {
        &self.frame
    }

    pub fn cloud(&self) -> &GaussianCloud {
        &self.scratch.cloud
    }
}
