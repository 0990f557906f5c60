use rayon::prelude::*;

use super::blend::{splat_alpha, PixelAccum};
use super::tiled::{check_inputs, depth_order};
use super::{project, Camera, FrameBuffer};
use crate::compose::GaussianCloud;
use crate::error::Result;

/// Brute-force renderer: every pixel visits every projected splat in global
/// depth order, with no tiling and no transmittance cut-off.
pub fn render_reference(cloud: &GaussianCloud, cam: &Camera, background: [f32; 3]) -> Result<FrameBuffer> {
    check_inputs(cloud, cam, background)?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let projection = project(cloud, cam);
    let sorted: Vec<_> = depth_order(&projection.splats)
        .into_iter()
        .map(|p| projection.splats[p as usize])
        .collect();
    let mut fb = FrameBuffer::new(w, h, background);
    fb.pixels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let py = y as f32 + 0.5;
        for (x, out) in row.iter_mut().enumerate() {
            let px = x as f32 + 0.5;
            let mut acc = PixelAccum::new();
            for s in &sorted {
                acc.add::<false>(splat_alpha(s, px, py), s.rgb);
            }
            *out = acc.finish(background);
        }
    });
    Ok(fb)
}
