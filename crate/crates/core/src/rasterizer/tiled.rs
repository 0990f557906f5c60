use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::blend::{ceil_i32, floor_i32, PixelAccum, RowSpans, TileSplat};
use super::{project, Camera, FrameBuffer, ProjectedSplat, TILE_SIZE};
use crate::compose::GaussianCloud;
use crate::error::{Error, Result};

/// Per-call statistics of the tiled renderer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderStats {
    pub project: Duration,
    pub sort_bin: Duration,
    pub blend: Duration,
    pub visible: usize,
    pub culled: usize,
    /// Total (splat, tile) pairs after binning.
    pub tile_pairs: usize,
}

/// Tiled renderer bound to a worker pool.
#[derive(Debug)]
pub struct Renderer {
    pool: Option<rayon::ThreadPool>,
}

impl Default for Renderer {
    fn default() -> Self {
        Self { pool: None }
    }
}

impl Renderer {
    /// `None` uses the global rayon pool; `Some(n)` a dedicated pool with
    /// `n` workers.
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let pool = match threads {
            None => None,
            Some(0) => return Err(Error::param("thread count must be at least 1")),
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            ),
        };
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool
            .as_ref()
            .map_or_else(rayon::current_num_threads, |p| p.current_num_threads())
    }

    /// Runs `f` inside this renderer's pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn render(&self, cloud: &GaussianCloud, cam: &Camera, background: [f32; 3]) -> Result<FrameBuffer> {
        let mut fb = FrameBuffer::new(0, 0, background);
        self.render_into(cloud, cam, background, &mut fb)?;
        Ok(fb)
    }

    pub fn render_into(
        &self,
        cloud: &GaussianCloud,
        cam: &Camera,
        background: [f32; 3],
        out: &mut FrameBuffer,
    ) -> Result<RenderStats> {
        check_inputs(cloud, cam, background)?;
        self.install(|| render_tiled(cloud, cam, background, out))
    }
}

pub(crate) fn check_inputs(cloud: &GaussianCloud, cam: &Camera, background: [f32; 3]) -> Result<()> {
    cam.validate()?;
    cloud.check()?;
    if !background.iter().all(|c| c.is_finite()) {
        return Err(Error::param("background color must be finite"));
    }
    Ok(())
}

/// Renders with the global rayon pool.
pub fn render(cloud: &GaussianCloud, cam: &Camera, background: [f32; 3]) -> Result<FrameBuffer> {
    Renderer::default().render(cloud, cam, background)
}

/// Positions of `splats` in global depth order: camera-space z, then
/// Gaussian index. `splats` must be in index order, as [`project`] returns
/// them; `depth > 0`, so the float bit pattern orders like the value.
pub(crate) fn depth_order(splats: &[ProjectedSplat]) -> Vec<u32> {
    let keys: Vec<u32> = splats.iter().map(|s| s.depth.to_bits()).collect();
    radix_argsort(&keys)
}

/// Stable argsort of 32-bit keys: three 11-bit LSD passes. Stability makes
/// equal keys keep their input (index) order.
fn radix_argsort(keys: &[u32]) -> Vec<u32> {
    const BITS: u32 = 11;
    const BUCKETS: usize = 1 << BITS;
    let mut order: Vec<u32> = (0..keys.len() as u32).collect();
    let mut next = vec![0u32; keys.len()];
    for pass in 0..3 {
        let shift = pass * BITS;
        let digit = |k: u32| ((k >> shift) as usize) & (BUCKETS - 1);
        let mut offsets = vec![0usize; BUCKETS];
        for &k in keys {
            offsets[digit(k)] += 1;
        }
        if offsets.iter().any(|&c| c == keys.len()) {
            continue;
        }
        let mut sum = 0;
        for c in offsets.iter_mut() {
            let n = *c;
            *c = sum;
            sum += n;
        }
        for &p in &order {
            let d = digit(keys[p as usize]);
            next[offsets[d]] = p;
            offsets[d] += 1;
        }
        std::mem::swap(&mut order, &mut next);
    }
    order
}

fn render_tiled(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: [f32; 3],
    out: &mut FrameBuffer,
) -> Result<RenderStats> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut stats = RenderStats::default();

    let t0 = Instant::now();
    let projection = project(cloud, cam);
    stats.project = t0.elapsed();
    stats.visible = projection.splats.len();
    stats.culled = projection.culled;

    let t1 = Instant::now();
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let order = depth_order(&projection.splats);
    let splats = &projection.splats;
    let rects: Vec<[u32; 4]> = splats
        .par_iter()
        .map(|s| tile_rect(s, w, h, tiles_x, tiles_y))
        .collect();
    // counting sort into one flat array; each tile's list stays in depth order
    let tile_count = tiles_x * tiles_y;
    let mut offsets = vec![0usize; tile_count + 1];
    for r in &rects {
        for ty in r[2] as usize..r[3] as usize {
            for tx in r[0] as usize..r[1] as usize {
                offsets[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for t in 0..tile_count {
        offsets[t + 1] += offsets[t];
    }
    // splats are copied into the lists so each tile reads its own contiguously
    let mut cursor = offsets[..tile_count].to_vec();
    let mut lists = vec![TileSplat::default(); offsets[tile_count]];
    for &p in &order {
        let (s, r) = (&splats[p as usize], &rects[p as usize]);
        for ty in r[2] as usize..r[3] as usize {
            for tx in r[0] as usize..r[1] as usize {
                let t = ty * tiles_x + tx;
                lists[cursor[t]] = TileSplat::from(s);
                cursor[t] += 1;
            }
        }
    }
    stats.tile_pairs = lists.len();
    stats.sort_bin = t1.elapsed();

    let t2 = Instant::now();
    let tiles: Vec<(usize, usize, Vec<[f32; 4]>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let list = &lists[offsets[t]..offsets[t + 1]];
            (tx, ty, blend_tile(list, tx, ty, w, h, background))
        })
        .collect();
    out.reset(w, h, background);
    for (tx, ty, px) in tiles {
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let tw = TILE_SIZE.min(w - x0);
        for (ly, chunk) in px.chunks_exact(tw).enumerate() {
            let row = (y0 + ly) * w + x0;
            out.pixels[row..row + tw].copy_from_slice(chunk);
        }
    }
    stats.blend = t2.elapsed();
    Ok(stats)
}

/// Tile range `[x0, x1) × [y0, y1)` whose pixel centers may receive
/// `α′ ≥ 1/255` from `s`.
fn tile_rect(s: &ProjectedSplat, w: usize, h: usize, tiles_x: usize, tiles_y: usize) -> [u32; 4] {
    // one pixel of slack absorbs rounding in the radius bound
    let (lo_x, hi_x) = pixel_span(s.mean2d[0], s.extent[0]);
    let (lo_y, hi_y) = pixel_span(s.mean2d[1], s.extent[1]);
    let lo_x = lo_x.clamp(0, w as i32) as usize;
    let hi_x = hi_x.clamp(0, w as i32) as usize;
    let lo_y = lo_y.clamp(0, h as i32) as usize;
    let hi_y = hi_y.clamp(0, h as i32) as usize;
    if lo_x >= hi_x || lo_y >= hi_y {
        return [0, 0, 0, 0];
    }
    [
        (lo_x / TILE_SIZE) as u32,
        ((hi_x - 1) / TILE_SIZE + 1).min(tiles_x) as u32,
        (lo_y / TILE_SIZE) as u32,
        ((hi_y - 1) / TILE_SIZE + 1).min(tiles_y) as u32,
    ]
}

/// Pixel index range `[lo, hi)` along one axis whose centers lie within
/// `r` of `m`.
#[inline]
fn pixel_span(m: f32, r: f32) -> (i32, i32) {
    let (m, r) = (m as f64, (r + SPAN_PAD) as f64);
    (floor_i32(m - r - 0.5), ceil_i32(m + r - 0.5) + 1)
}

/// Widening of the ellipse extents against rounding, in pixels.
const SPAN_PAD: f32 = 1e-2;

fn blend_tile(
    list: &[TileSplat],
    tx: usize,
    ty: usize,
    w: usize,
    h: usize,
    background: [f32; 3],
) -> Vec<[f32; 4]> {
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let tw = TILE_SIZE.min(w - x0);
    let th = TILE_SIZE.min(h - y0);
    let mut acc = [PixelAccum::new(); TILE_SIZE * TILE_SIZE];
    let mut live = [true; TILE_SIZE * TILE_SIZE];
    let mut row_live = [tw; TILE_SIZE];
    let mut remaining = tw * th;
    // splat-outer order visits each pixel's fragments in the same depth
    // order as a per-pixel loop, but only inside the splat's footprint
    for s in list {
        let (lo_y, hi_y) = pixel_span(s.mean2d[1], s.extent_y);
        let ly0 = (lo_y - y0 as i32).clamp(0, th as i32) as usize;
        let ly1 = (hi_y - y0 as i32).clamp(0, th as i32) as usize;
        let spans = RowSpans::new(s);
        for ly in ly0..ly1 {
            if row_live[ly] == 0 {
                continue;
            }
            let py = (y0 + ly) as f32 + 0.5;
            let (lo_x, hi_x) = spans.span(py);
            let lx0 = (lo_x - x0 as i32).clamp(0, tw as i32) as usize;
            let lx1 = (hi_x - x0 as i32).clamp(0, tw as i32) as usize;
            for lx in lx0..lx1 {
                let i = ly * TILE_SIZE + lx;
                if !live[i] {
                    continue;
                }
                let px = (x0 + lx) as f32 + 0.5;
                if !acc[i].add::<true>(s.alpha_at(px, py), s.rgb) {
                    live[i] = false;
                    row_live[ly] -= 1;
                    remaining -= 1;
                }
            }
        }
        if remaining == 0 {
            break;
        }
    }
    let mut out = Vec::with_capacity(tw * th);
    for ly in 0..th {
        for lx in 0..tw {
            out.push(acc[ly * TILE_SIZE + lx].finish(background));
        }
    }
    out
}
