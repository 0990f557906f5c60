use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// RGBA image with f32 channels. Alpha is `1 − T`, the coverage of the
/// blended splats.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 4]>,
    pub background: [f32; 3],
}

impl FrameBuffer {
    pub fn new(width: usize, height: usize, background: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![[background[0], background[1], background[2], 0.0]; width * height],
            background,
        }
    }

    pub(crate) fn reset(&mut self, width: usize, height: usize, background: [f32; 3]) {
        self.width = width;
        self.height = height;
        self.background = background;
        self.pixels.clear();
        self.pixels
            .resize(width * height, [background[0], background[1], background[2], 0.0]);
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 4] {
        self.pixels[y * self.width + x]
    }

    /// 8-bit RGBA, rows top to bottom. Values are clamped to [0, 1] and
    /// rounded half to even.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 4);
        self.write_rgba8(&mut out);
        out
    }

    /// Appends the [`to_rgba8`](Self::to_rgba8) bytes to `out`.
    pub fn write_rgba8(&self, out: &mut Vec<u8>) {
        out.reserve(self.pixels.len() * 4);
        for p in &self.pixels {
            out.extend(p.iter().map(|&c| quantize(c)));
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        encode_png(BufWriter::new(file), self.width as u32, self.height as u32, &self.to_rgba8())
    }

    /// Planar f32 dump: `R plane, G plane, B plane, A plane`, each
    /// `height × width` little-endian.
    pub fn to_raw_planar(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 16);
        for ch in 0..4 {
            for p in &self.pixels {
                out.extend_from_slice(&p[ch].to_le_bytes());
            }
        }
        out
    }

    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_raw_planar())?;
        Ok(())
    }

    pub fn from_raw_planar(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let n = width * height;
        if bytes.len() != n * 16 {
            return Err(Error::param(format!(
                "raw dump has {} bytes, expected {} for {width}x{height}",
                bytes.len(),
                n * 16
            )));
        }
        let mut fb = Self::new(width, height, [0.0; 3]);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let (ch, i) = (k / n, k % n);
            fb.pixels[i][ch] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(fb)
    }

    /// Largest per-channel absolute difference; infinite on size mismatch.
    pub fn max_abs_diff(&self, other: &FrameBuffer) -> f32 {
        if self.width != other.width || self.height != other.height {
            return f32::INFINITY;
        }
        self.pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..4).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f32::max)
    }
}

#[inline]
fn quantize(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

pub(crate) fn encode_png<W: Write>(w: W, width: u32, height: u32, rgba: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width, height);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(rgba)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
