use super::{ProjectedSplat, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};

/// One depth-ordered contribution to a pixel: final `α′` and color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub alpha: f32,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendResult {
    /// Blended color including the background term.
    pub color: [f32; 3],
    pub transmittance: f32,
}

/// `α′` of `splat` at pixel center `(px, py)`; zero when the Gaussian falloff
/// is not a proper decay.
#[inline(always)]
pub fn splat_alpha(splat: &ProjectedSplat, px: f32, py: f32) -> f32 {
    TileSplat::from(splat).alpha_at(px, py)
}

/// The part of a [`ProjectedSplat`] that blending reads, packed for the
/// per-tile lists.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TileSplat {
    pub mean2d: [f32; 2],
    pub conic: [f32; 3],
    pub alpha: f32,
    pub min_power: f32,
    pub extent_y: f32,
    pub rgb: [f32; 3],
}

impl From<&ProjectedSplat> for TileSplat {
    #[inline(always)]
    fn from(s: &ProjectedSplat) -> Self {
        Self {
            mean2d: s.mean2d,
            conic: s.conic,
            alpha: s.alpha,
            min_power: s.min_power,
            extent_y: s.extent[1],
            rgb: s.rgb,
        }
    }
}

impl TileSplat {
    #[inline(always)]
    pub fn alpha_at(&self, px: f32, py: f32) -> f32 {
        let dx = self.mean2d[0] - px;
        let dy = self.mean2d[1] - py;
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        if power > 0.0 || power < self.min_power {
            return 0.0;
        }
        (self.alpha * power.exp()).min(ALPHA_MAX)
    }
}

/// Solves for the pixel columns of one splat row by row: the columns whose
/// centers reach `min_power` on a given pixel row.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowSpans {
    mx: f64,
    my: f64,
    b_over_a: f64,
    inv_a: f64,
    // disc/a² = k0 + k2·dy²
    k0: f64,
    k2: f64,
}

impl RowSpans {
    #[inline]
    pub fn new(splat: &TileSplat) -> Self {
        let [a, b, c] = splat.conic.map(f64::from);
        let m = splat.min_power as f64;
        // a·dx² + 2b·dy·dx + c·dy² + 2m ≤ 0 with dx = mean − px
        let inv_a = if a > 0.0 { 1.0 / a } else { 0.0 };
        Self {
            mx: splat.mean2d[0] as f64,
            my: splat.mean2d[1] as f64,
            b_over_a: b * inv_a,
            inv_a,
            k0: -2.0 * m * inv_a,
            k2: (b * b - a * c) * inv_a * inv_a,
        }
    }

    /// Columns `[x0, x1)` on the row with center `py`; empty when the row
    /// misses the ellipse.
    #[inline]
    pub fn span(&self, py: f32) -> (i32, i32) {
        let dy = self.my - py as f64;
        let q = self.k0 + self.k2 * dy * dy;
        if !(q >= 0.0) || self.inv_a == 0.0 {
            return (0, 0);
        }
        let root = q.sqrt();
        let centre = self.mx + self.b_over_a * dy;
        (
            ceil_i32(centre - root - 0.5 - SPAN_PAD),
            floor_i32(centre + root - 0.5 + SPAN_PAD) + 1,
        )
    }
}

// `f64::floor`/`ceil` lower to a libm call on baseline x86-64; these
// saturate like `as` for out-of-range input.
#[inline(always)]
pub(crate) fn floor_i32(x: f64) -> i32 {
    let i = x as i32;
    i - (x < i as f64) as i32
}

#[inline(always)]
pub(crate) fn ceil_i32(x: f64) -> i32 {
    let i = x as i32;
    i + (x > i as f64) as i32
}

/// Widening of [`RowSpans::span`] against rounding in the root computation.
const SPAN_PAD: f64 = 1e-3;

/// Accumulation state for front-to-back blending of one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelAccum {
    pub color: [f32; 3],
    pub transmittance: f32,
}

impl PixelAccum {
    pub const fn new() -> Self {
        Self {
            color: [0.0; 3],
            transmittance: 1.0,
        }
    }

    /// Adds one fragment. Returns `false` once the pixel is saturated and
    /// `EARLY_OUT` is set.
    #[inline(always)]
    pub fn add<const EARLY_OUT: bool>(&mut self, alpha: f32, color: [f32; 3]) -> bool {
        if alpha < ALPHA_MIN {
            return true;
        }
        let w = alpha * self.transmittance;
        self.color[0] += color[0] * w;
        self.color[1] += color[1] * w;
        self.color[2] += color[2] * w;
        self.transmittance *= 1.0 - alpha;
        !(EARLY_OUT && self.transmittance < TRANSMITTANCE_MIN)
    }

    #[inline(always)]
    pub fn finish(self, background: [f32; 3]) -> [f32; 4] {
        let t = self.transmittance;
        [
            self.color[0] + t * background[0],
            self.color[1] + t * background[1],
            self.color[2] + t * background[2],
            1.0 - t,
        ]
    }
}

/// `C = Σ cᵢ α′ᵢ Πⱼ<ᵢ (1 − α′ⱼ)` over depth-sorted fragments, plus the
/// remaining transmittance times `background`. Fragments with
/// `α′ < 1/255` are skipped; accumulation stops once transmittance falls
/// below 1e-4.
pub fn blend_pixel<I>(fragments: I, background: [f32; 3]) -> BlendResult
where
    I: IntoIterator<Item = Fragment>,
{
    let mut acc = PixelAccum::new();
    for f in fragments {
        if !acc.add::<true>(f.alpha, f.color) {
            break;
        }
    }
    let out = acc.finish(background);
    BlendResult {
        color: [out[0], out[1], out[2]],
        transmittance: acc.transmittance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_opaque_fragment() {
        let r = blend_pixel(
            [Fragment {
                alpha: 1.0,
                color: [1.0, 0.0, 0.0],
            }],
            [0.3, 0.3, 0.3],
        );
        assert_eq!(r.color, [1.0, 0.0, 0.0]);
        assert_eq!(r.transmittance, 0.0);
    }

    #[test]
    fn two_half_fragments() {
        let r = blend_pixel(
            [
                Fragment {
                    alpha: 0.5,
                    color: [1.0; 3],
                },
                Fragment {
                    alpha: 0.5,
                    color: [0.0; 3],
                },
            ],
            [0.0; 3],
        );
        assert_eq!(r.color, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn random_fragments_match_literal_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let frags: Vec<Fragment> = (0..10)
                .map(|_| Fragment {
                    alpha: rng.random_range(0.02..0.5),
                    color: [rng.random(), rng.random(), rng.random()],
                })
                .collect();
            let bg = [rng.random(), rng.random(), rng.random()];
            let r = blend_pixel(frags.iter().copied(), bg);
            for ch in 0..3 {
                let mut c = 0.0f64;
                for i in 0..frags.len() {
                    let prod: f64 = frags[..i].iter().map(|f| 1.0 - f.alpha as f64).product();
                    c += frags[i].color[ch] as f64 * frags[i].alpha as f64 * prod;
                }
                let t: f64 = frags.iter().map(|f| 1.0 - f.alpha as f64).product();
                c += t * bg[ch] as f64;
                assert!((r.color[ch] as f64 - c).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn faint_fragments_are_skipped() {
        let r = blend_pixel(
            [Fragment {
                alpha: 0.003,
                color: [1.0; 3],
            }],
            [0.0; 3],
        );
        assert_eq!(r.color, [0.0; 3]);
        assert_eq!(r.transmittance, 1.0);
    }

    #[test]
    fn saturated_pixel_stops_accumulating() {
        let frags = (0..6).map(|i| Fragment {
            alpha: 0.95,
            color: [(i + 1) as f32; 3],
        });
        let r = blend_pixel(frags, [0.0; 3]);
        // T after k fragments is 0.05^k; the fourth brings it to 6.25e-6
        let expect: f64 = (0..4).map(|i| (i + 1) as f64 * 0.95 * 0.05f64.powi(i)).sum();
        assert!((r.color[0] as f64 - expect).abs() < 1e-5);
        assert!(r.transmittance < 1e-5);
    }
}
