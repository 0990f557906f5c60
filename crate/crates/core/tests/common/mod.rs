#![allow(dead_code)]

use std::sync::Arc;

use gausshead_core::assets::generate_synthetic_fixture;
use gausshead_core::compose::ResidualAttributes;
use gausshead_core::math::Vec3;
use gausshead_core::rasterizer::{ALPHA_MIN, TRANSMITTANCE_MIN};
use gausshead_core::{Avatar, AvatarAsset, Camera, GaussianCloud, HeadModel};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(r: usize) -> (HeadModel, Arc<AvatarAsset>) {
    let (model, asset) = generate_synthetic_fixture(7, r).expect("fixture");
    (model, Arc::new(asset))
}

/// Front-to-back blend written as the plain sum `Σ cᵢ αᵢ Πⱼ<ᵢ (1 − αⱼ)`,
/// with every product recomputed from scratch, in f64. Fragments below
/// 1/255 are skipped and accumulation stops after the fragment that takes
/// transmittance under 1e-4.
pub fn literal_blend(fragments: &[(f32, [f32; 3])], background: [f32; 3]) -> [f64; 4] {
    let kept: Vec<(f64, [f64; 3])> = fragments
        .iter()
        .filter(|f| f.0 >= ALPHA_MIN)
        .map(|f| (f.0 as f64, f.1.map(f64::from)))
        .collect();
    let transmittance = |i: usize| -> f64 { kept[..i].iter().map(|f| 1.0 - f.0).product() };
    let mut color = [0.0f64; 3];
    let mut used = kept.len();
    for i in 0..kept.len() {
        let t = transmittance(i);
        for c in 0..3 {
            color[c] += kept[i].1[c] * kept[i].0 * t;
        }
        if ((t * (1.0 - kept[i].0)) as f32) < TRANSMITTANCE_MIN {
            used = i + 1;
            break;
        }
    }
    let t = transmittance(used);
    [
        color[0] + t * background[0] as f64,
        color[1] + t * background[1] as f64,
        color[2] + t * background[2] as f64,
        1.0 - t,
    ]
}

pub fn random_fragments(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f32, [f32; 3])> {
    (0..n)
        .map(|_| {
            let a = if rng.random::<f32>() < 0.15 {
                rng.random::<f32>() * 0.004
            } else {
                rng.random::<f32>() * 0.99
            };
            (a, [rng.random(), rng.random(), rng.random()])
        })
        .collect()
}

/// Random orbit camera around the head.
pub fn random_camera(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Camera {
    Camera::orbit(
        rng.random_range(-0.7..0.7),
        rng.random_range(-0.35..0.35),
        rng.random_range(0.45..0.8),
        [0.0, 0.0, 0.0],
        rng.random_range(1.5..2.5),
        width,
        height,
    )
}

/// Random expression in `[-2, 2]` and jaw opening in `[0, 0.3]` rad.
pub fn random_expression(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<f32>, [f32; 3]) {
    let psi = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    (psi, [rng.random_range(0.0..0.3), rng.random_range(-0.05..0.05), 0.0])
}

/// Animated fixture cloud for a random expression.
pub fn random_cloud(avatar: &Avatar, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let (psi, jaw) = random_expression(rng, avatar.model().expression_dim);
    let state = avatar.state(&psi, jaw).expect("state");
    let provider = avatar.default_provider();
    avatar.build_cloud(&state, Some(provider.as_ref())).expect("cloud")
}

/// Keeps `count` Gaussians picked uniformly without replacement, in index
/// order.
pub fn subsample(cloud: &GaussianCloud, count: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    if cloud.len() <= count {
        return cloud.clone();
    }
    let mut keep = sample(rng, cloud.len(), count).into_vec();
    keep.sort_unstable();
    let stride = cloud.sh_stride();
    GaussianCloud {
        mu: keep.iter().map(|&i| cloud.mu[i]).collect(),
        scale: keep.iter().map(|&i| cloud.scale[i]).collect(),
        rotation: keep.iter().map(|&i| cloud.rotation[i]).collect(),
        sh_degree: cloud.sh_degree,
        sh: keep
            .iter()
            .flat_map(|&i| cloud.sh[i * stride..(i + 1) * stride].iter().copied())
            .collect(),
        opacity: keep.iter().map(|&i| cloud.opacity[i]).collect(),
    }
}

pub fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn pixels_bitwise_equal(a: &[[f32; 4]], b: &[[f32; 4]]) -> bool {
    same_bits(a.as_flattened(), b.as_flattened())
}

/// Plain loops over every row for the five regularizer terms.
pub fn regularizer_oracle(
    position_offset: &[Vec3],
    log_scale: &[Vec3],
    opacity: &[f32],
    residuals: &ResidualAttributes,
) -> [f64; 5] {
    let n = position_offset.len() as f64;
    let mut sums = [0.0f64; 5];
    for i in 0..position_offset.len() {
        for c in 0..3 {
            sums[0] += (position_offset[i][c] as f64).powi(2);
            sums[1] += (log_scale[i][c] as f64).powi(2);
            sums[3] += (residuals.d_mu[i][c] as f64).powi(2);
            sums[4] += (residuals.d_log_scale[i][c] as f64).powi(2);
        }
        let a = opacity[i] as f64;
        sums[2] += 0.5 * ((a + 1e-6).ln() + (1.0 - a + 1e-6).ln());
    }
    sums.map(|s| s / n)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<Vec3> {
    (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-scale..scale)))
        .collect()
}
