mod common;

use std::time::Instant;

use gausshead_core::assets::{encode_asset, generate_synthetic_fixture, validate_asset};
use gausshead_core::compose::ZeroDeformation;
use gausshead_core::geomcue::{expression_displacement, render_cue, DEFAULT_ENCODING_SCALE};
use gausshead_core::headmodel::articulate;
use gausshead_core::rasterizer::render_reference;
use gausshead_core::uvatlas::{build_uv_grid, surface_interpolate};
use gausshead_core::{Avatar, Camera, GaussianCloud, Renderer};

use common::*;

#[test]
fn fixture_is_deterministic_and_dense_enough() {
    let (_, a) = generate_synthetic_fixture(7, 256).unwrap();
    let (_, b) = generate_synthetic_fixture(7, 256).unwrap();
    assert!(encode_asset(&a) == encode_asset(&b));
    let n256 = a.grid.len();
    assert!(n256 >= 32768, "R=256 has {n256} samples");

    let grid512 = build_uv_grid(&a.model, 512).unwrap();
    let ratio = grid512.len() as f64 / n256 as f64;
    assert!((ratio - 4.0).abs() <= 0.4, "R=512/R=256 sample ratio {ratio}");
}

#[test]
fn fixture_asset_validates_clean() {
    let (_, asset) = fixture(64);
    assert_eq!(validate_asset(&asset), vec![]);
}

#[test]
fn inverted_scale_config_is_one_config_violation() {
    let (_, asset) = fixture(64);
    let mut asset = (*asset).clone();
    asset.config.s_init = asset.config.s_max;
    let v = validate_asset(&asset);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].category, "config");
}

#[test]
fn nan_in_a_map_names_the_channel() {
    let (_, asset) = fixture(64);
    let mut asset = (*asset).clone();
    let r = asset.maps.resolution;
    asset.maps.opacity_logit.plane_mut(0, r)[r * r / 2] = f32::NAN;
    let v = validate_asset(&asset);
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].category, "finiteness");
    assert!(v[0].message.contains("opacity_logit"), "{}", v[0].message);
}

#[test]
fn zero_provider_moves_samples_with_the_mesh() {
    let (model, asset) = fixture(64);
    let avatar = Avatar::new(asset.clone()).unwrap();
    let zero = ZeroDeformation {
        expression_dim: model.expression_dim,
        sample_count: avatar.gaussian_count(),
    };
    let neutral = avatar.build_cloud(&avatar.neutral_state(), Some(&zero)).unwrap();
    let mut psi = vec![0.0; model.expression_dim];
    psi[0] = 1.5;
    psi[3] = -1.0;
    let state = avatar.state(&psi, [0.25, 0.0, 0.0]).unwrap();
    let moved = avatar.build_cloud(&state, Some(&zero)).unwrap();

    let base0 = surface_interpolate(&articulate(&model, &avatar.neutral_state()).unwrap(), &model.triangles, &asset.grid).unwrap();
    let base1 = surface_interpolate(&articulate(&model, &state).unwrap(), &model.triangles, &asset.grid).unwrap();
    let mut worst = 0.0f32;
    let mut moved_any = false;
    for i in 0..neutral.len() {
        for c in 0..3 {
            let want = base1[i][c] - base0[i][c];
            let got = moved.mu[i][c] - neutral.mu[i][c];
            worst = worst.max((got - want).abs());
            moved_any |= want.abs() > 1e-3;
        }
    }
    assert!(moved_any);
    assert!(worst <= 1e-6, "{worst}");
    assert!(same_bits(&neutral.opacity, &moved.opacity));
}

#[test]
fn empty_cloud_renders_background() {
    let cloud = GaussianCloud::default();
    let cam = Camera::default_head(40, 24);
    let bg = [0.2, 0.4, 0.6];
    for fb in [
        Renderer::new(Some(1)).unwrap().render(&cloud, &cam, bg).unwrap(),
        render_reference(&cloud, &cam, bg).unwrap(),
    ] {
        assert!(fb.pixels.iter().all(|p| *p == [0.2, 0.4, 0.6, 0.0]));
    }
}

#[test]
fn zero_sized_image_is_rejected() {
    let cam = Camera::default_head(0, 16);
    assert!(Renderer::new(Some(1)).unwrap().render(&GaussianCloud::default(), &cam, [0.0; 3]).is_err());
}

#[test]
fn jaw_open_cue_colors_chin_not_forehead() {
    let (model, _) = fixture(64);
    let cam = Camera::default_head(192, 192);
    let state = model.expression_state(&vec![0.0; model.expression_dim], [0.3, 0.0, 0.0]).unwrap();
    let cue = render_cue(&model, &state, &cam, DEFAULT_ENCODING_SCALE).unwrap();
    let field = expression_displacement(&model, &state.expression, [0.3, 0.0, 0.0]).unwrap();
    let mesh = articulate(&model, &state).unwrap();
    let jaw = model.jaw_joint().unwrap();
    let k = model.joint_count();

    let front = |v: usize| mesh.vertices[v][2] > 0.06;
    let pixel_of = |v: usize| -> [f32; 3] {
        let p = cam.to_camera(mesh.vertices[v]);
        let x = (cam.fx * p[0] / p[2] + cam.cx) as usize;
        let y = (cam.fy * p[1] / p[2] + cam.cy) as usize;
        cue.pixel(x, y)
    };
    let deviation = |c: [f32; 3]| c.iter().map(|x| (x - 0.5).abs()).fold(0.0f32, f32::max);

    let chin: Vec<usize> = (0..model.vertex_count())
        .filter(|&v| front(v) && model.skinning_weights[v * k + jaw] > 0.99)
        .collect();
    let forehead: Vec<usize> = (0..model.vertex_count())
        .filter(|&v| front(v) && mesh.vertices[v][1] > 0.06 && field.vectors[v] == [0.0; 3])
        .collect();
    assert!(chin.len() > 10 && forehead.len() > 10, "{} {}", chin.len(), forehead.len());

    let chin_dev = chin.iter().map(|&v| deviation(pixel_of(v))).sum::<f32>() / chin.len() as f32;
    let chin_oracle = chin
        .iter()
        .map(|&v| field.vectors[v].iter().map(|d| (d / (2.0 * DEFAULT_ENCODING_SCALE)).abs()).fold(0.0f32, f32::max))
        .sum::<f32>()
        / chin.len() as f32;
    let forehead_dev = forehead.iter().map(|&v| deviation(pixel_of(v))).fold(0.0f32, f32::max);
    assert!(chin_dev > 0.02, "chin deviation {chin_dev}");
    assert!((chin_dev - chin_oracle).abs() < 0.25 * chin_oracle, "chin {chin_dev} vs oracle {chin_oracle}");
    assert!(forehead_dev < 1e-3, "forehead deviation {forehead_dev}");
}

#[test]
fn tiled_renderer_outpaces_reference() {
    let (_, asset) = fixture(256);
    let avatar = Avatar::new(asset).unwrap();
    let cloud = avatar.build_cloud(&avatar.neutral_state(), None).unwrap();
    let cloud = subsample(&cloud, 65536, &mut rng(9));
    assert_eq!(cloud.len(), 65536);
    let cam = Camera::default_head(256, 256);
    let renderer = Renderer::new(None).unwrap();
    renderer.render(&cloud, &cam, [0.0; 3]).unwrap();
    let t = Instant::now();
    renderer.render(&cloud, &cam, [0.0; 3]).unwrap();
    let tiled = t.elapsed();
    let t = Instant::now();
    render_reference(&cloud, &cam, [0.0; 3]).unwrap();
    let reference = t.elapsed();
    let speedup = reference.as_secs_f64() / tiled.as_secs_f64();
    assert!(speedup >= 5.0, "speedup {speedup:.1}x");
}
