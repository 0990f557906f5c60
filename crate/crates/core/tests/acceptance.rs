//! Acceptance suite. Prints one PASS/FAIL line per criterion. With
//! `GAUSSHEAD_ACCEPTANCE_STRICT=1` any failure also fails the process.

mod common;

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gausshead_core::assets::{
    decode_asset, decode_head_model, encode_asset, encode_head_model, load_asset, load_head_model,
    parse_track, regularizer_metrics, save_asset, save_head_model, RegularizerWeights,
};
use gausshead_core::compose::{activate_position, activate_scale, FrameScratch};
use gausshead_core::geomcue::{
    bake_conditioning_map, cue_vertex_colors, encode_displacement, expression_displacement_with,
    rasterize_colored_mesh, render_cue, DisplacementField, DisplacementKind, JawMode,
    DEFAULT_ENCODING_SCALE,
};
use gausshead_core::headmodel::{articulate, blend_template, joint_locations, skin};
use gausshead_core::math::{self, axis_angle, rodrigues};
use gausshead_core::rasterizer::{blend_pixel, render_reference, Fragment};
use gausshead_core::{
    ActivationConfig, Avatar, Camera, Error, FormatError, FrameBuffer, ParamRecord, Renderer,
    ResidualAttributes,
};
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("oracle-equivalence", oracle_equivalence),
        ("blend-formula", blend_formula),
        ("articulation", articulation),
        ("activation-bounds", activation_bounds),
        ("composition-identity", composition_identity),
        ("geometry-cue", geometry_cue),
        ("determinism", determinism),
        ("performance", performance),
        ("regularizer-metrics", regularizer),
        ("file-formats", file_formats),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name}: {d} ({secs:.1} s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} ({secs:.1} s)");
            }
        }
    }
    if failed == 0 {
        return ExitCode::SUCCESS;
    }
    println!("{failed} of {} criteria failed", checks.len());
    if std::env::var_os("GAUSSHEAD_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (_, asset) = fixture(64);
    let avatar = Avatar::new(asset).unwrap();
    let renderer = Renderer::new(None).unwrap();
    let mut r = rng(101);
    let mut worst = 0.0f32;
    for _ in 0..50 {
        let full = random_cloud(&avatar, &mut r);
        let cloud = subsample(&full, 2048, &mut r);
        let cam = random_camera(&mut r, 128, 128);
        let bg = [r.random(), r.random(), r.random()];
        let a = renderer.render(&cloud, &cam, bg).unwrap();
        let b = render_reference(&cloud, &cam, bg).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-4 && secs < 60.0,
        format!("50 scenes, max channel diff {worst:.4e} (tol 1e-4), {secs:.1} s (limit 60 s)"),
    )
}

fn blend_formula() -> Outcome {
    let opaque = blend_pixel(
        [Fragment {
            alpha: 1.0,
            color: [1.0, 0.0, 0.0],
        }],
        [0.0; 3],
    );
    if opaque.color != [1.0, 0.0, 0.0] {
        return Err(format!("single opaque fragment gave {:?}", opaque.color));
    }
    let halves = blend_pixel(
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
    if halves.color != [0.5; 3] {
        return Err(format!("two half fragments gave {:?}", halves.color));
    }
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = if case < 500 { 10 } else { r.random_range(1..40) };
        let frags = random_fragments(&mut r, n);
        let bg = [r.random(), r.random(), r.random()];
        let got = blend_pixel(frags.iter().map(|&(alpha, color)| Fragment { alpha, color }), bg);
        let want = literal_blend(&frags, bg);
        for c in 0..3 {
            worst = worst.max((got.color[c] as f64 - want[c]).abs());
        }
        worst = worst.max((got.transmittance as f64 - (1.0 - want[3])).abs());
    }
    ensure(
        worst <= 1e-6,
        format!("two exact examples, 1000 random pixels max diff {worst:.2e} (tol 1e-6)"),
    )
}

fn articulation() -> Outcome {
    let start = Instant::now();
    let (model, _) = fixture(64);
    let mut r = rng(303);

    let neutral = articulate(&model, &model.neutral_state()).unwrap();
    if neutral.vertices != model.template_vertices {
        return Err("neutral articulation differs from the template".into());
    }

    let mut equi = 0.0f64;
    for _ in 0..20 {
        let mut state = model.neutral_state();
        state.shape.iter_mut().for_each(|b| *b = r.random_range(-1.5..1.5));
        state.expression.iter_mut().for_each(|p| *p = r.random_range(-1.5..1.5));
        for p in state.pose.iter_mut() {
            *p = [0; 3].map(|_| r.random_range(-0.3..0.3));
        }
        let rest = blend_template(&model, &state).unwrap();
        let shaped = {
            let mut s = model.neutral_state();
            s.shape = state.shape.clone();
            blend_template(&model, &s).unwrap()
        };
        let joints = joint_locations(&model, &shaped).unwrap();
        let posed = skin(&model, &rest, &joints, &state.pose).unwrap();
        let g = rodrigues([0; 3].map(|_| r.random_range(-1.0..1.0)));
        let mut rotated_pose = state.pose.clone();
        let root = rodrigues(math::to_f64(state.pose[0]));
        rotated_pose[0] = math::to_f32(axis_angle(&math::mat_mul(&g, &root)));
        let moved = skin(&model, &rest, &joints, &rotated_pose).unwrap();
        let j0 = math::to_f64(joints[0]);
        for (a, b) in posed.vertices.iter().zip(&moved.vertices) {
            let want = math::add3(math::mat_vec(&g, math::sub3(math::to_f64(*a), j0)), j0);
            let d = math::sub3(want, math::to_f64(*b));
            equi = equi.max(d.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
    }

    let mut jac = 0.0f64;
    let h = 0.5f32;
    let dim = model.expression_dim;
    for _ in 0..3 {
        let mut base = model.neutral_state();
        base.shape.iter_mut().for_each(|b| *b = r.random_range(-1.0..1.0));
        base.expression.iter_mut().for_each(|p| *p = r.random_range(-1.0..1.0));
        for k in 0..dim {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus.expression[k] += h;
            minus.expression[k] -= h;
            let a = articulate(&model, &plus).unwrap();
            let b = articulate(&model, &minus).unwrap();
            for v in 0..model.vertex_count() {
                for c in 0..3 {
                    let fd = (a.vertices[v][c] as f64 - b.vertices[v][c] as f64) / (2.0 * h as f64);
                    let e = model.expression_basis[(v * 3 + c) * dim + k] as f64;
                    jac = jac.max((fd - e).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        equi <= 1e-5 && jac <= 1e-4 && secs < 10.0,
        format!(
            "neutral exact, root equivariance {equi:.2e} (tol 1e-5), ψ Jacobian {jac:.2e} (tol 1e-4), {secs:.1} s (limit 10 s)"
        ),
    )
}

fn activation_bounds() -> Outcome {
    let cfg = ActivationConfig::default();
    let mut r = rng(404);
    let mut raw: Vec<f32> = (0..1_000_000)
        .map(|i| match i % 4 {
            0 => r.random_range(-3.0..3.0),
            1 => r.random_range(-50.0..50.0),
            2 => r.random_range(-1e6..1e6),
            _ => (r.random::<f32>() - 0.5) * f32::MAX,
        })
        .collect();
    raw.extend([0.0, f32::MAX, f32::MIN, 1e-30, -1e-30]);
    let pos = activate_position(&raw, &cfg).unwrap();
    let scale = activate_scale(&raw, &cfg).unwrap();
    let gamma = cfg.gamma_pos;
    let s_cap = (-(cfg.s_max as f64)).exp() as f32;
    let pos_max = pos.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    let scale_ok = scale.iter().all(|&s| s > 0.0 && s <= s_cap);
    let s0 = activate_scale(&[0.0], &cfg).unwrap()[0] as f64;
    let s0_err = (s0 - (-(cfg.s_init as f64)).exp()).abs();
    ensure(
        pos_max < gamma && scale_ok && s0_err <= 1e-7,
        format!(
            "{} values: max |offset| {pos_max:e} < {gamma}, scales in (0, {s_cap:e}]: {scale_ok}, |scale(0) - e^-s_init| {s0_err:.1e} (tol 1e-7)",
            raw.len()
        ),
    )
}

fn composition_identity() -> Outcome {
    let (_, asset) = fixture(128);
    let avatar = Avatar::new(asset).unwrap();
    let renderer = Renderer::new(None).unwrap();
    let cam = Camera::default_head(256, 256);
    let zero = avatar.zero_provider();
    let linear = avatar.linear_provider().expect("fixture has a linear basis");
    let mut r = rng(505);
    let mut states = vec![avatar.neutral_state()];
    for _ in 0..3 {
        let (psi, jaw) = random_expression(&mut r, avatar.model().expression_dim);
        states.push(avatar.state(&psi, jaw).unwrap());
    }
    for (i, state) in states.iter().enumerate() {
        let canonical = avatar.build_cloud(state, None).unwrap();
        let with_zero = avatar.build_cloud(state, Some(&zero)).unwrap();
        let a = renderer.render(&canonical, &cam, [0.0; 3]).unwrap();
        let b = renderer.render(&with_zero, &cam, [0.0; 3]).unwrap();
        if !pixels_bitwise_equal(&a.pixels, &b.pixels) {
            return Err(format!("zero residuals changed the render of state {i}"));
        }
        if i == 0 {
            let with_linear = avatar.build_cloud(state, Some(linear)).unwrap();
            let c = renderer.render(&with_linear, &cam, [0.0; 3]).unwrap();
            if !pixels_bitwise_equal(&a.pixels, &c.pixels) {
                return Err("linear provider at neutral changed the render".into());
            }
        }
    }
    Ok(format!(
        "zero provider bitwise equal on {} states, linear provider bitwise equal at neutral",
        states.len()
    ))
}

fn geometry_cue() -> Outcome {
    let (model, asset) = fixture(64);
    let cam = Camera::default_head(128, 128);
    let scale = DEFAULT_ENCODING_SCALE;

    let cue = render_cue(&model, &model.neutral_state(), &cam, scale).unwrap();
    let gray = cue.rgb.as_flattened().iter().fold(0.0f32, |m, c| m.max((c - 0.5).abs()));
    if gray > 1e-6 {
        return Err(format!("neutral cue deviates from mid-gray by {gray:e}"));
    }

    let mut r = rng(606);
    let mut std_err = 0.0f64;
    for _ in 0..5 {
        let amplitude = r.random_range(0.001..0.2);
        let field = DisplacementField {
            kind: DisplacementKind::Shape,
            vectors: random_rows(&mut r, model.vertex_count(), amplitude),
        };
        let map = bake_conditioning_map(&model, &field, asset.resolution()).unwrap();
        let (_, std) = map.covered_stats();
        std_err = std_err.max((std - 1.0).abs());
    }
    if std_err > 1e-3 {
        return Err(format!("conditioning std off by {std_err:e}"));
    }

    for _ in 0..5 {
        let (psi, jaw) = random_expression(&mut r, model.expression_dim);
        let plain = model.expression_state(&psi, jaw).unwrap();
        let mut shaped = plain.clone();
        shaped.shape.iter_mut().for_each(|b| *b = r.random_range(-2.0..2.0));
        for mode in [JawMode::Skinning, JawMode::Excluded] {
            let a = cue_vertex_colors(&model, &plain, scale, mode).unwrap();
            let b = cue_vertex_colors(&model, &shaped, scale, mode).unwrap();
            if !same_bits(a.as_flattened(), b.as_flattened()) {
                return Err("cue colors changed with β".into());
            }
        }
        let field = expression_displacement_with(&model, &psi, jaw, JawMode::Skinning).unwrap();
        let colors: Vec<[f32; 3]> = field.vectors.iter().map(|d| encode_displacement(*d, scale)).collect();
        let mesh = articulate(&model, &shaped).unwrap();
        let bg = encode_displacement([0.0; 3], scale);
        let want = rasterize_colored_mesh(&cam, &mesh.vertices, &model.triangles, &colors, bg).unwrap();
        let got = render_cue(&model, &shaped, &cam, scale).unwrap();
        if !same_bits(got.rgb.as_flattened(), want.as_flattened()) {
            return Err("cue image differs from the neutral-shape displacement oracle".into());
        }
    }
    Ok(format!(
        "neutral max deviation {gray:.1e}, conditioning std error {std_err:.1e} (tol 1e-3), colors bitwise β-invariant"
    ))
}

fn determinism() -> Outcome {
    let (_, asset) = fixture(128);
    let avatar = Avatar::new(asset).unwrap();
    let one = Renderer::new(Some(1)).unwrap();
    let many = Renderer::new(Some(16)).unwrap();
    let mut r = rng(707);
    for scene in 0..10 {
        let cloud = random_cloud(&avatar, &mut r);
        let cam = random_camera(&mut r, 256, 256);
        let bg = [r.random(), r.random(), r.random()];
        let a = one.render(&cloud, &cam, bg).unwrap();
        let b = many.render(&cloud, &cam, bg).unwrap();
        if !pixels_bitwise_equal(&a.pixels, &b.pixels) {
            return Err(format!("scene {scene} differs between 1 and 16 threads"));
        }
    }
    Ok("10 scenes bitwise identical at 1 and 16 threads".into())
}

/// Per-frame wall time of the full path (articulate, residuals, compose,
/// lift, render) over a smooth expression sweep. The first frames warm
/// caches and allocations and are dropped.
fn frame_times(avatar: &Avatar, renderer: &Renderer, size: u32, warmup: usize, frames: usize) -> Vec<Duration> {
    let cam = Camera::default_head(size, size);
    let provider = avatar.default_provider();
    let dim = avatar.model().expression_dim;
    renderer.install(|| {
        let mut scratch = FrameScratch::default();
        let mut fb = FrameBuffer::new(0, 0, [0.0; 3]);
        let mut times = Vec::with_capacity(frames);
        for f in 0..warmup + frames {
            let t = f as f32 * 0.15;
            let psi: Vec<f32> = (0..dim).map(|k| 1.5 * (t + k as f32).sin()).collect();
            let jaw = [0.15 * (1.0 + (0.7 * t).sin()), 0.0, 0.0];
            let state = avatar.state(&psi, jaw).unwrap();
            let start = Instant::now();
            avatar
                .build_cloud_into(&state, Some(provider.as_ref()), &mut scratch)
                .unwrap();
            renderer.render_into(&scratch.cloud, &cam, [0.0; 3], &mut fb).unwrap();
            if f >= warmup {
                times.push(start.elapsed());
            }
        }
        times
    })
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn performance() -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let renderer = Renderer::new(None).unwrap();

    let (_, asset) = fixture(256);
    let small = Avatar::new(asset).unwrap();
    let fps_256 = 1.0 / median(frame_times(&small, &renderer, 256, 3, 30)).as_secs_f64();

    let (_, asset) = fixture(512);
    let large = Avatar::new(asset).unwrap();
    let fps_512 = 1.0 / median(frame_times(&large, &renderer, 512, 2, 9)).as_secs_f64();
    drop(large);

    let one = Renderer::new(Some(1)).unwrap();
    let eight = Renderer::new(Some(8)).unwrap();
    let t1 = median(frame_times(&small, &one, 256, 2, 15));
    let t8 = median(frame_times(&small, &eight, 256, 2, 15));
    let scaling = t1.as_secs_f64() / t8.as_secs_f64();

    ensure(
        fps_512 >= 2.0 && fps_256 >= 15.0 && scaling >= 3.0,
        format!(
            "R=512 at 512x512 {fps_512:.2} FPS (min 2), R=256 at 256x256 {fps_256:.1} FPS (min 15), 1->8 thread speedup {scaling:.2}x (min 3) on {cores} available cores"
        ),
    )
}

fn regularizer() -> Outcome {
    let mut r = rng(808);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.random_range(1..5000);
        let offsets = random_rows(&mut r, n, 0.05);
        let log_scale = random_rows(&mut r, n, 6.0);
        let opacity: Vec<f32> = (0..n).map(|_| r.random_range(1e-4..1.0 - 1e-4)).collect();
        let residuals = ResidualAttributes {
            d_mu: random_rows(&mut r, n, 0.01),
            d_log_scale: random_rows(&mut r, n, 0.5),
            d_rot: (0..n).map(|_| [0; 4].map(|_| r.random_range(-0.1..0.1))).collect(),
        };
        let rep = regularizer_metrics(&offsets, &log_scale, &opacity, &residuals, RegularizerWeights::default())
            .unwrap();
        let want = regularizer_oracle(&offsets, &log_scale, &opacity, &residuals);
        let got = [rep.l_pos, rep.l_scale, rep.l_opacity, rep.l_pos_d, rep.l_scale_d];
        let total: f64 = want.iter().zip([0.25, 0.5, 1.0, 1.5, 1.5]).map(|(t, w)| t * w).sum();
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
        worst = worst.max((rep.weighted_total - total).abs());
    }
    let weights = RegularizerWeights::default().as_array();
    ensure(
        worst <= 1e-6 && weights == [0.25, 0.5, 1.0, 1.5, 1.5],
        format!("max diff against scalar loops {worst:.2e} (tol 1e-6), default weights {weights:?}"),
    )
}

fn file_formats() -> Outcome {
    let (model, asset) = fixture(64);
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("head.aghm");
    let asset_path = dir.path().join("avatar.agav");
    save_head_model(&model, &model_path).unwrap();
    save_asset(&asset, &asset_path).unwrap();
    let model2 = load_head_model(&model_path).unwrap();
    let asset2 = load_asset(&asset_path).unwrap();
    if model2 != model || encode_head_model(&model2) != std::fs::read(&model_path).unwrap() {
        return Err("head model round trip is not bitwise".into());
    }
    if asset2 != *asset || encode_asset(&asset2) != std::fs::read(&asset_path).unwrap() {
        return Err("asset round trip is not bitwise".into());
    }

    let record = ParamRecord {
        t: 0.125,
        psi: vec![0.1, -0.7, 1.0 / 3.0],
        jaw: [0.2, 0.0, -0.01],
        camera: Camera::default_head(64, 48),
        beta: Some(vec![0.5; 2]),
    };
    let parsed = parse_track(Cursor::new(format!("{}\n\n{}\n", record.to_json_line(), record.to_json_line()))).unwrap();
    if parsed != vec![record.clone(), record] {
        return Err("track round trip changed a record".into());
    }

    let bytes = encode_asset(&asset);
    let model_bytes = encode_head_model(&model);
    let mut kinds = Vec::new();

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    kinds.push(("bad magic", decode_asset(&bad).map(|_| ())));
    let mut bad = model_bytes.clone();
    bad[8..12].copy_from_slice(&99u32.to_le_bytes());
    kinds.push(("version skew", decode_head_model(&bad).map(|_| ())));
    kinds.push(("truncation", decode_asset(&bytes[..bytes.len() - 7]).map(|_| ())));
    let mut bad = bytes.clone();
    let last = bad.len() - 20;
    bad[last] ^= 0x01;
    kinds.push(("payload corruption", decode_asset(&bad).map(|_| ())));

    let mut seen = Vec::new();
    for (what, res) in kinds {
        let ok = matches!(
            (what, &res),
            ("bad magic", Err(Error::Format(FormatError::BadMagic { .. })))
                | ("version skew", Err(Error::Format(FormatError::UnsupportedVersion { .. })))
                | ("truncation", Err(Error::Format(FormatError::Truncated { .. })))
                | ("payload corruption", Err(Error::Format(FormatError::Checksum { .. })))
        );
        if !ok {
            return Err(format!("{what} produced {:?}", res.err()));
        }
        seen.push(what);
    }
    Ok(format!(
        "head model, asset and track round trips bitwise; typed errors for {}",
        seen.join(", ")
    ))
}
