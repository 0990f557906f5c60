use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use gausshead_core::assets::generate_synthetic_fixture;
use gausshead_core::{Avatar, Camera, FramePipeline, FrameTimes, Renderer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::commands::{load_avatar, print_json};
use crate::{CliResult, Failure, Size, ThreadsArg, EXIT_BAD_PARAMETER};

/// Frame rate of a reference CPU implementation, reported for comparison.
const REFERENCE_CPU_FPS: f64 = 9.0;
const MIN_WARMUP: usize = 10;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Avatar asset; without it a fixture is generated in memory.
    #[arg(long, env = "GAUSSHEAD_ASSET", conflicts_with = "resolution")]
    pub asset: Option<PathBuf>,
    /// Fixture resolution when no asset is given.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, env = "GAUSSHEAD_SIZE", default_value = "512x512")]
    pub size: Size,
    #[command(flatten)]
    pub threads: ThreadsArg,
    /// Timed frames.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Untimed frames before measuring; at least 10.
    #[arg(long, default_value_t = MIN_WARMUP)]
    pub warmup: usize,
    /// Seed of the fixture and the expression sequence.
    #[arg(long, env = "GAUSSHEAD_SEED", default_value_t = 7)]
    pub seed: u64,
}

pub fn run(a: BenchArgs) -> CliResult {
    if a.frames == 0 {
        return Err(Failure::new(EXIT_BAD_PARAMETER, "--frames must be positive"));
    }
    if a.warmup < MIN_WARMUP {
        return Err(Failure::new(
            EXIT_BAD_PARAMETER,
            format!("--warmup must be at least {MIN_WARMUP}"),
        ));
    }
    let avatar = match &a.asset {
        Some(path) => load_avatar(path)?,
        None => {
            let (_, asset) = generate_synthetic_fixture(a.seed, a.resolution.unwrap_or(512))?;
            Avatar::new(Arc::new(asset))?
        }
    };
    let renderer = Renderer::new(a.threads.threads)?;
    let cam = Camera::default_head(a.size.width, a.size.height);

    let dim = avatar.model().expression_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut states = Vec::with_capacity(a.warmup + a.frames);
    for _ in 0..a.warmup + a.frames {
        let psi: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let jaw = [rng.random_range(0.0..0.25), 0.0, 0.0];
        states.push(avatar.state(&psi, jaw)?);
    }

    let mut pipeline = FramePipeline::new();
    let mut times: Vec<FrameTimes> = Vec::with_capacity(a.frames);
    for (i, state) in states.iter().enumerate() {
        let t = pipeline.render(&avatar, &renderer, state, &cam, [0.0; 3])?;
        if i >= a.warmup {
            times.push(t);
        }
    }

    let stage = |f: &dyn Fn(&FrameTimes) -> Duration| {
        let mean = times.iter().map(|t| f(t).as_secs_f64()).sum::<f64>() / times.len() as f64;
        json!({"mean_ms": mean * 1e3})
    };
    let mut totals: Vec<f64> = times.iter().map(|t| t.total.as_secs_f64()).collect();
    totals.sort_by(f64::total_cmp);
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let median = totals[totals.len() / 2];
    let fps = 1.0 / mean;

    print_json(&json!({
        "schema": "gausshead.bench/1",
        "gaussian_count": avatar.gaussian_count(),
        "resolution": avatar.asset().resolution(),
        "image_size": [a.size.width, a.size.height],
        "threads": renderer.threads(),
        "warmup": a.warmup,
        "frames": a.frames,
        "stages": {
            "articulate": stage(&|t| t.stages.articulate),
            "residuals": stage(&|t| t.stages.residuals),
            "compose_lift": stage(&|t| t.stages.compose_lift),
            "project": stage(&|t| t.render.project),
            "sort_bin": stage(&|t| t.render.sort_bin),
            "blend": stage(&|t| t.render.blend),
        },
        "total": {
            "mean_ms": mean * 1e3,
            "median_ms": median * 1e3,
            "min_ms": totals[0] * 1e3,
            "max_ms": totals[totals.len() - 1] * 1e3,
        },
        "fps": fps,
        "fps_median": 1.0 / median,
        "reference_cpu_fps": REFERENCE_CPU_FPS,
        "speedup_vs_reference": fps / REFERENCE_CPU_FPS,
    }));
    Ok(())
}
