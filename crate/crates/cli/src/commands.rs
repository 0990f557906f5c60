use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use gausshead_core::assets::{
    avatar_regularizer_metrics, generate_synthetic_fixture, load_asset, load_head_model, read_track,
    save_asset, save_head_model, validate_asset, ParamRecord, RegularizerWeights, Violation,
};
use gausshead_core::geomcue::{bake_conditioning_map, render_cue, shape_displacement, DEFAULT_ENCODING_SCALE};
use gausshead_core::{Avatar, Camera, Error, ExpressionState, FrameBuffer, FramePipeline, HeadModel, Renderer};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{
    AssetArg, CliResult, ExpressionArgs, Failure, Size, ThreadsArg, Triple, EXIT_BAD_PARAMETER, EXIT_FAILURE,
    EXIT_MISSING_INPUT,
};

#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    /// Orbit azimuth about +y, radians from +z.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub azimuth: f32,
    /// Orbit elevation, radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub elevation: f32,
    /// Camera distance from the head center, model units.
    #[arg(long, default_value_t = 0.6)]
    pub distance: f32,
    /// Focal length as a fraction of the image width.
    #[arg(long, default_value_t = 2.0)]
    pub focal: f32,
}

impl CameraArgs {
    fn camera(&self, size: Size) -> Camera {
        Camera::orbit(
            self.azimuth,
            self.elevation,
            self.distance,
            [0.0; 3],
            self.focal,
            size.width,
            size.height,
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct BackgroundArg {
    /// Background color `r,g,b` in [0, 1].
    #[arg(long, default_value = "0,0,0")]
    pub background: Triple,
}

impl BackgroundArg {
    fn rgb(&self) -> [f32; 3] {
        self.background.0
    }
}

/// Prints `value` to stdout; a closed pipe is not an error.
pub fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub fn pixel_sha256(fb: &FrameBuffer) -> String {
    hex(&Sha256::digest(fb.to_rgba8()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_MISSING_INPUT, format!("{what} not found: {}", path.display())))
    }
}

pub fn load_avatar(path: &Path) -> CliResult<Avatar> {
    require_file(path, "asset")?;
    let asset = load_asset(path)?;
    Ok(Avatar::new(Arc::new(asset))?)
}

fn load_track(path: &Path) -> CliResult<Vec<ParamRecord>> {
    require_file(path, "track")?;
    Ok(read_track(path)?)
}

/// Pads `psi` with zeros to the model's expression dimension.
fn padded_psi(psi: &[f32], dim: usize) -> CliResult<Vec<f32>> {
    if psi.len() > dim {
        return Err(Failure::new(
            EXIT_BAD_PARAMETER,
            format!("{} expression values given, the model has {dim}", psi.len()),
        ));
    }
    let mut out = psi.to_vec();
    out.resize(dim, 0.0);
    Ok(out)
}

fn jaw_of(args: &ExpressionArgs) -> [f32; 3] {
    args.jaw.0
}

pub fn state_from_args(avatar: &Avatar, args: &ExpressionArgs) -> CliResult<ExpressionState> {
    let psi = padded_psi(&args.psi, avatar.model().expression_dim)?;
    Ok(avatar.state(&psi, jaw_of(args))?)
}

fn state_from_record(avatar: &Avatar, record: &ParamRecord) -> CliResult<ExpressionState> {
    let mut state = avatar.state(&record.psi, record.jaw)?;
    if let Some(beta) = &record.beta {
        if beta.len() != avatar.model().shape_dim {
            return Err(Error::Parameter(format!(
                "record has {} shape values, the model has {}",
                beta.len(),
                avatar.model().shape_dim
            ))
            .into());
        }
        state.shape = beta.clone();
    }
    Ok(state)
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, env = "GAUSSHEAD_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Attribute map resolution: 64, 128, 256 or 512.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// Output avatar asset (`.agav`).
    #[arg(long, env = "GAUSSHEAD_OUT")]
    pub out: PathBuf,
    /// Also write the head model (`.aghm`) here.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

pub fn fixture(a: FixtureArgs) -> CliResult {
    let (model, asset) = generate_synthetic_fixture(a.seed, a.resolution)?;
    save_asset(&asset, &a.out)?;
    if let Some(p) = &a.model_out {
        save_head_model(&model, p)?;
    }
    print_json(&json!({
        "schema": "gausshead.fixture/1",
        "seed": a.seed,
        "resolution": a.resolution,
        "gaussian_count": asset.grid.len(),
        "vertex_count": model.vertex_count(),
        "asset": a.out,
        "asset_sha256": hex(&Sha256::digest(std::fs::read(&a.out)?)),
        "model": a.model_out,
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub asset: AssetArg,
    /// Take parameters and camera from this track instead of the flags.
    #[arg(long, env = "GAUSSHEAD_TRACK")]
    pub track: Option<PathBuf>,
    /// Track record to render.
    #[arg(long, default_value_t = 0, requires = "track")]
    pub frame: usize,
    #[command(flatten)]
    pub expression: ExpressionArgs,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, env = "GAUSSHEAD_SIZE", default_value = "512x512")]
    pub size: Size,
    #[command(flatten)]
    pub background: BackgroundArg,
    #[command(flatten)]
    pub threads: ThreadsArg,
    /// Output PNG.
    #[arg(long, env = "GAUSSHEAD_OUT")]
    pub out: PathBuf,
}

pub fn render(a: RenderArgs) -> CliResult {
    let avatar = load_avatar(&a.asset.asset)?;
    let (state, cam) = match &a.track {
        Some(path) => {
            let track = load_track(path)?;
            let record = track.get(a.frame).ok_or_else(|| {
                Failure::new(
                    EXIT_BAD_PARAMETER,
                    format!("track has {} records, frame {} requested", track.len(), a.frame),
                )
            })?;
            (state_from_record(&avatar, record)?, record.camera.clone())
        }
        None => (state_from_args(&avatar, &a.expression)?, a.camera.camera(a.size)),
    };
    let renderer = Renderer::new(a.threads.threads)?;
    let mut pipeline = FramePipeline::new();
    let times = pipeline.render(&avatar, &renderer, &state, &cam, a.background.rgb())?;
    let fb = pipeline.frame();
    fb.save_png(&a.out)?;
    print_json(&json!({
        "schema": "gausshead.render/1",
        "out": a.out,
        "width": fb.width,
        "height": fb.height,
        "gaussian_count": avatar.gaussian_count(),
        "visible": times.render.visible,
        "pixel_sha256": pixel_sha256(fb),
        "render_ms": times.total.as_secs_f64() * 1e3,
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    #[command(flatten)]
    pub asset: AssetArg,
    #[arg(long, env = "GAUSSHEAD_TRACK")]
    pub track: PathBuf,
    #[command(flatten)]
    pub background: BackgroundArg,
    #[command(flatten)]
    pub threads: ThreadsArg,
    /// Output directory for `frame_00000.png`, `frame_00001.png`, ...
    #[arg(long, env = "GAUSSHEAD_OUT")]
    pub out: PathBuf,
}

pub fn animate(a: AnimateArgs) -> CliResult {
    let avatar = load_avatar(&a.asset.asset)?;
    let track = load_track(&a.track)?;
    std::fs::create_dir_all(&a.out)?;
    let renderer = Renderer::new(a.threads.threads)?;
    let mut pipeline = FramePipeline::new();
    let mut frames = Vec::with_capacity(track.len());
    for (i, record) in track.iter().enumerate() {
        let state = state_from_record(&avatar, record)?;
        pipeline.render(&avatar, &renderer, &state, &record.camera, a.background.rgb())?;
        let path = a.out.join(format!("frame_{i:05}.png"));
        pipeline.frame().save_png(&path)?;
        frames.push(json!({"t": record.t, "file": path, "pixel_sha256": pixel_sha256(pipeline.frame())}));
    }
    print_json(&json!({
        "schema": "gausshead.animate/1",
        "frames": frames,
    }));
    Ok(())
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["asset", "model"]))]
pub struct BakeArgs {
    /// Avatar asset; its head model and identity shape are used.
    #[arg(long, env = "GAUSSHEAD_ASSET")]
    pub asset: Option<PathBuf>,
    /// Head model (`.aghm`), with a neutral identity.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Shape coefficients for the conditioning map; defaults to the identity's.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f32>>,
    #[command(flatten)]
    pub expression: ExpressionArgs,
    /// Conditioning map resolution; defaults to the asset's, else 256.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, env = "GAUSSHEAD_SIZE", default_value = "512x512")]
    pub size: Size,
    /// Output directory for `conditioning.f32` (+ `.json`) and `cue.png`.
    #[arg(long, env = "GAUSSHEAD_OUT")]
    pub out: PathBuf,
}

pub fn bake(a: BakeArgs) -> CliResult {
    let (model, identity, resolution, scale): (HeadModel, Vec<f32>, usize, f32) = match (&a.asset, &a.model) {
        (Some(path), _) => {
            require_file(path, "asset")?;
            let asset = load_asset(path)?;
            let r = asset.resolution();
            (asset.model, asset.meta.identity_shape, r, asset.meta.encoding_scale)
        }
        (None, Some(path)) => {
            require_file(path, "head model")?;
            let model = load_head_model(path)?;
            let beta = vec![0.0; model.shape_dim];
            (model, beta, 256, DEFAULT_ENCODING_SCALE)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let beta = a.beta.clone().unwrap_or(identity);
    let resolution = a.resolution.unwrap_or(resolution);
    let field = shape_displacement(&model, &beta)?;
    let map = bake_conditioning_map(&model, &field, resolution)?;

    let psi = padded_psi(&a.expression.psi, model.expression_dim)?;
    let mut state = model.expression_state(&psi, jaw_of(&a.expression))?;
    state.shape = beta;
    let cue = render_cue(&model, &state, &a.camera.camera(a.size), scale)?;

    std::fs::create_dir_all(&a.out)?;
    let map_path = a.out.join("conditioning.f32");
    let cue_path = a.out.join("cue.png");
    map.save(&map_path)?;
    cue.save_png(&cue_path)?;
    print_json(&json!({
        "schema": "gausshead.bake/1",
        "conditioning": map_path,
        "cue": cue_path,
        "resolution": map.resolution,
        "zero_variance": map.zero_variance,
        "normalization_scale": map.scale,
        "covered_texels": map.covered.iter().filter(|&&c| c).count(),
        "shape_displacement_max": field.max_norm(),
        "cue_sha256": hex(&Sha256::digest(cue.to_rgba8())),
    }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub asset: AssetArg,
}

pub fn validate(a: ValidateArgs) -> CliResult {
    let path = &a.asset.asset;
    require_file(path, "asset")?;
    let violations = match load_asset(path) {
        Ok(asset) => validate_asset(&asset),
        Err(Error::Format(e)) => vec![Violation {
            category: "format".into(),
            message: e.to_string(),
        }],
        Err(e) => return Err(e.into()),
    };
    for v in &violations {
        eprintln!("violation [{}] {}", v.category, v.message);
    }
    if violations.is_empty() {
        eprintln!("{}: ok", path.display());
    }
    print_json(&json!({
        "schema": "gausshead.validate/1",
        "asset": path,
        "ok": violations.is_empty(),
        "violations": violations,
    }));
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILURE, format!("{} violation(s)", violations.len())))
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub asset: AssetArg,
    #[command(flatten)]
    pub expression: ExpressionArgs,
}

pub fn metrics(a: MetricsArgs) -> CliResult {
    let avatar = load_avatar(&a.asset.asset)?;
    let state = state_from_args(&avatar, &a.expression)?;
    let report = avatar_regularizer_metrics(&avatar, &state, RegularizerWeights::default())?;
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["schema"] = json!("gausshead.metrics/1");
    print_json(&value);
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub asset: AssetArg,
    #[arg(long, env = "GAUSSHEAD_PORT", default_value_t = gausshead_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[command(flatten)]
    pub threads: ThreadsArg,
}

pub fn serve(a: ServeArgs) -> CliResult {
    require_file(&a.asset.asset, "asset")?;
    let state = gausshead_service::AppState::load(&a.asset.asset, a.threads.threads).map_err(|e| match e {
        gausshead_service::ServiceError::Asset(e) => Failure::from(e),
        gausshead_service::ServiceError::Io(e) => Failure::from(e),
    })?;
    let info = state.info();
    log::info!(
        "{}: {} Gaussians, {} expression parameters",
        info.identity,
        info.gaussian_count,
        info.expression_dim
    );
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime
        .block_on(gausshead_service::run(SocketAddr::new(a.bind, a.port), Arc::new(state)))
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))
}
