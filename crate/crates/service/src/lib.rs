//! Frame service: loads one avatar, then streams rendered frames over a
//! WebSocket in response to parameter messages.
//!
//! HTTP: `GET /health`, `GET /asset` (JSON), `GET /stream` (WebSocket).
//!
//! Client messages are JSON text:
//!
//! ```json
//! {"type": "params", "psi": [..], "jaw": [x, y, z],
//!  "camera": {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..,"w2c":[16 floats]}}
//! ```
//!
//! Frames are binary: a 24-byte little-endian header (`u32` width, `u32`
//! height, `u64` frame id, `f32` render ms, `u32` reserved) followed by RGBA8
//! rows. Errors come back as `{"type":"error","code":..,"message":..}` text
//! and leave the session open.
//!
//! Each session renders serially and keeps only the newest parameters:
//! messages that arrive while a frame is rendering replace each other.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use gausshead_core::assets::load_asset;
use gausshead_core::{Avatar, Camera, FramePipeline, Renderer};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

pub const DEFAULT_PORT: u16 = 8787;
pub const FRAME_HEADER_BYTES: usize = 24;
/// Largest accepted image side, in pixels.
pub const MAX_IMAGE_SIDE: u32 = 4096;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot load asset: {0}")]
    Asset(#[from] gausshead_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Asset metadata served on `/asset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetInfo {
    pub identity: String,
    pub expression_dim: usize,
    pub shape_dim: usize,
    pub resolution: usize,
    pub gaussian_count: usize,
    pub sh_degree: usize,
    pub joints: Vec<String>,
    pub frame_header_bytes: usize,
}

/// Shared, read-only service state.
pub struct AppState {
    avatar: Avatar,
    renderer: Renderer,
    info: AssetInfo,
    background: [f32; 3],
    sessions: AtomicUsize,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(avatar: Avatar, renderer: Renderer) -> Self {
        let asset = avatar.asset();
        let info = AssetInfo {
            identity: asset.meta.identity.clone(),
            expression_dim: asset.model.expression_dim,
            shape_dim: asset.model.shape_dim,
            resolution: asset.resolution(),
            gaussian_count: avatar.gaussian_count(),
            sh_degree: asset.maps.sh_degree,
            joints: asset.model.joint_names.clone(),
            frame_header_bytes: FRAME_HEADER_BYTES,
        };
        Self {
            avatar,
            renderer,
            info,
            background: [0.0; 3],
            sessions: AtomicUsize::new(0),
            next_session: AtomicU64::new(1),
        }
    }

    /// Loads the asset and builds its identity cache.
    pub fn load(path: impl AsRef<Path>, threads: Option<usize>) -> Result<Self, ServiceError> {
        let asset = load_asset(path)?;
        let avatar = Avatar::new(Arc::new(asset))?;
        Ok(Self::new(avatar, Renderer::new(threads)?))
    }

    pub fn info(&self) -> &AssetInfo {
        &self.info
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/asset", get(asset))
        .route("/stream", get(stream))
        .with_state(state)
}

/// Serves until the listener fails or the process is stopped.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn run(addr: SocketAddr, state: Arc<AppState>) -> Result<(), ServiceError> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    sessions: usize,
    asset: &'a AssetInfo,
}

async fn health(State(app): State<Arc<AppState>>) -> Response {
    Json(Health {
        status: "ok",
        sessions: app.sessions.load(Ordering::Relaxed),
        asset: &app.info,
    })
    .into_response()
}

async fn asset(State(app): State<Arc<AppState>>) -> Json<AssetInfo> {
    Json(app.info.clone())
}

async fn stream(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, app))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMessage {
    Params {
        psi: Vec<f32>,
        jaw: [f32; 3],
        camera: Camera,
    },
}

#[derive(Debug, Clone)]
struct Params {
    psi: Vec<f32>,
    jaw: [f32; 3],
    camera: Camera,
}

/// Error reply sent as a text message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    #[serde(rename = "type")]
    pub kind: String,
    pub code: String,
    pub message: String,
}

impl ErrorReply {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            kind: "error".into(),
            code: code.into(),
            message: message.into(),
        }
    }
}

fn parse_params(text: &str, info: &AssetInfo) -> Result<Params, ErrorReply> {
    let msg: ClientMessage =
        serde_json::from_str(text).map_err(|e| ErrorReply::new("malformed_message", e.to_string()))?;
    let ClientMessage::Params { psi, jaw, camera } = msg;
    if psi.len() != info.expression_dim {
        return Err(ErrorReply::new(
            "bad_psi_length",
            format!("expected {} expression values, got {}", info.expression_dim, psi.len()),
        ));
    }
    if !psi.iter().chain(&jaw).all(|x| x.is_finite()) {
        return Err(ErrorReply::new("non_finite", "psi and jaw must be finite"));
    }
    if let Err(e) = camera.validate() {
        return Err(ErrorReply::new("bad_camera", e.to_string()));
    }
    if camera.width > MAX_IMAGE_SIDE || camera.height > MAX_IMAGE_SIDE {
        return Err(ErrorReply::new(
            "bad_camera",
            format!("image sides are limited to {MAX_IMAGE_SIDE} px"),
        ));
    }
    Ok(Params { psi, jaw, camera })
}

/// Per-session buffers, moved into the blocking render task and back.
struct Worker {
    pipeline: FramePipeline,
    frames: u64,
}

fn render_frame(app: &AppState, worker: &mut Worker, p: &Params) -> Result<Vec<u8>, ErrorReply> {
    let state = app
        .avatar
        .state(&p.psi, p.jaw)
        .map_err(|e| ErrorReply::new("bad_params", e.to_string()))?;
    let times = worker
        .pipeline
        .render(&app.avatar, &app.renderer, &state, &p.camera, app.background)
        .map_err(|e| ErrorReply::new("render_failed", e.to_string()))?;
    worker.frames += 1;
    let fb = worker.pipeline.frame();
    let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + fb.width * fb.height * 4);
    out.extend_from_slice(&(fb.width as u32).to_le_bytes());
    out.extend_from_slice(&(fb.height as u32).to_le_bytes());
    out.extend_from_slice(&worker.frames.to_le_bytes());
    out.extend_from_slice(&(times.total.as_secs_f32() * 1e3).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    fb.write_rgba8(&mut out);
    Ok(out)
}

async fn session(socket: WebSocket, app: Arc<AppState>) {
    let id = app.next_session.fetch_add(1, Ordering::Relaxed);
    app.sessions.fetch_add(1, Ordering::Relaxed);
    log::debug!("session {id} opened");
    let (mut sink, mut incoming) = socket.split();
    let (params_tx, mut params_rx) = watch::channel::<Option<Params>>(None);
    let (err_tx, mut err_rx) = mpsc::channel::<ErrorReply>(16);

    let info = app.info.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = incoming.next().await {
            let reply = match msg {
                Message::Text(text) => match parse_params(text.as_str(), &info) {
                    Ok(p) => {
                        params_tx.send_replace(Some(p));
                        continue;
                    }
                    Err(e) => e,
                },
                Message::Binary(_) => ErrorReply::new("malformed_message", "expected a JSON text message"),
                Message::Close(_) => break,
                _ => continue,
            };
            if err_tx.send(reply).await.is_err() {
                break;
            }
        }
    });

    let mut worker = Some(Worker {
        pipeline: FramePipeline::new(),
        frames: 0,
    });
    loop {
        let outgoing = tokio::select! {
            biased;
            Some(e) = err_rx.recv() => Message::Text(serde_json::to_string(&e).unwrap_or_default().into()),
            changed = params_rx.changed() => {
                if changed.is_err() {
                    break;
                }
                let Some(p) = params_rx.borrow_and_update().clone() else { continue };
                let mut w = worker.take().expect("worker present between frames");
                let app = app.clone();
                let joined = tokio::task::spawn_blocking(move || {
                    let r = render_frame(&app, &mut w, &p);
                    (w, r)
                })
                .await;
                let Ok((w, result)) = joined else { break };
                worker = Some(w);
                match result {
                    Ok(bytes) => Message::Binary(bytes.into()),
                    Err(e) => Message::Text(serde_json::to_string(&e).unwrap_or_default().into()),
                }
            }
        };
        if sink.send(outgoing).await.is_err() {
            break;
        }
    }
    reader.abort();
    app.sessions.fetch_sub(1, Ordering::Relaxed);
    log::debug!("session {id} closed");
}

/// Decoded frame header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameHeader {
    pub width: u32,
    pub height: u32,
    pub frame_id: u64,
    pub render_ms: f32,
}

impl FrameHeader {
    pub fn parse(bytes: &[u8]) -> Option<Self> {
        let b = bytes.get(..FRAME_HEADER_BYTES)?;
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Some(Self {
            width: u32_at(0),
            height: u32_at(4),
            frame_id: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            render_ms: f32::from_le_bytes(b[16..20].try_into().unwrap()),
        })
    }
}
