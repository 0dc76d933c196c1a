//! HTTP and websocket service for sketch annotation and teleoperation.
//!
//! - `GET /maps` lists environments, `GET /maps/{env}` returns metadata
//!   and the base canvas layer as base64 PNG.
//! - `POST /datapoints` validates and stores a sketch;
//!   `GET /datapoints/{env}/{id}` reads one back.
//! - `GET /teleop/{id}?env=<name>` upgrades to a websocket session that
//!   steps the simulation on a server clock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

use crate::dataset::{
    datapoint_files, load_datapoint, save_datapoint, validate_condition, write_atomic, Condition, Datapoint,
    TeleopRecorder, TELEOP_RATE_HZ,
};
use crate::error::{DatasetError, ServerError};
use crate::geometry::{Point2, Polyline};
use crate::render::{encode_png, render_base, render_canvas, render_front_view, CanvasTransform, Raster, CANVAS_SIZE};
use crate::sim::SimConfig;
use crate::world::{load_map_dir, OccupancyGrid};

/// Websocket close codes.
pub const CLOSE_UNSUPPORTED: u16 = 1003;
pub const CLOSE_POLICY: u16 = 1008;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Dataset root with one directory per environment.
    pub datasets: PathBuf,
    pub bind: SocketAddr,
    pub sim: SimConfig,
    /// Wall-clock period of one simulation step. The simulated step is
    /// always `sim.dt`.
    pub tick_period: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            datasets: PathBuf::from("datasets"),
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            sim: SimConfig::default(),
            tick_period: Duration::from_secs_f64(1.0 / TELEOP_RATE_HZ),
        }
    }
}

struct MapEntry {
    dir: PathBuf,
    grid: OccupancyGrid,
    meta: Value,
    base_png_b64: String,
}

struct AppState {
    cfg: ServerConfig,
    maps: BTreeMap<String, MapEntry>,
    /// Serializes datapoint writes.
    store: Mutex<()>,
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn load_maps(root: &Path) -> Result<BTreeMap<String, MapEntry>, ServerError> {
    let mut maps = BTreeMap::new();
    let entries = std::fs::read_dir(root).map_err(|e| ServerError::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    for entry in entries.flatten() {
        let dir = entry.path();
        if !dir.join("map.json").exists() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let (grid, _) = load_map_dir(&dir)?;
        let meta_bytes = std::fs::read(dir.join("map.json")).map_err(|e| ServerError::Io {
            path: dir.join("map.json"),
            source: e,
        })?;
        let meta: Value = serde_json::from_slice(&meta_bytes).map_err(|e| ServerError::Io {
            path: dir.join("map.json"),
            source: e.into(),
        })?;
        let base_png_b64 = b64(&encode_png(&Raster::from(&render_base(&grid))));
        maps.insert(
            name,
            MapEntry {
                dir,
                grid,
                meta,
                base_png_b64,
            },
        );
    }
    Ok(maps)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn dataset_error(e: DatasetError) -> Response {
    match e {
        DatasetError::ConditionMismatch { reason, segment } => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({ "error": "ConditionMismatch", "reason": reason, "segment": segment })),
        )
            .into_response(),
        DatasetError::Invalid(_) | DatasetError::Geometry(_) | DatasetError::Schema { .. } => {
            error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
        }
        other => error(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

/// Builds the application router. Maps are loaded once up front.
pub fn app(cfg: ServerConfig) -> Result<Router, ServerError> {
    let maps = load_maps(&cfg.datasets)?;
    log::info!("serving {} environments from {}", maps.len(), cfg.datasets.display());
    let state = Arc::new(AppState {
        cfg,
        maps,
        store: Mutex::new(()),
    });
    Ok(Router::new()
        .route("/maps", get(list_maps))
        .route("/maps/{env}", get(get_map))
        .route("/datapoints", post(create_datapoint))
        .route("/datapoints/{env}/{id}", get(get_datapoint))
        .route("/teleop/{id}", get(teleop))
        .layer(CorsLayer::permissive())
        .with_state(state))
}

/// Binds `cfg.bind` and serves until the process ends.
pub async fn serve(cfg: ServerConfig) -> Result<(), ServerError> {
    let bind = cfg.bind;
    let router = app(cfg)?;
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| ServerError::Io {
        path: PathBuf::from(bind.to_string()),
        source: e,
    })?;
    log::info!("listening on {}", listener.local_addr().map_or(bind, |a| a));
    axum::serve(listener, router).await.map_err(|e| ServerError::Io {
        path: PathBuf::from(bind.to_string()),
        source: e,
    })
}

async fn list_maps(State(st): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = st
        .maps
        .iter()
        .map(|(name, m)| {
            let (w, h) = m.grid.extent();
            json!({ "name": name, "width_m": w, "height_m": h, "resolution": m.grid.resolution() })
        })
        .collect();
    Json(json!({ "maps": list }))
}

fn transform_json(t: &CanvasTransform) -> Value {
    json!({
        "size": CANVAS_SIZE,
        "pixels_per_meter": t.pixels_per_meter,
        "offset": [t.offset_x, t.offset_y],
        "world_min": [t.world_min.x, t.world_min.y],
        "world_max_y": t.world_max_y,
    })
}

async fn get_map(State(st): State<Arc<AppState>>, UrlPath(env): UrlPath<String>) -> Response {
    let Some(m) = st.maps.get(&env) else {
        return error(StatusCode::NOT_FOUND, format!("unknown environment `{env}`"));
    };
    let t = CanvasTransform::fit(&m.grid, CANVAS_SIZE);
    Json(json!({
        "name": env,
        "resolution": m.grid.resolution(),
        "origin": [m.grid.origin().x, m.grid.origin().y],
        "width_cells": m.grid.width(),
        "height_cells": m.grid.height(),
        "regions": m.meta.get("regions").cloned().unwrap_or(Value::Array(vec![])),
        "canvas": transform_json(&t),
        "base_png_b64": m.base_png_b64,
    }))
    .into_response()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchUnit {
    #[default]
    World,
    Pixel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewDatapoint {
    environment: String,
    sketch: Vec<[f64; 2]>,
    #[serde(default)]
    unit: SketchUnit,
    #[serde(default)]
    language: String,
    condition: Condition,
}

fn next_id(dir: &Path) -> Result<String, DatasetError> {
    let max = datapoint_files(dir)?
        .iter()
        .filter_map(|p| p.file_stem()?.to_str()?.strip_prefix("dp_")?.parse::<usize>().ok())
        .max();
    Ok(format!("dp_{:04}", max.map_or(0, |m| m + 1)))
}

fn with_pixels(dp: &Datapoint, grid: &OccupancyGrid) -> Value {
    let t = CanvasTransform::fit(grid, CANVAS_SIZE);
    let px: Vec<[f64; 2]> = dp
        .sketch
        .points()
        .iter()
        .map(|&p| {
            let q = t.world_to_pixel(p);
            [q.x, q.y]
        })
        .collect();
    let mut v = serde_json::to_value(dp).expect("datapoint serializes");
    v["sketch_px"] = json!(px);
    v
}

async fn create_datapoint(State(st): State<Arc<AppState>>, body: Result<Json<NewDatapoint>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    let Some(m) = st.maps.get(&req.environment) else {
        return error(StatusCode::NOT_FOUND, format!("unknown environment `{}`", req.environment));
    };
    let t = CanvasTransform::fit(&m.grid, CANVAS_SIZE);
    let pts: Vec<Point2> = req
        .sketch
        .iter()
        .map(|&[x, y]| match req.unit {
            SketchUnit::World => Point2::new(x, y),
            SketchUnit::Pixel => t.pixel_to_world(Point2::new(x, y)),
        })
        .collect();
    if pts.len() < 2 {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "a sketch needs at least two points");
    }
    let sketch = match Polyline::new(pts) {
        Ok(s) => s,
        Err(e) => return dataset_error(e.into()),
    };
    if let Err(e) = validate_condition(&m.grid, &sketch, req.condition) {
        return dataset_error(e);
    }
    let _guard = st.store.lock().await;
    let id = match next_id(&m.dir) {
        Ok(id) => id,
        Err(e) => return dataset_error(e),
    };
    let mut dp = Datapoint::draft(id.clone(), req.environment.clone(), sketch, req.condition);
    dp.language = req.language;
    let path = m.dir.join("datapoints").join(format!("{id}.json"));
    if let Err(e) = std::fs::create_dir_all(m.dir.join("datapoints")) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    match save_datapoint(&path, &dp, &m.grid).and_then(|()| load_datapoint(&path)) {
        Ok(stored) => {
            log::info!("stored {}/{id}", req.environment);
            (StatusCode::CREATED, Json(with_pixels(&stored, &m.grid))).into_response()
        }
        Err(e) => dataset_error(e),
    }
}

fn datapoint_path(m: &MapEntry, id: &str) -> Option<PathBuf> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    ok.then(|| m.dir.join("datapoints").join(format!("{id}.json")))
}

async fn get_datapoint(State(st): State<Arc<AppState>>, UrlPath((env, id)): UrlPath<(String, String)>) -> Response {
    let Some(m) = st.maps.get(&env) else {
        return error(StatusCode::NOT_FOUND, format!("unknown environment `{env}`"));
    };
    match datapoint_path(m, &id).filter(|p| p.exists()) {
        Some(p) => match load_datapoint(&p) {
            Ok(dp) => Json(with_pixels(&dp, &m.grid)).into_response(),
            Err(e) => dataset_error(e),
        },
        None => error(StatusCode::NOT_FOUND, format!("unknown datapoint `{env}/{id}`")),
    }
}

#[derive(Debug, Deserialize)]
struct TeleopQuery {
    env: Option<String>,
    /// Send rendered images with every frame.
    #[serde(default = "yes")]
    images: bool,
}

fn yes() -> bool {
    true
}

/// Finds the environment holding `id`: the named one, or the only one.
fn locate<'a>(st: &'a AppState, env: Option<&str>, id: &str) -> Result<(&'a str, &'a MapEntry, PathBuf), String> {
    let hits: Vec<(&str, &MapEntry, PathBuf)> = st
        .maps
        .iter()
        .filter(|(name, _)| env.is_none_or(|e| e == name.as_str()))
        .filter_map(|(name, m)| datapoint_path(m, id).filter(|p| p.exists()).map(|p| (name.as_str(), m, p)))
        .collect();
    match hits.len() {
        1 => Ok(hits.into_iter().next().expect("one hit")),
        0 => Err(format!("unknown datapoint `{id}`")),
        _ => Err(format!("datapoint `{id}` exists in several environments, pass ?env=")),
    }
}

async fn teleop(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TeleopQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let (env, path) = match locate(&st, q.env.as_deref(), &id) {
        Ok((env, _, path)) => (env.to_string(), path),
        Err(msg) => return error(StatusCode::NOT_FOUND, msg),
    };
    let dp = match load_datapoint(&path) {
        Ok(dp) => dp,
        Err(e) => return dataset_error(e),
    };
    ws.on_upgrade(move |socket| async move {
        if let Err(e) = run_session(st, env, path, dp, q.images, socket).await {
            log::warn!("teleop {id}: {e}");
        }
    })
}

/// Client frame: a command or the end marker.
#[derive(Debug, PartialEq)]
pub enum ClientFrame {
    Command { v: f64, omega: f64 },
    End,
}

/// Parses `{"v": .., "ω": ..}` (`omega` is accepted too) or `{"end": true}`.
pub fn parse_client_frame(text: &str) -> Result<ClientFrame, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("malformed frame: {e}"))?;
    let obj = v.as_object().ok_or("frame must be a JSON object")?;
    if obj.get("end").and_then(Value::as_bool) == Some(true) {
        return Ok(ClientFrame::End);
    }
    let num = |k: &str| obj.get(k).and_then(Value::as_f64);
    match (num("v"), num("ω").or_else(|| num("omega"))) {
        (Some(v), Some(omega)) if v.is_finite() && omega.is_finite() => Ok(ClientFrame::Command { v, omega }),
        _ => Err("command frame needs finite `v` and `ω`".into()),
    }
}

fn frame(rec: &TeleopRecorder, dp: &Datapoint, grid: &OccupancyGrid, images: bool, status: &str) -> Value {
    let s = rec.state();
    let (v, omega) = rec.active_command();
    let mut f = json!({
        "t": s.time,
        "pose": { "position": [s.pose.position.x, s.pose.position.y], "heading": s.pose.heading },
        "command": { "v": v, "ω": omega },
        "collisions": rec.collisions(),
        "status": status,
    });
    if images {
        let trail: Vec<Point2> = rec.record().samples.iter().map(|x| x.pose.position).collect();
        let canvas = render_canvas(grid, dp.sketch.points(), &trail, Some(s.pose));
        f["canvas_png_b64"] = json!(b64(&encode_png(&Raster::from(&canvas))));
        if let Ok(front) = render_front_view(grid, s.pose) {
            f["front_view_png_b64"] = json!(b64(&encode_png(&Raster::from(&front))));
        }
    }
    f
}

async fn close(socket: &mut WebSocket, code: u16, reason: String) {
    let _ = socket
        .send(Message::Close(Some(CloseFrame {
            code,
            reason: reason.into(),
        })))
        .await;
}

fn record_path(env_dir: &Path, id: &str, partial: bool) -> PathBuf {
    let suffix = if partial { ".partial" } else { "" };
    env_dir.join("episodes").join(format!("teleop_{id}{suffix}.json"))
}

fn store_record(env_dir: &Path, id: &str, record: &crate::dataset::TeleopRecord, partial: bool) -> Result<(), ServerError> {
    let path = record_path(env_dir, id, partial);
    std::fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| ServerError::Io {
        path: path.clone(),
        source: e,
    })?;
    let text = serde_json::to_vec_pretty(record).expect("record serializes");
    Ok(write_atomic(&path, &text)?)
}

async fn run_session(
    st: Arc<AppState>,
    env: String,
    path: PathBuf,
    dp: Datapoint,
    images: bool,
    mut socket: WebSocket,
) -> Result<(), ServerError> {
    let m = st.maps.get(&env).expect("located environment");
    let mut rec = TeleopRecorder::new(dp.id.clone(), dp.start_pose, st.cfg.sim.clone());
    let mut clock = tokio::time::interval(st.cfg.tick_period);
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    log::info!("teleop session {env}/{} started", dp.id);
    loop {
        tokio::select! {
            _ = clock.tick() => {
                rec.tick(&m.grid);
                let f = frame(&rec, &dp, &m.grid, images, "Running");
                if socket.send(Message::Text(f.to_string().into())).await.is_err() {
                    store_record(&m.dir, &dp.id, &rec.abort(), true)?;
                    return Ok(());
                }
            }
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Binary(_))) => {
                        close(&mut socket, CLOSE_UNSUPPORTED, "binary frames are not supported".into()).await;
                        store_record(&m.dir, &dp.id, &rec.abort(), true)?;
                        return Ok(());
                    }
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => {
                        store_record(&m.dir, &dp.id, &rec.abort(), true)?;
                        return Ok(());
                    }
                };
                match parse_client_frame(text.as_str()) {
                    Ok(ClientFrame::Command { v, omega }) => {
                        rec.command(v, omega)?;
                    }
                    Ok(ClientFrame::End) => {
                        let collisions = rec.collisions();
                        let (record, updated) = rec.finish(&dp);
                        let _guard = st.store.lock().await;
                        store_record(&m.dir, &dp.id, &record, false)?;
                        let saved = save_datapoint(&path, &updated, &m.grid).and_then(|()| load_datapoint(&path));
                        let updated = saved.as_ref().unwrap_or(&updated);
                        let mut f = json!({
                            "status": "Finished",
                            "end": true,
                            "fd_sketch_demo": updated.fd_sketch_demo,
                            "demo_length": updated.demo.as_ref().map(|d| d.length()),
                            "duration": updated.demo_duration,
                            "collisions": collisions,
                        });
                        if let Err(e) = &saved {
                            f["store_error"] = json!(e.to_string());
                        }
                        let _ = socket.send(Message::Text(f.to_string().into())).await;
                        close(&mut socket, 1000, "session finished".into()).await;
                        log::info!("teleop session {env}/{} finished", dp.id);
                        return Ok(());
                    }
                    Err(reason) => {
                        close(&mut socket, CLOSE_POLICY, reason).await;
                        store_record(&m.dir, &dp.id, &rec.abort(), true)?;
                        return Ok(());
                    }
                }
            }
        }
    }
}
