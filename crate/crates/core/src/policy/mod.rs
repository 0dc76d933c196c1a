//! Policies map an observation to one action of four ego-frame waypoints.
//!
//! Three are provided: a sketch-following planner, a demonstration replay
//! oracle, and a client for externally served policies speaking the
//! newline-delimited JSON wire protocol.

mod astar;
mod baseline;
mod oracle;
pub mod remote;

use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use astar::{astar, astar_points, path_points};
pub use baseline::{BaselineConfig, BaselinePlanner};
pub use oracle::OraclePolicy;
pub use remote::{Endpoint, RemoteClient, RemotePolicy};

use crate::error::PolicyError;
use crate::geometry::{Point2, Polyline, Pose2};
use crate::render::{encode_png, CanvasImage, FrontViewImage, Raster};
use crate::sim::ACTION_LEN;
use crate::tokenizer::{ActionTokens, WaypointCodebook};

/// Observation handed to a policy each tick. Images are only rendered for
/// policies that ask for them.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub tick: usize,
    pub pose: Pose2,
    pub hindsight: &'a Polyline,
    pub language: &'a str,
    pub images: Option<(&'a FrontViewImage, &'a CanvasImage)>,
}

/// Either four tokens or four continuous ego-frame waypoints.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyResponse {
    Tokens(ActionTokens),
    Waypoints([Point2; ACTION_LEN]),
}

pub trait Policy: Send {
    fn name(&self) -> String;

    fn wants_images(&self) -> bool {
        false
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<PolicyResponse, PolicyError>;

    /// Round-trip time of the last call, for policies behind a transport.
    fn last_latency_ms(&self) -> Option<f64> {
        None
    }

    /// Number of actions that fell back to the raw sketch.
    fn fallbacks(&self) -> usize {
        0
    }
}

/// The single place where responses become waypoints: token ids are range
/// checked against `codebook` and decoded, waypoints must be finite.
pub fn resolve_action(
    response: &PolicyResponse,
    codebook: Option<&WaypointCodebook>,
) -> Result<[Point2; ACTION_LEN], PolicyError> {
    match response {
        PolicyResponse::Tokens(tokens) => {
            let cb = codebook.ok_or_else(|| PolicyError::Protocol("token response without a codebook".into()))?;
            let mut out = [Point2::ORIGIN; ACTION_LEN];
            for (o, &t) in out.iter_mut().zip(tokens) {
                *o = cb.decode(t).map_err(|_| PolicyError::TokenOutOfRange { token: t, k: cb.k })?;
            }
            Ok(out)
        }
        PolicyResponse::Waypoints(w) => {
            if w.iter().any(|p| !p.is_finite()) {
                return Err(PolicyError::Protocol("non-finite waypoint".into()));
            }
            Ok(*w)
        }
    }
}

/// Request frame of the wire protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub tick: usize,
    pub language: String,
    pub front_view_png_b64: String,
    pub canvas_png_b64: String,
    pub codebook_k: usize,
}

impl WireRequest {
    pub fn new(tick: usize, language: &str, front: &FrontViewImage, canvas: &CanvasImage, codebook_k: usize) -> Self {
        let b64 = |r: Raster| base64::engine::general_purpose::STANDARD.encode(encode_png(&r));
        Self {
            tick,
            language: language.to_string(),
            front_view_png_b64: b64(Raster::from(front)),
            canvas_png_b64: b64(Raster::from(canvas)),
            codebook_k,
        }
    }
}

/// Parses a response frame: `{"tokens": [..4]}`, `{"waypoints": [[x, y]; 4]}`
/// or `{"error": msg}`.
pub fn parse_response(frame: &str) -> Result<PolicyResponse, PolicyError> {
    let v: Value =
        serde_json::from_str(frame.trim()).map_err(|e| PolicyError::Protocol(format!("malformed frame: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| PolicyError::Protocol("response is not a JSON object".into()))?;
    if let Some(msg) = obj.get("error") {
        return Err(PolicyError::Remote(msg.as_str().map_or_else(|| msg.to_string(), str::to_string)));
    }
    match (obj.get("tokens"), obj.get("waypoints")) {
        (Some(t), None) => {
            let ids: Vec<usize> = serde_json::from_value(t.clone())
                .map_err(|e| PolicyError::Protocol(format!("tokens must be non-negative integers: {e}")))?;
            let arr: ActionTokens = ids
                .try_into()
                .map_err(|v: Vec<usize>| PolicyError::Protocol(format!("expected {ACTION_LEN} tokens, got {}", v.len())))?;
            Ok(PolicyResponse::Tokens(arr))
        }
        (None, Some(w)) => {
            let pts: Vec<Point2> = serde_json::from_value(w.clone())
                .map_err(|e| PolicyError::Protocol(format!("waypoints must be [x, y] pairs: {e}")))?;
            let arr: [Point2; ACTION_LEN] = pts.try_into().map_err(|v: Vec<Point2>| {
                PolicyError::Protocol(format!("expected {ACTION_LEN} waypoints, got {}", v.len()))
            })?;
            Ok(PolicyResponse::Waypoints(arr))
        }
        (Some(_), Some(_)) => Err(PolicyError::Protocol("response carries both tokens and waypoints".into())),
        (None, None) => Err(PolicyError::Protocol("response carries neither tokens nor waypoints".into())),
    }
}

pub fn response_to_json(resp: &PolicyResponse) -> Value {
    match resp {
        PolicyResponse::Tokens(t) => serde_json::json!({ "tokens": t }),
        PolicyResponse::Waypoints(w) => serde_json::json!({ "waypoints": w }),
    }
}

/// Policy selection as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Baseline,
    Oracle,
    Remote(String),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Baseline => f.write_str("baseline"),
            PolicyKind::Oracle => f.write_str("oracle"),
            PolicyKind::Remote(e) => write!(f, "remote:{e}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(PolicyKind::Baseline),
            "oracle" => Ok(PolicyKind::Oracle),
            _ => match s.strip_prefix("remote:") {
                Some(e) if !e.is_empty() => Ok(PolicyKind::Remote(e.to_string())),
                _ => Err(format!("unknown policy `{s}` (expected baseline, oracle or remote:<endpoint>)")),
            },
        }
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(k: PolicyKind) -> Self {
        k.to_string()
    }
}
