use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::Message;

use canvas_nav::dataset::{load_datapoint, load_environment, Condition, COMMAND_HOLD};
use canvas_nav::geometry::Point2;
use canvas_nav::render::{CanvasTransform, CANVAS_SIZE};
use canvas_nav::server::{app, ServerConfig, CLOSE_POLICY};
use canvas_nav::tools::cmd_render;

fn datasets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            copy_dir(&p, &to.join(e.file_name()));
        } else {
            fs::copy(&p, to.join(e.file_name())).unwrap();
        }
    }
}

struct Server {
    addr: SocketAddr,
    root: PathBuf,
    _tmp: tempfile::TempDir,
}

/// Serves a private copy of the bundled datasets on an ephemeral port.
async fn start() -> Server {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("datasets");
    for env in ["gallery", "office", "orchard", "street"] {
        copy_dir(&datasets().join(env), &root.join(env));
    }
    let router = app(ServerConfig {
        datasets: root.clone(),
        tick_period: Duration::from_millis(5),
        ..ServerConfig::default()
    })
    .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    Server { addr, root, _tmp: tmp }
}

async fn http(method: &'static str, url: String, body: Option<Value>) -> (u16, Value) {
    tokio::task::spawn_blocking(move || {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let mut resp = match (method, body) {
            ("GET", _) => agent.get(&url).call(),
            (_, Some(b)) => agent.post(&url).send_json(b),
            _ => agent.post(&url).send_empty(),
        }
        .unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    })
    .await
    .unwrap()
}

/// Two free points on either side of a wall of the office map.
fn through_wall(root: &Path) -> [[f64; 2]; 2] {
    let env = load_environment(&root.join("office")).unwrap();
    let g = &env.grid;
    let free = |c: usize, r: usize| !g.get(c, r).is_blocking();
    for r in 5..g.height() - 5 {
        let mut c = 4;
        while c < g.width() - 4 {
            if !g.get(c, r).is_blocking() {
                c += 1;
                continue;
            }
            let end = (c..g.width()).find(|&e| free(e, r)).unwrap_or(g.width());
            if end + 4 < g.width() && (1..=4).all(|d| free(c - d, r) && free(end - 1 + d, r)) {
                let (a, b) = (g.cell_center(c - 3, r), g.cell_center(end + 2, r));
                return [[a.x, a.y], [b.x, b.y]];
            }
            c = end;
        }
    }
    panic!("office has no wall between free cells");
}

#[tokio::test(flavor = "multi_thread")]
async fn maps_are_listed_with_base_layers() {
    let srv = start().await;
    let (status, body) = http("GET", format!("http://{}/maps", srv.addr), None).await;
    assert_eq!(status, 200);
    let names: Vec<&str> = body["maps"].as_array().unwrap().iter().map(|m| m["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["gallery", "office", "orchard", "street"]);

    let (status, _) = http("GET", format!("http://{}/maps/mars", srv.addr), None).await;
    assert_eq!(status, 404);

    let (status, map) = http("GET", format!("http://{}/maps/street", srv.addr), None).await;
    assert_eq!(status, 200);
    assert!(!map["regions"].as_array().unwrap().is_empty());
    assert_eq!(map["canvas"]["size"], CANVAS_SIZE);
    let png = base64::engine::general_purpose::STANDARD.decode(map["base_png_b64"].as_str().unwrap()).unwrap();
    let out = srv.root.join("render");
    let files = cmd_render(&srv.root.join("street/datapoints/dp_0001.json"), 0, &out).unwrap();
    assert!(png == fs::read(files.base).unwrap(), "served base layer differs from the rendered one");
}

#[tokio::test(flavor = "multi_thread")]
async fn datapoints_are_validated_and_stored() {
    let srv = start().await;
    let url = format!("http://{}/datapoints", srv.addr);
    let precise = load_datapoint(&srv.root.join("office/datapoints/dp_0001.json")).unwrap();
    let sketch: Vec<[f64; 2]> = precise.sketch.points().iter().map(|p| [p.x, p.y]).collect();

    let req = json!({ "environment": "office", "sketch": sketch, "language": "to the kitchen", "condition": "Precise" });
    let (status, created) = http("POST", url.clone(), Some(req)).await;
    assert_eq!(status, 201, "{created}");
    let id = created["id"].as_str().unwrap().to_string();
    assert!(srv.root.join(format!("office/datapoints/{id}.json")).is_file());
    let (status, fetched) = http("GET", format!("http://{}/datapoints/office/{id}", srv.addr), None).await;
    assert_eq!(status, 200);
    assert_eq!(fetched, created);

    let wall = through_wall(&srv.root);
    let req = json!({ "environment": "office", "sketch": wall, "condition": "Precise" });
    let (status, err) = http("POST", url.clone(), Some(req)).await;
    assert_eq!(status, 422);
    assert_eq!(err["error"], "ConditionMismatch");
    assert_eq!(err["segment"], 0);

    let req = json!({ "environment": "office", "sketch": wall, "condition": "Misleading" });
    let (status, twin) = http("POST", url.clone(), Some(req)).await;
    assert_eq!(status, 201, "{twin}");
    assert_ne!(twin["id"], created["id"]);

    let req = json!({ "environment": "atlantis", "sketch": wall, "condition": "Misleading" });
    assert_eq!(http("POST", url.clone(), Some(req)).await.0, 404);
    let req = json!({ "environment": "office", "sketch": [[1.0, 1.0]], "condition": "Precise" });
    assert_eq!(http("POST", url.clone(), Some(req)).await.0, 422);
    let (status, _) = http("GET", format!("http://{}/datapoints/office/dp_9999", srv.addr), None).await;
    assert_eq!(status, 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn pixel_sketches_round_trip() {
    let srv = start().await;
    let env = load_environment(&srv.root.join("office")).unwrap();
    let t = CanvasTransform::fit(&env.grid, CANVAS_SIZE);
    let precise = &env.datapoints[0];
    let px: Vec<[f64; 2]> = precise
        .sketch
        .points()
        .iter()
        .map(|&p| {
            let q = t.world_to_pixel(p);
            [q.x.round(), q.y.round()]
        })
        .collect();
    let req = json!({ "environment": "office", "sketch": px, "unit": "pixel", "condition": precise.condition });
    let (status, created) = http("POST", format!("http://{}/datapoints", srv.addr), Some(req)).await;
    assert_eq!(status, 201, "{created}");
    let back = created["sketch_px"].as_array().unwrap();
    assert_eq!(back.len(), px.len());
    for (b, p) in back.iter().zip(&px) {
        let b = Point2::new(b[0].as_f64().unwrap(), b[1].as_f64().unwrap());
        assert!(b.distance(Point2::new(p[0], p[1])) <= 1.0, "{b:?} vs {p:?}");
    }
    for (w, p) in created["sketch"].as_array().unwrap().iter().zip(precise.sketch.points()) {
        let w = Point2::new(w[0].as_f64().unwrap(), w[1].as_f64().unwrap());
        assert!(w.distance(*p) <= 1.0 / t.pixels_per_meter);
    }
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        match tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            Message::Close(c) => panic!("closed early: {c:?}"),
            _ => continue,
        }
    }
}

fn pose_of(f: &Value) -> (Point2, f64) {
    let p = &f["pose"]["position"];
    (Point2::new(p[0].as_f64().unwrap(), p[1].as_f64().unwrap()), f["pose"]["heading"].as_f64().unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn teleop_drives_halts_and_records() {
    let srv = start().await;
    let dp_path = srv.root.join("office/datapoints/dp_0001.json");
    let dp = load_datapoint(&dp_path).unwrap();
    let url = format!("ws://{}/teleop/{}?env=office&images=false", srv.addr, dp.id);
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();

    let first = next_json(&mut ws).await;
    assert_eq!(first["status"], "Running");
    assert_eq!(first["command"]["v"], 0.0);
    ws.send(Message::Text(json!({ "v": 0.4, "ω": 0.0 }).to_string().into())).await.unwrap();
    let mut moving = next_json(&mut ws).await;
    while moving["command"]["v"].as_f64().unwrap() == 0.0 {
        moving = next_json(&mut ws).await;
    }
    let t_cmd = moving["t"].as_f64().unwrap();
    let (start, heading) = pose_of(&first);

    let mut halted = next_json(&mut ws).await;
    while halted["command"]["v"].as_f64().unwrap() != 0.0 {
        halted = next_json(&mut ws).await;
    }
    let held = halted["t"].as_f64().unwrap() - t_cmd;
    assert!(held <= COMMAND_HOLD + 0.1 + 1e-9, "command held for {held:.2} s");
    let (moved, _) = pose_of(&halted);
    let d = moved - start;
    assert!(d.x * heading.cos() + d.y * heading.sin() > 0.1, "robot did not drive forward");
    assert!((d.x * heading.sin() - d.y * heading.cos()).abs() < 0.02, "robot drifted sideways");
    for _ in 0..3 {
        let later = next_json(&mut ws).await;
        assert!(pose_of(&later).0.distance(moved) < 0.05, "watchdog did not stop the robot");
    }

    ws.send(Message::Text(json!({ "end": true }).to_string().into())).await.unwrap();
    let done = loop {
        let f = next_json(&mut ws).await;
        if f["status"] == "Finished" {
            break f;
        }
    };
    assert_eq!(done["end"], true);
    assert!(done["fd_sketch_demo"].as_f64().unwrap() > 0.0);
    assert!(done["demo_length"].as_f64().unwrap() > 0.1);
    match tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap() {
        Some(Ok(Message::Close(Some(c)))) => assert_eq!(c.code, CloseCode::Normal),
        other => panic!("expected a normal close, got {other:?}"),
    }
    let stored = load_datapoint(&dp_path).unwrap();
    assert_eq!(stored.condition, Condition::Precise);
    assert_eq!(stored.fd_sketch_demo, done["fd_sketch_demo"].as_f64());
    assert!(srv.root.join("office/episodes/teleop_dp_0001.json").is_file());
}

#[tokio::test(flavor = "multi_thread")]
async fn teleop_bad_frame_closes_with_policy_code() {
    let srv = start().await;
    let url = format!("ws://{}/teleop/dp_0002?env=office", srv.addr);
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let first = next_json(&mut ws).await;
    assert!(first["canvas_png_b64"].is_string() && first["front_view_png_b64"].is_string());
    let before = fs::read(srv.root.join("office/datapoints/dp_0002.json")).unwrap();
    ws.send(Message::Text("{\"v\": \"fast\"}".into())).await.unwrap();
    let code = loop {
        match tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap() {
            Some(Ok(Message::Close(Some(c)))) => break u16::from(c.code),
            Some(Ok(_)) => continue,
            other => panic!("expected a close frame, got {other:?}"),
        }
    };
    assert_eq!(code, CLOSE_POLICY);
    assert_eq!(fs::read(srv.root.join("office/datapoints/dp_0002.json")).unwrap(), before);
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert!(srv.root.join("office/episodes/teleop_dp_0002.partial.json").is_file());
}

#[tokio::test(flavor = "multi_thread")]
async fn teleop_unknown_datapoint_is_404() {
    let srv = start().await;
    let (status, _) = http("GET", format!("http://{}/teleop/dp_9999", srv.addr), None).await;
    assert!(status == 404 || status == 400, "{status}");
    let url = format!("ws://{}/teleop/dp_9999?env=office", srv.addr);
    assert!(tokio_tungstenite::connect_async(url).await.is_err());
}
