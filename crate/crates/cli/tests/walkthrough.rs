use std::fs;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ess_core::env::dataset::Dataset;
use ess_core::env::{generate_floorplan, PlanParams};
use ess_core::image::RgbImage;
use ess_lab::config::RunConfig;
use ess_lab::pipeline;
use ess_lab::server::{bind, serve, AppState};
use ess_lab::session::{SessionConfig, SessionState};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

const STEPS: [&str; 4] = ["forward", "turn_left", "forward", "turn_right"];

async fn start(static_dir: Option<std::path::PathBuf>) -> (std::net::SocketAddr, AppState) {
    let plan = generate_floorplan(7, &PlanParams::default()).unwrap();
    let session = SessionState::new(
        plan,
        SessionConfig {
            resolution: 32,
            step_length: 0.2,
            turn_increment: 5.0,
            lighting: 0,
        },
    )
    .unwrap();
    let state = AppState::new(session);
    let (listener, addr) = bind("127.0.0.1", 0).await.unwrap();
    tokio::spawn(serve(listener, state.clone(), static_dir));
    (addr, state)
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn recv(ws: &mut Socket) -> Value {
    loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            Message::Close(_) => panic!("socket closed"),
            _ => continue,
        }
    }
}

async fn send(ws: &mut Socket, v: Value) -> Value {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
    recv(ws).await
}

#[tokio::test]
async fn handshake_turns_and_errors() {
    let (addr, _) = start(None).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let first = recv(&mut ws).await;
    assert_eq!(first["type"], "frame");
    assert_eq!(first["step"], 0);
    let yaw0 = first["pose"]["yaw"].as_f64().unwrap();
    let bytes = STANDARD.decode(first["image_b64"].as_str().unwrap()).unwrap();
    let img = RgbImage::from_ppm(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));

    let mut last = Value::Null;
    for _ in 0..72 {
        last = send(&mut ws, json!({"type": "input", "action": "turn_left"})).await;
    }
    assert_eq!(last["step"], 72);
    let d = (last["pose"]["yaw"].as_f64().unwrap() - yaw0).rem_euclid(360.0);
    assert!(d.min(360.0 - d) < 1e-9, "yaw drifted by {d}");

    let err = send(&mut ws, json!({"type": "teleport"})).await;
    assert_eq!(err["type"], "error");
    let err = send(&mut ws, json!({"type": "lighting", "id": 99})).await;
    assert_eq!(err["type"], "error");
    let lit = send(&mut ws, json!({"type": "lighting", "id": 3})).await;
    assert_eq!(lit["lighting"], 3);
    assert_eq!(lit["step"], 72);
}

#[tokio::test]
async fn second_connection_is_refused_and_reconnect_resumes() {
    let (addr, _) = start(None).await;
    let url = format!("ws://{addr}/ws");
    let (mut a, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    recv(&mut a).await;
    let moved = send(&mut a, json!({"type": "input", "action": "turn_left"})).await;
    let (mut b, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    assert_eq!(recv(&mut b).await["type"], "error");
    a.close(None).await.unwrap();
    while a.next().await.is_some() {}
    // The server releases the session once it sees the close.
    let mut resumed = Value::Null;
    for _ in 0..50 {
        let (mut c, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        resumed = recv(&mut c).await;
        if resumed["type"] == "frame" {
            break;
        }
        tokio::task::yield_now().await;
    }
    assert_eq!(resumed["type"], "frame");
    assert_eq!(resumed["pose"], moved["pose"]);
    assert_eq!(resumed["step"], 1);
}

#[tokio::test]
async fn recorded_walk_round_trips_through_generate() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, state) = start(None).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    recv(&mut ws).await;
    let on = send(&mut ws, json!({"type": "recording", "on": true})).await;
    assert_eq!(on["recording"], true);
    for i in 0..100 {
        let f = send(&mut ws, json!({"type": "input", "action": STEPS[i % 4]})).await;
        assert_eq!(f["type"], "frame");
    }
    let path = dir.path().join("walk.csv");
    let saved = send(&mut ws, json!({"type": "save", "path": path.to_str().unwrap()})).await;
    assert_eq!(saved["type"], "saved", "{saved}");
    assert_eq!(saved["points"], 101);
    let bad = send(&mut ws, json!({"type": "save", "path": dir.path().join("no/such/dir.csv")})).await;
    assert_eq!(bad["type"], "error");
    let buffer = state.session().lock().unwrap().buffer().to_vec();

    let cfg = RunConfig::load(
        None,
        &[
            format!("output_dir={}", toml::Value::String(dir.path().display().to_string())),
            format!("env.trajectory={}", toml::Value::String(path.display().to_string())),
            "env.resolution=16".into(),
        ],
    )
    .unwrap();
    pipeline::generate(&cfg).unwrap();
    let ds = Dataset::load(&cfg.dataset_dir()).unwrap();
    assert_eq!(ds.len(), buffer.len());
    for ((r, p), b) in ds.records.iter().zip(&ds.poses).zip(&buffer) {
        assert_eq!(r.step, b.step);
        assert_eq!(*p, b.pose);
    }
}

#[tokio::test]
async fn static_bundle_and_placeholder() {
    let (addr, _) = start(None).await;
    let body = http_get(addr, "/").await;
    assert!(body.contains("/ws"), "{body}");

    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("index.html"), "<p>walkthrough client</p>").unwrap();
    let (addr, _) = start(Some(dir.path().to_path_buf())).await;
    assert!(http_get(addr, "/").await.contains("walkthrough client"));
    assert!(http_get(addr, "/index.html").await.contains("walkthrough client"));
}

async fn http_get(addr: std::net::SocketAddr, path: &str) -> String {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    out
}
