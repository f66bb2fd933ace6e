use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use tli_service::protocol::{AssetListing, ErrorCode};
use tli_service::{router, AppState, Assets, ServerMessage, Snapshot};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start() -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::new(Assets::bundled()))).await.unwrap() });
    addr
}

async fn connect(addr: SocketAddr) -> Socket {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Socket, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

/// Next server message; every one must match the schema exactly.
async fn recv(ws: &mut Socket) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(60), ws.next()).await.expect("server went quiet").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap_or_else(|e| panic!("{e}: {t}"));
        }
    }
}

/// Skips snapshots up to the reply for `seq`.
async fn reply(ws: &mut Socket, seq: u64) -> ServerMessage {
    loop {
        match recv(ws).await {
            ServerMessage::Snapshot { .. } => continue,
            m @ (ServerMessage::Ack { seq: s, .. } | ServerMessage::Error { seq: Some(s), .. }) if s == seq => return m,
            other => panic!("unexpected {other:?}"),
        }
    }
}

async fn snapshot_where(ws: &mut Socket, max: usize, f: impl Fn(&Snapshot) -> bool) -> Snapshot {
    for _ in 0..max {
        if let ServerMessage::Snapshot { payload, .. } = recv(ws).await {
            if f(&payload) {
                return *payload;
            }
        }
    }
    panic!("no matching snapshot in {max} messages");
}

fn create(seq: u64) -> Value {
    json!({
        "type": "create", "seq": seq, "scene": "scooping", "spec": "scooping_full", "variant": "DS+mod",
        "config": {"tick_hz": 200.0, "steps_per_tick": 5, "grid": 4}
    })
}

async fn created(ws: &mut Socket, seq: u64) -> u64 {
    send(ws, create(seq)).await;
    match reply(ws, seq).await {
        ServerMessage::Ack { payload, .. } => {
            assert_eq!(payload.action, "create");
            payload.id
        }
        other => panic!("create failed: {other:?}"),
    }
}

fn error_code(m: ServerMessage) -> ErrorCode {
    match m {
        ServerMessage::Error { payload, .. } => payload.code,
        other => panic!("expected an error, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_streams_snapshots_and_steers_the_run() {
    let addr = start().await;
    let mut ws = connect(addr).await;
    let id = created(&mut ws, 1).await;
    let first = snapshot_where(&mut ws, 10, |_| true).await;
    assert_eq!(first.session, id);
    assert!(first.paused);
    assert_eq!(first.trajectory.len(), 1);
    send(&mut ws, json!({"type": "command", "seq": 2, "id": id, "cmd": "resume"})).await;
    assert!(matches!(reply(&mut ws, 2).await, ServerMessage::Ack { .. }));
    snapshot_where(&mut ws, 2000, |s| s.mode.name == "c").await;
    send(&mut ws, json!({"type": "command", "seq": 3, "id": id, "cmd": "perturb", "args": {"target": [0.1, 0.5]}})).await;
    // ack first, then the replanned snapshots
    let mut acked = false;
    let replanned = loop {
        match recv(&mut ws).await {
            ServerMessage::Ack { seq: 3, .. } => acked = true,
            ServerMessage::Snapshot { payload, .. } if payload.replans == 1 => break payload,
            ServerMessage::Snapshot { .. } => {}
            other => panic!("unexpected {other:?}"),
        }
    };
    assert!(acked);
    assert_eq!(replanned.mode.name, "a");
    assert_eq!(replanned.commanded.name, "b");
    let done = snapshot_where(&mut ws, 4000, |s| s.verdict.is_some()).await;
    assert_eq!(done.verdict, Some(tli_core::executor::Verdict::Success));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_carry_codes_and_sequence_numbers() {
    let addr = start().await;
    let mut ws = connect(addr).await;
    let mut bad = create(1);
    bad["scene"] = json!("kitchen");
    send(&mut ws, bad).await;
    assert_eq!(error_code(reply(&mut ws, 1).await), ErrorCode::UnknownAsset);
    send(&mut ws, json!({"type": "command", "seq": 2, "id": 99, "cmd": "pause"})).await;
    assert_eq!(error_code(reply(&mut ws, 2).await), ErrorCode::UnknownSession);
    send(&mut ws, json!({"type": "command", "seq": 3, "id": 1, "cmd": "pause", "urgent": true})).await;
    assert_eq!(error_code(reply(&mut ws, 3).await), ErrorCode::BadMessage);
    send(&mut ws, json!({"type": "command", "seq": 4, "id": 1, "cmd": "fly"})).await;
    assert_eq!(error_code(reply(&mut ws, 4).await), ErrorCode::InvalidCommand);
    let id = created(&mut ws, 5).await;
    send(&mut ws, json!({"type": "command", "seq": 6, "id": id, "cmd": "perturb", "args": {"delta": [0.1]}})).await;
    assert_eq!(error_code(reply(&mut ws, 6).await), ErrorCode::InvalidCommand);
    ws.send(Message::Text("not json".into())).await.unwrap();
    loop {
        match recv(&mut ws).await {
            ServerMessage::Snapshot { .. } => continue,
            ServerMessage::Error { seq: None, payload } => break assert_eq!(payload.code, ErrorCode::BadMessage),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_distinct_and_closable() {
    let addr = start().await;
    let mut ws = connect(addr).await;
    let a = created(&mut ws, 1).await;
    let b = created(&mut ws, 2).await;
    assert_ne!(a, b);
    let listed: Vec<u64> = serde_json::from_str(&http_get(addr, "/sessions").await).unwrap();
    assert_eq!(listed, [a, b]);
    send(&mut ws, json!({"type": "close", "seq": 3, "id": a})).await;
    assert!(matches!(reply(&mut ws, 3).await, ServerMessage::Ack { .. }));
    send(&mut ws, json!({"type": "command", "seq": 4, "id": a, "cmd": "resume"})).await;
    assert_eq!(error_code(reply(&mut ws, 4).await), ErrorCode::UnknownSession);
    let listed: Vec<u64> = serde_json::from_str(&http_get(addr, "/sessions").await).unwrap();
    assert_eq!(listed, [b]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn a_second_connection_can_follow_a_session() {
    let addr = start().await;
    let mut owner = connect(addr).await;
    let id = created(&mut owner, 1).await;
    send(&mut owner, json!({"type": "command", "seq": 2, "id": id, "cmd": "resume"})).await;
    reply(&mut owner, 2).await;
    drop(owner);
    let mut viewer = connect(addr).await;
    send(&mut viewer, json!({"type": "subscribe", "seq": 1, "id": id})).await;
    reply(&mut viewer, 1).await;
    let a = snapshot_where(&mut viewer, 50, |s| s.step > 0).await;
    let b = snapshot_where(&mut viewer, 50, |s| s.tick > a.tick).await;
    assert!(b.step >= a.step);
    assert_eq!(b.session, id);
}

async fn http_get(addr: SocketAddr, path: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    buf.split_once("\r\n\r\n").unwrap().1.to_string()
}

#[tokio::test]
async fn assets_are_listed_over_http() {
    let addr = start().await;
    let listing: AssetListing = serde_json::from_str(&http_get(addr, "/assets").await).unwrap();
    assert!(listing.scenes.contains(&"scooping".to_string()));
    assert_eq!(listing.specs.len(), 9);
    assert!(listing.variants.contains(&"DS+mod".to_string()));
}
