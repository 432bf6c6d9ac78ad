use std::time::Duration;

use cba::archive::SessionRecord;
use cba::engine::EngineEvent;
use cba::Action;
use cba_service::server::server_message;
use cba_service::{serve, ClientBody, Envelope, Role, ServerBody, ServerConfig, ServerMessage, SessionConfig};
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(dir: &std::path::Path) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let config = ServerConfig {
        session_dir: dir.to_path_buf(),
        default_session: SessionConfig {
            oracle_bootstrap: false,
            ..SessionConfig::default()
        },
        autostart: true,
    };
    tokio::spawn(serve(listener, config));
    format!("ws://{addr}/ws")
}

async fn next(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .expect("socket error");
        if let Message::Text(t) = msg {
            return server_message(t.as_str()).expect("server sent valid json");
        }
    }
}

async fn wait_for(ws: &mut Ws, mut pred: impl FnMut(&ServerBody) -> bool) -> ServerMessage {
    loop {
        let m = next(ws).await;
        if pred(&m.body) {
            return m;
        }
    }
}

async fn send(ws: &mut Ws, session: &str, seq: u64, body: ClientBody) {
    let text = serde_json::to_string(&Envelope::new(session, seq, body)).unwrap();
    ws.send(Message::Text(text.into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn teacher_and_observer_over_a_live_socket() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(dir.path()).await;

    let (mut teacher, _) = connect_async(&url).await.unwrap();
    let hello = next(&mut teacher).await;
    assert_eq!(hello.body, ServerBody::Hello { role: Role::Teacher });
    let session = hello.session.clone();
    assert_eq!(session, "s-1");

    // an empty dataset means the first tick asks for help
    let requested = wait_for(&mut teacher, |b| match b {
        ServerBody::Frame(f) => f.pending_request,
        _ => false,
    })
    .await;
    assert!(requested.seq > hello.seq);

    let (mut observer, _) = connect_async(&url).await.unwrap();
    assert_eq!(next(&mut observer).await.body, ServerBody::Hello { role: Role::Observer });
    send(&mut observer, &session, 1, ClientBody::PauseToggle).await;
    let refused = wait_for(&mut observer, |b| matches!(b, ServerBody::Error { .. })).await;
    match refused.body {
        ServerBody::Error { in_reply_to, .. } => assert_eq!(in_reply_to, Some(1)),
        _ => unreachable!(),
    }

    send(&mut teacher, &session, 1, ClientBody::Demonstrate { action: Action::Left }).await;
    let got = wait_for(&mut teacher, |b| {
        matches!(b, ServerBody::Event { event } if matches!(event.event, EngineEvent::DemonstrationReceived { .. }))
    })
    .await;
    match got.body {
        ServerBody::Event { event } => match event.event {
            EngineEvent::DemonstrationReceived { action, .. } => assert_eq!(action, Action::Left),
            _ => unreachable!(),
        },
        _ => unreachable!(),
    }

    // replayed sequence numbers are refused
    send(&mut teacher, &session, 1, ClientBody::SetSpeed { fps: 2 }).await;
    let stale = wait_for(&mut teacher, |b| matches!(b, ServerBody::Error { .. })).await;
    match stale.body {
        ServerBody::Error { message, .. } => assert!(message.contains("not increasing"), "{message}"),
        _ => unreachable!(),
    }

    send(&mut teacher, &session, 2, ClientBody::SaveSession).await;
    let saved = wait_for(&mut teacher, |b| matches!(b, ServerBody::Saved { .. })).await;
    let path = match saved.body {
        ServerBody::Saved { path } => path,
        _ => unreachable!(),
    };
    let record = SessionRecord::from_jsonl(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(!record.steps.is_empty());
    let accepted: Vec<bool> = record.transcript.iter().map(|m| m["accepted"].as_bool().unwrap()).collect();
    // observer pause refused, demonstration taken, stale seq refused
    assert_eq!(accepted, vec![false, true, false]);

    teacher.close(None).await.unwrap();
    let promoted = wait_for(&mut observer, |b| matches!(b, ServerBody::Hello { .. })).await;
    assert_eq!(promoted.body, ServerBody::Hello { role: Role::Teacher });
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_bad_messages() {
    let dir = tempfile::tempdir().unwrap();
    let url = start(dir.path()).await;
    let (mut ws, _) = connect_async(&url).await.unwrap();
    next(&mut ws).await;
    ws.send(Message::Text("{\"v\":9}".into())).await.unwrap();
    let err = wait_for(&mut ws, |b| matches!(b, ServerBody::Error { .. })).await;
    match err.body {
        ServerBody::Error { in_reply_to, .. } => assert_eq!(in_reply_to, None),
        _ => unreachable!(),
    }
    send(&mut ws, "s-9", 1, ClientBody::PauseToggle).await;
    let wrong = wait_for(&mut ws, |b| matches!(b, ServerBody::Error { .. })).await;
    match wrong.body {
        ServerBody::Error { message, .. } => assert!(message.contains("s-9"), "{message}"),
        _ => unreachable!(),
    }
}
