#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use quizhost_core::SpeakerId;
use quizhost_server::http::serve;
use quizhost_server::{ClientMessage, ServerBody, ServerMessage, Service, ServiceConfig};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub async fn start_server(cfg: ServiceConfig) -> SocketAddr {
    let service = Service::new(cfg).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, service));
    addr
}

pub fn quiet_config() -> ServiceConfig {
    ServiceConfig {
        tick_interval: None,
        ..ServiceConfig::default()
    }
}

pub async fn create(addr: SocketAddr, body: serde_json::Value) -> reqwest::Response {
    reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .json(&body)
        .send()
        .await
        .unwrap()
}

pub async fn create_seeded(addr: SocketAddr, seed: u64) -> String {
    let resp = create(addr, serde_json::json!({ "seed": seed })).await;
    assert_eq!(resp.status(), 201);
    let v: serde_json::Value = resp.json().await.unwrap();
    v["session"].as_str().unwrap().to_string()
}

pub async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) =
        tokio_tungstenite::connect_async_with_config(format!("ws://{addr}/ws"), None, true)
            .await
            .unwrap();
    ws
}

pub async fn send(ws: &mut Ws, msg: &ClientMessage) {
    let text = serde_json::to_string(msg).unwrap();
    ws.send(Message::text(text)).await.unwrap();
}

pub async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

pub async fn join(ws: &mut Ws, session: &str, token: Option<String>) -> (SpeakerId, String) {
    send(
        ws,
        &ClientMessage::Join {
            session: session.into(),
            token,
        },
    )
    .await;
    match recv(ws).await.body {
        ServerBody::Joined { player, token, .. } => (player, token),
        other => panic!("expected joined, got {other:?}"),
    }
}

/// Reads until a state snapshot, returning everything seen.
pub async fn until_state(ws: &mut Ws) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    loop {
        let m = recv(ws).await;
        let done = matches!(m.body, ServerBody::State { .. });
        out.push(m);
        if done {
            return out;
        }
    }
}

/// Scripted game: per question, an offer, the partner agrees, the offerer
/// confirms, with some chatter in between.
pub fn script(variant: usize) -> Vec<(usize, String, u64)> {
    let letters = ['A', 'B', 'C', 'D'];
    let mut out = Vec::new();
    let mut t = 0;
    for q in 0..10 {
        let letter = letters[(q + variant) % 4];
        let offerer = (q + variant) % 2;
        let mut lines = vec![(offerer, format!("I think it's {letter}"))];
        if (q + variant) % 3 == 0 {
            lines.insert(0, (1 - offerer, "hmm, no idea".to_string()));
        }
        lines.push((1 - offerer, "yes I agree".to_string()));
        lines.push((offerer, "yes".to_string()));
        for (p, text) in lines {
            t += 2_000;
            out.push((p, text, t));
        }
    }
    out
}

pub struct Played {
    pub host_text: String,
    pub seqs: [Vec<u64>; 2],
}

/// Plays one session over two sockets, waiting for each utterance's state
/// snapshot before sending the next.
pub async fn play_session(addr: SocketAddr, seed: u64, variant: usize) -> Played {
    let session = create_seeded(addr, seed).await;
    let mut a = connect(addr).await;
    let mut b = connect(addr).await;
    let (pa, _) = join(&mut a, &session, None).await;
    let (pb, _) = join(&mut b, &session, None).await;
    assert_eq!((pa, pb), (SpeakerId::User1, SpeakerId::User2));
    let mut seen = [vec![1u64], vec![2u64]];
    let mut first = until_state(&mut a).await;
    let mut host = Vec::new();
    for line in script(variant) {
        let (p, text, t) = line;
        let ws = if p == 0 { &mut a } else { &mut b };
        send(
            ws,
            &ClientMessage::Utterance {
                text,
                t_ms: Some(t),
            },
        )
        .await;
        let msgs = until_state(&mut a).await;
        first.extend(msgs);
    }
    for m in &first {
        seen[0].push(m.seq);
        if let ServerBody::HostSay { text, .. } = &m.body {
            host.push(text.clone());
        }
    }
    let last = *seen[0].last().unwrap();
    while *seen[1].last().unwrap() < last {
        seen[1].push(recv(&mut b).await.seq);
    }
    Played {
        host_text: host.join("\n"),
        seqs: seen,
    }
}
