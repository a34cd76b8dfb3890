//! HTTP routes: session creation, health, and the WebSocket endpoint.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::serve::ListenerExt;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::debug;

use crate::service::{Service, ServiceError, SessionRequest};
use crate::wire::{ClientMessage, ErrorCode, ServerBody, ServerMessage};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub model_sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session: String,
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create))
        .route("/ws", get(ws))
        .with_state(service)
}

pub async fn serve(listener: TcpListener, service: Service) -> std::io::Result<()> {
    let listener = listener.tap_io(|tcp| {
        if let Err(e) = tcp.set_nodelay(true) {
            debug!("set_nodelay: {e}");
        }
    });
    axum::serve(listener, router(service)).await
}

async fn health(State(svc): State<Service>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        model_sha256: svc.model_sha256().map(str::to_string),
    })
}

async fn create(State(svc): State<Service>, body: Option<Json<SessionRequest>>) -> Response {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    match svc.create_session(req).await {
        Ok(session) => (StatusCode::CREATED, Json(Created { session })).into_response(),
        Err(e) => {
            let status = match e {
                ServiceError::ModelLoad(_) => StatusCode::UNPROCESSABLE_ENTITY,
                ServiceError::SourceUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            let kind = match e {
                ServiceError::ModelLoad(_) => "model_load_error",
                ServiceError::SourceUnavailable(_) => "source_unavailable",
                _ => "internal",
            };
            (
                status,
                Json(json!({ "error": kind, "message": e.to_string() })),
            )
                .into_response()
        }
    }
}

async fn ws(State(svc): State<Service>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| client(svc, socket))
}

fn encode(m: &ServerMessage) -> Message {
    Message::Text(
        serde_json::to_string(m)
            .expect("server messages serialize")
            .into(),
    )
}

fn loose_error(code: ErrorCode, message: String) -> Message {
    encode(&ServerMessage {
        seq: 0,
        session: String::new(),
        body: ServerBody::Error { code, message },
    })
}

async fn client(svc: Service, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let conn = loop {
        let Some(Ok(msg)) = stream.next().await else {
            return;
        };
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => return,
            _ => continue,
        };
        match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Join { session, token }) => match svc.join(&session, token).await {
                Ok(c) => break c,
                Err(e) => {
                    if sink
                        .send(loose_error(e.code(), e.to_string()))
                        .await
                        .is_err()
                    {
                        return;
                    }
                }
            },
            Ok(_) => {
                let m = loose_error(ErrorCode::NotJoined, "send join first".into());
                if sink.send(m).await.is_err() {
                    return;
                }
            }
            Err(e) => {
                if sink
                    .send(loose_error(ErrorCode::BadMessage, e.to_string()))
                    .await
                    .is_err()
                {
                    return;
                }
            }
        }
    };
    let (sender, mut rx) = conn.split();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            if sink.send(encode(&m)).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let sent = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(ClientMessage::Utterance { text, t_ms }) => sender.say(text, t_ms),
            Ok(ClientMessage::Join { .. }) => sender.reject("already joined"),
            Err(e) => sender.reject(e.to_string()),
        };
        if sent.is_err() {
            break;
        }
    }
    debug!("client disconnected");
    drop(sender);
    writer.abort();
}
