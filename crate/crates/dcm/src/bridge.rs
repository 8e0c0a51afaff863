//! WebSocket bridge: the topic contract over `/ws` for browser clients.
//!
//! Frames in both directions are JSON `{"topic", "payload", "retained"}`.
//! On connect the client receives every retained message, then live
//! traffic. Client frames on `dcm/cmd/*` are queued for the controller;
//! anything else is answered on `dcm/cmd/rejected`.

use std::future::Future;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::net::TcpListener;

use crate::bus::LocalBroker;
use crate::telemetry::{
    rejected_message, CommandError, Message, TOPIC_CMD_PREFIX, TOPIC_CMD_REJECTED,
};

pub const DEFAULT_FILTER: &str = "dcm/#";

#[derive(Debug, Deserialize)]
struct WsParams {
    filter: Option<String>,
}

pub fn router(broker: LocalBroker) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(broker)
}

async fn upgrade(
    ws: WebSocketUpgrade,
    Query(params): Query<WsParams>,
    State(broker): State<LocalBroker>,
) -> Response {
    let filter = params.filter.unwrap_or_else(|| DEFAULT_FILTER.to_string());
    ws.on_upgrade(move |socket| session(socket, broker, filter))
}

fn frame(m: &Message) -> WsMessage {
    WsMessage::Text(serde_json::to_string(m).expect("message serializes").into())
}

async fn session(socket: WebSocket, broker: LocalBroker, filter: String) {
    let (mut sink, mut stream) = socket.split();
    let (retained, mut sub) = broker.subscribe(&filter);
    for m in &retained {
        if sink.send(frame(m)).await.is_err() {
            return;
        }
    }
    tracing::debug!(%filter, retained = retained.len(), "websocket client connected");

    let forward = async {
        while let Some(m) = sub.recv().await {
            if sink.send(frame(&m)).await.is_err() {
                break;
            }
        }
    };
    let inbound = async {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                WsMessage::Text(text) => handle_client_frame(&broker, text.as_bytes()),
                WsMessage::Binary(bytes) => handle_client_frame(&broker, &bytes),
                WsMessage::Close(_) => break,
                _ => {}
            }
        }
    };
    tokio::select! {
        _ = forward => {}
        _ = inbound => {}
    }
    tracing::debug!("websocket client disconnected");
}

#[derive(Deserialize)]
struct ClientFrame {
    topic: String,
    payload: serde_json::Value,
}

/// Route one client frame. Command payloads are parsed by the controller,
/// which owns the rejection reply for their contents.
pub fn handle_client_frame(broker: &LocalBroker, raw: &[u8]) {
    let reject = |topic: &str, err: CommandError| {
        broker.publish(rejected_message(topic, &err, raw));
    };
    let frame: ClientFrame = match serde_json::from_slice(raw) {
        Ok(f) => f,
        Err(e) => return reject("", CommandError::Malformed(e.to_string())),
    };
    if !frame.topic.starts_with(TOPIC_CMD_PREFIX) || frame.topic == TOPIC_CMD_REJECTED {
        return reject(
            &frame.topic,
            CommandError::UnknownTopic(frame.topic.clone()),
        );
    }
    let payload = serde_json::to_vec(&frame.payload).expect("value serializes");
    if !broker.submit_command(&frame.topic, &payload) {
        tracing::warn!(topic = %frame.topic, "controller gone, command dropped");
    }
}

/// Serve the bridge on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    broker: LocalBroker,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(broker))
        .with_graceful_shutdown(shutdown)
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn non_command_topic_rejected() {
        let (b, mut cmds) = LocalBroker::new();
        let (_, mut sub) = b.subscribe(TOPIC_CMD_REJECTED);
        handle_client_frame(&b, br#"{"topic":"dcm/state/relays","payload":{}}"#);
        let m = sub.recv().await.unwrap();
        assert_eq!(m.payload["topic"], "dcm/state/relays");
        handle_client_frame(&b, b"not json");
        assert_eq!(sub.recv().await.unwrap().payload["topic"], "");
        assert!(cmds.try_recv().is_err());
    }

    #[tokio::test]
    async fn command_frame_queued() {
        let (b, mut cmds) = LocalBroker::new();
        handle_client_frame(&b, br#"{"topic":"dcm/cmd/mode","payload":{"mode":2}}"#);
        let c = cmds.recv().await.unwrap();
        assert_eq!(c.topic, "dcm/cmd/mode");
        assert_eq!(c.payload, br#"{"mode":2}"#);
    }
}
