//! In-process broker: retained store plus fan-out, with MQTT filter
//! semantics. The controller stays fully functional with only this bus.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use tokio::sync::{broadcast, mpsc};

use crate::telemetry::{topic_matches, Message};

const FANOUT_CAPACITY: usize = 1024;

/// Raw inbound command, before parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct InboundCommand {
    pub topic: String,
    pub payload: Vec<u8>,
}

#[derive(Clone)]
pub struct LocalBroker {
    inner: Arc<Inner>,
}

struct Inner {
    retained: Mutex<BTreeMap<String, Message>>,
    tx: broadcast::Sender<Message>,
    commands: mpsc::UnboundedSender<InboundCommand>,
}

pub struct Subscription {
    filter: String,
    rx: broadcast::Receiver<Message>,
}

impl Subscription {
    /// Next matching message. Lagged messages are skipped; `None` once the
    /// broker is gone.
    pub async fn recv(&mut self) -> Option<Message> {
        loop {
            match self.rx.recv().await {
                Ok(m) if topic_matches(&self.filter, &m.topic) => return Some(m),
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "subscriber lagged");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

impl LocalBroker {
    /// A broker plus the receiving end of its command queue.
    pub fn new() -> (LocalBroker, mpsc::UnboundedReceiver<InboundCommand>) {
        let (tx, _) = broadcast::channel(FANOUT_CAPACITY);
        let (ctx, crx) = mpsc::unbounded_channel();
        let broker = LocalBroker {
            inner: Arc::new(Inner {
                retained: Mutex::new(BTreeMap::new()),
                tx,
                commands: ctx,
            }),
        };
        (broker, crx)
    }

    pub fn publish(&self, msg: Message) {
        if msg.retained {
            self.inner
                .retained
                .lock()
                .expect("retained store poisoned")
                .insert(msg.topic.clone(), msg.clone());
        }
        // No subscribers is not an error.
        let _ = self.inner.tx.send(msg);
    }

    /// Retained messages matching `filter`, in topic order.
    pub fn retained(&self, filter: &str) -> Vec<Message> {
        self.inner
            .retained
            .lock()
            .expect("retained store poisoned")
            .values()
            .filter(|m| topic_matches(filter, &m.topic))
            .cloned()
            .collect()
    }

    /// Subscribe, returning the current retained set first. The receiver is
    /// created before the snapshot so nothing published in between is lost.
    pub fn subscribe(&self, filter: &str) -> (Vec<Message>, Subscription) {
        let rx = self.inner.tx.subscribe();
        let retained = self.retained(filter);
        (
            retained,
            Subscription {
                filter: filter.to_string(),
                rx,
            },
        )
    }

    /// Queue a command for the controller. Returns false if the controller
    /// has shut down.
    pub fn submit_command(&self, topic: &str, payload: &[u8]) -> bool {
        self.inner
            .commands
            .send(InboundCommand {
                topic: topic.to_string(),
                payload: payload.to_vec(),
            })
            .is_ok()
    }
}
