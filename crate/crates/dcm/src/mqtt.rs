//! Optional link to an external MQTT broker. Bus traffic is mirrored out
//! (telemetry at QoS 0, state and rejections at QoS 1) and `dcm/cmd/#` is
//! mirrored in. Losing the broker never stalls the controller.

use std::time::Duration;

use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};

use crate::bus::LocalBroker;
use crate::config::BrokerConfig;
use crate::telemetry::{Message, TOPIC_CMD_PREFIX, TOPIC_CMD_REJECTED};

const RECONNECT_DELAY: Duration = Duration::from_secs(1);

pub fn qos_for(m: &Message) -> QoS {
    if m.retained || m.topic.starts_with("dcm/state/") || m.topic.starts_with(TOPIC_CMD_PREFIX) {
        QoS::AtLeastOnce
    } else {
        QoS::AtMostOnce
    }
}

/// Run the link until the bus closes.
pub async fn run_link(cfg: BrokerConfig, broker: LocalBroker) {
    let mut opts = MqttOptions::new(cfg.client_id.clone(), cfg.host.clone(), cfg.port);
    opts.set_keep_alive(Duration::from_secs(15));
    let (client, mut eventloop) = AsyncClient::new(opts, 256);

    let (retained, mut sub) = broker.subscribe("dcm/#");
    let outbound_client = client.clone();
    let outbound = async move {
        for m in retained {
            publish(&outbound_client, &m);
        }
        while let Some(m) = sub.recv().await {
            publish(&outbound_client, &m);
        }
    };

    let inbound = async move {
        loop {
            match eventloop.poll().await {
                Ok(Event::Incoming(Packet::ConnAck(_))) => {
                    tracing::info!(host = %cfg.host, port = cfg.port, "mqtt connected");
                    if let Err(e) = client
                        .subscribe(format!("{TOPIC_CMD_PREFIX}#"), QoS::AtLeastOnce)
                        .await
                    {
                        tracing::warn!(error = %e, "mqtt subscribe failed");
                    }
                }
                Ok(Event::Incoming(Packet::Publish(p))) => {
                    if p.topic.starts_with(TOPIC_CMD_PREFIX) && p.topic != TOPIC_CMD_REJECTED {
                        broker.submit_command(&p.topic, &p.payload);
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(error = %e, "mqtt connection error, retrying");
                    tokio::time::sleep(RECONNECT_DELAY).await;
                }
            }
        }
    };

    tokio::select! {
        _ = outbound => {}
        _ = inbound => {}
    }
}

fn publish(client: &AsyncClient, m: &Message) {
    let body = serde_json::to_vec(&m.payload).expect("payload serializes");
    if let Err(e) = client.try_publish(m.topic.clone(), qos_for(m), m.retained, body) {
        tracing::debug!(topic = %m.topic, error = %e, "mqtt publish dropped");
    }
}
