use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use tunerlab_core::control::{ControlError, Pace, Server, ServerMessage};
use tunerlab_core::scenarios::{run_scenario, takeover, Scenario};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn short(duration_s: f64) -> Scenario {
    let mut s = takeover(2);
    s.duration_s = duration_s;
    s.flows[1].start_s = 1.0;
    s
}

/// Sends one frame and returns the first non-telemetry reply.
async fn request(ws: &mut Ws, frame: &str) -> ServerMessage {
    ws.send(Message::text(frame)).await.unwrap();
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("reply in time")
            .expect("stream open")
            .unwrap();
        if let Message::Text(text) = msg {
            let parsed: ServerMessage = serde_json::from_str(text.as_str()).unwrap();
            if !matches!(parsed, ServerMessage::Telemetry { .. }) {
                return parsed;
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_frames_get_errors_and_the_connection_survives() {
    let server = Server::bind(short(30.0), "127.0.0.1:0", Pace::Realtime)
        .await
        .unwrap();
    let url = format!("ws://{}", server.local_addr());
    let service = tokio::spawn(server.run());
    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .unwrap();

    let reply = request(&mut ws, "{not json").await;
    assert!(
        matches!(reply, ServerMessage::Error { ref message } if message.starts_with("malformed")),
        "{reply:?}"
    );
    let reply = request(
        &mut ws,
        r#"{"type":"set_param","scope":"global","name":"gamma","value":1}"#,
    )
    .await;
    assert!(
        matches!(reply, ServerMessage::Error { ref message } if message.starts_with("unknown parameter")),
        "{reply:?}"
    );
    let reply = request(
        &mut ws,
        r#"{"type":"set_param","scope":"global","name":"alpha","value":2048}"#,
    )
    .await;
    assert!(matches!(reply, ServerMessage::Error { .. }), "{reply:?}");
    let reply = request(
        &mut ws,
        r#"{"type":"set_param","scope":"flow:7","name":"beta","value":512}"#,
    )
    .await;
    assert!(
        matches!(reply, ServerMessage::Error { ref message } if message.contains("flow 7")),
        "{reply:?}"
    );

    let mut stamps = Vec::new();
    for value in [256, 512, 1024] {
        let frame =
            format!(r#"{{"type":"set_param","scope":"flow:1","name":"beta","value":{value}}}"#);
        match request(&mut ws, &frame).await {
            ServerMessage::Ack { applied_at_ms, .. } => stamps.push(applied_at_ms),
            other => panic!("{other:?}"),
        }
    }
    assert!(stamps.windows(2).all(|w| w[0] <= w[1]));
    let ServerMessage::Params { flows, global } =
        request(&mut ws, r#"{"type":"get_params"}"#).await
    else {
        panic!()
    };
    assert_eq!(flows[0].values.beta, 1024);
    assert_eq!(global.beta, 717);

    let reply = request(
        &mut ws,
        r#"{"type":"add_flow","flow":{"start_s":0,"beta_q1024":512}}"#,
    )
    .await;
    assert!(
        matches!(
            reply,
            ServerMessage::Ack {
                flow_id: Some(3),
                ..
            }
        ),
        "{reply:?}"
    );
    let ServerMessage::Prediction { series } =
        request(&mut ws, r#"{"type":"get_prediction"}"#).await
    else {
        panic!()
    };
    assert_eq!(series.len(), 151);

    assert!(matches!(
        request(&mut ws, r#"{"type":"stop"}"#).await,
        ServerMessage::Ack { .. }
    ));
    let report = service.await.unwrap().unwrap();
    assert!(report.invariant_violations.is_empty());
    assert_eq!(report.applied_at_ms.len(), 3);
}

#[tokio::test(flavor = "multi_thread")]
async fn fast_serve_streams_the_batch_telemetry() {
    let scenario = short(5.0);
    let server = Server::bind(scenario.clone(), "127.0.0.1:0", Pace::Fast)
        .await
        .unwrap();
    let url = format!("ws://{}", server.local_addr());
    let service = tokio::spawn(server.run());
    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .unwrap();
    let mut seen = Vec::new();
    while let Ok(Some(Ok(Message::Text(text)))) =
        tokio::time::timeout(Duration::from_millis(200), ws.next()).await
    {
        if let ServerMessage::Telemetry { t_ms, .. } = serde_json::from_str(text.as_str()).unwrap()
        {
            seen.push((t_ms, text.to_string()));
        }
    }
    // Stop may land mid-run; the report then holds a prefix of the batch.
    let reply = request(&mut ws, r#"{"type":"stop"}"#).await;
    assert!(matches!(reply, ServerMessage::Ack { .. }));
    let report = service.await.unwrap().unwrap();
    let batch = run_scenario(&scenario).unwrap();
    assert!(!report.telemetry.is_empty() && report.telemetry.len() <= batch.telemetry.len());
    assert_eq!(
        &batch.telemetry[..report.telemetry.len()],
        &report.telemetry[..]
    );
    for (t_ms, frame) in seen {
        let sample = batch.telemetry.iter().find(|s| s.t_ms == t_ms).unwrap();
        assert_eq!(frame, ServerMessage::telemetry(sample).to_json());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn realtime_ticks_arrive_at_five_hertz() {
    let server = Server::bind(short(4.0), "127.0.0.1:0", Pace::Realtime)
        .await
        .unwrap();
    let url = format!("ws://{}", server.local_addr());
    let service = tokio::spawn(server.run());
    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .unwrap();
    let started = tokio::time::Instant::now();
    let mut ticks = Vec::new();
    while started.elapsed() < Duration::from_secs(3) {
        let Ok(Some(Ok(Message::Text(text)))) =
            tokio::time::timeout(Duration::from_secs(1), ws.next()).await
        else {
            continue;
        };
        if let ServerMessage::Telemetry { t_ms, flows, .. } =
            serde_json::from_str(text.as_str()).unwrap()
        {
            assert_eq!(flows.len(), 2);
            ticks.push(t_ms);
        }
    }
    // 3 s of wall time at 5 Hz, within one tick.
    assert!((14..=16).contains(&ticks.len()), "{ticks:?}");
    assert!(ticks.windows(2).all(|w| w[1] == w[0] + 200), "{ticks:?}");
    request(&mut ws, r#"{"type":"stop"}"#).await;
    service.await.unwrap().unwrap();
}

#[tokio::test]
async fn bind_failure_is_a_startup_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let err = Server::bind(short(5.0), &addr, Pace::Fast)
        .await
        .err()
        .unwrap();
    assert!(matches!(err, ControlError::Bind { .. }), "{err}");
}

#[tokio::test]
async fn invalid_scenario_is_refused_before_binding() {
    let mut bad = short(5.0);
    bad.flows[0].alpha_q512 = 0;
    let err = Server::bind(bad, "127.0.0.1:0", Pace::Fast)
        .await
        .err()
        .unwrap();
    assert!(matches!(err, ControlError::Scenario(_)), "{err}");
}
