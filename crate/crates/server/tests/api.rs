use axum::body::Body;
use axum::http::{Request, StatusCode};
use bsmart_core::autonomic::Mode;
use bsmart_core::runtime::{Building, BuildingConfig, StatusReport};
use bsmart_core::simulator::{InjectionKind, InjectionParams, ScenarioEvent, ScenarioScript};
use bsmart_server::{router, serve, Hub, ACTOR_HEADER, REQUEST_HEADER, SCHEMA_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::sync::Arc;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

fn faulted_building() -> Arc<Hub> {
    let mut cfg = BuildingConfig::reference();
    cfg.runtime.hold_maintenance = true;
    let scenario = ScenarioScript {
        name: "bias".into(),
        events: vec![ScenarioEvent {
            tick: 1500,
            kind: InjectionKind::FaultInjection,
            target: "chiller-1/chw_supply_temp".into(),
            params: InjectionParams {
                bias: Some(10.0),
                ..Default::default()
            },
        }],
    };
    let mut b = Building::in_memory(cfg, scenario).unwrap();
    b.run(1510).unwrap();
    Hub::new(b)
}

async fn call(hub: &Arc<Hub>, method: &str, uri: &str, actor: Option<&str>, rid: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(a) = actor {
        req = req.header(ACTOR_HEADER, a);
    }
    if let Some(r) = rid {
        req = req.header(REQUEST_HEADER, r);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(hub.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[SCHEMA_HEADER], "1");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

#[tokio::test]
async fn status_events_and_tickets_reflect_the_building() {
    let hub = faulted_building();
    let (code, status) = call(&hub, "GET", "/status", None, None, None).await;
    assert_eq!(code, StatusCode::OK);
    let status: StatusReport = serde_json::from_value(status).unwrap();
    assert_eq!(status.mode.mode, Mode::Interfacing);
    assert_eq!(status.open_faults, 1);
    let (_, events) = call(&hub, "GET", "/events", None, None, None).await;
    assert_eq!(events.as_array().unwrap().len(), 1);
    let (_, tickets) = call(&hub, "GET", "/tickets", None, None, None).await;
    assert_eq!(tickets[0]["actor_id"], "maintenance-chiller");
}

#[tokio::test]
async fn ticket_lifecycle_over_http_is_idempotent_and_audited() {
    let hub = faulted_building();
    let (_, tickets) = call(&hub, "GET", "/tickets", None, None, None).await;
    let id = tickets[0]["ticket_id"].as_str().unwrap().to_string();
    let resolve = json!({"resolution": "RepairedNoEquipChange"});

    let (code, body) = call(&hub, "POST", &format!("/tickets/{id}/resolve"), None, None, Some(resolve.clone())).await;
    assert_eq!(code, StatusCode::UNAUTHORIZED, "{body}");
    let (code, _) = call(&hub, "POST", &format!("/tickets/{id}/ack"), Some("tenants"), None, None).await;
    assert_eq!(code, StatusCode::FORBIDDEN);
    let (code, body) = call(&hub, "POST", &format!("/tickets/{id}/resolve"), Some("maintenance-chiller"), None, Some(resolve.clone())).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(body["error"], "ticket");

    let (code, _) = call(&hub, "POST", &format!("/tickets/{id}/ack"), Some("maintenance-chiller"), Some("a-1"), None).await;
    assert_eq!(code, StatusCode::OK);
    let (code, again) = call(&hub, "POST", &format!("/tickets/{id}/ack"), Some("maintenance-chiller"), Some("a-1"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(again["status"], "Acknowledged");

    let (c1, first) = call(&hub, "POST", &format!("/tickets/{id}/resolve"), Some("maintenance-chiller"), Some("r-1"), Some(resolve.clone())).await;
    let (c2, second) = call(&hub, "POST", &format!("/tickets/{id}/resolve"), Some("maintenance-chiller"), Some("r-1"), Some(resolve.clone())).await;
    assert_eq!((c1, c2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(first, second);
    let (code, _) = call(&hub, "POST", &format!("/tickets/{id}/resolve"), Some("maintenance-chiller"), Some("r-2"), Some(resolve)).await;
    assert_eq!(code, StatusCode::CONFLICT);
    let accepted = hub.read(|b| {
        b.ticket_store()
            .audit()
            .iter()
            .filter(|a| a.action == "resolve" && a.accepted)
            .count()
    });
    assert_eq!(accepted, 1);

    let (_, _) = call(&hub, "POST", "/advance", Some("operator"), None, Some(json!({"ticks": 2}))).await;
    let (_, status) = call(&hub, "GET", "/status", None, None, None).await;
    assert_eq!(status["mode"]["mode"], "DetectingChange");
}

#[tokio::test]
async fn reports_comfort_and_errors() {
    let hub = faulted_building();
    let (code, inv) = call(&hub, "GET", "/reports/inventory", None, None, None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(inv.as_array().unwrap().len(), 50);
    let (code, body) = call(&hub, "GET", "/reports/horoscope", None, None, None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unsupported_report");
    assert!(body["detail"]["supported"].as_array().unwrap().len() >= 5);

    let req = json!({"zone": "zone-02", "lower": 18.0, "upper": 30.0});
    let (code, c) = call(&hub, "POST", "/tenant/comfort", Some("tenants"), Some("c-1"), Some(req.clone())).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(c["clamped"], true);
    assert_eq!(c["applied"], json!({"lower": 20.0, "upper": 26.0}));
    let (_, c2) = call(&hub, "POST", "/tenant/comfort", Some("tenants"), Some("c-1"), Some(req)).await;
    assert_eq!(c, c2);
    let (code, _) = call(&hub, "POST", "/tenant/comfort", Some("tenants"), None, Some(json!({"zone": "zone-02"}))).await;
    assert!(code.is_client_error());

    let (code, _) = call(&hub, "POST", "/commission/waive", Some("tenants"), None, Some(json!({"device_id": "chiller-1.chw_supply_temp"}))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    let (code, _) = call(&hub, "POST", "/commission", Some("operator"), None, None).await;
    assert_eq!(code, StatusCode::CONFLICT);
}

async fn read_until(sock: &mut tokio::net::TcpStream, needle: &str, buf: &mut String) {
    let mut chunk = [0u8; 4096];
    while !buf.contains(needle) {
        let n = tokio::time::timeout(std::time::Duration::from_secs(10), sock.read(&mut chunk))
            .await
            .expect("stream stalled")
            .unwrap();
        assert!(n > 0, "stream closed before {needle}: {buf}");
        buf.push_str(&String::from_utf8_lossy(&chunk[..n]));
    }
}

#[tokio::test]
async fn stream_replays_backlog_then_follows_live_changes() {
    let hub = faulted_building();
    let (tx, rx) = tokio::sync::oneshot::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(
        hub.clone(),
        "127.0.0.1:0".parse().unwrap(),
        Some(tx),
        async {
            let _ = stop_rx.await;
        },
    ));
    let addr = rx.await.unwrap();
    let mut sock = tokio::net::TcpStream::connect(addr).await.unwrap();
    sock.write_all(format!("GET /stream?since=0 HTTP/1.1\r\nHost: {addr}\r\nAccept: text/event-stream\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut buf = String::new();
    read_until(&mut sock, "EventRaised", &mut buf).await;
    assert!(buf.contains("text/event-stream"));

    let id = hub.read(|b| b.ticket_list()[0].ticket_id.clone());
    let ctx = bsmart_core::runtime::RequestContext::new("maintenance-chiller", None);
    hub.with(|b| b.acknowledge(&ctx, &id)).unwrap();
    read_until(&mut sock, "TicketAcknowledged", &mut buf).await;
    let _ = stop_tx.send(());
    drop(sock);
    server.await.unwrap().unwrap();
}
