//! Multi-process deployment exercised end to end: the gateway and both
//! provider domains run as independent slices over loopback TCP — each with
//! its own network handle, server loop, and trace sink — coordinated by a
//! parent that hosts the application and the sensor fleet. This is exactly
//! the wiring the CLI uses with real OS processes, compressed into threads
//! so one test can watch every side at once.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use vwsn_gateway_core::codecs::{frame_http_post, parse_http_response};
use vwsn_gateway_core::control::AckStatus;
use vwsn_gateway_core::harness::{
    build_split_child, verify_trace, ClockMode, NodeRole, ScenarioConfig, SensorSpec, SplitParent,
};
use vwsn_gateway_core::mano::MigrationCostModel;
use vwsn_gateway_core::model::{CollectionPattern, DomainId, Quantity, SensorBrand};
use vwsn_gateway_core::sim::{http_exchange, run_server_loop, spawn_http_acceptor};
use vwsn_gateway_core::trace::{parse_jsonl, ControlIface, ControlPhase, TraceEvent, TraceKind};

/// Two sensors (one per provider) on a deliberately small deployment: tiny
/// images and fast boots keep the wall-clock run short, since every delay
/// is real once the slices live in different event loops.
fn split_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.scenario = "split-smoke".into();
    cfg.seed = 11;
    cfg.clock = ClockMode::Real;
    cfg.duration_s = 2;
    cfg.initiation_timeout_s = 2;
    cfg.sensors = vec![
        SensorSpec {
            sensor_id: "spot-1".into(),
            brand: SensorBrand::BrandA,
            quantities: vec![Quantity::Temperature],
            pattern: CollectionPattern::Periodic { interval_ms: 500 },
        },
        SensorSpec {
            sensor_id: "71".into(),
            brand: SensorBrand::BrandB,
            quantities: vec![Quantity::Temperature],
            pattern: CollectionPattern::Periodic { interval_ms: 500 },
        },
    ];
    for entry in &mut cfg.catalog {
        entry.image_size_bytes = 10_000_000;
    }
    cfg.cost_model = MigrationCostModel {
        bandwidth_bytes_per_s: 100_000_000,
        boot_time_ms: 200,
        state_transfer_ms: 0,
    };
    cfg
}

/// Binds the child's listener up front (so the coordinator can connect
/// before the loop starts accepting) and runs the whole slice on its own
/// thread.
fn spawn_child(cfg: ScenarioConfig, role: NodeRole) -> (String, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind child listener");
    let addr = listener.local_addr().expect("child addr").to_string();
    let handle = thread::spawn(move || {
        let (tx, rx) = mpsc::channel();
        let child = build_split_child(&cfg, role, tx.clone()).expect("child slice builds");
        spawn_http_acceptor(listener, tx);
        run_server_loop(&child.net, &rx);
    });
    (addr, handle)
}

/// Plain HTTP client exchange with one slice, outside any event loop.
fn admin_post(addr: &str, authority: &str, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
    let framed = frame_http_post(&format!("http://{authority}{path}"), "application/json", body)
        .expect("framable admin request");
    let raw = http_exchange(addr, &framed).expect("admin exchange");
    let resp = parse_http_response(&raw).expect("admin response parses");
    (resp.status, resp.body)
}

/// Sort key of the first non-duplicate request leg of `iface` for `request_id`.
fn request_leg(events: &[TraceEvent], iface: ControlIface, request_id: &str) -> Option<(u64, u64)> {
    events.iter().find_map(|e| match &e.kind {
        TraceKind::Control { iface: i, request_id: r, phase: ControlPhase::Request, dup: false, .. }
            if *i == iface && r == request_id =>
        {
            Some(e.sort_key())
        }
        _ => None,
    })
}

#[test]
fn split_slices_complete_initiation_and_deliver_measurements() {
    let cfg = split_config();
    let (gw_addr, gw_join) = spawn_child(cfg.clone(), NodeRole::Gateway);
    let (v1_addr, v1_join) = spawn_child(cfg.clone(), NodeRole::Provider(DomainId::Vwsn1));
    let (v2_addr, v2_join) = spawn_child(cfg.clone(), NodeRole::Provider(DomainId::Vwsn2));

    let parent_listener = TcpListener::bind("127.0.0.1:0").expect("bind parent listener");
    let parent_addr = parent_listener.local_addr().expect("parent addr").to_string();
    let routes: BTreeMap<String, String> = BTreeMap::from([
        ("gateway:8080".to_string(), gw_addr.clone()),
        ("vwsn1:8080".to_string(), v1_addr.clone()),
        ("vwsn2:8080".to_string(), v2_addr.clone()),
        ("app:9000".to_string(), parent_addr),
    ]);
    let routes_body = serde_json::to_vec(&routes).expect("routes serialize");
    let children =
        [("gateway:8080", &gw_addr), ("vwsn1:8080", &v1_addr), ("vwsn2:8080", &v2_addr)];
    for (authority, addr) in children {
        let (status, _) = admin_post(addr, authority, "/admin/routes", &routes_body);
        assert_eq!(status, 204, "route install on {authority}");
    }

    // The parent's opening service requests fire as soon as its loop runs.
    let (ptx, prx) = mpsc::channel();
    spawn_http_acceptor(parent_listener, ptx.clone());
    let parent = SplitParent::build(cfg, &routes, ptx).expect("parent builds");
    run_server_loop(&parent.net, &prx);

    // Both services came up ready while the loop ran.
    for rid in ["req-vwsn1", "req-vwsn2"] {
        let ack = parent.app.ack_for(rid).unwrap_or_else(|| panic!("no ack for {rid}"));
        assert_eq!(ack.status, AckStatus::Ready, "{rid}");
        assert!(ack.service_endpoint.is_some(), "{rid} carries an ingest endpoint");
    }

    // Pull every child's trace, then shut the children down.
    let mut child_events = Vec::new();
    for (authority, addr) in children {
        let (status, body) = admin_post(addr, authority, "/admin/trace", b"");
        assert_eq!(status, 200, "trace pull from {authority}");
        let text = std::str::from_utf8(&body).expect("trace is utf-8");
        child_events.extend(parse_jsonl(text).expect("child trace parses"));
    }
    for (authority, addr) in children {
        let (status, _) = admin_post(addr, authority, "/admin/shutdown", b"");
        assert_eq!(status, 204, "shutdown of {authority}");
    }
    gw_join.join().expect("gateway slice exits");
    v1_join.join().expect("vwsn1 slice exits");
    v2_join.join().expect("vwsn2 slice exits");

    let out = parent.finish(child_events);

    // Every emission crossed process boundaries and came back around.
    assert_eq!(out.report.emitted, 8, "4 frames per sensor over the 2 s window");
    assert_eq!(out.report.delivered, out.report.emitted, "no frame lost in flight");
    assert_eq!(out.report.invalid_deliveries, 0);

    // The merged trace is causally coherent across all four processes.
    let violations = verify_trace(&out.events);
    assert!(violations.is_empty(), "merged trace violations: {violations:?}");

    // Initiation legs landed in three different slices yet line up per
    // request, and the migration delay between rq-g and g-i is real wall
    // time: 100 ms transfer + 200 ms boot.
    for rid in ["req-vwsn1", "req-vwsn2"] {
        let rqs = request_leg(&out.events, ControlIface::RqS, rid).expect("rq-s leg");
        let rqg = request_leg(&out.events, ControlIface::RqG, &format!("rqg-{rid}"))
            .expect("rq-g leg");
        let gi =
            request_leg(&out.events, ControlIface::GI, &format!("rqg-{rid}")).expect("g-i leg");
        let ack = request_leg(&out.events, ControlIface::Ack, rid).expect("ack leg");
        assert!(rqs < rqg && rqg < gi && gi < ack, "{rid}: legs out of order");
        assert!(
            gi.0 - rqg.0 >= 300_000,
            "{rid}: instantiation+migration took {} us, expected >= 300 ms",
            gi.0 - rqg.0
        );
    }
}
