//! Scenario harness: assembles a complete emulated deployment — gateway
//! provider, VWSN provider domains, and the measurement-consuming
//! application — then drives deterministic sensor fleets and synthetic load
//! against it and reduces the resulting event trace to a metrics report.
//!
//! Everything is declared up front in a [`ScenarioConfig`]: sensors, compute
//! nodes, the VNF catalog, migration costing, the scaling policy, phased
//! load, and fault injections. [`World::build`] wires the services onto one
//! in-memory network, [`World::run`] drains the event loop on the configured
//! clock, and the result is a [`MetricsReport`] plus the full trace.
//! Identical config + seed produces a byte-identical trace.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::{Rc, Weak};
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codecs::{
    encode_brand_a, encode_brand_b, decode_senml, BrandBFields, SENSOR_CODE_HUMIDITY,
    SENSOR_CODE_TEMPERATURE,
};
use crate::control::{
    error_response, json_response, no_content, AckStatus, GatewayParams, GatewayService, RpcRequest,
    ServiceAck, VwsnParams, VwsnService,
};
use crate::mano::{CoreMano, DomainMano, MigrationCostModel, ScalingPolicy};
use crate::model::{
    lifecycle_next, CollectionPattern, DomainId, LifecycleState, Quantity, SensorBrand,
    SensorReading, ServiceRequest, VnfDescriptor, VnfType,
};
use crate::nfvi::{Nfvi, NodeDescriptor};
use crate::codecs::{frame_http_response, ParsedHttpRequest};
use crate::sim::{Injected, NetHandle, Service};
use crate::store::{image_id_for_content, ImageStore};
use crate::trace::{to_jsonl, ControlIface, ControlPhase, TraceEvent, TraceKind, TraceSink};

/// Fixed epoch base for generated sensor timestamps (2023-11-14T22:13:20Z).
/// Keeps wall-clock out of the trace so runs stay reproducible.
pub const EPOCH_BASE_MS: u64 = 1_700_000_000_000;

/// Seconds the world keeps running after the last scheduled emission, so
/// in-flight messages, scale-downs, and reconcile samples settle.
const GRACE_S: u64 = 5;

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// Which clock drives the run: `Virtual` jumps between scheduled instants
/// (fast, exact); `Real` paces one scenario second per wall second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    Real,
}

impl ClockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClockMode::Virtual => "virtual",
            ClockMode::Real => "real",
        }
    }
}

/// One emulated sensor. BrandB sensor ids must be decimal strings that fit
/// in a u16 because that is all the frame format can carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: String,
    pub brand: SensorBrand,
    /// Measured quantities; multi-quantity sensors emit one frame per tick,
    /// cycling through this list.
    pub quantities: Vec<Quantity>,
    pub pattern: CollectionPattern,
}

/// One compute node in some domain's infrastructure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub domain: DomainId,
    pub cpu: u32,
    pub mem: u32,
}

/// One publishable VNF image plus the resource envelope its instances need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub vnf_type: VnfType,
    pub version: u32,
    pub cpu_units: u32,
    pub mem_units: u32,
    pub image_size_bytes: u64,
    /// Sustainable messages/second for one instance.
    pub per_instance_capacity: f64,
}

/// A fault to inject at a scheduled moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Make the next transfer completion for this instance fail.
    FailMigration { instance_id: String },
    /// Crash a running instance inside a provider domain.
    FailInstance { domain: DomainId, instance_id: String },
    /// Drop every message addressed to this authority until unblocked.
    BlockAuthority { authority: String },
    UnblockAuthority { authority: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub at_ms: u64,
    #[serde(flatten)]
    pub fault: FaultKind,
}

/// One step of a phased synthetic load profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPhase {
    pub rate_per_s: u32,
    pub duration_s: u64,
}

/// Synthetic frame load against one provider domain, spread across a small
/// pool of generated sensor ids so routing distributes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub domain: DomainId,
    #[serde(default = "default_load_pool")]
    pub sensor_pool: u32,
    pub phases: Vec<LoadPhase>,
}

fn default_load_pool() -> u32 {
    8
}

/// Complete declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub seed: u64,
    pub clock: ClockMode,
    /// Emission window per sensor, measured from its service becoming ready.
    pub duration_s: u64,
    /// Missing ACK deadline for service initiation.
    pub initiation_timeout_s: u64,
    pub sensors: Vec<SensorSpec>,
    pub load: Vec<LoadSpec>,
    pub nodes: Vec<NodeSpec>,
    pub catalog: Vec<CatalogEntry>,
    pub cost_model: MigrationCostModel,
    pub scaling: ScalingPolicy,
    pub faults: Vec<FaultSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: "scenario".into(),
            seed: 0,
            clock: ClockMode::Virtual,
            duration_s: 60,
            initiation_timeout_s: 10,
            sensors: Vec::new(),
            load: Vec::new(),
            nodes: default_nodes(),
            catalog: default_catalog(),
            cost_model: default_cost_model(),
            scaling: ScalingPolicy::default(),
            faults: Vec::new(),
        }
    }
}

fn default_nodes() -> Vec<NodeSpec> {
    vec![
        NodeSpec { node_id: "core-0".into(), domain: DomainId::GatewayProvider, cpu: 64, mem: 64 },
        NodeSpec { node_id: "v1-a".into(), domain: DomainId::Vwsn1, cpu: 8, mem: 8 },
        NodeSpec { node_id: "v1-b".into(), domain: DomainId::Vwsn1, cpu: 8, mem: 8 },
        NodeSpec { node_id: "v2-a".into(), domain: DomainId::Vwsn2, cpu: 8, mem: 8 },
        NodeSpec { node_id: "v2-b".into(), domain: DomainId::Vwsn2, cpu: 8, mem: 8 },
    ]
}

fn default_catalog() -> Vec<CatalogEntry> {
    let imp = |vnf_type| CatalogEntry {
        vnf_type,
        version: 1,
        cpu_units: 2,
        mem_units: 2,
        image_size_bytes: 100_000_000,
        per_instance_capacity: 50.0,
    };
    let pc = |vnf_type| CatalogEntry {
        vnf_type,
        version: 1,
        cpu_units: 1,
        mem_units: 1,
        image_size_bytes: 80_000_000,
        per_instance_capacity: 50.0,
    };
    vec![imp(VnfType::InfoModelProcessor1), pc(VnfType::ProtocolConverter1), imp(VnfType::InfoModelProcessor2), pc(VnfType::ProtocolConverter2)]
}

fn default_cost_model() -> MigrationCostModel {
    MigrationCostModel {
        bandwidth_bytes_per_s: 100_000_000,
        boot_time_ms: 2_000,
        state_transfer_ms: 0,
    }
}

impl ScenarioConfig {
    /// The reference deployment: six BrandA spot sensors and two BrandB
    /// advanced sensors, one frame per second each for a minute, dual
    /// provider domains with two edge nodes apiece.
    pub fn prototype(seed: u64) -> Self {
        let spot = |n: u32, q: Quantity| SensorSpec {
            sensor_id: format!("spot-{n}"),
            brand: SensorBrand::BrandA,
            quantities: vec![q],
            pattern: CollectionPattern::Periodic { interval_ms: 1000 },
        };
        let adv = |id: &str, q: Quantity| SensorSpec {
            sensor_id: id.into(),
            brand: SensorBrand::BrandB,
            quantities: vec![q],
            pattern: CollectionPattern::Periodic { interval_ms: 1000 },
        };
        ScenarioConfig {
            scenario: "prototype".into(),
            seed,
            duration_s: 60,
            sensors: vec![
                spot(1, Quantity::Temperature),
                spot(2, Quantity::Humidity),
                spot(3, Quantity::WindSpeed),
                spot(4, Quantity::Co2),
                spot(5, Quantity::Rainfall),
                spot(6, Quantity::Temperature),
                adv("71", Quantity::Temperature),
                adv("72", Quantity::Humidity),
            ],
            ..ScenarioConfig::default()
        }
    }

    /// A phased-load run that pushes one domain from idle to a sustained
    /// burst and back, exercising scale-up and scale-down end to end.
    pub fn scaling_exercise(seed: u64) -> Self {
        ScenarioConfig {
            scenario: "scaling-exercise".into(),
            seed,
            duration_s: 100,
            load: vec![LoadSpec {
                domain: DomainId::Vwsn1,
                sensor_pool: 8,
                phases: vec![
                    LoadPhase { rate_per_s: 10, duration_s: 10 },
                    LoadPhase { rate_per_s: 200, duration_s: 45 },
                    LoadPhase { rate_per_s: 10, duration_s: 45 },
                ],
            }],
            ..ScenarioConfig::default()
        }
    }

    /// Provider domains that actually take part in this run.
    pub fn participating_domains(&self) -> BTreeSet<DomainId> {
        let mut out: BTreeSet<DomainId> =
            self.sensors.iter().map(|s| s.brand.home_domain()).collect();
        out.extend(self.load.iter().map(|l| l.domain));
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scenario.is_empty() {
            return Err("scenario name must be non-empty".into());
        }
        if self.duration_s == 0 {
            return Err("duration_s must be >= 1".into());
        }
        if self.initiation_timeout_s == 0 {
            return Err("initiation_timeout_s must be >= 1".into());
        }
        let mut sensor_ids = BTreeSet::new();
        for s in &self.sensors {
            if s.sensor_id.is_empty() {
                return Err("sensor_id must be non-empty".into());
            }
            if !sensor_ids.insert(s.sensor_id.clone()) {
                return Err(format!("duplicate sensor_id {:?}", s.sensor_id));
            }
            if s.sensor_id.contains(',') {
                return Err(format!("sensor_id {:?} must not contain ','", s.sensor_id));
            }
            if s.quantities.is_empty() {
                return Err(format!("sensor {:?} declares no quantities", s.sensor_id));
            }
            if s.brand == SensorBrand::BrandB {
                if s.sensor_id.parse::<u16>().is_err() {
                    return Err(format!(
                        "BrandB sensor id {:?} must be a decimal u16 (the frame carries a numeric id)",
                        s.sensor_id
                    ));
                }
                for q in &s.quantities {
                    if !matches!(q, Quantity::Temperature | Quantity::Humidity) {
                        return Err(format!(
                            "BrandB sensor {:?} cannot measure {q:?}: the frame format only encodes temperature and humidity",
                            s.sensor_id
                        ));
                    }
                }
            }
            if let CollectionPattern::Periodic { interval_ms } = s.pattern {
                if interval_ms < 100 {
                    return Err(format!(
                        "sensor {:?} interval {interval_ms} ms is below the 100 ms floor",
                        s.sensor_id
                    ));
                }
            }
        }
        let mut node_ids = BTreeSet::new();
        for n in &self.nodes {
            if n.node_id.is_empty() {
                return Err("node_id must be non-empty".into());
            }
            if !node_ids.insert(n.node_id.clone()) {
                return Err(format!("duplicate node_id {:?}", n.node_id));
            }
            if n.cpu == 0 || n.mem == 0 {
                return Err(format!("node {:?} must have cpu > 0 and mem > 0", n.node_id));
            }
        }
        if !self.nodes.iter().any(|n| n.domain == DomainId::GatewayProvider) {
            return Err("at least one gateway-provider node is required".into());
        }
        for l in &self.load {
            if !l.domain.is_vwsn() {
                return Err(format!("load target {:?} is not a provider domain", l.domain));
            }
            if l.sensor_pool == 0 {
                return Err("load sensor_pool must be >= 1".into());
            }
            if l.phases.is_empty() {
                return Err("load profile needs at least one phase".into());
            }
            if l.phases.iter().any(|p| p.duration_s == 0) {
                return Err("load phases must each last >= 1 s".into());
            }
        }
        let domains = self.participating_domains();
        let mut catalog_keys = BTreeSet::new();
        for c in &self.catalog {
            if !catalog_keys.insert((c.vnf_type, c.version)) {
                return Err(format!("duplicate catalog entry {:?} v{}", c.vnf_type, c.version));
            }
            let probe = VnfDescriptor {
                vnf_type: c.vnf_type,
                image_id: "pending".into(),
                version: c.version,
                cpu_units: c.cpu_units,
                mem_units: c.mem_units,
                image_size_bytes: c.image_size_bytes,
                per_instance_capacity: c.per_instance_capacity,
            };
            probe
                .validate()
                .map_err(|e| format!("catalog entry {:?} v{}: {e}", c.vnf_type, c.version))?;
            self.cost_model.check_warm_cheaper(c.image_size_bytes).map_err(|e| {
                format!("catalog entry {:?} v{}: {e}", c.vnf_type, c.version)
            })?;
        }
        for d in &domains {
            if !self.nodes.iter().any(|n| n.domain == *d) {
                return Err(format!("domain {d} has sensors or load but no nodes"));
            }
            let (imp, pc) = stage_types(*d).expect("participating domains are providers");
            for needed in [imp, pc] {
                if !self.catalog.iter().any(|c| c.vnf_type == needed) {
                    return Err(format!("catalog is missing {needed} needed by {d}"));
                }
            }
        }
        self.cost_model.validate().map_err(|e| e.to_string())?;
        self.scaling.validate().map_err(|e| e.to_string())?;
        for f in &self.faults {
            match &f.fault {
                FaultKind::FailMigration { instance_id } | FaultKind::FailInstance { instance_id, .. } => {
                    if instance_id.is_empty() {
                        return Err("fault instance_id must be non-empty".into());
                    }
                }
                FaultKind::BlockAuthority { authority } | FaultKind::UnblockAuthority { authority } => {
                    if authority.is_empty() {
                        return Err("fault authority must be non-empty".into());
                    }
                }
            }
            if let FaultKind::FailInstance { domain, .. } = &f.fault {
                if !domain.is_vwsn() {
                    return Err("instance faults target provider domains".into());
                }
            }
        }
        Ok(())
    }
}

/// The IMP/PC pair that serves a provider domain.
pub fn stage_types(domain: DomainId) -> Option<(VnfType, VnfType)> {
    match domain {
        DomainId::Vwsn1 => Some((VnfType::InfoModelProcessor1, VnfType::ProtocolConverter1)),
        DomainId::Vwsn2 => Some((VnfType::InfoModelProcessor2, VnfType::ProtocolConverter2)),
        _ => None,
    }
}

/// Well-known authority (host:port) each domain answers on.
pub fn authority_of(domain: DomainId) -> &'static str {
    match domain {
        DomainId::Application => "app:9000",
        DomainId::GatewayProvider => "gateway:8080",
        DomainId::Vwsn1 => "vwsn1:8080",
        DomainId::Vwsn2 => "vwsn2:8080",
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("scenario setup failed: {0}")]
    Setup(String),
}

// ---------------------------------------------------------------------------
// Application service (ACK receiver + measurement consumer)
// ---------------------------------------------------------------------------

type ReadyHook = Box<dyn Fn(&NetHandle, &str, &str)>;

/// The emulated application: receives provisioning ACKs on `/ack` and final
/// measurements on `/measurements`, deduplicating and validating both.
pub struct AppService {
    me: Weak<AppService>,
    st: RefCell<AppState>,
}

struct AppState {
    authority: String,
    sink: TraceSink,
    acks: BTreeMap<String, ServiceAck>,
    ack_responses: BTreeMap<String, Vec<u8>>,
    seen_traces: BTreeSet<String>,
    delivered: u64,
    duplicates: u64,
    invalid: u64,
    on_ready: Option<ReadyHook>,
}

impl AppService {
    pub fn new(authority: &str, sink: TraceSink) -> Rc<Self> {
        Rc::new_cyclic(|me| AppService {
            me: me.clone(),
            st: RefCell::new(AppState {
                authority: authority.to_string(),
                sink,
                acks: BTreeMap::new(),
                ack_responses: BTreeMap::new(),
                seen_traces: BTreeSet::new(),
                delivered: 0,
                duplicates: 0,
                invalid: 0,
                on_ready: None,
            }),
        })
    }

    pub fn register(self: &Rc<Self>, net: &NetHandle) {
        let authority = self.st.borrow().authority.clone();
        net.register(&authority, self.clone());
    }

    /// Called once per fresh Ready ACK with (request_id, service_endpoint).
    pub fn set_on_ready(&self, hook: ReadyHook) {
        self.st.borrow_mut().on_ready = Some(hook);
    }

    pub fn ack_for(&self, request_id: &str) -> Option<ServiceAck> {
        self.st.borrow().acks.get(request_id).cloned()
    }

    pub fn acks(&self) -> Vec<ServiceAck> {
        self.st.borrow().acks.values().cloned().collect()
    }

    pub fn delivered(&self) -> u64 {
        self.st.borrow().delivered
    }

    pub fn duplicates(&self) -> u64 {
        self.st.borrow().duplicates
    }

    pub fn invalid_deliveries(&self) -> u64 {
        self.st.borrow().invalid
    }

    fn handle_ack(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let now = net.now_us();
        let mut st = self.st.borrow_mut();
        let url = format!("http://{}/ack", st.authority);
        let subject = DomainId::Application.to_string();
        let body_text = String::from_utf8_lossy(&req.body).into_owned();
        let ack: ServiceAck = match serde_json::from_slice(&req.body) {
            Ok(a) => a,
            Err(e) => {
                st.sink.record(
                    now,
                    TraceKind::Control {
                        iface: ControlIface::Ack,
                        request_id: String::new(),
                        subject: subject.clone(),
                        phase: ControlPhase::Request,
                        status: None,
                        url: url.clone(),
                        body: body_text,
                        dup: false,
                    },
                );
                let resp = error_response(400, "bad ack", &e.to_string());
                st.sink.record(
                    now,
                    TraceKind::Control {
                        iface: ControlIface::Ack,
                        request_id: String::new(),
                        subject,
                        phase: ControlPhase::Response,
                        status: Some(400),
                        url,
                        body: String::new(),
                        dup: false,
                    },
                );
                return resp;
            }
        };
        let dup = st.acks.contains_key(&ack.request_id);
        st.sink.record(
            now,
            TraceKind::Control {
                iface: ControlIface::Ack,
                request_id: ack.request_id.clone(),
                subject: subject.clone(),
                phase: ControlPhase::Request,
                status: None,
                url: url.clone(),
                body: body_text,
                dup,
            },
        );
        if dup {
            let resp = st.ack_responses[&ack.request_id].clone();
            st.sink.record(
                now,
                TraceKind::Control {
                    iface: ControlIface::Ack,
                    request_id: ack.request_id.clone(),
                    subject,
                    phase: ControlPhase::Response,
                    status: Some(200),
                    url,
                    body: String::new(),
                    dup: true,
                },
            );
            return resp;
        }
        let resp = json_response(200, &json!({ "status": "ok" }));
        st.acks.insert(ack.request_id.clone(), ack.clone());
        st.ack_responses.insert(ack.request_id.clone(), resp.clone());
        st.sink.record(
            now,
            TraceKind::Control {
                iface: ControlIface::Ack,
                request_id: ack.request_id.clone(),
                subject,
                phase: ControlPhase::Response,
                status: Some(200),
                url,
                body: String::new(),
                dup: false,
            },
        );
        if ack.status == AckStatus::Ready {
            if let Some(endpoint) = ack.service_endpoint.clone() {
                let me = self.me.clone();
                let rid = ack.request_id.clone();
                net.schedule_in(0, move |net| {
                    let Some(app) = me.upgrade() else { return };
                    let hook = app.st.borrow_mut().on_ready.take();
                    if let Some(hook) = hook {
                        hook(net, &rid, &endpoint);
                        app.st.borrow_mut().on_ready = Some(hook);
                    }
                });
            }
        }
        resp
    }

    fn handle_measurement(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let now = net.now_us();
        let query = req.path.split_once('?').map(|(_, q)| q).unwrap_or("");
        let mut trace_id = None;
        let mut sensor_id = None;
        let mut seq = None;
        for pair in query.split('&') {
            match pair.split_once('=') {
                Some(("trace_id", v)) => trace_id = Some(v.to_string()),
                Some(("sensor_id", v)) => sensor_id = Some(v.to_string()),
                Some(("seq", v)) => seq = v.parse::<u64>().ok(),
                _ => {}
            }
        }
        let mut st = self.st.borrow_mut();
        let (Some(trace_id), Some(sensor_id), Some(seq)) = (trace_id, sensor_id, seq) else {
            st.invalid += 1;
            st.sink.record(
                now,
                TraceKind::InvalidDelivery {
                    reason: "missing trace_id/sensor_id/seq correlation".into(),
                },
            );
            return error_response(400, "bad delivery", "missing correlation query parameters");
        };
        let records = match decode_senml(&req.body) {
            Ok(r) => r,
            Err(e) => {
                st.invalid += 1;
                st.sink.record(now, TraceKind::InvalidDelivery { reason: e.to_string() });
                return error_response(400, "bad delivery", &e.to_string());
            }
        };
        if records.is_empty() {
            st.invalid += 1;
            st.sink.record(now, TraceKind::InvalidDelivery { reason: "empty record set".into() });
            return error_response(400, "bad delivery", "empty record set");
        }
        if !st.seen_traces.insert(trace_id.clone()) {
            st.duplicates += 1;
            return json_response(200, &json!({ "status": "duplicate" }));
        }
        st.delivered += 1;
        st.sink.record(
            now,
            TraceKind::Deliver { trace_id, sensor_id, seq, bytes: req.body.len() as u64 },
        );
        json_response(200, &json!({ "status": "stored" }))
    }
}

impl Service for AppService {
    fn handle(&self, net: &NetHandle, req: ParsedHttpRequest) -> Vec<u8> {
        let route = req.path.split('?').next().unwrap_or("");
        match (req.method.as_str(), route) {
            ("POST", "/ack") => self.handle_ack(net, &req),
            ("POST", "/measurements") => self.handle_measurement(net, &req),
            ("GET", "/health") => json_response(200, &json!({ "status": "ok" })),
            _ => error_response(404, "not found", &req.path),
        }
    }
}

// ---------------------------------------------------------------------------
// Sensor fleet + synthetic load
// ---------------------------------------------------------------------------

struct SensorRuntime {
    spec: SensorSpec,
    brand_b_id: u16,
    interval_us: u64,
    remaining: u64,
    qty_cursor: usize,
    seq: u64,
    rng: ChaCha8Rng,
    walk: BTreeMap<Quantity, f64>,
}

impl SensorRuntime {
    fn from_spec(spec: SensorSpec, seed: u64, index: u64) -> Self {
        let brand_b_id = spec.sensor_id.parse::<u16>().unwrap_or(0);
        let (interval_us, remaining_per_s) = match spec.pattern {
            CollectionPattern::Once => (1_000_000, None),
            CollectionPattern::Periodic { interval_ms } => (interval_ms * 1000, Some(interval_ms)),
        };
        SensorRuntime {
            spec,
            brand_b_id,
            interval_us,
            // Filled in by `arm` once the emission window is known.
            remaining: remaining_per_s.map_or(1, |_| 0),
            qty_cursor: 0,
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(
                seed.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ),
            walk: BTreeMap::new(),
        }
    }

    fn arm(&mut self, duration_s: u64) {
        if let CollectionPattern::Periodic { interval_ms } = self.spec.pattern {
            self.remaining = duration_s * 1000 / interval_ms;
        }
    }

    fn next_frame(&mut self, now_us: u64) -> Vec<u8> {
        let qty = self.spec.quantities[self.qty_cursor % self.spec.quantities.len()];
        self.qty_cursor += 1;
        let ts_ms = EPOCH_BASE_MS + now_us / 1000;
        match self.spec.brand {
            SensorBrand::BrandA => {
                let (lo, hi) = brand_a_range(qty);
                let v = self.walk.entry(qty).or_insert((lo + hi) / 2.0);
                let step = self.rng.random_range(-1.0..=1.0) * (hi - lo) * 0.02;
                *v = (*v + step).clamp(lo, hi);
                let reading = SensorReading {
                    sensor_id: self.spec.sensor_id.clone(),
                    brand: SensorBrand::BrandA,
                    quantity: qty,
                    value: *v,
                    timestamp_ms: ts_ms,
                };
                encode_brand_a(&reading).expect("in-range reading encodes")
            }
            SensorBrand::BrandB => {
                let (lo, hi) = brand_b_raw_range(qty);
                let v = self.walk.entry(qty).or_insert(f64::from(lo) / 2.0 + f64::from(hi) / 2.0);
                let step = self.rng.random_range(-60.0..=60.0);
                *v = (*v + step).clamp(f64::from(lo), f64::from(hi));
                let fields = BrandBFields {
                    sensor_id: self.brand_b_id,
                    sensor_code: brand_b_code(qty),
                    raw_adc: *v as u16,
                    epoch_s: (ts_ms / 1000) as u32,
                };
                encode_brand_b(&fields).expect("in-range fields encode").to_vec()
            }
        }
    }
}

/// Plausible physical range per quantity for generated BrandA values.
fn brand_a_range(qty: Quantity) -> (f64, f64) {
    match qty {
        Quantity::Temperature => (15.0, 45.0),
        Quantity::Humidity => (20.0, 90.0),
        Quantity::WindSpeed => (0.0, 30.0),
        Quantity::Co2 => (350.0, 2000.0),
        Quantity::Rainfall => (0.0, 50.0),
    }
}

/// Raw ADC count range per quantity for generated BrandB frames, chosen so
/// the converted physical value stays plausible.
fn brand_b_raw_range(qty: Quantity) -> (u16, u16) {
    match qty {
        Quantity::Temperature => (5460, 8460), // ≈ 15..45 °C
        _ => (600, 2800),                      // ≈ 20..90 %RH
    }
}

fn brand_b_code(qty: Quantity) -> u8 {
    match qty {
        Quantity::Humidity => SENSOR_CODE_HUMIDITY,
        _ => SENSOR_CODE_TEMPERATURE,
    }
}

struct LoadRuntime {
    domain: DomainId,
    pool: u32,
    phases: Vec<LoadPhase>,
    phase: usize,
    sec_in_phase: u64,
    next_pick: u64,
    rng: ChaCha8Rng,
    seqs: BTreeMap<String, u64>,
}

impl LoadRuntime {
    fn build_frame(&mut self, slot: u32, at_us: u64) -> Vec<u8> {
        let ts_ms = EPOCH_BASE_MS + at_us / 1000;
        match home_brand(self.domain) {
            SensorBrand::BrandA => {
                let reading = SensorReading {
                    sensor_id: load_sensor_id(self.domain, slot),
                    brand: SensorBrand::BrandA,
                    quantity: Quantity::Temperature,
                    value: 25.0 + self.rng.random_range(-0.5..=0.5),
                    timestamp_ms: ts_ms,
                };
                encode_brand_a(&reading).expect("in-range reading encodes")
            }
            SensorBrand::BrandB => {
                let fields = BrandBFields {
                    sensor_id: 900 + slot as u16,
                    sensor_code: SENSOR_CODE_TEMPERATURE,
                    raw_adc: 6460 + self.rng.random_range(-50..=50i32) as u16,
                    epoch_s: (ts_ms / 1000) as u32,
                };
                encode_brand_b(&fields).expect("in-range fields encode").to_vec()
            }
        }
    }
}

fn home_brand(domain: DomainId) -> SensorBrand {
    match domain {
        DomainId::Vwsn2 => SensorBrand::BrandB,
        _ => SensorBrand::BrandA,
    }
}

fn load_sensor_id(domain: DomainId, slot: u32) -> String {
    match home_brand(domain) {
        SensorBrand::BrandA => format!("ld-{}-{slot}", domain.as_str()),
        SensorBrand::BrandB => format!("{}", 900 + slot),
    }
}

struct Fleet {
    sink: TraceSink,
    duration_s: u64,
    sensors: Vec<SensorRuntime>,
    by_domain: BTreeMap<DomainId, Vec<usize>>,
    load: BTreeMap<DomainId, LoadRuntime>,
    endpoints: BTreeMap<DomainId, String>,
    /// Per sensor: emission times of frames the provider accepted (204), in
    /// order. Index k pairs with provider-assigned sequence number k+1.
    accepted: BTreeMap<String, Vec<u64>>,
    emitted: u64,
    brand_of: BTreeMap<String, SensorBrand>,
}

fn start_domain(net: &NetHandle, fleet: &Rc<RefCell<Fleet>>, domain: DomainId, endpoint: String) {
    let now = net.now_us();
    let (sensor_idxs, has_load) = {
        let mut f = fleet.borrow_mut();
        if f.endpoints.contains_key(&domain) {
            return;
        }
        f.endpoints.insert(domain, endpoint);
        let duration_s = f.duration_s;
        if let Some(idxs) = f.by_domain.get(&domain).cloned() {
            for idx in &idxs {
                f.sensors[*idx].arm(duration_s);
            }
            (idxs, f.load.contains_key(&domain))
        } else {
            (Vec::new(), f.load.contains_key(&domain))
        }
    };
    for idx in sensor_idxs {
        let (due, interval) = {
            let f = fleet.borrow();
            (f.sensors[idx].remaining > 0, f.sensors[idx].interval_us)
        };
        if due {
            schedule_sensor(net, fleet.clone(), idx, now + interval);
        }
    }
    if has_load {
        schedule_load_tick(net, fleet.clone(), domain, now);
    }
}

fn schedule_sensor(net: &NetHandle, fleet: Rc<RefCell<Fleet>>, idx: usize, at_us: u64) {
    net.schedule_at(at_us, move |net| sensor_fire(net, &fleet, idx));
}

fn sensor_fire(net: &NetHandle, fleet: &Rc<RefCell<Fleet>>, idx: usize) {
    let now = net.now_us();
    let (frame, sensor_id, seq, domain, interval, more) = {
        let f = &mut *fleet.borrow_mut();
        let s = &mut f.sensors[idx];
        if s.remaining == 0 {
            return;
        }
        s.remaining -= 1;
        s.seq += 1;
        let frame = s.next_frame(now);
        (
            frame,
            s.spec.sensor_id.clone(),
            s.seq,
            s.spec.brand.home_domain(),
            s.interval_us,
            s.remaining > 0,
        )
    };
    post_reading(net, fleet, domain, sensor_id, seq, frame);
    if more {
        schedule_sensor(net, fleet.clone(), idx, now + interval);
    }
}

fn post_reading(
    net: &NetHandle,
    fleet: &Rc<RefCell<Fleet>>,
    domain: DomainId,
    sensor_id: String,
    seq: u64,
    frame: Vec<u8>,
) {
    let now = net.now_us();
    let endpoint = {
        let mut f = fleet.borrow_mut();
        let brand = f.brand_of.get(&sensor_id).copied().unwrap_or(SensorBrand::BrandA);
        f.emitted += 1;
        f.sink.record(now, TraceKind::SensorEmit { sensor_id: sensor_id.clone(), brand, seq });
        f.endpoints.get(&domain).cloned()
    };
    let Some(url) = endpoint else { return };
    let fl = fleet.clone();
    net.post(
        &url,
        "application/octet-stream",
        &frame,
        Some(Box::new(move |_net, resp| {
            if resp.status == 204 {
                fl.borrow_mut().accepted.entry(sensor_id).or_default().push(now);
            }
        })),
    );
}

fn schedule_load_tick(net: &NetHandle, fleet: Rc<RefCell<Fleet>>, domain: DomainId, at_us: u64) {
    net.schedule_at(at_us, move |net| load_tick(net, &fleet, domain));
}

fn load_tick(net: &NetHandle, fleet: &Rc<RefCell<Fleet>>, domain: DomainId) {
    let now = net.now_us();
    let mut emissions: Vec<(u64, String, u64, Vec<u8>)> = Vec::new();
    let more = {
        let f = &mut *fleet.borrow_mut();
        let Some(lr) = f.load.get_mut(&domain) else { return };
        let Some(phase) = lr.phases.get(lr.phase).copied() else { return };
        for k in 0..phase.rate_per_s {
            let offset = u64::from(k) * 1_000_000 / u64::from(phase.rate_per_s);
            let slot = (lr.next_pick % u64::from(lr.pool)) as u32;
            lr.next_pick += 1;
            let id = load_sensor_id(domain, slot);
            let seq = {
                let e = lr.seqs.entry(id.clone()).or_insert(0);
                *e += 1;
                *e
            };
            let frame = lr.build_frame(slot, now + offset);
            emissions.push((now + offset, id, seq, frame));
        }
        lr.sec_in_phase += 1;
        if lr.sec_in_phase >= phase.duration_s {
            lr.phase += 1;
            lr.sec_in_phase = 0;
        }
        lr.phases.get(lr.phase).is_some()
    };
    for (at, id, seq, frame) in emissions {
        let fl = fleet.clone();
        net.schedule_at(at, move |net| post_reading(net, &fl, domain, id, seq, frame));
    }
    if more {
        schedule_load_tick(net, fleet.clone(), domain, now + 1_000_000);
    }
}

// ---------------------------------------------------------------------------
// World assembly
// ---------------------------------------------------------------------------

/// A fully wired deployment, ready to run. Keeping the value alive after
/// [`World::run`] keeps every service reachable, which lets tests keep
/// interacting with the network (for example, replaying control requests).
pub struct World {
    pub net: NetHandle,
    pub sink: TraceSink,
    pub app: Rc<AppService>,
    pub gateway: Rc<GatewayService>,
    pub providers: BTreeMap<DomainId, Rc<VwsnService>>,
    cfg: ScenarioConfig,
    fleet: Rc<RefCell<Fleet>>,
    _dirs: Vec<tempfile::TempDir>,
}

/// Everything a finished run produces.
pub struct RunOutput {
    pub report: MetricsReport,
    pub events: Vec<TraceEvent>,
}

/// Builds a world from the config and runs it to completion.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    Ok(World::build(cfg)?.run())
}

fn setup_err(e: &dyn std::fmt::Display) -> ScenarioError {
    ScenarioError::Setup(e.to_string())
}

/// Records the run header: scenario identity plus every declared node.
fn record_scenario_start(net: &NetHandle, sink: &TraceSink, cfg: &ScenarioConfig) {
    let now = net.now_us();
    sink.record(
        now,
        TraceKind::ScenarioStart {
            scenario: cfg.scenario.clone(),
            seed: cfg.seed,
            clock: cfg.clock.as_str().into(),
        },
    );
    for n in &cfg.nodes {
        sink.record(
            now,
            TraceKind::NodeUp { node: n.node_id.clone(), domain: n.domain, cpu: n.cpu, mem: n.mem },
        );
    }
}

/// The catalog reduced to the newest descriptor per VNF type. Image ids
/// are derived from the manifest bytes, so every process computes the same
/// table without asking the store that published the blobs.
fn catalog_descriptors(cfg: &ScenarioConfig) -> BTreeMap<VnfType, VnfDescriptor> {
    let mut descriptors: BTreeMap<VnfType, VnfDescriptor> = BTreeMap::new();
    for entry in &cfg.catalog {
        let desc = VnfDescriptor {
            vnf_type: entry.vnf_type,
            image_id: image_id_for_content(&image_manifest(entry)),
            version: entry.version,
            cpu_units: entry.cpu_units,
            mem_units: entry.mem_units,
            image_size_bytes: entry.image_size_bytes,
            per_instance_capacity: entry.per_instance_capacity,
        };
        match descriptors.get(&entry.vnf_type) {
            Some(existing) if existing.version > entry.version => {}
            _ => {
                descriptors.insert(entry.vnf_type, desc);
            }
        }
    }
    descriptors
}

/// Stands up the gateway provider on `net`: a central image store with the
/// whole catalog published, the core orchestrator on the first core node,
/// and the control service registered under its authority.
fn assemble_gateway(
    cfg: &ScenarioConfig,
    net: &NetHandle,
    sink: &TraceSink,
) -> Result<(Rc<GatewayService>, tempfile::TempDir), ScenarioError> {
    let gw_dir = tempfile::tempdir().map_err(|e| setup_err(&e))?;
    let store = ImageStore::open(gw_dir.path()).map_err(|e| setup_err(&e))?;
    for entry in &cfg.catalog {
        let content = image_manifest(entry);
        let image_id = store
            .publish_image(entry.vnf_type, entry.version, &content)
            .map_err(|e| setup_err(&e))?;
        let meta = store.get_meta(&image_id).expect("image was just published");
        sink.record(
            net.now_us(),
            TraceKind::ImagePublished {
                image_id,
                version: entry.version,
                size_bytes: meta.size_bytes,
                digest: meta.digest,
            },
        );
    }
    let mut gw_nfvi = Nfvi::new(DomainId::GatewayProvider);
    let mut core_node = None;
    for n in cfg.nodes.iter().filter(|n| n.domain == DomainId::GatewayProvider) {
        gw_nfvi
            .add_node(NodeDescriptor {
                node_id: n.node_id.clone(),
                domain: n.domain,
                cpu_capacity: n.cpu,
                mem_capacity: n.mem,
            })
            .map_err(|e| setup_err(&e))?;
        core_node.get_or_insert(n.node_id.clone());
    }
    let core_node = core_node.expect("validated: gateway node exists");
    let core =
        CoreMano::new(gw_nfvi, &core_node, cfg.cost_model.clone()).map_err(|e| setup_err(&e))?;
    let domain_urls: BTreeMap<DomainId, String> = cfg
        .participating_domains()
        .iter()
        .map(|d| (*d, format!("http://{}", authority_of(*d))))
        .collect();
    let gateway = GatewayService::new(
        GatewayParams {
            authority: authority_of(DomainId::GatewayProvider).into(),
            core,
            store,
            domain_urls,
        },
        sink.clone(),
    );
    gateway.register(net);
    Ok((gateway, gw_dir))
}

/// Stands up one VWSN provider domain on `net`: its NFVI nodes, the domain
/// orchestrator, a warm image cache, and the control service (registered
/// and started, so reconcile ticks begin immediately).
fn assemble_provider(
    cfg: &ScenarioConfig,
    domain: DomainId,
    net: &NetHandle,
    sink: &TraceSink,
) -> Result<(Rc<VwsnService>, tempfile::TempDir), ScenarioError> {
    let mut nfvi = Nfvi::new(domain);
    for n in cfg.nodes.iter().filter(|n| n.domain == domain) {
        nfvi.add_node(NodeDescriptor {
            node_id: n.node_id.clone(),
            domain: n.domain,
            cpu_capacity: n.cpu,
            mem_capacity: n.mem,
        })
        .map_err(|e| setup_err(&e))?;
    }
    let mano = DomainMano::new(nfvi, cfg.scaling.clone()).map_err(|e| setup_err(&e))?;
    let cache_dir = tempfile::tempdir().map_err(|e| setup_err(&e))?;
    let cache_store = ImageStore::open(cache_dir.path()).map_err(|e| setup_err(&e))?;
    let descriptors = catalog_descriptors(cfg);
    let (imp, pc) = stage_types(domain).expect("participating domains are providers");
    let descs = vec![
        descriptors.get(&imp).expect("validated: catalog covers domain").clone(),
        descriptors.get(&pc).expect("validated: catalog covers domain").clone(),
    ];
    let svc = VwsnService::new(
        VwsnParams {
            domain,
            authority: authority_of(domain).into(),
            gateway_url: format!("http://{}", authority_of(DomainId::GatewayProvider)),
            descriptors: descs,
            mano,
            cache_store,
        },
        sink.clone(),
    );
    svc.register(net);
    svc.start(net);
    Ok((svc, cache_dir))
}

/// Stands up the application side on `net`: the measurement-consuming
/// service, the sensor fleet (armed per domain when its ACK arrives), the
/// opening service requests, and the initiation watchdog.
fn assemble_app(
    cfg: &ScenarioConfig,
    net: &NetHandle,
    sink: &TraceSink,
) -> (Rc<AppService>, Rc<RefCell<Fleet>>) {
    let app = AppService::new(authority_of(DomainId::Application), sink.clone());
    app.register(net);

    let mut fleet = Fleet {
        sink: sink.clone(),
        duration_s: cfg.duration_s,
        sensors: Vec::new(),
        by_domain: BTreeMap::new(),
        load: BTreeMap::new(),
        endpoints: BTreeMap::new(),
        accepted: BTreeMap::new(),
        emitted: 0,
        brand_of: BTreeMap::new(),
    };
    for (i, spec) in cfg.sensors.iter().enumerate() {
        fleet.brand_of.insert(spec.sensor_id.clone(), spec.brand);
        fleet.by_domain.entry(spec.brand.home_domain()).or_default().push(fleet.sensors.len());
        fleet.sensors.push(SensorRuntime::from_spec(spec.clone(), cfg.seed, i as u64));
    }
    for (i, l) in cfg.load.iter().enumerate() {
        for slot in 0..l.sensor_pool {
            fleet.brand_of.insert(load_sensor_id(l.domain, slot), home_brand(l.domain));
        }
        fleet.load.insert(
            l.domain,
            LoadRuntime {
                domain: l.domain,
                pool: l.sensor_pool,
                phases: l.phases.clone(),
                phase: 0,
                sec_in_phase: 0,
                next_pick: 0,
                rng: ChaCha8Rng::seed_from_u64(
                    cfg.seed.wrapping_add(0x10AD).wrapping_add(i as u64),
                ),
                seqs: BTreeMap::new(),
            },
        );
    }
    let fleet = Rc::new(RefCell::new(fleet));

    // Ready hook: the ACK's service endpoint starts that domain's fleet.
    let domains = cfg.participating_domains();
    let rid_map: BTreeMap<String, DomainId> =
        domains.iter().map(|d| (format!("req-{}", d.as_str()), *d)).collect();
    {
        let fleet = fleet.clone();
        let rid_map = rid_map.clone();
        app.set_on_ready(Box::new(move |net, rid, endpoint| {
            if let Some(d) = rid_map.get(rid) {
                start_domain(net, &fleet, *d, endpoint.to_string());
            }
        }));
    }

    // Opening move: the application demands a service from every provider.
    for (rid, d) in &rid_map {
        let quantities = service_quantities(cfg, *d);
        let pattern = service_pattern(cfg, *d);
        let request = ServiceRequest {
            request_id: rid.clone(),
            app_callback_url: format!("http://{}/ack", authority_of(DomainId::Application)),
            quantities,
            pattern,
        };
        let url = format!("http://{}/rq-s", authority_of(*d));
        let body = serde_json::to_vec(&request).expect("requests serialize");
        net.schedule_in(0, move |net| net.post(&url, "application/json", &body, None));
    }

    // Initiation watchdog.
    {
        let app = app.clone();
        let sink = sink.clone();
        let rids = rid_map;
        net.schedule_in(cfg.initiation_timeout_s * 1_000_000, move |net| {
            let events = sink.events();
            for rid in rids.keys() {
                if app.ack_for(rid).is_none() {
                    let leg = furthest_leg(&events, rid);
                    sink.record(
                        net.now_us(),
                        TraceKind::InitiationTimeout {
                            request_id: rid.clone(),
                            last_leg: leg.into(),
                        },
                    );
                }
            }
        });
    }
    (app, fleet)
}

/// Schedules the configured fault injections, each `at_ms` after now.
fn schedule_faults(cfg: &ScenarioConfig, net: &NetHandle, sink: &TraceSink) {
    for (i, f) in cfg.faults.iter().enumerate() {
        let delay = f.at_ms * 1000;
        let rpc_id = 9_000 + i as u64;
        match f.fault.clone() {
            FaultKind::FailMigration { instance_id } => {
                let url = format!("http://{}/rpc", authority_of(DomainId::GatewayProvider));
                let body = serde_json::to_vec(&RpcRequest {
                    method: "fault.fail_migration".into(),
                    params: json!({ "instance_id": instance_id }),
                    id: rpc_id,
                })
                .expect("rpc serializes");
                net.schedule_in(delay, move |net| net.post(&url, "application/json", &body, None));
            }
            FaultKind::FailInstance { domain, instance_id } => {
                let url = format!("http://{}/rpc", authority_of(domain));
                let body = serde_json::to_vec(&RpcRequest {
                    method: "fault.fail_instance".into(),
                    params: json!({ "instance_id": instance_id }),
                    id: rpc_id,
                })
                .expect("rpc serializes");
                net.schedule_in(delay, move |net| net.post(&url, "application/json", &body, None));
            }
            FaultKind::BlockAuthority { authority } => {
                let sink = sink.clone();
                net.schedule_in(delay, move |net| {
                    net.block_authority(&authority);
                    sink.record(
                        net.now_us(),
                        TraceKind::FaultInjected {
                            fault: "block_authority".into(),
                            target: authority.clone(),
                        },
                    );
                });
            }
            FaultKind::UnblockAuthority { authority } => {
                let sink = sink.clone();
                net.schedule_in(delay, move |net| {
                    net.unblock_authority(&authority);
                    sink.record(
                        net.now_us(),
                        TraceKind::FaultInjected {
                            fault: "unblock_authority".into(),
                            target: authority.clone(),
                        },
                    );
                });
            }
        }
    }
}

impl World {
    pub fn build(cfg: ScenarioConfig) -> Result<World, ScenarioError> {
        cfg.validate().map_err(ScenarioError::InvalidConfig)?;
        let net = NetHandle::new_sim();
        let sink = TraceSink::new();
        record_scenario_start(&net, &sink, &cfg);

        let mut dirs = Vec::new();
        let (gateway, gw_dir) = assemble_gateway(&cfg, &net, &sink)?;
        dirs.push(gw_dir);
        let mut providers = BTreeMap::new();
        for d in cfg.participating_domains() {
            let (svc, dir) = assemble_provider(&cfg, d, &net, &sink)?;
            dirs.push(dir);
            providers.insert(d, svc);
        }
        let (app, fleet) = assemble_app(&cfg, &net, &sink);
        schedule_faults(&cfg, &net, &sink);

        // Teardown: stop reconcile loops so the event heap can drain.
        let t_stop = (cfg.initiation_timeout_s + cfg.duration_s + GRACE_S) * 1_000_000;
        for svc in providers.values() {
            let svc = svc.clone();
            net.schedule_in(t_stop, move |_net| svc.stop());
        }

        Ok(World { net, sink, app, gateway, providers, cfg, fleet, _dirs: dirs })
    }

    /// Drains the event loop on the configured clock, then reduces the trace
    /// to a [`MetricsReport`].
    pub fn run(&self) -> RunOutput {
        match self.cfg.clock {
            ClockMode::Virtual => self.net.run_virtual(),
            ClockMode::Real => self.net.run_paced(),
        };
        let delivered = self.app.delivered();
        let emitted = self.fleet.borrow().emitted;
        self.sink.record(
            self.net.now_us(),
            TraceKind::ScenarioEnd { delivered, dropped: emitted.saturating_sub(delivered) },
        );
        let events = self.sink.events();
        let report = compute_metrics(&self.cfg, &events, &self.app, &self.fleet.borrow());
        RunOutput { report, events }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }
}


// ---------------------------------------------------------------------------
// Split-process assembly
// ---------------------------------------------------------------------------

/// Which slice of the deployment one OS process hosts in a split run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Gateway,
    Provider(DomainId),
}

impl NodeRole {
    /// The authority (host:port) the slice answers for.
    pub fn authority(self) -> &'static str {
        match self {
            NodeRole::Gateway => authority_of(DomainId::GatewayProvider),
            NodeRole::Provider(d) => authority_of(d),
        }
    }
}

/// Admin wrapper around a child slice: the coordinating process installs
/// routes, collects the trace, and requests shutdown over the same HTTP
/// plumbing the control plane uses. Anything else falls through to the
/// wrapped service, and none of it is traced.
struct AdminService {
    inner: Rc<dyn Service>,
    sink: TraceSink,
    shutdown: mpsc::Sender<Injected>,
}

impl Service for AdminService {
    fn handle(&self, net: &NetHandle, req: ParsedHttpRequest) -> Vec<u8> {
        match (req.method.as_str(), req.path.as_str()) {
            ("POST", "/admin/routes") => {
                let Ok(routes) = serde_json::from_slice::<BTreeMap<String, String>>(&req.body)
                else {
                    return error_response(400, "bad routes", "expected {authority: host:port}");
                };
                for (authority, addr) in &routes {
                    net.set_route(authority, addr);
                }
                no_content()
            }
            ("GET" | "POST", "/admin/trace") => {
                let jsonl = to_jsonl(&self.sink.events());
                frame_http_response(200, "OK", Some("application/x-ndjson"), jsonl.as_bytes())
            }
            ("POST", "/admin/shutdown") => {
                // Queued behind the request being served, so the 204 still
                // goes out before the loop exits.
                let _ = self.shutdown.send(Injected::Shutdown);
                no_content()
            }
            _ => self.inner.handle(net, req),
        }
    }
}

/// One child process of a split run: a single deployment slice on the
/// socket transport, wrapped with the admin endpoints. Drive it with
/// [`run_server_loop`](crate::sim::run_server_loop) on the receiver paired
/// with `loop_tx`.
pub struct SplitChild {
    pub net: NetHandle,
    pub sink: TraceSink,
    _dirs: Vec<tempfile::TempDir>,
}

/// Builds the slice for `role` on a fresh socket-transport network.
/// `loop_tx` must feed the server loop this child will run: replies to the
/// slice's own posts re-enter through it, and `POST /admin/shutdown` stops
/// it. The slice stays quiet until traffic arrives, which gives the
/// coordinator time to install routes first.
pub fn build_split_child(
    cfg: &ScenarioConfig,
    role: NodeRole,
    loop_tx: mpsc::Sender<Injected>,
) -> Result<SplitChild, ScenarioError> {
    cfg.validate().map_err(ScenarioError::InvalidConfig)?;
    let net = NetHandle::new_tcp();
    net.set_injector(loop_tx.clone());
    let sink = TraceSink::new();
    let mut dirs = Vec::new();
    let inner: Rc<dyn Service> = match role {
        NodeRole::Gateway => {
            let (gw, dir) = assemble_gateway(cfg, &net, &sink)?;
            dirs.push(dir);
            gw
        }
        NodeRole::Provider(d) => {
            let (svc, dir) = assemble_provider(cfg, d, &net, &sink)?;
            dirs.push(dir);
            svc
        }
    };
    // Re-registering under the same authority swaps the direct registration
    // for the admin-wrapped one.
    let admin = Rc::new(AdminService { inner, sink: sink.clone(), shutdown: loop_tx });
    net.register(role.authority(), admin);
    Ok(SplitChild { net, sink, _dirs: dirs })
}

/// The coordinating process of a split run: hosts the application side
/// (measurement consumer plus sensor fleet), posts the opening service
/// requests, and owns the merged trace. Build it only once every child is
/// reachable — the opening requests are scheduled to fire immediately.
pub struct SplitParent {
    pub net: NetHandle,
    pub sink: TraceSink,
    pub app: Rc<AppService>,
    fleet: Rc<RefCell<Fleet>>,
    cfg: ScenarioConfig,
}

impl SplitParent {
    pub fn build(
        cfg: ScenarioConfig,
        routes: &BTreeMap<String, String>,
        loop_tx: mpsc::Sender<Injected>,
    ) -> Result<SplitParent, ScenarioError> {
        cfg.validate().map_err(ScenarioError::InvalidConfig)?;
        let net = NetHandle::new_tcp();
        net.set_injector(loop_tx.clone());
        for (authority, addr) in routes {
            net.set_route(authority, addr);
        }
        let sink = TraceSink::new();
        record_scenario_start(&net, &sink, &cfg);
        let (app, fleet) = assemble_app(&cfg, &net, &sink);
        schedule_faults(&cfg, &net, &sink);
        // Once the scenario window passes, stop this process's loop; the
        // caller then collects child traces and shuts the children down.
        let t_stop = (cfg.initiation_timeout_s + cfg.duration_s + GRACE_S) * 1_000_000;
        net.schedule_in(t_stop, move |_net| {
            let _ = loop_tx.send(Injected::Shutdown);
        });
        Ok(SplitParent { net, sink, app, fleet, cfg })
    }

    /// Folds child traces into this process's trace, closes the scenario,
    /// and reduces everything to the final report.
    pub fn finish(self, child_events: Vec<TraceEvent>) -> RunOutput {
        self.sink.merge(child_events);
        let delivered = self.app.delivered();
        let emitted = self.fleet.borrow().emitted;
        self.sink.record(
            self.net.now_us(),
            TraceKind::ScenarioEnd { delivered, dropped: emitted.saturating_sub(delivered) },
        );
        let events = self.sink.events();
        let report = compute_metrics(&self.cfg, &events, &self.app, &self.fleet.borrow());
        RunOutput { report, events }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }
}
/// Deterministic image blob: a small manifest standing in for the real
/// binary. Costing uses the declared descriptor size, not the blob length.
fn image_manifest(entry: &CatalogEntry) -> Vec<u8> {
    format!(
        "{{\"vnf_type\":\"{}\",\"version\":{},\"image_size_bytes\":{}}}",
        entry.vnf_type.as_str(),
        entry.version,
        entry.image_size_bytes
    )
    .into_bytes()
}

fn service_quantities(cfg: &ScenarioConfig, domain: DomainId) -> Vec<Quantity> {
    let set: BTreeSet<Quantity> = cfg
        .sensors
        .iter()
        .filter(|s| s.brand.home_domain() == domain)
        .flat_map(|s| s.quantities.iter().copied())
        .collect();
    if set.is_empty() {
        vec![Quantity::Temperature]
    } else {
        set.into_iter().collect()
    }
}

fn service_pattern(cfg: &ScenarioConfig, domain: DomainId) -> CollectionPattern {
    let mut min_interval: Option<u64> = None;
    let mut any = false;
    for s in cfg.sensors.iter().filter(|s| s.brand.home_domain() == domain) {
        any = true;
        if let CollectionPattern::Periodic { interval_ms } = s.pattern {
            min_interval = Some(min_interval.map_or(interval_ms, |m| m.min(interval_ms)));
        }
    }
    match (any, min_interval) {
        (true, None) => CollectionPattern::Once,
        (_, Some(interval_ms)) => CollectionPattern::Periodic { interval_ms },
        (false, None) => CollectionPattern::Periodic { interval_ms: 1000 },
    }
}

/// How far an initiation got, judged by which request legs the trace shows.
fn furthest_leg(events: &[TraceEvent], rid: &str) -> &'static str {
    let rqg_id = format!("rqg-{rid}");
    let (mut saw_rqs, mut saw_rqg, mut saw_gi) = (false, false, false);
    for e in events {
        if let TraceKind::Control {
            iface, request_id, phase: ControlPhase::Request, ..
        } = &e.kind
        {
            match iface {
                ControlIface::RqS if request_id == rid => saw_rqs = true,
                ControlIface::RqG if *request_id == rqg_id => saw_rqg = true,
                ControlIface::GI if *request_id == rqg_id => saw_gi = true,
                _ => {}
            }
        }
    }
    if saw_gi {
        "g-i"
    } else if saw_rqg {
        "rq-g"
    } else if saw_rqs {
        "rq-s"
    } else {
        "none"
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Nearest-rank percentile over a sorted sample, in the sample's unit.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize)
        .saturating_sub(1)
        .min(sorted.len() - 1);
    sorted[idx]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub samples: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LegStat {
    pub samples: u64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, Default)]
struct LegAcc {
    sum_us: u64,
    n: u64,
}

impl LegAcc {
    fn add(&mut self, us: u64) {
        self.sum_us += us;
        self.n += 1;
    }
    fn stat(&self) -> LegStat {
        LegStat {
            samples: self.n,
            mean_ms: if self.n == 0 { 0.0 } else { self.sum_us as f64 / self.n as f64 / 1000.0 },
        }
    }
}

/// Mean time spent in each hop of the pipeline, for delivered messages.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageBreakdown {
    pub emit_to_ingest: LegStat,
    pub ingest_to_stage0: LegStat,
    pub stage0: LegStat,
    pub stage0_to_stage1: LegStat,
    pub stage1: LegStat,
    pub stage1_to_deliver: LegStat,
}

/// One reconcile-tick sample of a VNF pool's size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSample {
    pub t_us: u64,
    pub domain: DomainId,
    pub vnf_type: String,
    pub running: u32,
    pub pending: u32,
}

/// Post-run summary distilled from the event trace.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub emitted: u64,
    pub delivered: u64,
    pub delivered_brand_a: u64,
    pub delivered_brand_b: u64,
    pub lost: u64,
    pub duplicates: u64,
    pub invalid_deliveries: u64,
    pub latency: LatencySummary,
    pub stage_breakdown: StageBreakdown,
    /// Delivered messages per active second (first emission to last
    /// delivery); absent when nothing was delivered.
    pub throughput_per_s: Option<f64>,
    /// Control request legs observed (all interfaces, replays included).
    pub control_messages: u64,
    /// Control request legs per delivered message; absent when nothing was
    /// delivered.
    pub control_overhead_per_delivery: Option<f64>,
    pub instance_counts: Vec<InstanceSample>,
    pub trace_violations: Vec<String>,
}

fn compute_metrics(
    cfg: &ScenarioConfig,
    events: &[TraceEvent],
    app: &Rc<AppService>,
    fleet: &Fleet,
) -> MetricsReport {
    let mut emitted = 0u64;
    let mut first_emit: Option<u64> = None;
    let mut control_messages = 0u64;
    let mut ingest_by_trace: BTreeMap<&str, (u64, &str, u64)> = BTreeMap::new();
    let mut stage_t: BTreeMap<(&str, u32, bool), u64> = BTreeMap::new();
    let mut delivers: Vec<(&str, &str, u64, u64)> = Vec::new();
    let mut last_deliver: Option<u64> = None;
    let mut instance_counts = Vec::new();

    for e in events {
        match &e.kind {
            TraceKind::SensorEmit { .. } => {
                emitted += 1;
                first_emit.get_or_insert(e.t_us);
            }
            TraceKind::Control { phase: ControlPhase::Request, .. } => control_messages += 1,
            TraceKind::Ingest { sensor_id, trace_id, seq, .. } => {
                ingest_by_trace.entry(trace_id).or_insert((e.t_us, sensor_id, *seq));
            }
            TraceKind::StageEnter { trace_id, stage, .. } => {
                stage_t.entry((trace_id, *stage, false)).or_insert(e.t_us);
            }
            TraceKind::StageExit { trace_id, stage, .. } => {
                stage_t.entry((trace_id, *stage, true)).or_insert(e.t_us);
            }
            TraceKind::Deliver { trace_id, sensor_id, seq, .. } => {
                delivers.push((trace_id, sensor_id, *seq, e.t_us));
                last_deliver = Some(last_deliver.map_or(e.t_us, |t: u64| t.max(e.t_us)));
            }
            TraceKind::InstanceCount { domain, vnf_type, running, pending } => {
                instance_counts.push(InstanceSample {
                    t_us: e.t_us,
                    domain: *domain,
                    vnf_type: vnf_type.clone(),
                    running: *running,
                    pending: *pending,
                });
            }
            _ => {}
        }
    }

    let mut e2e: Vec<u64> = Vec::new();
    let mut legs = (
        LegAcc::default(), // emit -> ingest
        LegAcc::default(), // ingest -> stage0 enter
        LegAcc::default(), // stage0
        LegAcc::default(), // stage0 exit -> stage1 enter
        LegAcc::default(), // stage1
        LegAcc::default(), // stage1 exit -> deliver
    );
    let mut delivered_brand_a = 0u64;
    let mut delivered_brand_b = 0u64;
    for (trace, sensor, seq, t_del) in &delivers {
        match fleet.brand_of.get(*sensor) {
            Some(SensorBrand::BrandA) => delivered_brand_a += 1,
            Some(SensorBrand::BrandB) => delivered_brand_b += 1,
            None => {}
        }
        let ingest = ingest_by_trace.get(trace).copied();
        let emit_t: Option<u64> = fleet
            .accepted
            .get(*sensor)
            .and_then(|v| (*seq as usize).checked_sub(1).and_then(|i| v.get(i)))
            .copied();
        if let Some(base) = emit_t.or(ingest.map(|i| i.0)) {
            e2e.push(t_del.saturating_sub(base));
        }
        let s0e = stage_t.get(&(*trace, 0, false)).copied();
        let s0x = stage_t.get(&(*trace, 0, true)).copied();
        let s1e = stage_t.get(&(*trace, 1, false)).copied();
        let s1x = stage_t.get(&(*trace, 1, true)).copied();
        if let (Some(em), Some(ing)) = (emit_t, ingest) {
            legs.0.add(ing.0.saturating_sub(em));
        }
        if let (Some(ing), Some(a)) = (ingest, s0e) {
            legs.1.add(a.saturating_sub(ing.0));
        }
        if let (Some(a), Some(b)) = (s0e, s0x) {
            legs.2.add(b.saturating_sub(a));
        }
        if let (Some(b), Some(c)) = (s0x, s1e) {
            legs.3.add(c.saturating_sub(b));
        }
        if let (Some(c), Some(d)) = (s1e, s1x) {
            legs.4.add(d.saturating_sub(c));
        }
        if let Some(d) = s1x {
            legs.5.add(t_del.saturating_sub(d));
        }
    }
    e2e.sort_unstable();

    let delivered = delivers.len() as u64;
    let throughput_per_s = match (first_emit, last_deliver) {
        (Some(fe), Some(ld)) if delivered > 0 && ld > fe => {
            Some(delivered as f64 / ((ld - fe) as f64 / 1e6))
        }
        _ => None,
    };

    MetricsReport {
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        emitted,
        delivered,
        delivered_brand_a,
        delivered_brand_b,
        lost: emitted.saturating_sub(delivered),
        duplicates: app.duplicates(),
        invalid_deliveries: app.invalid_deliveries(),
        latency: LatencySummary {
            samples: e2e.len() as u64,
            p50_ms: percentile(&e2e, 0.50) as f64 / 1000.0,
            p95_ms: percentile(&e2e, 0.95) as f64 / 1000.0,
            max_ms: e2e.last().copied().unwrap_or(0) as f64 / 1000.0,
        },
        stage_breakdown: StageBreakdown {
            emit_to_ingest: legs.0.stat(),
            ingest_to_stage0: legs.1.stat(),
            stage0: legs.2.stat(),
            stage0_to_stage1: legs.3.stat(),
            stage1: legs.4.stat(),
            stage1_to_deliver: legs.5.stat(),
        },
        throughput_per_s,
        control_messages,
        control_overhead_per_delivery: if delivered > 0 {
            Some(control_messages as f64 / delivered as f64)
        } else {
            None
        },
        instance_counts,
        trace_violations: verify_trace(events),
    }
}

// ---------------------------------------------------------------------------
// Trace verification
// ---------------------------------------------------------------------------

/// Replays a trace against the system's invariants and reports violations:
/// control-plane causal order per initiation, stage traversal order per
/// delivered message, lifecycle legality per instance, and per-node resource
/// conservation. An empty result means the trace is coherent.
pub fn verify_trace(events: &[TraceEvent]) -> Vec<String> {
    let mut ordered: Vec<&TraceEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.sort_key());
    let mut violations = Vec::new();

    // 1. Control causality: rq-s -> rq-g -> g-i -> ack per initiation.
    #[derive(Default)]
    struct Legs {
        rqs: Option<(u64, u64)>,
        rqg: Option<(u64, u64)>,
        gi: Option<(u64, u64)>,
        ack: Option<(u64, u64)>,
    }
    let mut lineages: BTreeMap<String, Legs> = BTreeMap::new();
    for e in &ordered {
        let TraceKind::Control { iface, request_id, phase: ControlPhase::Request, dup: false, .. } =
            &e.kind
        else {
            continue;
        };
        let key = e.sort_key();
        match iface {
            ControlIface::RqS => {
                lineages.entry(request_id.clone()).or_default().rqs.get_or_insert(key);
            }
            ControlIface::RqG | ControlIface::GI => {
                if let Some(root) = request_id.strip_prefix("rqg-") {
                    let legs = lineages.entry(root.to_string()).or_default();
                    let slot = if *iface == ControlIface::RqG { &mut legs.rqg } else { &mut legs.gi };
                    slot.get_or_insert(key);
                }
            }
            ControlIface::Ack => {
                lineages.entry(request_id.clone()).or_default().ack.get_or_insert(key);
            }
            ControlIface::Rpc => {}
        }
    }
    for (rid, legs) in &lineages {
        if legs.rqs.is_none() {
            continue; // scale-out traffic or foreign ids; not an initiation
        }
        let present: Vec<(&str, (u64, u64))> = [
            ("rq-s", legs.rqs),
            ("rq-g", legs.rqg),
            ("g-i", legs.gi),
            ("ack", legs.ack),
        ]
        .into_iter()
        .filter_map(|(name, k)| k.map(|k| (name, k)))
        .collect();
        for pair in present.windows(2) {
            if pair[1].1 <= pair[0].1 {
                violations.push(format!(
                    "initiation {rid}: {} observed before {}",
                    pair[1].0, pair[0].0
                ));
            }
        }
    }

    // 2. Stage traversal per delivered message.
    let mut stage_keys: BTreeMap<(String, u32, bool), (u64, u64)> = BTreeMap::new();
    for e in &ordered {
        match &e.kind {
            TraceKind::StageEnter { trace_id, stage, .. } => {
                stage_keys.entry((trace_id.clone(), *stage, false)).or_insert(e.sort_key());
            }
            TraceKind::StageExit { trace_id, stage, .. } => {
                stage_keys.entry((trace_id.clone(), *stage, true)).or_insert(e.sort_key());
            }
            _ => {}
        }
    }
    for e in &ordered {
        let TraceKind::Deliver { trace_id, .. } = &e.kind else { continue };
        let mut prev: Option<((u64, u64), &str)> = None;
        let mut missing = Vec::new();
        for (name, key) in [
            ("stage 0 enter", stage_keys.get(&(trace_id.clone(), 0, false)).copied()),
            ("stage 0 exit", stage_keys.get(&(trace_id.clone(), 0, true)).copied()),
            ("stage 1 enter", stage_keys.get(&(trace_id.clone(), 1, false)).copied()),
            ("stage 1 exit", stage_keys.get(&(trace_id.clone(), 1, true)).copied()),
            ("delivery", Some(e.sort_key())),
        ] {
            let Some(key) = key else {
                missing.push(name);
                continue;
            };
            if let Some((pk, pn)) = prev {
                if key <= pk {
                    violations.push(format!(
                        "message {trace_id}: {name} observed before {pn}"
                    ));
                }
            }
            prev = Some((key, name));
        }
        if !missing.is_empty() {
            violations.push(format!(
                "message {trace_id}: delivered without {}",
                missing.join(", ")
            ));
        }
    }

    // 3. Lifecycle legality per instance.
    let mut lifecycles: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for e in &ordered {
        if let TraceKind::Lifecycle { instance_id, from, event, to, .. } = &e.kind {
            lifecycles.entry(instance_id).or_default().push((*from, *event, *to));
        }
    }
    for (iid, steps) in &lifecycles {
        if steps[0].0 != LifecycleState::Requested {
            violations.push(format!(
                "instance {iid}: history starts at {:?}, expected Requested",
                steps[0].0
            ));
        }
        let mut prev_to: Option<LifecycleState> = None;
        for (from, event, to) in steps {
            if let Some(p) = prev_to {
                if p != *from {
                    violations.push(format!(
                        "instance {iid}: history jumps from {p:?} to {from:?}"
                    ));
                }
            }
            match lifecycle_next(*from, *event) {
                Ok(next) if next == *to => {}
                Ok(next) => violations.push(format!(
                    "instance {iid}: {from:?} + {event:?} must yield {next:?}, trace says {to:?}"
                )),
                Err(_) => violations.push(format!(
                    "instance {iid}: illegal transition {from:?} + {event:?}"
                )),
            }
            prev_to = Some(*to);
        }
    }

    // 4. Resource conservation per node.
    let mut capacity: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    let mut free: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    for e in &ordered {
        match &e.kind {
            TraceKind::NodeUp { node, cpu, mem, .. } => {
                capacity.insert(node, (*cpu, *mem));
                free.insert(node, (*cpu, *mem));
            }
            TraceKind::Alloc { node, instance_id, cpu, mem, free_cpu, free_mem } => {
                let Some(f) = free.get_mut(node.as_str()) else {
                    violations.push(format!("allocation on unknown node {node}"));
                    continue;
                };
                match (f.0.checked_sub(*cpu), f.1.checked_sub(*mem)) {
                    (Some(c), Some(m)) => *f = (c, m),
                    _ => {
                        violations.push(format!(
                            "node {node}: allocation for {instance_id} exceeds free capacity"
                        ));
                        continue;
                    }
                }
                if (f.0, f.1) != (*free_cpu, *free_mem) {
                    violations.push(format!(
                        "node {node}: reported free ({free_cpu},{free_mem}) disagrees with replay ({},{})",
                        f.0, f.1
                    ));
                }
            }
            TraceKind::Release { node, instance_id, cpu, mem, free_cpu, free_mem } => {
                let Some(cap) = capacity.get(node.as_str()).copied() else {
                    violations.push(format!("release on unknown node {node}"));
                    continue;
                };
                let Some(f) = free.get_mut(node.as_str()) else { continue };
                let next = (f.0 + cpu, f.1 + mem);
                if next.0 > cap.0 || next.1 > cap.1 {
                    violations.push(format!(
                        "node {node}: release of {instance_id} overflows capacity"
                    ));
                    continue;
                }
                *f = next;
                if (f.0, f.1) != (*free_cpu, *free_mem) {
                    violations.push(format!(
                        "node {node}: reported free ({free_cpu},{free_mem}) disagrees with replay ({},{})",
                        f.0, f.1
                    ));
                }
            }
            _ => {}
        }
    }

    violations
}
