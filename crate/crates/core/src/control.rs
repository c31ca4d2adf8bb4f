//! The RESTful control plane: service requests (Rq-S), gateway
//! provisioning (Rq-G), dispatch notifications (G-I), service
//! acknowledgements (ACK), plus the data-plane ingestion endpoint and the
//! per-instance message inboxes that carry traffic through a chain.
//!
//! Two services implement it: [`GatewayService`] (the gateway provider:
//! central image store, core orchestrator, migration driver) and
//! [`VwsnService`] (one per provider domain: service requests, chain
//! assembly, ingestion, scaling). Both speak plain HTTP/1.1 with JSON
//! bodies over a [`NetHandle`], so the same code runs against the
//! in-process simulated network and real loopback sockets.
//!
//! Idempotency: endpoints that accept work either replay their original
//! response on a duplicate request id (Rq-G, G-I) or reject the duplicate
//! outright (Rq-S answers 409). Replays are marked `dup` in the trace and
//! cause no second side effect.

use crate::codecs::{
    frame_http_response, parse_http_response, split_http_url, ParsedHttpRequest,
};
use crate::mano::{CoreMano, DomainMano, ManoError, MigrationTicket, ReconcileCommand};
use crate::model::{
    validate_chain, DomainId, LifecycleState, SensorBrand, ServiceChain, ServiceRequest,
    VnfDescriptor, VnfInstance, VnfType,
};
use crate::nfvi::NfviError;
use crate::sim::{NetHandle, Service};
use crate::store::{image_id_for_content, CacheLookup, ImageStore};
use crate::trace::{ControlIface, ControlPhase, TraceKind, TraceSink};
use crate::vnf::{
    apply_stage, coap_wrap, peek_sensor_key, StagePools, VnfMessage, CONFIG_TARGET_URL,
    META_DOMAIN, META_SENSOR_ID, META_SEQ, META_TRACE_ID,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::{Rc, Weak};

/// Meta key naming the service a message entered through; stage 0 uses it
/// to pick the stage-1 pool of the same chain.
pub const META_SERVICE_ID: &str = "service_id";

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

/// Rq-G body: a provider domain asking the gateway provider to provision
/// instances of the listed descriptors and migrate them over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfRequirementRequest {
    pub request_id: String,
    pub domain: DomainId,
    pub vnf_descriptors: Vec<VnfDescriptor>,
    pub reply_url: String,
}

impl VnfRequirementRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.request_id.is_empty() {
            return Err("empty request_id".into());
        }
        if self.vnf_descriptors.is_empty() {
            return Err("vnf_descriptors must be non-empty".into());
        }
        if !self.domain.is_vwsn() {
            return Err(format!("{} is not a provider domain", self.domain));
        }
        for d in &self.vnf_descriptors {
            d.validate()?;
            if d.vnf_type.serves_domain() != self.domain {
                return Err(format!(
                    "descriptor {} serves {}, not the requesting domain {}",
                    d.vnf_type,
                    d.vnf_type.serves_domain(),
                    self.domain
                ));
            }
        }
        if self.reply_url.is_empty() {
            return Err("empty reply_url".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Ready,
    Rejected,
}

/// ACK body: the provider telling the application its service is live (or
/// not), and where to send sensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceAck {
    pub request_id: String,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStatus {
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchedInstance {
    pub instance_id: String,
    pub vnf_type: VnfType,
    pub status: DispatchStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// G-I body: per-descriptor outcome of an Rq-G dispatch, in descriptor
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchNotification {
    pub request_id: String,
    pub domain: DomainId,
    pub instances: Vec<DispatchedInstance>,
}

// ---------------------------------------------------------------------------
// Internal management RPC framing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpcRequest {
    pub method: String,
    pub params: Value,
    pub id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpcError {
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpcResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
    pub id: u64,
}

// ---------------------------------------------------------------------------
// HTTP response helpers
// ---------------------------------------------------------------------------

fn reason_for(status: u16) -> &'static str {
    match status {
        200 => "OK",
        202 => "Accepted",
        204 => "No Content",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

pub(crate) fn json_response(status: u16, body: &Value) -> Vec<u8> {
    frame_http_response(
        status,
        reason_for(status),
        Some("application/json"),
        body.to_string().as_bytes(),
    )
}

pub(crate) fn error_response(status: u16, code: &str, detail: &str) -> Vec<u8> {
    json_response(status, &json!({ "error": code, "detail": detail }))
}

pub(crate) fn no_content() -> Vec<u8> {
    frame_http_response(204, "No Content", None, b"")
}

fn health_response() -> Vec<u8> {
    json_response(200, &json!({ "status": "ok" }))
}

fn status_of_response(bytes: &[u8]) -> u16 {
    parse_http_response(bytes).map(|r| r.status).unwrap_or(0)
}

/// Schedules `f` to run once the current handler has returned, so side
/// effects never fire while a response is being produced (and never while
/// any state borrow is held).
fn queue<S: 'static>(net: &NetHandle, me: &Weak<S>, f: impl FnOnce(Rc<S>, &NetHandle) + 'static) {
    let me = me.clone();
    net.schedule_in(0, move |net| {
        if let Some(svc) = me.upgrade() {
            f(svc, net);
        }
    });
}

// ---------------------------------------------------------------------------
// Gateway provider service
// ---------------------------------------------------------------------------

pub struct GatewayParams {
    /// Authority this service answers as, e.g. "gateway:8080".
    pub authority: String,
    pub core: CoreMano,
    /// The centralized image store (holds blobs and the per-domain cache
    /// registry that drives cold/warm costing).
    pub store: ImageStore,
    /// Base URL per provider domain, e.g. vwsn1 -> "http://vwsn1:8080".
    pub domain_urls: BTreeMap<DomainId, String>,
}

struct Dispatch {
    domain: DomainId,
    reply_url: String,
    expected: usize,
    results: Vec<(usize, DispatchedInstance)>,
    notified: bool,
}

struct GatewayState {
    authority: String,
    core: CoreMano,
    store: ImageStore,
    sink: TraceSink,
    domain_urls: BTreeMap<DomainId, String>,
    /// request_id -> response bytes to replay on duplicates.
    seen_rqg: BTreeMap<String, Vec<u8>>,
    dispatches: BTreeMap<String, Dispatch>,
    /// Instances whose next migration completion must fail (fault hook).
    fail_migrations: BTreeSet<String>,
    rpc_seq: u64,
}

pub struct GatewayService {
    me: Weak<GatewayService>,
    st: RefCell<GatewayState>,
}

impl GatewayService {
    pub fn new(params: GatewayParams, sink: TraceSink) -> Rc<Self> {
        Rc::new_cyclic(|me| GatewayService {
            me: me.clone(),
            st: RefCell::new(GatewayState {
                authority: params.authority,
                core: params.core,
                store: params.store,
                sink,
                domain_urls: params.domain_urls,
                seen_rqg: BTreeMap::new(),
                dispatches: BTreeMap::new(),
                fail_migrations: BTreeSet::new(),
                rpc_seq: 0,
            }),
        })
    }

    pub fn register(self: &Rc<Self>, net: &NetHandle) {
        let authority = self.st.borrow().authority.clone();
        net.register(&authority, self.clone() as Rc<dyn Service>);
    }

    /// Read access to the core orchestrator, for reports and assertions.
    pub fn with_core<R>(&self, f: impl FnOnce(&CoreMano) -> R) -> R {
        f(&self.st.borrow().core)
    }

    /// Marks an instance so its next migration completion fails with a
    /// transfer fault (the `fault.fail_migration` RPC does the same).
    pub fn inject_migration_fault(&self, instance_id: &str) {
        self.st.borrow_mut().fail_migrations.insert(instance_id.to_string());
    }

    fn trace_control(
        st: &GatewayState,
        now_us: u64,
        iface: ControlIface,
        request_id: &str,
        phase: ControlPhase,
        status: Option<u16>,
        url: &str,
        body: &str,
        dup: bool,
    ) {
        st.sink.record(
            now_us,
            TraceKind::Control {
                iface,
                request_id: request_id.to_string(),
                subject: DomainId::GatewayProvider.to_string(),
                phase,
                status,
                url: url.to_string(),
                body: body.to_string(),
                dup,
            },
        );
    }

    fn handle_rq_g(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let mut st = self.st.borrow_mut();
        let now = net.now_us();
        let url = format!("http://{}/rq-g", st.authority);
        let body_text = String::from_utf8_lossy(&req.body).to_string();
        let rqg: VnfRequirementRequest = match serde_json::from_slice(&req.body) {
            Err(e) => {
                Self::trace_control(
                    &st, now, ControlIface::RqG, "", ControlPhase::Request, None, &url,
                    &body_text, false,
                );
                Self::trace_control(
                    &st, now, ControlIface::RqG, "", ControlPhase::Response, Some(400), &url, "",
                    false,
                );
                return error_response(400, "malformed body", &e.to_string());
            }
            Ok(r) => r,
        };
        let dup = st.seen_rqg.contains_key(&rqg.request_id);
        Self::trace_control(
            &st, now, ControlIface::RqG, &rqg.request_id, ControlPhase::Request, None, &url,
            &body_text, dup,
        );
        if dup {
            let resp = st.seen_rqg[&rqg.request_id].clone();
            Self::trace_control(
                &st, now, ControlIface::RqG, &rqg.request_id, ControlPhase::Response,
                Some(status_of_response(&resp)), &url, "", true,
            );
            return resp;
        }
        if let Err(e) = rqg.validate() {
            Self::trace_control(
                &st, now, ControlIface::RqG, &rqg.request_id, ControlPhase::Response, Some(400),
                &url, "", false,
            );
            return error_response(400, "invalid request", &e);
        }
        // All-or-nothing image check: nothing is instantiated unless
        // every descriptor references a published image.
        for d in &rqg.vnf_descriptors {
            if !st.store.contains(&d.image_id) {
                Self::trace_control(
                    &st, now, ControlIface::RqG, &rqg.request_id, ControlPhase::Response,
                    Some(400), &url, "", false,
                );
                return error_response(400, "unknown image", &d.image_id);
            }
        }
        let resp = json_response(
            202,
            &json!({ "request_id": rqg.request_id, "status": "accepted" }),
        );
        st.seen_rqg.insert(rqg.request_id.clone(), resp.clone());
        Self::trace_control(
            &st, now, ControlIface::RqG, &rqg.request_id, ControlPhase::Response, Some(202), &url,
            "", false,
        );
        queue(net, &self.me, move |svc, net| svc.start_dispatch(net, rqg));
        resp
    }

    /// Provisions every descriptor of an accepted Rq-G: instantiate at
    /// the core, reserve target capacity via the domain, migrate, and
    /// notify the requester once every descriptor has resolved either way.
    fn start_dispatch(self: Rc<Self>, net: &NetHandle, rqg: VnfRequirementRequest) {
        let descriptors = rqg.vnf_descriptors.clone();
        self.st.borrow_mut().dispatches.insert(
            rqg.request_id.clone(),
            Dispatch {
                domain: rqg.domain,
                reply_url: rqg.reply_url.clone(),
                expected: descriptors.len(),
                results: Vec::new(),
                notified: false,
            },
        );
        for (idx, desc) in descriptors.into_iter().enumerate() {
            let instantiated = {
                let mut st = self.st.borrow_mut();
                let now = net.now_us();
                let GatewayState { core, store, sink, .. } = &mut *st;
                core.instantiate(store, sink, now, &desc)
            };
            match instantiated {
                Err(e) => self.clone().record_result(
                    net,
                    &rqg.request_id,
                    idx,
                    DispatchedInstance {
                        instance_id: String::new(),
                        vnf_type: desc.vnf_type,
                        status: DispatchStatus::Failed,
                        node: None,
                        detail: Some(e.to_string()),
                    },
                ),
                Ok(inst) => {
                    let me = self.clone();
                    let rid = rqg.request_id.clone();
                    let domain = rqg.domain;
                    let iid = inst.instance_id.clone();
                    self.rpc(
                        net,
                        domain,
                        "vnfm.admit",
                        json!({ "instance_id": iid, "descriptor": desc }),
                        move |net, outcome| match outcome {
                            Err(e) => me.record_result(
                                net,
                                &rid,
                                idx,
                                DispatchedInstance {
                                    instance_id: iid,
                                    vnf_type: desc.vnf_type,
                                    status: DispatchStatus::Failed,
                                    node: None,
                                    detail: Some(format!("{}: {}", e.code, e.detail)),
                                },
                            ),
                            Ok(result) => {
                                let node =
                                    result["node_id"].as_str().unwrap_or_default().to_string();
                                me.begin_transfer(net, rid, idx, iid, domain, node, desc.vnf_type);
                            }
                        },
                    );
                }
            }
        }
    }

    fn begin_transfer(
        self: Rc<Self>,
        net: &NetHandle,
        request_id: String,
        idx: usize,
        instance_id: String,
        domain: DomainId,
        node: String,
        vnf_type: VnfType,
    ) {
        let started = {
            let mut st = self.st.borrow_mut();
            let now = net.now_us();
            let GatewayState { core, store, sink, .. } = &mut *st;
            core.start_migration(store, sink, now, &instance_id, domain, &node)
        };
        match started {
            Err(e) => {
                // The domain reserved capacity when it admitted the
                // instance; return it before reporting the failure.
                let me = self.clone();
                let iid = instance_id.clone();
                self.rpc(
                    net,
                    domain,
                    "vnfm.release",
                    json!({ "instance_id": instance_id }),
                    move |net, _| {
                        me.record_result(
                            net,
                            &request_id,
                            idx,
                            DispatchedInstance {
                                instance_id: iid,
                                vnf_type,
                                status: DispatchStatus::Failed,
                                node: None,
                                detail: Some(e.to_string()),
                            },
                        );
                    },
                );
            }
            Ok(ticket) => {
                let me = self.me.clone();
                net.schedule_in(ticket.delay_ms * 1000, move |net| {
                    if let Some(svc) = me.upgrade() {
                        svc.finish_transfer(net, request_id, idx, ticket);
                    }
                });
            }
        }
    }

    fn finish_transfer(
        self: Rc<Self>,
        net: &NetHandle,
        request_id: String,
        idx: usize,
        ticket: MigrationTicket,
    ) {
        enum Outcome {
            Fault(VnfType),
            Adopt { instance: VnfInstance, image: Option<Value> },
        }
        let outcome = {
            let mut st = self.st.borrow_mut();
            let now = net.now_us();
            if st.fail_migrations.remove(&ticket.instance_id) {
                let GatewayState { core, sink, .. } = &mut *st;
                let inst = core
                    .fail_migration(sink, now, &ticket.instance_id)
                    .expect("an in-flight migration can always fault");
                Outcome::Fault(inst.descriptor.vnf_type)
            } else {
                // On a cache miss the image content travels with the
                // completion: fetch it from the central store, mark the
                // domain's cache, and ship the bytes in the adopt call.
                let image = if ticket.cache == CacheLookup::Miss {
                    match st.store.fetch_image(&ticket.image_id) {
                        Err(_) => None,
                        Ok((meta, content)) => {
                            st.store.cache_insert(ticket.target_domain, &ticket.image_id).ok();
                            st.sink.record(
                                now,
                                TraceKind::CacheInsert {
                                    domain: ticket.target_domain,
                                    image_id: ticket.image_id.clone(),
                                    version: meta.version,
                                },
                            );
                            Some(json!({
                                "vnf_type": meta.vnf_type,
                                "version": meta.version,
                                "content": content,
                            }))
                        }
                    }
                } else {
                    None
                };
                let instance = st
                    .core
                    .release_authority(&ticket.instance_id)
                    .expect("a completing migration holds a migrating instance");
                Outcome::Adopt { instance, image }
            }
        };
        let domain = ticket.target_domain;
        match outcome {
            Outcome::Fault(vnf_type) => {
                let me = self.clone();
                let iid = ticket.instance_id.clone();
                self.rpc(
                    net,
                    domain,
                    "vnfm.release",
                    json!({ "instance_id": ticket.instance_id }),
                    move |net, _| {
                        me.record_result(
                            net,
                            &request_id,
                            idx,
                            DispatchedInstance {
                                instance_id: iid.clone(),
                                vnf_type,
                                status: DispatchStatus::Failed,
                                node: None,
                                detail: Some(format!("transfer fault while migrating {iid}")),
                            },
                        );
                    },
                );
            }
            Outcome::Adopt { instance, image } => {
                let me = self.clone();
                let iid = instance.instance_id.clone();
                let vnf_type = instance.descriptor.vnf_type;
                let node = ticket.target_node.clone();
                let mut params = json!({
                    "instance": instance,
                    "node_id": ticket.target_node,
                    "config": {},
                });
                if let Some(img) = image {
                    params["image"] = img;
                }
                self.rpc(net, domain, "vnfm.adopt", params, move |net, outcome| {
                    let result = match outcome {
                        Ok(_) => DispatchedInstance {
                            instance_id: iid,
                            vnf_type,
                            status: DispatchStatus::Ready,
                            node: Some(node),
                            detail: None,
                        },
                        Err(e) => DispatchedInstance {
                            instance_id: iid,
                            vnf_type,
                            status: DispatchStatus::Failed,
                            node: None,
                            detail: Some(format!("{}: {}", e.code, e.detail)),
                        },
                    };
                    me.record_result(net, &request_id, idx, result);
                });
            }
        }
    }

    fn record_result(
        self: Rc<Self>,
        net: &NetHandle,
        request_id: &str,
        idx: usize,
        result: DispatchedInstance,
    ) {
        let notify: Option<(String, Vec<u8>)> = {
            let mut st = self.st.borrow_mut();
            let Some(d) = st.dispatches.get_mut(request_id) else { return };
            d.results.push((idx, result));
            if d.results.len() == d.expected && !d.notified {
                d.notified = true;
                d.results.sort_by_key(|(i, _)| *i);
                let notification = DispatchNotification {
                    request_id: request_id.to_string(),
                    domain: d.domain,
                    instances: d.results.iter().map(|(_, r)| r.clone()).collect(),
                };
                Some((
                    d.reply_url.clone(),
                    serde_json::to_vec(&notification).expect("notification serializes"),
                ))
            } else {
                None
            }
        };
        if let Some((url, body)) = notify {
            net.post(&url, "application/json", &body, None);
        }
    }

    /// Calls one of a provider domain's management methods over the RPC
    /// surface.
    fn rpc(
        self: &Rc<Self>,
        net: &NetHandle,
        domain: DomainId,
        method: &str,
        params: Value,
        on_result: impl FnOnce(&NetHandle, Result<Value, RpcError>) + 'static,
    ) {
        let (url, id) = {
            let mut st = self.st.borrow_mut();
            st.rpc_seq += 1;
            let base = st
                .domain_urls
                .get(&domain)
                .unwrap_or_else(|| panic!("no URL configured for domain {domain}"))
                .clone();
            (format!("{base}/rpc"), st.rpc_seq)
        };
        let body = serde_json::to_vec(&RpcRequest { method: method.to_string(), params, id })
            .expect("rpc request serializes");
        net.post(
            &url,
            "application/json",
            &body,
            Some(Box::new(move |net, resp| {
                let parsed: RpcResponse = serde_json::from_slice(&resp.body)
                    .unwrap_or_else(|e| panic!("malformed rpc response: {e}"));
                let outcome = match parsed.error {
                    Some(err) => Err(err),
                    None => Ok(parsed.result.unwrap_or(Value::Null)),
                };
                on_result(net, outcome);
            })),
        );
    }

    fn handle_rpc(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let call: RpcRequest = match serde_json::from_slice(&req.body) {
            Ok(c) => c,
            Err(e) => return error_response(400, "malformed rpc", &e.to_string()),
        };
        let mut st = self.st.borrow_mut();
        let now = net.now_us();
        let url = format!("http://{}/rpc", st.authority);
        let tag = format!("{}#{}", call.method, call.id);
        Self::trace_control(
            &st, now, ControlIface::Rpc, &tag, ControlPhase::Request, None, &url,
            &call.params.to_string(), false,
        );
        let outcome: Result<Value, RpcError> = match call.method.as_str() {
            "fault.fail_migration" => {
                let iid = call.params["instance_id"].as_str().unwrap_or_default().to_string();
                st.sink.record(
                    now,
                    TraceKind::FaultInjected {
                        fault: "transfer_fault".into(),
                        target: iid.clone(),
                    },
                );
                st.fail_migrations.insert(iid);
                Ok(json!({ "ok": true }))
            }
            "nfvi.report_state" => Ok(serde_json::to_value(st.core.nfvi().report_domain(now))
                .expect("report serializes")),
            other => Err(RpcError { code: "unknown_method".into(), detail: other.to_string() }),
        };
        let resp = RpcResponse {
            result: outcome.as_ref().ok().cloned(),
            error: outcome.err(),
            id: call.id,
        };
        Self::trace_control(
            &st, now, ControlIface::Rpc, &tag, ControlPhase::Response, Some(200), &url, "", false,
        );
        json_response(200, &serde_json::to_value(&resp).expect("rpc response serializes"))
    }
}

impl Service for GatewayService {
    fn handle(&self, net: &NetHandle, req: ParsedHttpRequest) -> Vec<u8> {
        match (req.method.as_str(), req.path.as_str()) {
            ("POST", "/rq-g") => self.handle_rq_g(net, &req),
            ("POST", "/rpc") => self.handle_rpc(net, &req),
            ("GET", "/health") => health_response(),
            ("GET", "/admin/trace") => {
                let st = self.st.borrow();
                frame_http_response(
                    200,
                    "OK",
                    Some("application/jsonl"),
                    crate::trace::to_jsonl(&st.sink.events()).as_bytes(),
                )
            }
            (m, p) if p == "/rq-g" || p == "/rpc" => {
                error_response(405, "method not allowed", &format!("{m} {p}"))
            }
            (_, p) => error_response(404, "unknown route", p),
        }
    }
}

// ---------------------------------------------------------------------------
// VWSN provider domain service
// ---------------------------------------------------------------------------

pub struct VwsnParams {
    pub domain: DomainId,
    /// Authority this service answers as, e.g. "vwsn1:8080".
    pub authority: String,
    /// Base URL of the gateway provider, e.g. "http://gateway:8080".
    pub gateway_url: String,
    /// This domain's VNF catalog (its information-model processor and its
    /// protocol converter), requested in full on every service request.
    pub descriptors: Vec<VnfDescriptor>,
    pub mano: DomainMano,
    /// Domain-local image cache backing store.
    pub cache_store: ImageStore,
}

struct Provision {
    req: ServiceRequest,
    status: ProvisionStatus,
}

#[derive(Debug, Clone, PartialEq)]
enum ProvisionStatus {
    Pending,
    Ready { service_id: String },
    Rejected,
}

struct ChainRuntime {
    pools: StagePools,
    target_url: String,
    record: ServiceChain,
}

struct VwsnState {
    domain: DomainId,
    authority: String,
    gateway_url: String,
    descriptors: Vec<VnfDescriptor>,
    mano: DomainMano,
    cache_store: ImageStore,
    sink: TraceSink,
    brand: SensorBrand,
    provisions: BTreeMap<String, Provision>,
    /// Rq-G request_id -> originating Rq-S request_id.
    rqg_to_rid: BTreeMap<String, String>,
    /// Rq-G request_id -> VNF type, for in-flight scale-ups.
    scale_reqs: BTreeMap<String, VnfType>,
    /// G-I request_id -> response bytes to replay on duplicates.
    replay_gi: BTreeMap<String, Vec<u8>>,
    chains: BTreeMap<String, ChainRuntime>,
    type_to_service: BTreeMap<VnfType, String>,
    /// (service_id, sensor key) -> last assigned ingest ordinal.
    ingest_seq: BTreeMap<(String, String), u64>,
    trace_ctr: u64,
    scale_ctr: u64,
    chain_ctr: u64,
    stopped: bool,
}

pub struct VwsnService {
    me: Weak<VwsnService>,
    st: RefCell<VwsnState>,
}

impl VwsnService {
    pub fn new(params: VwsnParams, sink: TraceSink) -> Rc<Self> {
        let brand = match params.domain {
            DomainId::Vwsn2 => SensorBrand::BrandB,
            _ => SensorBrand::BrandA,
        };
        Rc::new_cyclic(|me| VwsnService {
            me: me.clone(),
            st: RefCell::new(VwsnState {
                domain: params.domain,
                authority: params.authority,
                gateway_url: params.gateway_url,
                descriptors: params.descriptors,
                mano: params.mano,
                cache_store: params.cache_store,
                sink,
                brand,
                provisions: BTreeMap::new(),
                rqg_to_rid: BTreeMap::new(),
                scale_reqs: BTreeMap::new(),
                replay_gi: BTreeMap::new(),
                chains: BTreeMap::new(),
                type_to_service: BTreeMap::new(),
                ingest_seq: BTreeMap::new(),
                trace_ctr: 0,
                scale_ctr: 0,
                chain_ctr: 0,
                stopped: false,
            }),
        })
    }

    pub fn register(self: &Rc<Self>, net: &NetHandle) {
        let authority = self.st.borrow().authority.clone();
        net.register(&authority, self.clone() as Rc<dyn Service>);
    }

    /// Arms the once-per-second reconcile loop.
    pub fn start(self: &Rc<Self>, net: &NetHandle) {
        let me = self.me.clone();
        net.schedule_in(1_000_000, move |net| {
            if let Some(svc) = me.upgrade() {
                svc.reconcile_tick(net);
            }
        });
    }

    /// Stops the reconcile loop and any future scale requests; already
    /// scheduled network events still drain.
    pub fn stop(&self) {
        self.st.borrow_mut().stopped = true;
    }

    pub fn with_mano<R>(&self, f: impl FnOnce(&DomainMano) -> R) -> R {
        f(&self.st.borrow().mano)
    }

    /// The live service backed by instances of `vnf_type`, if any.
    pub fn service_id_for(&self, vnf_type: VnfType) -> Option<String> {
        self.st.borrow().type_to_service.get(&vnf_type).cloned()
    }

    /// Chain record (assembled stages) of a live service.
    pub fn chain_record(&self, service_id: &str) -> Option<ServiceChain> {
        self.st.borrow().chains.get(service_id).map(|c| c.record.clone())
    }

    /// Instances currently routable for a stage of a live service.
    pub fn pool_members(&self, service_id: &str, stage: usize) -> Vec<String> {
        self.st
            .borrow()
            .chains
            .get(service_id)
            .map(|c| c.pools.members(stage).to_vec())
            .unwrap_or_default()
    }

    fn trace_control(
        st: &VwsnState,
        now_us: u64,
        iface: ControlIface,
        request_id: &str,
        phase: ControlPhase,
        status: Option<u16>,
        url: &str,
        body: &str,
        dup: bool,
    ) {
        st.sink.record(
            now_us,
            TraceKind::Control {
                iface,
                request_id: request_id.to_string(),
                subject: st.domain.to_string(),
                phase,
                status,
                url: url.to_string(),
                body: body.to_string(),
                dup,
            },
        );
    }

    // -- Rq-S -----------------------------------------------------------------

    fn handle_rq_s(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let mut st = self.st.borrow_mut();
        let now = net.now_us();
        let url = format!("http://{}/rq-s", st.authority);
        let body_text = String::from_utf8_lossy(&req.body).to_string();
        let sreq: ServiceRequest = match serde_json::from_slice(&req.body) {
            Err(e) => {
                Self::trace_control(
                    &st, now, ControlIface::RqS, "", ControlPhase::Request, None, &url,
                    &body_text, false,
                );
                Self::trace_control(
                    &st, now, ControlIface::RqS, "", ControlPhase::Response, Some(400), &url, "",
                    false,
                );
                return error_response(400, "malformed body", &e.to_string());
            }
            Ok(r) => r,
        };
        let dup = st.provisions.contains_key(&sreq.request_id);
        Self::trace_control(
            &st, now, ControlIface::RqS, &sreq.request_id, ControlPhase::Request, None, &url,
            &body_text, dup,
        );
        if dup {
            // A duplicate service request is a conflict, not a replay:
            // the original is in flight (or already answered via ACK) and
            // no second provisioning round may start.
            Self::trace_control(
                &st, now, ControlIface::RqS, &sreq.request_id, ControlPhase::Response, Some(409),
                &url, "", true,
            );
            return error_response(409, "duplicate request_id", &sreq.request_id);
        }
        if let Err(e) = sreq.validate() {
            Self::trace_control(
                &st, now, ControlIface::RqS, &sreq.request_id, ControlPhase::Response, Some(400),
                &url, "", false,
            );
            return error_response(400, "invalid request", &e);
        }
        let rid = sreq.request_id.clone();
        st.provisions
            .insert(rid.clone(), Provision { req: sreq, status: ProvisionStatus::Pending });
        let resp = json_response(202, &json!({ "request_id": rid, "status": "accepted" }));
        Self::trace_control(
            &st, now, ControlIface::RqS, &rid, ControlPhase::Response, Some(202), &url, "", false,
        );
        queue(net, &self.me, move |svc, net| svc.send_rq_g(net, rid));
        resp
    }

    /// One gateway request per service request, carrying every descriptor
    /// this domain needs for a chain.
    fn send_rq_g(self: Rc<Self>, net: &NetHandle, rid: String) {
        let (url, body) = {
            let mut st = self.st.borrow_mut();
            let rqg_id = format!("rqg-{rid}");
            st.rqg_to_rid.insert(rqg_id.clone(), rid.clone());
            let rqg = VnfRequirementRequest {
                request_id: rqg_id,
                domain: st.domain,
                vnf_descriptors: st.descriptors.clone(),
                reply_url: format!("http://{}/g-i", st.authority),
            };
            (
                format!("{}/rq-g", st.gateway_url),
                serde_json::to_vec(&rqg).expect("request serializes"),
            )
        };
        let me = self.me.clone();
        net.post(
            &url,
            "application/json",
            &body,
            Some(Box::new(move |net, resp| {
                if resp.status != 202 {
                    if let Some(svc) = me.upgrade() {
                        svc.reject_provision(
                            net,
                            &rid,
                            &format!("gateway refused provisioning ({})", resp.status),
                        );
                    }
                }
            })),
        );
    }

    fn reject_provision(self: Rc<Self>, net: &NetHandle, rid: &str, reason: &str) {
        let post = {
            let mut st = self.st.borrow_mut();
            match Self::reject_ack(&mut st, rid, reason) {
                Some(p) => p,
                None => return,
            }
        };
        net.post(&post.0, "application/json", &post.1, None);
    }

    // -- G-I ------------------------------------------------------------------

    fn handle_g_i(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let (resp, ack_post) = {
            let mut st = self.st.borrow_mut();
            let now = net.now_us();
            let url = format!("http://{}/g-i", st.authority);
            let body_text = String::from_utf8_lossy(&req.body).to_string();
            let note: DispatchNotification = match serde_json::from_slice(&req.body) {
                Err(e) => {
                    Self::trace_control(
                        &st, now, ControlIface::GI, "", ControlPhase::Request, None, &url,
                        &body_text, false,
                    );
                    Self::trace_control(
                        &st, now, ControlIface::GI, "", ControlPhase::Response, Some(400), &url,
                        "", false,
                    );
                    return error_response(400, "malformed body", &e.to_string());
                }
                Ok(n) => n,
            };
            let dup = st.replay_gi.contains_key(&note.request_id);
            Self::trace_control(
                &st, now, ControlIface::GI, &note.request_id, ControlPhase::Request, None, &url,
                &body_text, dup,
            );
            if dup {
                let resp = st.replay_gi[&note.request_id].clone();
                Self::trace_control(
                    &st, now, ControlIface::GI, &note.request_id, ControlPhase::Response,
                    Some(status_of_response(&resp)), &url, "", true,
                );
                return resp;
            }
            let (resp, ack_post) =
                if let Some(rid) = st.rqg_to_rid.get(&note.request_id).cloned() {
                    let ack = Self::finish_provision(&mut st, now, &rid, &note);
                    (json_response(200, &json!({ "status": "ok" })), ack)
                } else if let Some(vnf_type) = st.scale_reqs.remove(&note.request_id) {
                    Self::finish_scale_up(&mut st, now, vnf_type, &note);
                    (json_response(200, &json!({ "status": "ok" })), None)
                } else {
                    Self::trace_control(
                        &st, now, ControlIface::GI, &note.request_id, ControlPhase::Response,
                        Some(404), &url, "", false,
                    );
                    return error_response(404, "unknown request_id", &note.request_id);
                };
            st.replay_gi.insert(note.request_id.clone(), resp.clone());
            Self::trace_control(
                &st, now, ControlIface::GI, &note.request_id, ControlPhase::Response, Some(200),
                &url, "", false,
            );
            (resp, ack_post)
        };
        if let Some((url, body)) = ack_post {
            net.post(&url, "application/json", &body, None);
        }
        resp
    }

    /// Marks a provision rejected and builds the rejection ACK to post.
    fn reject_ack(st: &mut VwsnState, rid: &str, reason: &str) -> Option<(String, Vec<u8>)> {
        let p = st.provisions.get_mut(rid)?;
        if p.status != ProvisionStatus::Pending {
            return None;
        }
        p.status = ProvisionStatus::Rejected;
        let ack = ServiceAck {
            request_id: rid.to_string(),
            status: AckStatus::Rejected,
            reason: Some(reason.to_string()),
            service_endpoint: None,
        };
        Some((
            p.req.app_callback_url.clone(),
            serde_json::to_vec(&ack).expect("ack serializes"),
        ))
    }

    /// Chain assembly after initial provisioning: orders stages by role
    /// (the information-model processor is always stage 0, whatever order
    /// the notification listed), validates the chain, points the
    /// converter at the delivery target, and opens the ingest endpoint.
    /// Returns the ACK to post to the application.
    fn finish_provision(
        st: &mut VwsnState,
        now: u64,
        rid: &str,
        note: &DispatchNotification,
    ) -> Option<(String, Vec<u8>)> {
        if st.provisions.get(rid).is_none() {
            return None;
        }
        if note.instances.iter().any(|i| i.status != DispatchStatus::Ready) {
            // Partial provisioning is useless for a two-stage chain:
            // tear down whatever did come up, then reject.
            for inst in note.instances.iter().filter(|i| i.status == DispatchStatus::Ready) {
                let VwsnState { mano, sink, .. } = &mut *st;
                mano.terminate(sink, now, &inst.instance_id).ok();
            }
            return Self::reject_ack(st, rid, "provisioning incomplete");
        }
        let imp = note.instances.iter().find(|i| i.vnf_type.is_info_model_processor());
        let pc = note.instances.iter().find(|i| i.vnf_type.is_protocol_converter());
        let (Some(imp), Some(pc)) = (imp, pc) else {
            return Self::reject_ack(st, rid, "chain roles missing from dispatch");
        };
        st.chain_ctr += 1;
        let chain_id = format!("chain-{}-{:03}", st.domain, st.chain_ctr);
        let mut stages = Vec::new();
        for iid in [&imp.instance_id, &pc.instance_id] {
            let Some(rec) = st.mano.instance(iid) else {
                let reason = format!("instance {iid} not under domain management");
                return Self::reject_ack(st, rid, &reason);
            };
            let mut rec = rec.clone();
            rec.chain_id = Some(chain_id.clone());
            stages.push(rec);
        }
        let chain = ServiceChain { chain_id, domain: st.domain, stages };
        if let Err(violations) = validate_chain(&chain) {
            let reasons: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Self::reject_ack(st, rid, &format!("invalid chain: {}", reasons.join(", ")));
        }
        // The delivery target lives on the application's host; the
        // callback URL names that host.
        let app_callback = st.provisions[rid].req.app_callback_url.clone();
        let app_host = split_http_url(&app_callback)
            .map(|u| u.host)
            .unwrap_or_else(|_| "app:9000".to_string());
        let target_url = format!("http://{app_host}/measurements");
        let mut cfg = BTreeMap::new();
        cfg.insert(CONFIG_TARGET_URL.to_string(), target_url.clone());
        {
            let VwsnState { mano, sink, .. } = &mut *st;
            if let Err(e) = mano.update(sink, now, &pc.instance_id, cfg) {
                let reason = format!("converter configuration failed: {e}");
                return Self::reject_ack(st, rid, &reason);
            }
        }
        let mut pools = StagePools::new();
        pools.add_member(0, &imp.instance_id);
        pools.add_member(1, &pc.instance_id);
        let service_id = format!("svc-{rid}");
        let ingest_url = format!("http://{}/ingest/{}", st.authority, service_id);
        st.chains
            .insert(service_id.clone(), ChainRuntime { pools, target_url, record: chain });
        st.type_to_service.insert(imp.vnf_type, service_id.clone());
        st.type_to_service.insert(pc.vnf_type, service_id.clone());
        if let Some(p) = st.provisions.get_mut(rid) {
            p.status = ProvisionStatus::Ready { service_id: service_id.clone() };
        }
        st.sink.record(
            now,
            TraceKind::ServiceReady {
                service_id,
                request_id: rid.to_string(),
                ingest_url: ingest_url.clone(),
            },
        );
        let ack = ServiceAck {
            request_id: rid.to_string(),
            status: AckStatus::Ready,
            reason: None,
            service_endpoint: Some(ingest_url),
        };
        Some((app_callback, serde_json::to_vec(&ack).expect("ack serializes")))
    }

    /// Scale-up completion: the new instance was already adopted and is
    /// running; point it at the delivery target (converters) and add it
    /// to the routing pool. A failed dispatch releases the pending slot
    /// so the next reconcile retries.
    fn finish_scale_up(
        st: &mut VwsnState,
        now: u64,
        vnf_type: VnfType,
        note: &DispatchNotification,
    ) {
        for inst in &note.instances {
            if inst.status != DispatchStatus::Ready {
                st.mano.scale_up_failed(vnf_type, 1);
                continue;
            }
            let Some(service_id) = st.type_to_service.get(&vnf_type).cloned() else {
                continue;
            };
            let Some(target) = st.chains.get(&service_id).map(|c| c.target_url.clone()) else {
                continue;
            };
            if vnf_type.is_protocol_converter() {
                let mut cfg = BTreeMap::new();
                cfg.insert(CONFIG_TARGET_URL.to_string(), target);
                let VwsnState { mano, sink, .. } = &mut *st;
                if mano.update(sink, now, &inst.instance_id, cfg).is_err() {
                    continue;
                }
            }
            let stage = if vnf_type.is_info_model_processor() { 0 } else { 1 };
            if let Some(chain) = st.chains.get_mut(&service_id) {
                chain.pools.add_member(stage, &inst.instance_id);
            }
        }
    }

    // -- data plane -------------------------------------------------------------

    fn handle_ingest(&self, net: &NetHandle, req: &ParsedHttpRequest, service_id: &str) -> Vec<u8> {
        let mut st = self.st.borrow_mut();
        let now = net.now_us();
        let (key, imp_id) = {
            let Some(chain) = st.chains.get(service_id) else {
                return error_response(404, "unknown endpoint", service_id);
            };
            let key = peek_sensor_key(st.brand, &req.body).unwrap_or_default();
            let Some(imp_id) = chain.pools.route(0, &key).map(str::to_string) else {
                return error_response(503, "ChainUnavailable", "no running stage-0 instance");
            };
            (key, imp_id)
        };
        let seq = {
            let counter =
                st.ingest_seq.entry((service_id.to_string(), key.clone())).or_insert(0);
            *counter += 1;
            *counter
        };
        st.trace_ctr += 1;
        let trace_id = format!("t-{}-{:08}", st.domain, st.trace_ctr);
        st.sink.record(
            now,
            TraceKind::Ingest {
                service_id: service_id.to_string(),
                sensor_id: key.clone(),
                trace_id: trace_id.clone(),
                seq,
            },
        );
        let msg = VnfMessage::new(req.body.clone())
            .with_meta(META_SENSOR_ID, key)
            .with_meta(META_TRACE_ID, trace_id)
            .with_meta(META_SEQ, seq.to_string())
            .with_meta(META_DOMAIN, st.domain.to_string())
            .with_meta(META_SERVICE_ID, service_id);
        let inbox = format!("http://{}/instances/{}/in", st.authority, imp_id);
        let body = serde_json::to_vec(&msg).expect("message serializes");
        queue(net, &self.me, move |_svc, net| {
            net.post(&inbox, "application/json", &body, None);
        });
        no_content()
    }

    fn handle_instance_in(
        &self,
        net: &NetHandle,
        req: &ParsedHttpRequest,
        instance_id: &str,
    ) -> Vec<u8> {
        let mut st = self.st.borrow_mut();
        let now = net.now_us();
        let msg: VnfMessage = match serde_json::from_slice(&req.body) {
            Ok(m) => m,
            Err(e) => return error_response(400, "malformed message", &e.to_string()),
        };
        let trace_id = msg.meta.get(META_TRACE_ID).cloned().unwrap_or_default();
        let running = st
            .mano
            .instance(instance_id)
            .map(|i| i.state == LifecycleState::Running)
            .unwrap_or(false)
            && st.mano.nfvi().is_running(instance_id);
        if !running {
            st.sink.record(
                now,
                TraceKind::DropMsg {
                    trace_id: Some(trace_id),
                    instance_id: instance_id.to_string(),
                    reason: "instance not running".into(),
                },
            );
            return no_content();
        }
        let vnf_type = st.mano.instance(instance_id).unwrap().descriptor.vnf_type;
        let stage: u32 = if vnf_type.is_info_model_processor() { 0 } else { 1 };
        st.mano.nfvi_mut().record_arrival(instance_id, now).ok();
        st.sink.record(
            now,
            TraceKind::StageEnter {
                trace_id: trace_id.clone(),
                stage,
                instance_id: instance_id.to_string(),
            },
        );
        let mut config = st.mano.nfvi().config_of(instance_id).unwrap_or_default();
        if stage == 1 {
            // Per-message delivery correlation rides as query parameters
            // on the configured target; the converter's framing template
            // itself stays untouched.
            if let Some(base) = config.get(CONFIG_TARGET_URL).cloned() {
                let sep = if base.contains('?') { '&' } else { '?' };
                let sensor = msg.meta.get(META_SENSOR_ID).cloned().unwrap_or_default();
                let seq = msg.meta.get(META_SEQ).cloned().unwrap_or_default();
                config.insert(
                    CONFIG_TARGET_URL.to_string(),
                    format!("{base}{sep}trace_id={trace_id}&sensor_id={sensor}&seq={seq}"),
                );
            }
        }
        let out = match apply_stage(vnf_type, &msg, &config, now) {
            Err(d) => {
                st.sink.record(
                    now,
                    TraceKind::DropMsg {
                        trace_id: Some(trace_id),
                        instance_id: instance_id.to_string(),
                        reason: d.reason,
                    },
                );
                return no_content();
            }
            Ok(o) => o,
        };
        st.sink.record(
            now,
            TraceKind::StageExit {
                trace_id: trace_id.clone(),
                stage,
                instance_id: instance_id.to_string(),
            },
        );
        if stage == 0 {
            let service_id = msg.meta.get(META_SERVICE_ID).cloned().unwrap_or_default();
            let Some(chain) = st.chains.get(&service_id) else {
                st.sink.record(
                    now,
                    TraceKind::DropMsg {
                        trace_id: Some(trace_id),
                        instance_id: instance_id.to_string(),
                        reason: "chain gone".into(),
                    },
                );
                return no_content();
            };
            let sensor = msg.meta.get(META_SENSOR_ID).cloned().unwrap_or_default();
            let Some(pc_id) = chain.pools.route(1, &sensor).map(str::to_string) else {
                st.sink.record(
                    now,
                    TraceKind::DropMsg {
                        trace_id: Some(trace_id),
                        instance_id: instance_id.to_string(),
                        reason: "no running stage-1 instance".into(),
                    },
                );
                return no_content();
            };
            // Between the stages of a brand-B chain the payload travels
            // in the constrained-transport envelope.
            let seq: u64 =
                msg.meta.get(META_SEQ).and_then(|s| s.parse().ok()).unwrap_or_default();
            let hop_payload = if st.domain == DomainId::Vwsn2 {
                coap_wrap(&out.payload, (seq % 65536) as u16)
            } else {
                out.payload.clone()
            };
            let next = VnfMessage { payload: hop_payload, meta: out.meta.clone() };
            let inbox = format!("http://{}/instances/{}/in", st.authority, pc_id);
            let body = serde_json::to_vec(&next).expect("message serializes");
            queue(net, &self.me, move |_svc, net| {
                net.post(&inbox, "application/json", &body, None);
            });
        } else {
            // A converter's output is a complete framed request aimed at
            // the delivery target.
            let framed = out.payload;
            queue(net, &self.me, move |_svc, net| {
                net.post_framed(framed, None);
            });
        }
        no_content()
    }

    // -- scaling loop -----------------------------------------------------------

    fn reconcile_tick(self: Rc<Self>, net: &NetHandle) {
        let cmds = {
            let mut st = self.st.borrow_mut();
            if st.stopped {
                return;
            }
            let now = net.now_us();
            let VwsnState { mano, sink, .. } = &mut *st;
            mano.reconcile(sink, now)
        };
        for cmd in cmds {
            match cmd {
                ReconcileCommand::ScaleUp { vnf_type, count } => {
                    for _ in 0..count {
                        self.clone().send_scale_rq_g(net, vnf_type);
                    }
                }
                ReconcileCommand::ScaleDown { vnf_type, victims } => {
                    let mut st = self.st.borrow_mut();
                    let now = net.now_us();
                    let stage = if vnf_type.is_info_model_processor() { 0 } else { 1 };
                    for victim in victims {
                        // Stop routing to the victim before taking it down.
                        if let Some(sid) = st.type_to_service.get(&vnf_type).cloned() {
                            if let Some(chain) = st.chains.get_mut(&sid) {
                                chain.pools.remove_member(stage, &victim);
                            }
                        }
                        let VwsnState { mano, sink, .. } = &mut *st;
                        mano.terminate(sink, now, &victim).ok();
                    }
                }
            }
        }
        let me = self.me.clone();
        net.schedule_in(1_000_000, move |net| {
            if let Some(svc) = me.upgrade() {
                svc.reconcile_tick(net);
            }
        });
    }

    fn send_scale_rq_g(self: Rc<Self>, net: &NetHandle, vnf_type: VnfType) {
        let (url, body, rqg_id) = {
            let mut st = self.st.borrow_mut();
            let Some(desc) = st.descriptors.iter().find(|d| d.vnf_type == vnf_type).cloned()
            else {
                st.mano.scale_up_failed(vnf_type, 1);
                return;
            };
            st.scale_ctr += 1;
            let rqg_id = format!(
                "scale-{}-{}-{:04}",
                st.domain,
                vnf_type.tag().to_lowercase(),
                st.scale_ctr
            );
            st.scale_reqs.insert(rqg_id.clone(), vnf_type);
            let rqg = VnfRequirementRequest {
                request_id: rqg_id.clone(),
                domain: st.domain,
                vnf_descriptors: vec![desc],
                reply_url: format!("http://{}/g-i", st.authority),
            };
            (
                format!("{}/rq-g", st.gateway_url),
                serde_json::to_vec(&rqg).expect("request serializes"),
                rqg_id,
            )
        };
        let me = self.me.clone();
        net.post(
            &url,
            "application/json",
            &body,
            Some(Box::new(move |_net, resp| {
                if resp.status != 202 {
                    if let Some(svc) = me.upgrade() {
                        let mut st = svc.st.borrow_mut();
                        st.scale_reqs.remove(&rqg_id);
                        st.mano.scale_up_failed(vnf_type, 1);
                    }
                }
            })),
        );
    }

    // -- management RPC surface ---------------------------------------------------

    fn handle_rpc(&self, net: &NetHandle, req: &ParsedHttpRequest) -> Vec<u8> {
        let call: RpcRequest = match serde_json::from_slice(&req.body) {
            Ok(c) => c,
            Err(e) => return error_response(400, "malformed rpc", &e.to_string()),
        };
        let mut st = self.st.borrow_mut();
        let now = net.now_us();
        let url = format!("http://{}/rpc", st.authority);
        let tag = format!("{}#{}", call.method, call.id);
        Self::trace_control(
            &st, now, ControlIface::Rpc, &tag, ControlPhase::Request, None, &url,
            &call.params.to_string(), false,
        );
        let outcome = Self::dispatch_rpc(&mut st, now, &call);
        let resp = RpcResponse {
            result: outcome.as_ref().ok().cloned(),
            error: outcome.err(),
            id: call.id,
        };
        Self::trace_control(
            &st, now, ControlIface::Rpc, &tag, ControlPhase::Response, Some(200), &url, "", false,
        );
        json_response(200, &serde_json::to_value(&resp).expect("rpc response serializes"))
    }

    fn dispatch_rpc(st: &mut VwsnState, now: u64, call: &RpcRequest) -> Result<Value, RpcError> {
        match call.method.as_str() {
            "vnfm.admit" => {
                let instance_id = call.params["instance_id"]
                    .as_str()
                    .ok_or_else(|| rpc_invalid("instance_id missing"))?
                    .to_string();
                let desc: VnfDescriptor =
                    serde_json::from_value(call.params["descriptor"].clone())
                        .map_err(|e| rpc_invalid(&e.to_string()))?;
                let VwsnState { mano, sink, .. } = &mut *st;
                let node = mano.admit(sink, now, &instance_id, &desc).map_err(rpc_mano_error)?;
                Ok(json!({ "node_id": node }))
            }
            "vnfm.adopt" => {
                let inst: VnfInstance = serde_json::from_value(call.params["instance"].clone())
                    .map_err(|e| rpc_invalid(&e.to_string()))?;
                let node_id = call.params["node_id"]
                    .as_str()
                    .ok_or_else(|| rpc_invalid("node_id missing"))?
                    .to_string();
                let config: BTreeMap<String, String> =
                    serde_json::from_value(call.params["config"].clone()).unwrap_or_default();
                if let Some(img) = call.params.get("image").filter(|v| !v.is_null()) {
                    let vnf_type: VnfType = serde_json::from_value(img["vnf_type"].clone())
                        .map_err(|e| rpc_invalid(&e.to_string()))?;
                    let version = img["version"].as_u64().unwrap_or(0) as u32;
                    let content: Vec<u8> = serde_json::from_value(img["content"].clone())
                        .map_err(|e| rpc_invalid(&e.to_string()))?;
                    let image_id = image_id_for_content(&content);
                    if !st.cache_store.contains(&image_id) {
                        st.cache_store
                            .publish_image(vnf_type, version, &content)
                            .map_err(|e| rpc_error("cache_store", &e.to_string()))?;
                    }
                    st.cache_store
                        .cache_insert(st.domain, &image_id)
                        .map_err(|e| rpc_error("cache_store", &e.to_string()))?;
                }
                let VwsnState { mano, sink, cache_store, .. } = &mut *st;
                mano.adopt(cache_store, sink, now, inst, &node_id, config)
                    .map_err(rpc_mano_error)?;
                Ok(json!({ "ok": true }))
            }
            "vnfm.release" => {
                let instance_id = call.params["instance_id"]
                    .as_str()
                    .ok_or_else(|| rpc_invalid("instance_id missing"))?;
                let VwsnState { mano, sink, .. } = &mut *st;
                mano.release_for_instance(sink, now, instance_id).map_err(rpc_mano_error)?;
                Ok(json!({ "ok": true }))
            }
            "vnfm.update" => {
                let instance_id = call.params["instance_id"]
                    .as_str()
                    .ok_or_else(|| rpc_invalid("instance_id missing"))?;
                let config: BTreeMap<String, String> =
                    serde_json::from_value(call.params["config"].clone())
                        .map_err(|e| rpc_invalid(&e.to_string()))?;
                let VwsnState { mano, sink, .. } = &mut *st;
                mano.update(sink, now, instance_id, config).map_err(rpc_mano_error)?;
                Ok(json!({ "ok": true }))
            }
            "vnfm.terminate" => {
                let instance_id = call.params["instance_id"]
                    .as_str()
                    .ok_or_else(|| rpc_invalid("instance_id missing"))?
                    .to_string();
                Self::remove_from_pools(st, &instance_id);
                let VwsnState { mano, sink, .. } = &mut *st;
                mano.terminate(sink, now, &instance_id).map_err(rpc_mano_error)?;
                Ok(json!({ "ok": true }))
            }
            "fault.fail_instance" => {
                let instance_id = call.params["instance_id"]
                    .as_str()
                    .ok_or_else(|| rpc_invalid("instance_id missing"))?
                    .to_string();
                st.sink.record(
                    now,
                    TraceKind::FaultInjected {
                        fault: "instance_fault".into(),
                        target: instance_id.clone(),
                    },
                );
                Self::remove_from_pools(st, &instance_id);
                let VwsnState { mano, sink, .. } = &mut *st;
                mano.fail(sink, now, &instance_id).map_err(rpc_mano_error)?;
                Ok(json!({ "ok": true }))
            }
            "nfvi.report_state" => {
                let report = match call.params.get("node_id").and_then(|v| v.as_str()) {
                    Some(node) => serde_json::to_value(
                        st.mano
                            .nfvi()
                            .report_state(node, now)
                            .map_err(|e| rpc_error("nfvi", &e.to_string()))?,
                    ),
                    None => serde_json::to_value(st.mano.nfvi().report_domain(now)),
                };
                Ok(report.expect("report serializes"))
            }
            other => Err(RpcError { code: "unknown_method".into(), detail: other.to_string() }),
        }
    }

    fn remove_from_pools(st: &mut VwsnState, instance_id: &str) {
        for chain in st.chains.values_mut() {
            chain.pools.remove_member(0, instance_id);
            chain.pools.remove_member(1, instance_id);
        }
    }
}

fn rpc_invalid(detail: &str) -> RpcError {
    RpcError { code: "invalid_params".into(), detail: detail.to_string() }
}

fn rpc_error(code: &str, detail: &str) -> RpcError {
    RpcError { code: code.to_string(), detail: detail.to_string() }
}

fn rpc_mano_error(e: ManoError) -> RpcError {
    let code = match &e {
        ManoError::NoFeasibleNode { .. } => "NoFeasibleNode",
        ManoError::IllegalTransition(_) => "IllegalTransition",
        ManoError::UnknownInstance(_) => "UnknownInstance",
        ManoError::ImageNotFound(_) => "ImageNotFound",
        ManoError::CoreCapacityExhausted { .. } => "CoreCapacityExhausted",
        ManoError::TransferFault(_) => "TransferFault",
        ManoError::Nfvi(NfviError::ImageNotCached { .. }) => "ImageNotCached",
        _ => "mano_error",
    };
    RpcError { code: code.into(), detail: e.to_string() }
}

impl Service for VwsnService {
    fn handle(&self, net: &NetHandle, req: ParsedHttpRequest) -> Vec<u8> {
        let path = req.path.clone();
        match (req.method.as_str(), path.as_str()) {
            ("POST", "/rq-s") => self.handle_rq_s(net, &req),
            ("POST", "/g-i") => self.handle_g_i(net, &req),
            ("POST", "/rpc") => self.handle_rpc(net, &req),
            ("GET", "/health") => health_response(),
            ("GET", "/admin/trace") => {
                let st = self.st.borrow();
                frame_http_response(
                    200,
                    "OK",
                    Some("application/jsonl"),
                    crate::trace::to_jsonl(&st.sink.events()).as_bytes(),
                )
            }
            ("POST", "/admin/stop") => {
                self.stop();
                json_response(200, &json!({ "status": "stopping" }))
            }
            ("POST", p) if p.starts_with("/ingest/") => {
                let sid = p.trim_start_matches("/ingest/").to_string();
                self.handle_ingest(net, &req, &sid)
            }
            ("POST", p) if p.starts_with("/instances/") && p.ends_with("/in") => {
                let iid =
                    p.trim_start_matches("/instances/").trim_end_matches("/in").to_string();
                self.handle_instance_in(net, &req, &iid)
            }
            (m, p) if p == "/rq-s" || p == "/g-i" || p == "/rpc" || p.starts_with("/ingest/") => {
                error_response(405, "method not allowed", &format!("{m} {p}"))
            }
            (_, p) => error_response(404, "unknown route", p),
        }
    }
}
