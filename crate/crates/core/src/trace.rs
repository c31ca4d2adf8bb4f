//! Structured event trace: every externally observable action in a scenario
//! run is recorded as one `TraceEvent` and serialized as JSON Lines.
//!
//! Determinism contract: identical scenario + seed must produce
//! byte-identical JSONL. All event payloads are plain structs with fixed
//! field order (no hash maps), ids are counter-based, and timestamps come
//! from the scenario clock in microseconds.

use crate::model::{DomainId, LifecycleEvent, LifecycleState, SensorBrand, VnfType};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::{Arc, Mutex};

/// Control interface a message travelled on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlIface {
    /// Application -> provider service request.
    RqS,
    /// Provider -> gateway resource/instantiation request.
    RqG,
    /// Gateway -> provider dispatch notification.
    GI,
    /// Provider -> application acknowledgement.
    Ack,
    /// Internal management RPC (state reports, updates, termination).
    Rpc,
}

impl ControlIface {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlIface::RqS => "rq-s",
            ControlIface::RqG => "rq-g",
            ControlIface::GI => "g-i",
            ControlIface::Ack => "ack",
            ControlIface::Rpc => "rpc",
        }
    }
}

/// Whether a control event records the request leg or the response leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPhase {
    Request,
    Response,
}

/// Cache lookup outcome at migration start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    Hit,
    Miss,
}

/// One trace record. `t_us` is microseconds on the scenario clock; `seq`
/// breaks ties between events at the same instant and is strictly
/// increasing per producing process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_us: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

impl TraceEvent {
    /// Global ordering key for merging traces from several processes.
    pub fn sort_key(&self) -> (u64, u64) {
        (self.t_us, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    ScenarioStart {
        scenario: String,
        seed: u64,
        clock: String,
    },
    NodeUp {
        node: String,
        domain: DomainId,
        cpu: u32,
        mem: u32,
    },
    ImagePublished {
        image_id: String,
        version: u32,
        size_bytes: u64,
        digest: String,
    },
    /// One leg of a control-plane exchange. `status` is present on
    /// responses only; `dup` marks an idempotent replay hit.
    Control {
        iface: ControlIface,
        request_id: String,
        subject: String,
        phase: ControlPhase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<u16>,
        url: String,
        body: String,
        dup: bool,
    },
    ServiceReady {
        service_id: String,
        request_id: String,
        ingest_url: String,
    },
    InitiationTimeout {
        request_id: String,
        last_leg: String,
    },
    Lifecycle {
        instance_id: String,
        vnf_type: VnfType,
        from: LifecycleState,
        event: LifecycleEvent,
        to: LifecycleState,
    },
    Alloc {
        node: String,
        instance_id: String,
        cpu: u32,
        mem: u32,
        free_cpu: u32,
        free_mem: u32,
    },
    Release {
        node: String,
        instance_id: String,
        cpu: u32,
        mem: u32,
        free_cpu: u32,
        free_mem: u32,
    },
    MigrateStart {
        instance_id: String,
        from_node: String,
        to_node: String,
        cache: CacheOutcome,
        delay_us: u64,
    },
    MigrateDone {
        instance_id: String,
        node: String,
    },
    CacheInsert {
        domain: DomainId,
        image_id: String,
        version: u32,
    },
    SensorEmit {
        sensor_id: String,
        brand: SensorBrand,
        /// The sensor's own message counter — distinct from the envelope's
        /// `seq`, which orders trace records.
        #[serde(rename = "msg_seq")]
        seq: u64,
    },
    Ingest {
        service_id: String,
        sensor_id: String,
        trace_id: String,
        #[serde(rename = "msg_seq")]
        seq: u64,
    },
    StageEnter {
        trace_id: String,
        stage: u32,
        instance_id: String,
    },
    StageExit {
        trace_id: String,
        stage: u32,
        instance_id: String,
    },
    DropMsg {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trace_id: Option<String>,
        instance_id: String,
        reason: String,
    },
    Deliver {
        trace_id: String,
        sensor_id: String,
        #[serde(rename = "msg_seq")]
        seq: u64,
        bytes: u64,
    },
    InvalidDelivery {
        reason: String,
    },
    ReconcileAction {
        domain: DomainId,
        vnf_type: String,
        action: String,
        desired: u32,
        running: u32,
        pending: u32,
    },
    InstanceCount {
        domain: DomainId,
        vnf_type: String,
        running: u32,
        pending: u32,
    },
    FaultInjected {
        fault: String,
        target: String,
    },
    ScenarioEnd {
        delivered: u64,
        dropped: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Default)]
struct SinkInner {
    next_seq: u64,
    events: Vec<TraceEvent>,
}

/// Shared, append-only event collector. Clones share the same buffer; the
/// mutex keeps it usable from socket-server threads as well as the
/// single-threaded simulator.
#[derive(Debug, Clone, Default)]
pub struct TraceSink(Arc<Mutex<SinkInner>>);

impl TraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event stamped with the next sequence number; returns it.
    pub fn record(&self, t_us: u64, kind: TraceKind) -> u64 {
        let mut inner = self.0.lock().unwrap();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.events.push(TraceEvent { t_us, seq, kind });
        seq
    }

    /// Snapshot of everything recorded so far.
    pub fn events(&self) -> Vec<TraceEvent> {
        self.0.lock().unwrap().events.clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Merges events from another process, keeping the combined trace
    /// sorted by `(t_us, seq)`.
    pub fn merge(&self, mut foreign: Vec<TraceEvent>) {
        let mut inner = self.0.lock().unwrap();
        inner.events.append(&mut foreign);
        inner.events.sort_by_key(TraceEvent::sort_key);
    }
}

/// Serializes events to JSON Lines (one compact object per line).
pub fn to_jsonl(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&serde_json::to_string(ev).expect("trace events always serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| TraceError::Parse { line: i + 1, source })
        })
        .collect()
}

pub fn write_jsonl(path: &std::path::Path, events: &[TraceEvent]) -> Result<(), TraceError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_jsonl(events).as_bytes())?;
    Ok(())
}

pub fn read_jsonl(path: &std::path::Path) -> Result<Vec<TraceEvent>, TraceError> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}
