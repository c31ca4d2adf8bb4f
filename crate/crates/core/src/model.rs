//! Shared domain types and the VNF lifecycle state machine.
//!
//! Everything here is an immutable value; [`lifecycle_next`] and
//! [`validate_chain`] are pure functions, safe from any number of threads.
//! Transition legality is defined solely by the table in [`lifecycle_next`];
//! every state change anywhere in the system must go through it.

use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Domains, brands, quantities
// ---------------------------------------------------------------------------

/// The four business domains of the deployment topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainId {
    GatewayProvider,
    Vwsn1,
    Vwsn2,
    Application,
}

impl DomainId {
    /// Domains that may host VNF instances.
    pub fn hosts_vnfs(self) -> bool {
        !matches!(self, DomainId::Application)
    }

    /// Sensor-provider domains (the only ones with image caches and chains).
    pub fn is_vwsn(self) -> bool {
        matches!(self, DomainId::Vwsn1 | DomainId::Vwsn2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainId::GatewayProvider => "gateway_provider",
            DomainId::Vwsn1 => "vwsn1",
            DomainId::Vwsn2 => "vwsn2",
            DomainId::Application => "application",
        }
    }
}

impl std::fmt::Display for DomainId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sensor hardware families. BrandA emits CSV-line frames, BrandB emits
/// 11-byte binary frames; VWSN1 hosts only BrandA, VWSN2 only BrandB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorBrand {
    BrandA,
    BrandB,
}

impl SensorBrand {
    /// The provider domain this brand's sensors live in.
    pub fn home_domain(self) -> DomainId {
        match self {
            SensorBrand::BrandA => DomainId::Vwsn1,
            SensorBrand::BrandB => DomainId::Vwsn2,
        }
    }
}

/// Closed set of measured physical quantities; unknown codes are decode errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Temperature,
    Humidity,
    WindSpeed,
    Co2,
    Rainfall,
}

pub const ALL_QUANTITIES: [Quantity; 5] = [
    Quantity::Temperature,
    Quantity::Humidity,
    Quantity::WindSpeed,
    Quantity::Co2,
    Quantity::Rainfall,
];

impl Quantity {
    /// Lowercase record name used in SenML output.
    pub fn senml_name(self) -> &'static str {
        match self {
            Quantity::Temperature => "temperature",
            Quantity::Humidity => "humidity",
            Quantity::WindSpeed => "windspeed",
            Quantity::Co2 => "co2",
            Quantity::Rainfall => "rainfall",
        }
    }

    /// SenML unit string.
    pub fn senml_unit(self) -> &'static str {
        match self {
            Quantity::Temperature => "Cel",
            Quantity::Humidity => "%RH",
            Quantity::WindSpeed => "m/s",
            Quantity::Co2 => "ppm",
            Quantity::Rainfall => "mm",
        }
    }

    /// Field code used in BrandA CSV frames.
    pub fn brand_a_code(self) -> &'static str {
        match self {
            Quantity::Temperature => "temp",
            Quantity::Humidity => "hum",
            Quantity::WindSpeed => "wind",
            Quantity::Co2 => "co2",
            Quantity::Rainfall => "rain",
        }
    }

    pub fn from_brand_a_code(code: &str) -> Option<Quantity> {
        ALL_QUANTITIES.into_iter().find(|q| q.brand_a_code() == code)
    }
}

/// One decoded measurement flowing through the gateway.
/// `value` is in physical units (°C, %RH, m/s, ppm, mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    pub brand: SensorBrand,
    pub quantity: Quantity,
    pub value: f64,
    /// Milliseconds since the Unix epoch; always > 0.
    pub timestamp_ms: u64,
}

impl SensorReading {
    pub fn validate(&self) -> Result<(), String> {
        if !self.value.is_finite() {
            return Err("value not finite".into());
        }
        if self.timestamp_ms == 0 {
            return Err("timestamp must be > 0".into());
        }
        if self.sensor_id.is_empty() {
            return Err("empty sensor_id".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// VNF descriptors and instances
// ---------------------------------------------------------------------------

/// The four gateway functions. Suffix 1 serves VWSN1/BrandA, suffix 2
/// serves VWSN2/BrandB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VnfType {
    InfoModelProcessor1,
    ProtocolConverter1,
    InfoModelProcessor2,
    ProtocolConverter2,
}

pub const ALL_VNF_TYPES: [VnfType; 4] = [
    VnfType::InfoModelProcessor1,
    VnfType::ProtocolConverter1,
    VnfType::InfoModelProcessor2,
    VnfType::ProtocolConverter2,
];

impl VnfType {
    /// True for the information-model processors (always stage 0 of a chain).
    pub fn is_info_model_processor(self) -> bool {
        matches!(self, VnfType::InfoModelProcessor1 | VnfType::InfoModelProcessor2)
    }

    pub fn is_protocol_converter(self) -> bool {
        !self.is_info_model_processor()
    }

    /// The provider domain this function serves.
    pub fn serves_domain(self) -> DomainId {
        match self {
            VnfType::InfoModelProcessor1 | VnfType::ProtocolConverter1 => DomainId::Vwsn1,
            VnfType::InfoModelProcessor2 | VnfType::ProtocolConverter2 => DomainId::Vwsn2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VnfType::InfoModelProcessor1 => "info_model_processor1",
            VnfType::ProtocolConverter1 => "protocol_converter1",
            VnfType::InfoModelProcessor2 => "info_model_processor2",
            VnfType::ProtocolConverter2 => "protocol_converter2",
        }
    }

    /// Short label used in stage tags and generated ids.
    pub fn tag(self) -> &'static str {
        match self {
            VnfType::InfoModelProcessor1 => "IMP1",
            VnfType::ProtocolConverter1 => "PC1",
            VnfType::InfoModelProcessor2 => "IMP2",
            VnfType::ProtocolConverter2 => "PC2",
        }
    }
}

impl std::fmt::Display for VnfType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a gateway function *is*: type, image, resource demand, capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfDescriptor {
    pub vnf_type: VnfType,
    pub image_id: String,
    /// Monotonically increasing per (vnf_type).
    pub version: u32,
    pub cpu_units: u32,
    pub mem_units: u32,
    pub image_size_bytes: u64,
    /// Sustainable throughput of one instance, messages/second.
    pub per_instance_capacity: f64,
}

impl VnfDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.cpu_units == 0 || self.mem_units == 0 {
            return Err("cpu_units and mem_units must be >= 1".into());
        }
        if self.image_size_bytes == 0 {
            return Err("image_size_bytes must be > 0".into());
        }
        if !(self.per_instance_capacity > 0.0) {
            return Err("per_instance_capacity must be > 0".into());
        }
        Ok(())
    }
}

/// VNF lifecycle states. Terminated and Failed are absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Requested,
    Instantiated,
    Migrating,
    Running,
    Terminated,
    Failed,
}

impl LifecycleState {
    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Requested => "requested",
            LifecycleState::Instantiated => "instantiated",
            LifecycleState::Migrating => "migrating",
            LifecycleState::Running => "running",
            LifecycleState::Terminated => "terminated",
            LifecycleState::Failed => "failed",
        }
    }
}

impl std::fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const ALL_STATES: [LifecycleState; 6] = [
    LifecycleState::Requested,
    LifecycleState::Instantiated,
    LifecycleState::Migrating,
    LifecycleState::Running,
    LifecycleState::Terminated,
    LifecycleState::Failed,
];

/// Events that drive the lifecycle machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    InstantiateDone,
    MigrateCmd,
    MigrateDone,
    UpdateCmd,
    TerminateCmd,
    Fault,
}

pub const ALL_EVENTS: [LifecycleEvent; 6] = [
    LifecycleEvent::InstantiateDone,
    LifecycleEvent::MigrateCmd,
    LifecycleEvent::MigrateDone,
    LifecycleEvent::UpdateCmd,
    LifecycleEvent::TerminateCmd,
    LifecycleEvent::Fault,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("illegal lifecycle transition: {state:?} + {event:?}")]
pub struct IllegalTransition {
    pub state: LifecycleState,
    pub event: LifecycleEvent,
}

/// The lifecycle transition table. Pure; the single source of truth for
/// transition legality.
///
/// Legal pairs:
///   Requested    + InstantiateDone → Instantiated
///   Instantiated + MigrateCmd      → Migrating
///   Migrating    + MigrateDone     → Running
///   Running      + UpdateCmd       → Running
///   {Requested, Instantiated, Migrating, Running} + TerminateCmd → Terminated
///   {Requested, Instantiated, Migrating, Running} + Fault        → Failed
///
/// Everything else — including any event on Terminated or Failed — is an
/// IllegalTransition. Running has no MigrateCmd: an instance is migrated
/// exactly once, core → provider domain.
pub fn lifecycle_next(
    state: LifecycleState,
    event: LifecycleEvent,
) -> Result<LifecycleState, IllegalTransition> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    match (state, event) {
        (S::Requested, E::InstantiateDone) => Ok(S::Instantiated),
        (S::Instantiated, E::MigrateCmd) => Ok(S::Migrating),
        (S::Migrating, E::MigrateDone) => Ok(S::Running),
        (S::Running, E::UpdateCmd) => Ok(S::Running),
        (S::Requested | S::Instantiated | S::Migrating | S::Running, E::TerminateCmd) => {
            Ok(S::Terminated)
        }
        (S::Requested | S::Instantiated | S::Migrating | S::Running, E::Fault) => Ok(S::Failed),
        _ => Err(IllegalTransition { state, event }),
    }
}

/// All legal (state, event, successor) triples, enumerated from the table.
pub fn legal_transitions() -> Vec<(LifecycleState, LifecycleEvent, LifecycleState)> {
    let mut out = Vec::new();
    for s in ALL_STATES {
        for e in ALL_EVENTS {
            if let Ok(n) = lifecycle_next(s, e) {
                out.push((s, e, n));
            }
        }
    }
    out
}

/// A running (or formerly running) copy of a VNF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfInstance {
    pub instance_id: String,
    pub descriptor: VnfDescriptor,
    pub state: LifecycleState,
    /// (domain, node_id); none while Requested.
    pub location: Option<(DomainId, String)>,
    pub chain_id: Option<String>,
    /// Messages/second over the load window; 0 unless Running.
    pub observed_load: f64,
}

impl VnfInstance {
    /// A freshly requested instance: no location, no chain, zero load.
    pub fn new(instance_id: impl Into<String>, descriptor: VnfDescriptor) -> Self {
        VnfInstance {
            instance_id: instance_id.into(),
            descriptor,
            state: LifecycleState::Requested,
            location: None,
            chain_id: None,
            observed_load: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Service chains and service requests
// ---------------------------------------------------------------------------

/// An ordered pair [info-model processor, protocol converter] bound to one
/// provider domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceChain {
    pub chain_id: String,
    pub domain: DomainId,
    pub stages: Vec<VnfInstance>,
}

/// Named violations returned by [`validate_chain`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainViolation {
    /// Chain domain is not a VWSN provider domain.
    ChainDomain,
    /// Stage list does not have exactly 2 entries.
    StageCount,
    /// Stage 0 is not an info-model processor or stage 1 is not a protocol
    /// converter.
    StageOrder,
    /// A stage's VNF type serves a different domain than the chain's.
    DomainSuffixMismatch,
    /// A stage instance is not Running.
    StageNotRunning,
}

impl std::fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ChainViolation::ChainDomain => "chain domain",
            ChainViolation::StageCount => "stage count",
            ChainViolation::StageOrder => "stage order",
            ChainViolation::DomainSuffixMismatch => "domain suffix mismatch",
            ChainViolation::StageNotRunning => "stage not running",
        };
        f.write_str(s)
    }
}

/// Checks every chain invariant; `Err` carries one entry per violated
/// invariant.
pub fn validate_chain(chain: &ServiceChain) -> Result<(), Vec<ChainViolation>> {
    let mut violations = Vec::new();
    if !chain.domain.is_vwsn() {
        violations.push(ChainViolation::ChainDomain);
    }
    if chain.stages.len() != 2 {
        violations.push(ChainViolation::StageCount);
    } else {
        let imp = &chain.stages[0];
        let pc = &chain.stages[1];
        if !imp.descriptor.vnf_type.is_info_model_processor()
            || !pc.descriptor.vnf_type.is_protocol_converter()
        {
            violations.push(ChainViolation::StageOrder);
        }
    }
    if chain
        .stages
        .iter()
        .any(|s| s.descriptor.vnf_type.serves_domain() != chain.domain)
    {
        violations.push(ChainViolation::DomainSuffixMismatch);
    }
    if chain.stages.iter().any(|s| s.state != LifecycleState::Running) {
        violations.push(ChainViolation::StageNotRunning);
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// How often an application wants measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionPattern {
    Once,
    Periodic { interval_ms: u64 },
}

/// An application's sensing demand; triggers provisioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub request_id: String,
    pub app_callback_url: String,
    pub quantities: Vec<Quantity>,
    pub pattern: CollectionPattern,
}

impl ServiceRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.request_id.is_empty() {
            return Err("empty request_id".into());
        }
        if self.quantities.is_empty() {
            return Err("quantities must be non-empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.quantities.iter().all(|q| seen.insert(*q)) {
            return Err("quantities must be a set (no duplicates)".into());
        }
        if self.app_callback_url.is_empty() {
            return Err("empty app_callback_url".into());
        }
        if let CollectionPattern::Periodic { interval_ms } = self.pattern {
            if interval_ms < 100 {
                return Err("periodic interval must be >= 100 ms".into());
            }
        }
        Ok(())
    }
}

// ===========================================================================
// Tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use LifecycleEvent as E;
    use LifecycleState as S;

    fn descriptor(vnf_type: VnfType) -> VnfDescriptor {
        VnfDescriptor {
            vnf_type,
            image_id: format!("img-{}", vnf_type.tag()),
            version: 1,
            cpu_units: 1,
            mem_units: 1,
            image_size_bytes: 100_000_000,
            per_instance_capacity: 50.0,
        }
    }

    fn instance(vnf_type: VnfType, state: LifecycleState) -> VnfInstance {
        VnfInstance {
            instance_id: format!("i-{}", vnf_type.tag()),
            descriptor: descriptor(vnf_type),
            state,
            location: Some((vnf_type.serves_domain(), "n0".into())),
            chain_id: None,
            observed_load: 0.0,
        }
    }

    // -- lifecycle table ----------------------------------------------------

    #[test]
    fn lifecycle_tabulated_transitions() {
        assert_eq!(lifecycle_next(S::Requested, E::InstantiateDone), Ok(S::Instantiated));
        assert_eq!(lifecycle_next(S::Instantiated, E::MigrateCmd), Ok(S::Migrating));
        assert_eq!(lifecycle_next(S::Migrating, E::MigrateDone), Ok(S::Running));
        assert_eq!(lifecycle_next(S::Running, E::UpdateCmd), Ok(S::Running));
        for s in [S::Requested, S::Instantiated, S::Migrating, S::Running] {
            assert_eq!(lifecycle_next(s, E::TerminateCmd), Ok(S::Terminated));
            assert_eq!(lifecycle_next(s, E::Fault), Ok(S::Failed));
        }
    }

    #[test]
    fn lifecycle_absorbing_states_reject_everything() {
        for s in [S::Terminated, S::Failed] {
            for e in ALL_EVENTS {
                assert_eq!(lifecycle_next(s, e), Err(IllegalTransition { state: s, event: e }));
            }
        }
    }

    #[test]
    fn lifecycle_exhaustive_6x6_table() {
        // Expected successor for each of the 36 cells; None = IllegalTransition.
        // 4 TerminateCmd + 4 Fault + InstantiateDone + MigrateCmd + MigrateDone
        // + UpdateCmd = 12 legal pairs.
        let expect = |s: S, e: E| -> Option<S> {
            match (s, e) {
                (S::Requested, E::InstantiateDone) => Some(S::Instantiated),
                (S::Instantiated, E::MigrateCmd) => Some(S::Migrating),
                (S::Migrating, E::MigrateDone) => Some(S::Running),
                (S::Running, E::UpdateCmd) => Some(S::Running),
                (S::Requested | S::Instantiated | S::Migrating | S::Running, E::TerminateCmd) => {
                    Some(S::Terminated)
                }
                (S::Requested | S::Instantiated | S::Migrating | S::Running, E::Fault) => {
                    Some(S::Failed)
                }
                _ => None,
            }
        };
        let mut legal = 0;
        for s in ALL_STATES {
            for e in ALL_EVENTS {
                match expect(s, e) {
                    Some(n) => {
                        assert_eq!(lifecycle_next(s, e), Ok(n), "cell ({s:?}, {e:?})");
                        legal += 1;
                    }
                    None => {
                        assert!(lifecycle_next(s, e).is_err(), "cell ({s:?}, {e:?})");
                    }
                }
            }
        }
        assert_eq!(legal, 12);
        assert_eq!(legal_transitions().len(), 12);
    }

    #[test]
    fn lifecycle_is_pure() {
        for s in ALL_STATES {
            for e in ALL_EVENTS {
                assert_eq!(lifecycle_next(s, e), lifecycle_next(s, e));
            }
        }
    }

    #[test]
    fn no_event_sequence_escapes_absorbing_states() {
        // Walk every legal path of length <= 4 from every state; once a walk
        // reaches Terminated or Failed it must never leave.
        fn walk(s: S, depth: u32) {
            if depth == 0 {
                return;
            }
            for e in ALL_EVENTS {
                if let Ok(n) = lifecycle_next(s, e) {
                    if s == S::Terminated || s == S::Failed {
                        panic!("absorbing state {s:?} accepted {e:?}");
                    }
                    walk(n, depth - 1);
                }
            }
        }
        for s in ALL_STATES {
            walk(s, 4);
        }
    }

    // -- chain validation ---------------------------------------------------

    #[test]
    fn valid_chain_passes() {
        let chain = ServiceChain {
            chain_id: "ch-1".into(),
            domain: DomainId::Vwsn1,
            stages: vec![
                instance(VnfType::InfoModelProcessor1, S::Running),
                instance(VnfType::ProtocolConverter1, S::Running),
            ],
        };
        assert_eq!(validate_chain(&chain), Ok(()));
    }

    #[test]
    fn swapped_stages_violate_stage_order() {
        let chain = ServiceChain {
            chain_id: "ch-1".into(),
            domain: DomainId::Vwsn1,
            stages: vec![
                instance(VnfType::ProtocolConverter1, S::Running),
                instance(VnfType::InfoModelProcessor1, S::Running),
            ],
        };
        let violations = validate_chain(&chain).unwrap_err();
        assert!(violations.contains(&ChainViolation::StageOrder));
        assert_eq!(violations.len(), 1);
    }

    #[test]
    fn cross_domain_stage_violates_suffix_match() {
        let chain = ServiceChain {
            chain_id: "ch-1".into(),
            domain: DomainId::Vwsn1,
            stages: vec![
                instance(VnfType::InfoModelProcessor1, S::Running),
                instance(VnfType::ProtocolConverter2, S::Running),
            ],
        };
        let violations = validate_chain(&chain).unwrap_err();
        assert!(violations.contains(&ChainViolation::DomainSuffixMismatch));
    }

    #[test]
    fn non_running_stage_and_bad_count_are_named() {
        let chain = ServiceChain {
            chain_id: "ch-1".into(),
            domain: DomainId::Vwsn2,
            stages: vec![instance(VnfType::InfoModelProcessor2, S::Migrating)],
        };
        let violations = validate_chain(&chain).unwrap_err();
        assert!(violations.contains(&ChainViolation::StageCount));
        assert!(violations.contains(&ChainViolation::StageNotRunning));
    }

    #[test]
    fn chain_in_non_vwsn_domain_is_rejected() {
        let chain = ServiceChain {
            chain_id: "ch-1".into(),
            domain: DomainId::GatewayProvider,
            stages: vec![
                instance(VnfType::InfoModelProcessor1, S::Running),
                instance(VnfType::ProtocolConverter1, S::Running),
            ],
        };
        let violations = validate_chain(&chain).unwrap_err();
        assert!(violations.contains(&ChainViolation::ChainDomain));
    }

    // -- service request validation ------------------------------------------

    #[test]
    fn service_request_validation() {
        let mut req = ServiceRequest {
            request_id: "rqs-1".into(),
            app_callback_url: "http://app:9000".into(),
            quantities: vec![Quantity::Temperature],
            pattern: CollectionPattern::Periodic { interval_ms: 1000 },
        };
        assert!(req.validate().is_ok());

        req.quantities.clear();
        assert!(req.validate().is_err());

        req.quantities = vec![Quantity::Temperature, Quantity::Temperature];
        assert!(req.validate().is_err());

        req.quantities = vec![Quantity::Temperature];
        req.pattern = CollectionPattern::Periodic { interval_ms: 99 };
        assert!(req.validate().is_err());

        req.pattern = CollectionPattern::Once;
        assert!(req.validate().is_ok());
    }

    #[test]
    fn quantity_tables_are_consistent() {
        for q in ALL_QUANTITIES {
            assert_eq!(Quantity::from_brand_a_code(q.brand_a_code()), Some(q));
            assert_eq!(q.senml_name(), q.senml_name().to_lowercase());
        }
        assert_eq!(Quantity::from_brand_a_code("fire"), None);
    }
}
