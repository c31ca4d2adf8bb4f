//! The VNF execution layer: the four concrete gateway functions
//! (two information-model processors, two protocol converters), the static
//! two-stage chain executor, and per-stage instance pools with
//! sensor-affine routing.
//!
//! Handlers are pure: output depends only on (payload, config). A handler
//! failure drops the message (counted by the caller) rather than failing
//! the chain — data-plane errors must never take down the pipeline.

use crate::codecs::{
    decode_brand_a, decode_brand_b, decode_coaplite, encode_senml, frame_http_post,
    reading_from_brand_b, CoapLiteMessage, COAP_CODE_POST,
};
use crate::model::{validate_chain, LifecycleState, ServiceChain, VnfType};
use std::collections::BTreeMap;

/// Meta keys carried across chain stages.
pub const META_SENSOR_ID: &str = "sensor_id";
pub const META_TRACE_ID: &str = "trace_id";
pub const META_SEQ: &str = "seq";
pub const META_DOMAIN: &str = "domain";
/// Comma-separated list of stage tags, in traversal order.
pub const META_STAGES: &str = "stages";

/// A message moving through a service chain: opaque payload bytes plus
/// string metadata (sensor id, trace id, stage history, timestamps).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VnfMessage {
    pub payload: Vec<u8>,
    pub meta: BTreeMap<String, String>,
}

impl VnfMessage {
    pub fn new(payload: Vec<u8>) -> Self {
        VnfMessage { payload, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    /// Stage tags seen so far, oldest first.
    pub fn stages(&self) -> Vec<&str> {
        self.meta
            .get(META_STAGES)
            .map(|s| s.split(',').filter(|p| !p.is_empty()).collect())
            .unwrap_or_default()
    }

    fn push_stage(&mut self, tag: &str, now_us: u64) {
        let entry = self.meta.entry(META_STAGES.to_string()).or_default();
        if !entry.is_empty() {
            entry.push(',');
        }
        entry.push_str(tag);
        self.meta.insert(format!("t_enter_{tag}_us"), now_us.to_string());
    }
}

/// A stage refused the message; it is dropped and counted, not forwarded.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{vnf_type:?} dropped message: {reason}")]
pub struct DropWithError {
    pub vnf_type: VnfType,
    pub reason: String,
}

fn drop_err(vnf_type: VnfType, reason: impl std::fmt::Display) -> DropWithError {
    DropWithError { vnf_type, reason: reason.to_string() }
}

/// BrandA frame -> SenML pack.
pub fn imp1_handle(msg: &VnfMessage) -> Result<VnfMessage, DropWithError> {
    let t = VnfType::InfoModelProcessor1;
    let reading = decode_brand_a(&msg.payload).map_err(|e| drop_err(t, e))?;
    let senml = encode_senml(&[reading]).map_err(|e| drop_err(t, e))?;
    let mut out = msg.clone();
    out.payload = senml;
    Ok(out)
}

/// BrandB frame -> engineering-unit conversion -> SenML pack.
pub fn imp2_handle(msg: &VnfMessage) -> Result<VnfMessage, DropWithError> {
    let t = VnfType::InfoModelProcessor2;
    let fields = decode_brand_b(&msg.payload).map_err(|e| drop_err(t, e))?;
    let reading = reading_from_brand_b(&fields).map_err(|e| drop_err(t, e))?;
    let senml = encode_senml(&[reading]).map_err(|e| drop_err(t, e))?;
    let mut out = msg.clone();
    out.payload = senml;
    Ok(out)
}

/// SenML bytes (BrandA datagram transport) -> HTTP POST to `target`.
/// The pack is treated as an opaque body: protocol conversion, not content
/// inspection.
pub fn pc1_handle(msg: &VnfMessage, target: &str) -> Result<VnfMessage, DropWithError> {
    let t = VnfType::ProtocolConverter1;
    let framed = frame_http_post(target, "application/senml+json", &msg.payload)
        .map_err(|e| drop_err(t, e))?;
    let mut out = msg.clone();
    out.payload = framed;
    Ok(out)
}

/// CoAP-lite POST carrying SenML -> HTTP POST to `target`. The inner body
/// bytes pass through verbatim.
pub fn pc2_handle(msg: &VnfMessage, target: &str) -> Result<VnfMessage, DropWithError> {
    let t = VnfType::ProtocolConverter2;
    let coap = decode_coaplite(&msg.payload).map_err(|e| drop_err(t, e))?;
    if coap.code != COAP_CODE_POST {
        return Err(drop_err(t, format!("unexpected CoAP code {:#2x}", coap.code)));
    }
    let framed = frame_http_post(target, "application/senml+json", &coap.payload)
        .map_err(|e| drop_err(t, e))?;
    let mut out = msg.clone();
    out.payload = framed;
    Ok(out)
}

/// Config key naming the delivery URL for protocol converters.
pub const CONFIG_TARGET_URL: &str = "target_url";

/// Runs one stage: stamps the stage tag and entry timestamp into meta,
/// then dispatches to the concrete handler.
pub fn apply_stage(
    vnf_type: VnfType,
    msg: &VnfMessage,
    config: &BTreeMap<String, String>,
    now_us: u64,
) -> Result<VnfMessage, DropWithError> {
    let mut stamped = msg.clone();
    stamped.push_stage(vnf_type.tag(), now_us);
    match vnf_type {
        VnfType::InfoModelProcessor1 => imp1_handle(&stamped),
        VnfType::InfoModelProcessor2 => imp2_handle(&stamped),
        VnfType::ProtocolConverter1 | VnfType::ProtocolConverter2 => {
            let target = config
                .get(CONFIG_TARGET_URL)
                .ok_or_else(|| drop_err(vnf_type, "no target_url configured"))?;
            if vnf_type == VnfType::ProtocolConverter1 {
                pc1_handle(&stamped, target)
            } else {
                pc2_handle(&stamped, target)
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("chain {chain_id} unavailable: {detail}")]
    ChainUnavailable { chain_id: String, detail: String },
    #[error(transparent)]
    Drop(#[from] DropWithError),
}

/// Wraps SenML bytes in the CoAP-lite envelope used on the VWSN2
/// inter-stage hop.
pub fn coap_wrap(senml: &[u8], message_id: u16) -> Vec<u8> {
    crate::codecs::encode_coaplite(&CoapLiteMessage::post(message_id, senml.to_vec()))
}

/// Synchronous traversal of a static two-stage chain; `target` is the
/// delivery URL the converter frames for. The event-driven pipeline uses
/// [`apply_stage`] per hop instead; this single-call form backs direct
/// invocations and tests.
pub fn chain_execute(
    chain: &ServiceChain,
    msg: VnfMessage,
    target: &str,
    now_us: u64,
) -> Result<VnfMessage, ChainError> {
    if let Err(violations) = validate_chain(chain) {
        return Err(ChainError::ChainUnavailable {
            chain_id: chain.chain_id.clone(),
            detail: violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        });
    }
    for stage in &chain.stages {
        if stage.state != LifecycleState::Running {
            return Err(ChainError::ChainUnavailable {
                chain_id: chain.chain_id.clone(),
                detail: format!("stage {} is {}", stage.instance_id, stage.state),
            });
        }
    }
    let imp = &chain.stages[0];
    let pc = &chain.stages[1];
    let imp_cfg = BTreeMap::new();
    let mut mid = apply_stage(imp.descriptor.vnf_type, &msg, &imp_cfg, now_us)?;
    if pc.descriptor.vnf_type == VnfType::ProtocolConverter2 {
        // The VWSN2 ingress wraps SenML in CoAP-lite before the converter.
        // Message id derives from the per-sensor sequence (deterministic).
        let message_id = msg
            .meta
            .get(META_SEQ)
            .and_then(|s| s.parse::<u64>().ok())
            .map(|s| (s % 65_536) as u16)
            .unwrap_or(0);
        mid.payload = coap_wrap(&mid.payload, message_id);
    }
    let mut pc_cfg = BTreeMap::new();
    pc_cfg.insert(CONFIG_TARGET_URL.to_string(), target.to_string());
    Ok(apply_stage(pc.descriptor.vnf_type, &mid, &pc_cfg, now_us)?)
}

// ---------------------------------------------------------------------------
// Instance pools and sensor-affine routing
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a. Used for per-sensor routing so one sensor's messages
/// always land on the same pool member (preserving per-sensor FIFO).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Ordered instance pools for the two stages of one chain. Members are
/// kept in admission order; scale-down removes the newest member first.
#[derive(Debug, Clone, Default)]
pub struct StagePools {
    stages: [Vec<String>; 2],
}

impl StagePools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self, stage: usize) -> &[String] {
        &self.stages[stage]
    }

    pub fn add_member(&mut self, stage: usize, instance_id: &str) {
        if !self.stages[stage].iter().any(|m| m == instance_id) {
            self.stages[stage].push(instance_id.to_string());
        }
    }

    pub fn remove_member(&mut self, stage: usize, instance_id: &str) -> bool {
        let before = self.stages[stage].len();
        self.stages[stage].retain(|m| m != instance_id);
        self.stages[stage].len() != before
    }

    /// Newest pool member of a stage — the scale-down victim.
    pub fn newest(&self, stage: usize) -> Option<&str> {
        self.stages[stage].last().map(String::as_str)
    }

    pub fn len(&self, stage: usize) -> usize {
        self.stages[stage].len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.iter().all(Vec::is_empty)
    }

    /// Picks the pool member for a sensor: FNV-1a over the sensor id,
    /// modulo pool size. Stable while the pool composition is unchanged.
    pub fn route(&self, stage: usize, sensor_id: &str) -> Option<&str> {
        let pool = &self.stages[stage];
        if pool.is_empty() {
            return None;
        }
        let idx = (fnv1a(sensor_id.as_bytes()) % pool.len() as u64) as usize;
        Some(&pool[idx])
    }
}

/// Extracts the sensor identity from a raw uplink frame without a full
/// decode, for routing ahead of stage 0. Returns `None` when the frame is
/// too mangled even for that (the stage will then drop it with a reason).
pub fn peek_sensor_key(brand: crate::model::SensorBrand, payload: &[u8]) -> Option<String> {
    match brand {
        crate::model::SensorBrand::BrandA => {
            let line = payload.get(2..)?;
            let text = std::str::from_utf8(line).ok()?;
            let field = text.split(',').nth(1)?;
            (!field.is_empty()).then(|| field.to_string())
        }
        crate::model::SensorBrand::BrandB => {
            if payload.len() != crate::codecs::BRAND_B_FRAME_LEN {
                return None;
            }
            Some(u16::from_be_bytes([payload[1], payload[2]]).to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::{
        decode_senml, encode_brand_a, encode_brand_b, encode_coaplite, parse_http_request,
        BrandBFields, SENSOR_CODE_HUMIDITY, SENSOR_CODE_TEMPERATURE,
    };
    use crate::model::{
        DomainId, Quantity, SensorBrand, SensorReading, VnfDescriptor, VnfInstance,
    };
    use proptest::prelude::*;

    fn brand_a_frame(sensor_id: &str, quantity: Quantity, value: f64) -> Vec<u8> {
        encode_brand_a(&SensorReading {
            sensor_id: sensor_id.into(),
            brand: SensorBrand::BrandA,
            quantity,
            value,
            timestamp_ms: 1_700_000_000_000,
        })
        .unwrap()
    }

    fn msg(payload: Vec<u8>) -> VnfMessage {
        VnfMessage::new(payload)
            .with_meta(META_SENSOR_ID, "A1")
            .with_meta(META_TRACE_ID, "t-000001")
            .with_meta(META_SEQ, "1")
    }

    #[test]
    fn imp1_converts_brand_a_to_senml() {
        let out = imp1_handle(&msg(brand_a_frame("A1", Quantity::Temperature, 23.5))).unwrap();
        let records = decode_senml(&out.payload).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].v, 23.5);
        assert_eq!(records[0].u, "Cel");
        assert_eq!(records[0].bn.as_deref(), Some("urn:dev:sn:A1"));

        // Unit table lookup for humidity.
        let out = imp1_handle(&msg(brand_a_frame("A1", Quantity::Humidity, 40.25))).unwrap();
        assert_eq!(decode_senml(&out.payload).unwrap()[0].u, "%RH");
    }

    #[test]
    fn imp1_drops_corrupted_frames() {
        let mut frame = brand_a_frame("A1", Quantity::Temperature, 23.5);
        frame[4] = b'!'; // mangle the line
        let err = imp1_handle(&msg(frame)).unwrap_err();
        assert_eq!(err.vnf_type, VnfType::InfoModelProcessor1);
    }

    #[test]
    fn imp2_converts_and_scales() {
        // raw 6000 => (6000 - 3960) / 100 = 20.4 °C.
        let frame = encode_brand_b(&BrandBFields {
            sensor_id: 7,
            sensor_code: SENSOR_CODE_TEMPERATURE,
            raw_adc: 6000,
            epoch_s: 1_700_000_000,
        })
        .unwrap();
        let out = imp2_handle(&msg(frame.to_vec())).unwrap();
        let rec = &decode_senml(&out.payload).unwrap()[0];
        assert!((rec.v - 20.4).abs() < 1e-9);
        assert_eq!(rec.u, "Cel");
        assert_eq!(rec.bn.as_deref(), Some("urn:dev:sn:7"));

        // raw 1500 => -2.0468 + 0.0367·1500 - 1.5955e-6·1500² = 49.413325 %RH.
        let frame = encode_brand_b(&BrandBFields {
            sensor_id: 7,
            sensor_code: SENSOR_CODE_HUMIDITY,
            raw_adc: 1500,
            epoch_s: 1_700_000_000,
        })
        .unwrap();
        let out = imp2_handle(&msg(frame.to_vec())).unwrap();
        let rec = &decode_senml(&out.payload).unwrap()[0];
        assert!((rec.v - 49.413325).abs() < 1e-9);
        assert_eq!(rec.u, "%RH");
    }

    #[test]
    fn imp2_drops_checksum_corruption() {
        let mut frame = encode_brand_b(&BrandBFields {
            sensor_id: 7,
            sensor_code: SENSOR_CODE_TEMPERATURE,
            raw_adc: 6000,
            epoch_s: 1_700_000_000,
        })
        .unwrap();
        frame[10] ^= 0xFF;
        let err = imp2_handle(&msg(frame.to_vec())).unwrap_err();
        assert_eq!(err.vnf_type, VnfType::InfoModelProcessor2);
        assert!(err.reason.contains("checksum"));
    }

    #[test]
    fn pc1_reframes_opaque_senml() {
        // An empty pack is still re-framed: converters do not inspect content.
        let out = pc1_handle(&msg(b"[]".to_vec()), "http://app:9000/m").unwrap();
        let req = parse_http_request(&out.payload).unwrap();
        assert_eq!(req.path, "/m");
        assert_eq!(req.headers["content-length"], "2");
        assert_eq!(req.headers["content-type"], "application/senml+json");
        assert_eq!(req.body, b"[]");

        // A bad target URL drops the message.
        let err = pc1_handle(&msg(b"[]".to_vec()), "ftp://nope").unwrap_err();
        assert_eq!(err.vnf_type, VnfType::ProtocolConverter1);
    }

    #[test]
    fn pc2_unwraps_coap_and_preserves_body() {
        let senml = br#"[{"bn":"urn:dev:sn:7","n":"temperature","u":"Cel","v":20.4,"t":1}]"#;
        let coap = encode_coaplite(&CoapLiteMessage::post(42, senml.to_vec()));
        let out = pc2_handle(&msg(coap), "http://app:9000/measurements").unwrap();
        let req = parse_http_request(&out.payload).unwrap();
        assert_eq!(req.body, senml);

        // Envelope with the wrong version is dropped.
        let mut bad = encode_coaplite(&CoapLiteMessage::post(42, senml.to_vec()));
        bad[0] = (bad[0] & 0x3F) | (2 << 6);
        assert!(pc2_handle(&msg(bad), "http://app:9000/m").is_err());

        // Non-POST envelopes are refused too.
        let non_post = encode_coaplite(&CoapLiteMessage {
            msg_type: crate::codecs::CoapType::Con,
            code: 0x01, // GET
            message_id: 1,
            payload: senml.to_vec(),
        });
        let err = pc2_handle(&msg(non_post), "http://app:9000/m").unwrap_err();
        assert!(err.reason.contains("code"));
    }

    #[test]
    fn apply_stage_stamps_history() {
        let out = apply_stage(
            VnfType::InfoModelProcessor1,
            &msg(brand_a_frame("A1", Quantity::Temperature, 23.5)),
            &BTreeMap::new(),
            1_500_000,
        )
        .unwrap();
        assert_eq!(out.stages(), vec!["IMP1"]);
        assert_eq!(out.meta["t_enter_IMP1_us"], "1500000");

        // Converters need a configured target.
        let err = apply_stage(VnfType::ProtocolConverter1, &msg(b"[]".to_vec()),
            &BTreeMap::new(), 0).unwrap_err();
        assert!(err.reason.contains("target_url"));
    }

    // -- chain fixtures ----------------------------------------------------

    fn descriptor(vnf_type: VnfType) -> VnfDescriptor {
        VnfDescriptor {
            vnf_type,
            image_id: format!("img-{}", vnf_type.tag().to_lowercase()),
            version: 1,
            cpu_units: 1,
            mem_units: 1,
            image_size_bytes: 100_000_000,
            per_instance_capacity: 50.0,
        }
    }

    fn running_instance(id: &str, vnf_type: VnfType, domain: DomainId) -> VnfInstance {
        let mut inst = VnfInstance::new(id, descriptor(vnf_type));
        inst.state = LifecycleState::Running;
        inst.location = Some((domain, format!("{domain}-node-1")));
        inst.chain_id = Some(format!("chain-{domain}"));
        inst
    }

    const TARGET: &str = "http://app:9000/measurements";

    fn vwsn1_chain() -> ServiceChain {
        ServiceChain {
            chain_id: "chain-vwsn1".into(),
            domain: DomainId::Vwsn1,
            stages: vec![
                running_instance("i-imp1", VnfType::InfoModelProcessor1, DomainId::Vwsn1),
                running_instance("i-pc1", VnfType::ProtocolConverter1, DomainId::Vwsn1),
            ],
        }
    }

    fn vwsn2_chain() -> ServiceChain {
        ServiceChain {
            chain_id: "chain-vwsn2".into(),
            domain: DomainId::Vwsn2,
            stages: vec![
                running_instance("i-imp2", VnfType::InfoModelProcessor2, DomainId::Vwsn2),
                running_instance("i-pc2", VnfType::ProtocolConverter2, DomainId::Vwsn2),
            ],
        }
    }

    #[test]
    fn chain_execute_vwsn1_end_to_end() {
        let out = chain_execute(
            &vwsn1_chain(),
            msg(brand_a_frame("A1", Quantity::Temperature, 23.5)),
            TARGET,
            2_000_000,
        )
        .unwrap();
        // Output is a complete HTTP POST whose body is the SenML pack.
        let req = parse_http_request(&out.payload).unwrap();
        assert_eq!(req.path, "/measurements");
        let records = decode_senml(&req.body).unwrap();
        assert_eq!(records[0].v, 23.5);
        // Stage history is exactly IMP then PC.
        assert_eq!(out.stages(), vec!["IMP1", "PC1"]);
    }

    #[test]
    fn chain_execute_vwsn2_inserts_coap_hop() {
        let frame = encode_brand_b(&BrandBFields {
            sensor_id: 9,
            sensor_code: SENSOR_CODE_TEMPERATURE,
            raw_adc: 6360,
            epoch_s: 1_700_000_000,
        })
        .unwrap();
        let out = chain_execute(&vwsn2_chain(), msg(frame.to_vec()), TARGET, 0).unwrap();
        let req = parse_http_request(&out.payload).unwrap();
        let records = decode_senml(&req.body).unwrap();
        assert!((records[0].v - 24.0).abs() < 1e-9); // (6360-3960)/100
        assert_eq!(out.stages(), vec!["IMP2", "PC2"]);
    }

    #[test]
    fn chain_with_dead_stage_is_unavailable() {
        let mut chain = vwsn1_chain();
        chain.stages[1].state = LifecycleState::Terminated;
        let err = chain_execute(&chain, msg(brand_a_frame("A1", Quantity::Temperature, 1.0)), TARGET, 0)
            .unwrap_err();
        assert!(matches!(err, ChainError::ChainUnavailable { .. }));
    }

    #[test]
    fn chain_drop_propagates() {
        let err = chain_execute(&vwsn1_chain(), msg(b"garbage".to_vec()), TARGET, 0).unwrap_err();
        assert!(matches!(err, ChainError::Drop(_)));
    }

    // -- pools and routing ---------------------------------------------------

    #[test]
    fn fnv1a_known_vectors() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn pool_routing_is_sensor_stable() {
        let mut pools = StagePools::new();
        pools.add_member(0, "i-0001");
        pools.add_member(0, "i-0002");
        pools.add_member(0, "i-0003");
        let first = pools.route(0, "sensor-A").unwrap().to_string();
        for _ in 0..10 {
            assert_eq!(pools.route(0, "sensor-A").unwrap(), first);
        }
        // Removal of the newest member is the scale-down victim rule.
        assert_eq!(pools.newest(0), Some("i-0003"));
        assert!(pools.remove_member(0, "i-0003"));
        assert!(!pools.remove_member(0, "i-0003"));
        assert_eq!(pools.len(0), 2);
        // Empty pools route nowhere.
        assert_eq!(pools.route(1, "sensor-A"), None);
    }

    #[test]
    fn pool_members_are_deduplicated() {
        let mut pools = StagePools::new();
        pools.add_member(0, "i-0001");
        pools.add_member(0, "i-0001");
        assert_eq!(pools.len(0), 1);
    }

    #[test]
    fn peek_matches_full_decode() {
        let frame = brand_a_frame("spot-17", Quantity::WindSpeed, 3.25);
        assert_eq!(peek_sensor_key(SensorBrand::BrandA, &frame).unwrap(), "spot-17");

        let frame = encode_brand_b(&BrandBFields {
            sensor_id: 513,
            sensor_code: SENSOR_CODE_TEMPERATURE,
            raw_adc: 100,
            epoch_s: 5,
        })
        .unwrap();
        assert_eq!(peek_sensor_key(SensorBrand::BrandB, &frame).unwrap(), "513");

        // Garbage yields None rather than a panic.
        assert_eq!(peek_sensor_key(SensorBrand::BrandB, b"xx"), None);
        assert_eq!(peek_sensor_key(SensorBrand::BrandA, &[0xFF, 0xFE, 0xFD]), None);
    }

    proptest! {
        // Handlers are deterministic: same input, same output bytes.
        #[test]
        fn chain_is_deterministic(
            sensor in 1u16..1000,
            raw in 3960u16..6560,
            epoch in 1u32..100_000,
        ) {
            let frame = encode_brand_b(&BrandBFields {
                sensor_id: sensor,
                sensor_code: SENSOR_CODE_TEMPERATURE,
                raw_adc: raw,
                epoch_s: epoch,
            }).unwrap();
            let a = chain_execute(&vwsn2_chain(), msg(frame.to_vec()), TARGET, 7).unwrap();
            let b = chain_execute(&vwsn2_chain(), msg(frame.to_vec()), TARGET, 7).unwrap();
            prop_assert_eq!(a.payload, b.payload);
        }

        // The delivered value equals the IMP-encoded value: no stage
        // mutates v on the way out.
        #[test]
        fn value_is_preserved_end_to_end(cents in -4000i64..12000) {
            let value = cents as f64 / 100.0;
            let out = chain_execute(
                &vwsn1_chain(),
                msg(brand_a_frame("A9", Quantity::Temperature, value)),
                TARGET,
                0,
            ).unwrap();
            let req = parse_http_request(&out.payload).unwrap();
            let records = decode_senml(&req.body).unwrap();
            prop_assert_eq!(records[0].v, value);
        }

        // Per-sensor routing: any pool size, any sensor — stable member
        // choice, and every member is reachable by some index.
        #[test]
        fn routing_is_stable_and_in_range(pool_size in 1usize..10, sensor in "[a-z0-9]{1,12}") {
            let mut pools = StagePools::new();
            for i in 0..pool_size {
                pools.add_member(0, &format!("i-{i:04}"));
            }
            let choice = pools.route(0, &sensor).unwrap().to_string();
            prop_assert!(pools.members(0).contains(&choice));
            prop_assert_eq!(pools.route(0, &sensor).unwrap(), &choice);
        }
    }
}
