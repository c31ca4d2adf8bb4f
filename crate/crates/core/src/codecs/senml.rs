//! SenML JSON encoding of sensor readings: a flat array of records with the
//! base name on the first record only and a fixed key order
//! (`bn`,) `n`, `u`, `v`, `t` so golden tests can compare bytes.

use crate::model::{SensorReading, ALL_QUANTITIES};
use serde::{Deserialize, Serialize};

const BASE_NAME_PREFIX: &str = "urn:dev:sn:";

/// One SenML record. Field order here is the wire key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenmlRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bn: Option<String>,
    pub n: String,
    pub u: String,
    pub v: f64,
    /// Integer seconds since the Unix epoch.
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SenmlError {
    #[error("empty input")]
    EmptyInput,
    #[error("readings mix sensor ids {0} and {1}")]
    MixedSensorIds(String, String),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Encodes readings from one sensor as a SenML pack.
pub fn encode_senml(readings: &[SensorReading]) -> Result<Vec<u8>, SenmlError> {
    let first = readings.first().ok_or(SenmlError::EmptyInput)?;
    if let Some(other) = readings.iter().find(|r| r.sensor_id != first.sensor_id) {
        return Err(SenmlError::MixedSensorIds(
            first.sensor_id.clone(),
            other.sensor_id.clone(),
        ));
    }
    let records: Vec<SenmlRecord> = readings
        .iter()
        .enumerate()
        .map(|(i, r)| SenmlRecord {
            bn: (i == 0).then(|| format!("{BASE_NAME_PREFIX}{}", r.sensor_id)),
            n: r.quantity.senml_name().to_string(),
            u: r.quantity.senml_unit().to_string(),
            v: r.value,
            t: r.timestamp_ms / 1000,
        })
        .collect();
    serde_json::to_vec(&records).map_err(|e| SenmlError::Json(e.to_string()))
}

/// Parses and fully validates a SenML pack:
/// array non-empty, known keys only, `bn` on the first record exactly,
/// units from the closed set, exactly one value field per record.
pub fn decode_senml(bytes: &[u8]) -> Result<Vec<SenmlRecord>, SenmlError> {
    let raw: Vec<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_slice(bytes).map_err(|e| SenmlError::Json(e.to_string()))?;
    if raw.is_empty() {
        return Err(SenmlError::EmptyInput);
    }
    let units: Vec<&str> = ALL_QUANTITIES.iter().map(|q| q.senml_unit()).collect();
    let mut out = Vec::with_capacity(raw.len());
    for (i, rec) in raw.iter().enumerate() {
        for key in rec.keys() {
            if !matches!(key.as_str(), "bn" | "n" | "u" | "v" | "t") {
                return Err(SenmlError::Schema(format!("record {i}: unknown key {key:?}")));
            }
        }
        let bn = match (i, rec.get("bn")) {
            (0, Some(serde_json::Value::String(s))) => {
                if !s.starts_with(BASE_NAME_PREFIX) || s.len() == BASE_NAME_PREFIX.len() {
                    return Err(SenmlError::Schema(format!("record 0: bad bn {s:?}")));
                }
                Some(s.clone())
            }
            (0, _) => return Err(SenmlError::Schema("record 0: missing bn".into())),
            (_, None) => None,
            (_, Some(_)) => {
                return Err(SenmlError::Schema(format!("record {i}: bn past record 0")));
            }
        };
        let n = rec
            .get("n")
            .and_then(|v| v.as_str())
            .ok_or_else(|| SenmlError::Schema(format!("record {i}: missing n")))?;
        let u = rec
            .get("u")
            .and_then(|v| v.as_str())
            .ok_or_else(|| SenmlError::Schema(format!("record {i}: missing u")))?;
        if !units.contains(&u) {
            return Err(SenmlError::Schema(format!("record {i}: unknown unit {u:?}")));
        }
        let v = rec
            .get("v")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| SenmlError::Schema(format!("record {i}: missing numeric v")))?;
        if !v.is_finite() {
            return Err(SenmlError::Schema(format!("record {i}: non-finite v")));
        }
        let t = rec
            .get("t")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SenmlError::Schema(format!("record {i}: missing integer t")))?;
        out.push(SenmlRecord { bn, n: n.to_string(), u: u.to_string(), v, t });
    }
    Ok(out)
}

/// Extracts the sensor id from a base name like `urn:dev:sn:A1`.
pub fn sensor_id_from_base_name(bn: &str) -> Option<&str> {
    bn.strip_prefix(BASE_NAME_PREFIX).filter(|rest| !rest.is_empty())
}
