//! BrandA wire format: a human-readable CSV line with a length prefix.
//!
//! Transport frame: 2-byte big-endian length prefix, then the ASCII line
//! `SPOT,<sensor_id>,<qty_code>,<value>,<epoch_ms>\n`. The prefix counts the
//! line bytes (including the trailing newline). The value always carries
//! exactly 2 fraction digits.

use super::FrameError;
use crate::model::{Quantity, SensorBrand, SensorReading};

/// Encodes a reading as one length-prefixed BrandA frame.
///
/// The value is rounded to 2 fraction digits on the wire; callers that need
/// lossless round trips must quantize values to hundredths first.
pub fn encode_brand_a(reading: &SensorReading) -> Result<Vec<u8>, FrameError> {
    if !reading.value.is_finite() {
        return Err(FrameError::BadValue("value not finite".into()));
    }
    if reading.sensor_id.is_empty()
        || reading.sensor_id.contains(',')
        || reading.sensor_id.contains('\n')
        || !reading.sensor_id.is_ascii()
    {
        return Err(FrameError::MalformedLine(
            "sensor_id must be non-empty ASCII without ',' or newline".into(),
        ));
    }
    if reading.timestamp_ms == 0 {
        return Err(FrameError::BadTimestamp("timestamp must be > 0".into()));
    }
    let line = format!(
        "SPOT,{},{},{:.2},{}\n",
        reading.sensor_id,
        reading.quantity.brand_a_code(),
        reading.value,
        reading.timestamp_ms
    );
    if line.len() > u16::MAX as usize {
        return Err(FrameError::MalformedLine("line exceeds 65535 bytes".into()));
    }
    let mut out = Vec::with_capacity(2 + line.len());
    out.extend_from_slice(&(line.len() as u16).to_be_bytes());
    out.extend_from_slice(line.as_bytes());
    Ok(out)
}

/// Decodes one length-prefixed BrandA frame into a reading.
pub fn decode_brand_a(bytes: &[u8]) -> Result<SensorReading, FrameError> {
    if bytes.len() < 2 {
        return Err(FrameError::TooShort { need: 2, got: bytes.len() });
    }
    let prefix = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    let body = &bytes[2..];
    if body.len() != prefix {
        return Err(FrameError::LengthMismatch { prefix, body: body.len() });
    }
    if !body.is_ascii() {
        return Err(FrameError::MalformedLine("non-ASCII byte in line".into()));
    }
    let line = std::str::from_utf8(body)
        .map_err(|_| FrameError::MalformedLine("invalid UTF-8".into()))?;
    let line = line
        .strip_suffix('\n')
        .ok_or_else(|| FrameError::MalformedLine("missing trailing newline".into()))?;
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 {
        return Err(FrameError::MalformedLine(format!(
            "expected 5 comma-separated fields, got {}",
            fields.len()
        )));
    }
    if fields[0] != "SPOT" {
        return Err(FrameError::MalformedLine(format!("bad leader {:?}", fields[0])));
    }
    let sensor_id = fields[1];
    if sensor_id.is_empty() {
        return Err(FrameError::MalformedLine("empty sensor_id".into()));
    }
    let quantity = Quantity::from_brand_a_code(fields[2])
        .ok_or_else(|| FrameError::UnknownQuantityCode(fields[2].to_string()))?;
    let value = parse_two_fraction_digits(fields[3])?;
    let timestamp_ms: u64 = fields[4]
        .parse()
        .map_err(|_| FrameError::BadTimestamp(fields[4].to_string()))?;
    if timestamp_ms == 0 {
        return Err(FrameError::BadTimestamp("timestamp must be > 0".into()));
    }
    Ok(SensorReading {
        sensor_id: sensor_id.to_string(),
        brand: SensorBrand::BrandA,
        quantity,
        value,
        timestamp_ms,
    })
}

/// Parses a decimal with exactly 2 fraction digits (optionally negative).
fn parse_two_fraction_digits(s: &str) -> Result<f64, FrameError> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int_part, frac_part) = digits
        .split_once('.')
        .ok_or_else(|| FrameError::BadValue(format!("{s:?}: missing fraction")))?;
    let well_formed = !int_part.is_empty()
        && frac_part.len() == 2
        && int_part.bytes().all(|b| b.is_ascii_digit())
        && frac_part.bytes().all(|b| b.is_ascii_digit());
    if !well_formed {
        return Err(FrameError::BadValue(format!(
            "{s:?}: expected <digits>.<2 digits>"
        )));
    }
    s.parse::<f64>()
        .map_err(|_| FrameError::BadValue(s.to_string()))
}
