//! BrandB wire format: an 11-byte binary record with an XOR checksum, plus
//! the raw-ADC-to-physical-value conversion.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! offset 0      magic 0xAD
//! offset 1..3   sensor_id  u16
//! offset 3      sensor_code u8   (0x01 = temperature, 0x02 = humidity)
//! offset 4..6   raw_adc    u16
//! offset 6..10  epoch_s    u32
//! offset 10     checksum   u8 = XOR of bytes 0..10
//! ```

use super::FrameError;
use crate::model::{Quantity, SensorBrand, SensorReading};

pub const BRAND_B_MAGIC: u8 = 0xAD;
pub const BRAND_B_FRAME_LEN: usize = 11;
pub const SENSOR_CODE_TEMPERATURE: u8 = 0x01;
pub const SENSOR_CODE_HUMIDITY: u8 = 0x02;

/// The fields of one BrandB frame, still in raw (unconverted) form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrandBFields {
    pub sensor_id: u16,
    pub sensor_code: u8,
    pub raw_adc: u16,
    pub epoch_s: u32,
}

pub fn quantity_for_sensor_code(code: u8) -> Option<Quantity> {
    match code {
        SENSOR_CODE_TEMPERATURE => Some(Quantity::Temperature),
        SENSOR_CODE_HUMIDITY => Some(Quantity::Humidity),
        _ => None,
    }
}

fn xor_checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0u8, |acc, b| acc ^ b)
}

/// Encodes one frame; the checksum is computed over the first 10 bytes.
pub fn encode_brand_b(fields: &BrandBFields) -> Result<[u8; BRAND_B_FRAME_LEN], FrameError> {
    if quantity_for_sensor_code(fields.sensor_code).is_none() {
        return Err(FrameError::UnknownSensorCode(fields.sensor_code));
    }
    let mut out = [0u8; BRAND_B_FRAME_LEN];
    out[0] = BRAND_B_MAGIC;
    out[1..3].copy_from_slice(&fields.sensor_id.to_be_bytes());
    out[3] = fields.sensor_code;
    out[4..6].copy_from_slice(&fields.raw_adc.to_be_bytes());
    out[6..10].copy_from_slice(&fields.epoch_s.to_be_bytes());
    out[10] = xor_checksum(&out[..10]);
    Ok(out)
}

/// Decodes one frame. The checksum is verified before any field is returned.
pub fn decode_brand_b(bytes: &[u8]) -> Result<BrandBFields, FrameError> {
    if bytes.len() != BRAND_B_FRAME_LEN {
        return Err(FrameError::BadLength { expected: BRAND_B_FRAME_LEN, got: bytes.len() });
    }
    let computed = xor_checksum(&bytes[..10]);
    if computed != bytes[10] {
        return Err(FrameError::ChecksumMismatch { computed, carried: bytes[10] });
    }
    if bytes[0] != BRAND_B_MAGIC {
        return Err(FrameError::BadMagic(bytes[0]));
    }
    let sensor_code = bytes[3];
    if quantity_for_sensor_code(sensor_code).is_none() {
        return Err(FrameError::UnknownSensorCode(sensor_code));
    }
    Ok(BrandBFields {
        sensor_id: u16::from_be_bytes([bytes[1], bytes[2]]),
        sensor_code,
        raw_adc: u16::from_be_bytes([bytes[4], bytes[5]]),
        epoch_s: u32::from_be_bytes(bytes[6..10].try_into().unwrap()),
    })
}

/// Converts a raw ADC count to a physical value.
///
/// Temperature (°C): −39.6 + 0.01·raw. Humidity (%RH):
/// −2.0468 + 0.0367·raw − 1.5955e−6·raw².
pub fn convert_brand_b(raw_adc: u16, sensor_code: u8) -> Result<f64, FrameError> {
    let raw = raw_adc as f64;
    match sensor_code {
        SENSOR_CODE_TEMPERATURE => Ok(-39.6 + 0.01 * raw),
        SENSOR_CODE_HUMIDITY => Ok(-2.0468 + 0.0367 * raw - 1.5955e-6 * raw * raw),
        other => Err(FrameError::UnknownSensorCode(other)),
    }
}

/// Decoded frame → physical reading (timestamp widened to milliseconds).
pub fn reading_from_brand_b(fields: &BrandBFields) -> Result<SensorReading, FrameError> {
    let quantity = quantity_for_sensor_code(fields.sensor_code)
        .ok_or(FrameError::UnknownSensorCode(fields.sensor_code))?;
    let value = convert_brand_b(fields.raw_adc, fields.sensor_code)?;
    if fields.epoch_s == 0 {
        return Err(FrameError::BadTimestamp("epoch_s must be > 0".into()));
    }
    Ok(SensorReading {
        sensor_id: fields.sensor_id.to_string(),
        brand: SensorBrand::BrandB,
        quantity,
        value,
        timestamp_ms: fields.epoch_s as u64 * 1000,
    })
}
