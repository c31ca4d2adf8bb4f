//! Bit-exact encoders/decoders for both sensor brands' wire formats, the
//! CoAP-lite and HTTP transport framings, and the SenML JSON information
//! model.
//!
//! Conventions shared by every format:
//! - all multi-byte integers are big-endian on the wire;
//! - decoders never return partially validated data: framing, checksums, and
//!   closed-set codes are checked before any field is surfaced;
//! - all operations are pure and stateless.

mod brand_a;
mod brand_b;
mod coaplite;
mod http;
mod senml;

pub use brand_a::{decode_brand_a, encode_brand_a};
pub use brand_b::{
    decode_brand_b, encode_brand_b, quantity_for_sensor_code, reading_from_brand_b,
    BrandBFields, BRAND_B_FRAME_LEN, BRAND_B_MAGIC, SENSOR_CODE_HUMIDITY,
    SENSOR_CODE_TEMPERATURE,
};
pub use brand_b::convert_brand_b;
pub use coaplite::{decode_coaplite, encode_coaplite, CoapLiteMessage, CoapType, COAP_CODE_POST};
pub use http::{
    frame_http_post, frame_http_response, parse_http_request, parse_http_response,
    split_http_url, total_message_len, ParsedHttpRequest, ParsedHttpResponse, SplitUrl,
};
pub use senml::{decode_senml, encode_senml, sensor_id_from_base_name, SenmlError, SenmlRecord};

/// Errors shared by the transport/wire decoders and encoders.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("input too short: need {need} bytes, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("length mismatch: prefix says {prefix}, body has {body} bytes")]
    LengthMismatch { prefix: usize, body: usize },
    #[error("bad frame length: expected {expected}, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("bad magic byte 0x{0:02X}")]
    BadMagic(u8),
    #[error("checksum mismatch: computed 0x{computed:02X}, frame carries 0x{carried:02X}")]
    ChecksumMismatch { computed: u8, carried: u8 },
    #[error("unknown sensor code 0x{0:02X}")]
    UnknownSensorCode(u8),
    #[error("unknown quantity code {0:?}")]
    UnknownQuantityCode(String),
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("bad value field: {0}")]
    BadValue(String),
    #[error("bad timestamp field: {0}")]
    BadTimestamp(String),
    #[error("unsupported version bits {0}")]
    BadVersion(u8),
    #[error("unsupported token length {0}")]
    BadTokenLength(u8),
    #[error("unknown message type bits {0}")]
    UnknownMessageType(u8),
    #[error("payload bytes present without 0xFF marker")]
    MissingPayloadMarker,
    #[error("payload marker 0xFF present but payload is empty")]
    MarkerWithoutPayload,
    #[error("bad url: {0}")]
    BadUrl(String),
    #[error("malformed http message: {0}")]
    MalformedHttp(String),
}
