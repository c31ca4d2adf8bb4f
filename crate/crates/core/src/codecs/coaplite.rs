//! CoAP-lite transport framing: a fixed 4-byte header (version 1, token
//! length 0, no options) with an optional 0xFF-marked payload.
//!
//! ```text
//! byte 0   (version << 6) | (type << 4) | token_length   version=1, tkl=0
//! byte 1   code                                          0x02 = POST
//! byte 2-3 message_id u16 big-endian
//! byte 4   0xFF payload marker (only when payload non-empty)
//! byte 5.. payload
//! ```

use super::FrameError;

pub const COAP_CODE_POST: u8 = 0x02;
const COAP_VERSION: u8 = 1;
const PAYLOAD_MARKER: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoapType {
    Con = 0,
    Non = 1,
    Ack = 2,
}

impl CoapType {
    fn from_bits(bits: u8) -> Result<CoapType, FrameError> {
        match bits {
            0 => Ok(CoapType::Con),
            1 => Ok(CoapType::Non),
            2 => Ok(CoapType::Ack),
            other => Err(FrameError::UnknownMessageType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoapLiteMessage {
    pub msg_type: CoapType,
    pub code: u8,
    pub message_id: u16,
    pub payload: Vec<u8>,
}

impl CoapLiteMessage {
    pub fn post(message_id: u16, payload: Vec<u8>) -> CoapLiteMessage {
        CoapLiteMessage { msg_type: CoapType::Con, code: COAP_CODE_POST, message_id, payload }
    }
}

pub fn encode_coaplite(msg: &CoapLiteMessage) -> Vec<u8> {
    let header = (COAP_VERSION << 6) | ((msg.msg_type as u8) << 4); // token_length = 0
    let mut out = Vec::with_capacity(4 + msg.payload.len() + 1);
    out.push(header);
    out.push(msg.code);
    out.extend_from_slice(&msg.message_id.to_be_bytes());
    if !msg.payload.is_empty() {
        out.push(PAYLOAD_MARKER);
        out.extend_from_slice(&msg.payload);
    }
    out
}

pub fn decode_coaplite(bytes: &[u8]) -> Result<CoapLiteMessage, FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::TooShort { need: 4, got: bytes.len() });
    }
    let version = bytes[0] >> 6;
    if version != COAP_VERSION {
        return Err(FrameError::BadVersion(version));
    }
    let token_length = bytes[0] & 0x0F;
    if token_length != 0 {
        return Err(FrameError::BadTokenLength(token_length));
    }
    let msg_type = CoapType::from_bits((bytes[0] >> 4) & 0x03)?;
    let code = bytes[1];
    let message_id = u16::from_be_bytes([bytes[2], bytes[3]]);
    let payload = match bytes.len() {
        4 => Vec::new(),
        5 if bytes[4] == PAYLOAD_MARKER => return Err(FrameError::MarkerWithoutPayload),
        _ => {
            if bytes[4] != PAYLOAD_MARKER {
                return Err(FrameError::MissingPayloadMarker);
            }
            bytes[5..].to_vec()
        }
    };
    Ok(CoapLiteMessage { msg_type, code, message_id, payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn post_with_payload_reference_bytes() {
        // (CON, POST, id=1, payload "x"):
        //   header (1<<6)|(0<<4)|0 = 0x40, code 0x02, id 0x0001, 0xFF, 'x'.
        let msg = CoapLiteMessage::post(1, b"x".to_vec());
        assert_eq!(encode_coaplite(&msg), vec![0x40, 0x02, 0x00, 0x01, 0xFF, 0x78]);
    }

    #[test]
    fn empty_ack_reference_bytes() {
        // (ACK, code 0, id=1, empty): header (1<<6)|(2<<4)|0 = 0x60; no marker.
        let msg = CoapLiteMessage {
            msg_type: CoapType::Ack,
            code: 0,
            message_id: 1,
            payload: Vec::new(),
        };
        assert_eq!(encode_coaplite(&msg), vec![0x60, 0x00, 0x00, 0x01]);
    }

    #[test]
    fn version_2_is_rejected() {
        assert_eq!(
            decode_coaplite(&[0x80, 0x02, 0x00, 0x01]),
            Err(FrameError::BadVersion(2))
        );
    }

    #[test]
    fn nonzero_token_length_is_rejected() {
        assert_eq!(
            decode_coaplite(&[0x42, 0x02, 0x00, 0x01]),
            Err(FrameError::BadTokenLength(2))
        );
    }

    #[test]
    fn reserved_type_bits_are_rejected() {
        // type bits 3 (RST) are outside the supported set.
        assert_eq!(
            decode_coaplite(&[0x70, 0x02, 0x00, 0x01]),
            Err(FrameError::UnknownMessageType(3))
        );
    }

    #[test]
    fn payload_without_marker_is_rejected() {
        assert_eq!(
            decode_coaplite(&[0x40, 0x02, 0x00, 0x01, 0x78, 0x79]),
            Err(FrameError::MissingPayloadMarker)
        );
    }

    #[test]
    fn marker_without_payload_is_rejected() {
        assert_eq!(
            decode_coaplite(&[0x40, 0x02, 0x00, 0x01, 0xFF]),
            Err(FrameError::MarkerWithoutPayload)
        );
    }

    #[test]
    fn short_input_is_rejected() {
        assert_eq!(
            decode_coaplite(&[0x40, 0x02, 0x00]),
            Err(FrameError::TooShort { need: 4, got: 3 })
        );
    }

    proptest! {
        #[test]
        fn round_trip(
            type_idx in 0u8..3,
            code in any::<u8>(),
            message_id in any::<u16>(),
            payload in proptest::collection::vec(any::<u8>(), 0..256),
        ) {
            let msg = CoapLiteMessage {
                msg_type: CoapType::from_bits(type_idx).unwrap(),
                code,
                message_id,
                payload,
            };
            prop_assert_eq!(decode_coaplite(&encode_coaplite(&msg)).unwrap(), msg);
        }
    }
}
