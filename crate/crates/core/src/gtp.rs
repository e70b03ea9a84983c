//! GTP-U (GPRS Tunnelling Protocol, user plane, version 1) codec.
//!
//! Only the subset needed to carry UE IP packets across the emulated S1-U
//! hop is supported: G-PDU and Echo Request/Response. Extension headers are
//! rejected rather than skipped.
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! | Ver |P|*|E|S|N| Message Type  |            Length             |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                Tunnel Endpoint Identifier (TEID)              |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |   Sequence Number (opt)       | N-PDU (opt)   | Next Ext (opt)|
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```
//!
//! `Length` counts every octet after the first eight, including the
//! optional block when any of E/S/PN is set.

use std::fmt;

use thiserror::Error;

/// Default UDP port for GTP-U.
pub const GTPU_PORT: u16 = 2152;

/// Size of the mandatory header.
pub const MANDATORY_HEADER_LEN: usize = 8;

/// Size of the optional sequence/N-PDU/next-extension block.
pub const OPTIONAL_BLOCK_LEN: usize = 4;

/// Largest value the 16-bit length field can carry.
pub const MAX_LENGTH_FIELD: usize = u16::MAX as usize;

const VERSION: u8 = 1;
const FLAG_PT: u8 = 0b0001_0000;
const FLAG_SPARE: u8 = 0b0000_1000;
const FLAG_E: u8 = 0b0000_0100;
const FLAG_S: u8 = 0b0000_0010;
const FLAG_PN: u8 = 0b0000_0001;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GtpError {
    #[error("truncated GTP-U packet: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported GTP version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported protocol type (GTP' is not handled)")]
    UnsupportedProtocolType,
    #[error("length field {declared} does not match {actual} trailing bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("extension headers are not supported")]
    UnsupportedExtension,
    #[error("unsupported GTP-U message type {0}")]
    UnsupportedMessageType(u8),
    #[error("reserved header bit is set")]
    ReservedBitSet,
    #[error("payload of {0} bytes does not fit the 16-bit length field")]
    OversizedPayload(usize),
    #[error("TEID 0 is only valid for Echo messages")]
    ZeroTeid,
}

/// 32-bit tunnel demultiplexing key.
#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Default,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(transparent)]
pub struct TunnelEndpointId(pub u32);

impl TunnelEndpointId {
    pub const ZERO: TunnelEndpointId = TunnelEndpointId(0);

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for TunnelEndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TunnelEndpointId {
    fn from(v: u32) -> Self {
        TunnelEndpointId(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    EchoRequest,
    EchoResponse,
    GPdu,
}

impl MessageType {
    pub fn code(self) -> u8 {
        match self {
            MessageType::EchoRequest => 1,
            MessageType::EchoResponse => 2,
            MessageType::GPdu => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(MessageType::EchoRequest),
            2 => Some(MessageType::EchoResponse),
            255 => Some(MessageType::GPdu),
            _ => None,
        }
    }

    pub fn is_echo(self) -> bool {
        matches!(self, MessageType::EchoRequest | MessageType::EchoResponse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoKind {
    Request,
    Response,
}

/// The 4-octet block present whenever S or PN is set. Fields are kept raw
/// so a decoded packet re-encodes to the same bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OptionalFields {
    pub sequence: u16,
    pub npdu_number: u8,
    pub next_extension: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtpuHeader {
    pub message_type: MessageType,
    pub has_sequence: bool,
    pub has_npdu: bool,
    pub teid: TunnelEndpointId,
    /// Present iff `has_sequence || has_npdu`.
    pub optional: Option<OptionalFields>,
}

impl GtpuHeader {
    pub fn version(&self) -> u8 {
        VERSION
    }

    pub fn protocol_type(&self) -> u8 {
        1
    }

    /// Always false: extension headers are never emitted or accepted.
    pub fn has_extension(&self) -> bool {
        false
    }

    pub fn sequence(&self) -> Option<u16> {
        if self.has_sequence {
            self.optional.map(|o| o.sequence)
        } else {
            None
        }
    }

    pub fn header_len(&self) -> usize {
        MANDATORY_HEADER_LEN
            + if self.optional.is_some() {
                OPTIONAL_BLOCK_LEN
            } else {
                0
            }
    }

    fn first_octet(&self) -> u8 {
        let mut b = (VERSION << 5) | FLAG_PT;
        if self.has_sequence {
            b |= FLAG_S;
        }
        if self.has_npdu {
            b |= FLAG_PN;
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtpuPacket {
    pub header: GtpuHeader,
    pub payload: Vec<u8>,
}

impl GtpuPacket {
    /// Value of the length field: everything after the mandatory 8 octets.
    pub fn length(&self) -> usize {
        self.header.header_len() - MANDATORY_HEADER_LEN + self.payload.len()
    }

    pub fn encoded_len(&self) -> usize {
        self.header.header_len() + self.payload.len()
    }

    pub fn is_gpdu(&self) -> bool {
        self.header.message_type == MessageType::GPdu
    }

    pub fn encode(&self) -> Result<Vec<u8>, GtpError> {
        let length = self.length();
        if length > MAX_LENGTH_FIELD {
            return Err(GtpError::OversizedPayload(self.payload.len()));
        }
        if self.header.message_type == MessageType::GPdu && self.header.teid.is_zero() {
            return Err(GtpError::ZeroTeid);
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.header.first_octet());
        out.push(self.header.message_type.code());
        out.extend_from_slice(&(length as u16).to_be_bytes());
        out.extend_from_slice(&self.header.teid.0.to_be_bytes());
        if let Some(opt) = self.header.optional {
            out.extend_from_slice(&opt.sequence.to_be_bytes());
            out.push(opt.npdu_number);
            out.push(opt.next_extension);
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

/// Size on the wire of a plain G-PDU carrying `inner_len` bytes.
pub fn gpdu_len(inner_len: usize) -> usize {
    MANDATORY_HEADER_LEN + inner_len
}

/// Encapsulates an inner IP packet in a G-PDU with no optional fields.
pub fn encode_gpdu(teid: TunnelEndpointId, inner_packet: &[u8]) -> Result<Vec<u8>, GtpError> {
    if teid.is_zero() {
        return Err(GtpError::ZeroTeid);
    }
    if inner_packet.len() > MAX_LENGTH_FIELD {
        return Err(GtpError::OversizedPayload(inner_packet.len()));
    }
    let mut out = Vec::with_capacity(gpdu_len(inner_packet.len()));
    out.push((VERSION << 5) | FLAG_PT);
    out.push(MessageType::GPdu.code());
    out.extend_from_slice(&(inner_packet.len() as u16).to_be_bytes());
    out.extend_from_slice(&teid.0.to_be_bytes());
    out.extend_from_slice(inner_packet);
    Ok(out)
}

/// Builds an Echo Request or Response with TEID 0 and the sequence number
/// carried in the optional block.
pub fn make_echo(kind: EchoKind, sequence: u16) -> Vec<u8> {
    let message_type = match kind {
        EchoKind::Request => MessageType::EchoRequest,
        EchoKind::Response => MessageType::EchoResponse,
    };
    let packet = GtpuPacket {
        header: GtpuHeader {
            message_type,
            has_sequence: true,
            has_npdu: false,
            teid: TunnelEndpointId::ZERO,
            optional: Some(OptionalFields {
                sequence,
                ..Default::default()
            }),
        },
        payload: Vec::new(),
    };
    packet.encode().expect("echo packets always fit")
}

/// Decodes a GTP-U datagram. Total over arbitrary input: anything that would
/// not re-encode to the identical bytes is rejected.
pub fn decode(bytes: &[u8]) -> Result<GtpuPacket, GtpError> {
    if bytes.len() < MANDATORY_HEADER_LEN {
        return Err(GtpError::Truncated {
            needed: MANDATORY_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let flags = bytes[0];
    let version = flags >> 5;
    if version != VERSION {
        return Err(GtpError::UnsupportedVersion(version));
    }
    if flags & FLAG_PT == 0 {
        return Err(GtpError::UnsupportedProtocolType);
    }
    if flags & FLAG_SPARE != 0 {
        return Err(GtpError::ReservedBitSet);
    }
    if flags & FLAG_E != 0 {
        return Err(GtpError::UnsupportedExtension);
    }
    let message_type =
        MessageType::from_code(bytes[1]).ok_or(GtpError::UnsupportedMessageType(bytes[1]))?;
    let declared = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    let teid = TunnelEndpointId(u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]));

    let trailing = bytes.len() - MANDATORY_HEADER_LEN;
    if trailing < declared {
        return Err(GtpError::Truncated {
            needed: MANDATORY_HEADER_LEN + declared,
            available: bytes.len(),
        });
    }
    if trailing > declared {
        return Err(GtpError::LengthMismatch {
            declared,
            actual: trailing,
        });
    }

    let has_sequence = flags & FLAG_S != 0;
    let has_npdu = flags & FLAG_PN != 0;
    let mut offset = MANDATORY_HEADER_LEN;
    let optional = if has_sequence || has_npdu {
        if declared < OPTIONAL_BLOCK_LEN {
            return Err(GtpError::LengthMismatch {
                declared,
                actual: trailing,
            });
        }
        let o = &bytes[offset..offset + OPTIONAL_BLOCK_LEN];
        offset += OPTIONAL_BLOCK_LEN;
        Some(OptionalFields {
            sequence: u16::from_be_bytes([o[0], o[1]]),
            npdu_number: o[2],
            next_extension: o[3],
        })
    } else {
        None
    };

    if message_type == MessageType::GPdu && teid.is_zero() {
        return Err(GtpError::ZeroTeid);
    }

    Ok(GtpuPacket {
        header: GtpuHeader {
            message_type,
            has_sequence,
            has_npdu,
            teid,
            optional,
        },
        payload: bytes[offset..].to_vec(),
    })
}
