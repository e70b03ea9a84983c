//! Inner user-plane datagrams: minimal IPv4/UDP frames that carry chunks of
//! an application byte stream (an HTTP request or response) between the UE
//! and the EPC egress. These are the payloads placed inside G-PDUs.
//!
//! Layout: 20-byte IPv4 header, 8-byte UDP header, 12-byte stream header
//! (`stream_id`, `offset`, `total_len`, all big-endian u32), then data.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use thiserror::Error;

pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const STREAM_HEADER_LEN: usize = 12;
pub const SEGMENT_OVERHEAD: usize = IPV4_HEADER_LEN + UDP_HEADER_LEN + STREAM_HEADER_LEN;

/// Largest inner packet emitted; keeps the encapsulated datagram under a
/// 1500-byte MTU once GTP-U/UDP/IP outer headers are added.
pub const MAX_INNER_PACKET: usize = 1400;
pub const MAX_CHUNK: usize = MAX_INNER_PACKET - SEGMENT_OVERHEAD;

/// UDP port used for the stream transport inside the tunnel.
pub const STREAM_PORT: u16 = 7777;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InnerError {
    #[error("inner packet too short ({0} bytes)")]
    Truncated(usize),
    #[error("not an IPv4/UDP stream segment")]
    NotStream,
    #[error("bad IPv4 header checksum")]
    BadChecksum,
    #[error("segment range exceeds stream length")]
    BadRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub stream_id: u32,
    pub offset: u32,
    pub total_len: u32,
    pub data: Vec<u8>,
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for pair in header.chunks(2) {
        sum += u32::from(u16::from_be_bytes([pair[0], pair[1]]));
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

impl Segment {
    pub fn encode(&self) -> Vec<u8> {
        let total = SEGMENT_OVERHEAD + self.data.len();
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&[0x45, 0x00]);
        out.extend_from_slice(&(total as u16).to_be_bytes());
        // identification carries the low bits of the stream id
        out.extend_from_slice(&(self.stream_id as u16).to_be_bytes());
        out.extend_from_slice(&[0x40, 0x00, 64, 17, 0, 0]);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        let csum = ipv4_checksum(&out[..IPV4_HEADER_LEN]);
        out[10..12].copy_from_slice(&csum.to_be_bytes());

        let udp_len = (total - IPV4_HEADER_LEN) as u16;
        out.extend_from_slice(&STREAM_PORT.to_be_bytes());
        out.extend_from_slice(&STREAM_PORT.to_be_bytes());
        out.extend_from_slice(&udp_len.to_be_bytes());
        out.extend_from_slice(&[0, 0]);

        out.extend_from_slice(&self.stream_id.to_be_bytes());
        out.extend_from_slice(&self.offset.to_be_bytes());
        out.extend_from_slice(&self.total_len.to_be_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Segment, InnerError> {
        if bytes.len() < SEGMENT_OVERHEAD {
            return Err(InnerError::Truncated(bytes.len()));
        }
        if bytes[0] != 0x45 || bytes[9] != 17 {
            return Err(InnerError::NotStream);
        }
        let total = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
        if total != bytes.len() {
            return Err(InnerError::Truncated(bytes.len()));
        }
        if ipv4_checksum(&bytes[..IPV4_HEADER_LEN]) != 0 {
            return Err(InnerError::BadChecksum);
        }
        let u32_at =
            |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let src = Ipv4Addr::from(u32_at(12));
        let dst = Ipv4Addr::from(u32_at(16));
        let base = IPV4_HEADER_LEN + UDP_HEADER_LEN;
        let seg = Segment {
            src,
            dst,
            stream_id: u32_at(base),
            offset: u32_at(base + 4),
            total_len: u32_at(base + 8),
            data: bytes[SEGMENT_OVERHEAD..].to_vec(),
        };
        if u64::from(seg.offset) + seg.data.len() as u64 > u64::from(seg.total_len) {
            return Err(InnerError::BadRange);
        }
        Ok(seg)
    }
}

/// Splits a stream into inner packets of at most [`MAX_INNER_PACKET`] bytes.
/// An empty stream still produces one (header-only) packet.
pub fn segment(src: Ipv4Addr, dst: Ipv4Addr, stream_id: u32, data: &[u8]) -> Vec<Vec<u8>> {
    let total_len = data.len() as u32;
    if data.is_empty() {
        return vec![Segment {
            src,
            dst,
            stream_id,
            offset: 0,
            total_len,
            data: Vec::new(),
        }
        .encode()];
    }
    data.chunks(MAX_CHUNK)
        .enumerate()
        .map(|(i, chunk)| {
            Segment {
                src,
                dst,
                stream_id,
                offset: (i * MAX_CHUNK) as u32,
                total_len,
                data: chunk.to_vec(),
            }
            .encode()
        })
        .collect()
}

/// Inner packet sizes [`segment`] would produce for a stream of `len` bytes,
/// without materializing them.
pub fn segment_sizes(len: usize) -> impl Iterator<Item = usize> {
    let full = len / MAX_CHUNK;
    let rem = len % MAX_CHUNK;
    let tail = if len == 0 || rem != 0 {
        Some(rem + SEGMENT_OVERHEAD)
    } else {
        None
    };
    std::iter::repeat_n(MAX_INNER_PACKET, full).chain(tail)
}

/// Collects segments per stream until every byte is present.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: HashMap<u32, Partial>,
}

#[derive(Debug)]
struct Partial {
    total_len: usize,
    received: usize,
    chunks: BTreeMap<u32, Vec<u8>>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the full stream once its last missing byte arrives.
    pub fn push(&mut self, seg: Segment) -> Option<Vec<u8>> {
        let entry = self
            .partial
            .entry(seg.stream_id)
            .or_insert_with(|| Partial {
                total_len: seg.total_len as usize,
                received: 0,
                chunks: BTreeMap::new(),
            });
        if !entry.chunks.contains_key(&seg.offset) {
            entry.received += seg.data.len();
            entry.chunks.insert(seg.offset, seg.data);
        }
        if entry.received < entry.total_len {
            return None;
        }
        let done = self.partial.remove(&seg.stream_id)?;
        let mut out = Vec::with_capacity(done.total_len);
        for (_, chunk) in done.chunks {
            out.extend_from_slice(&chunk);
        }
        Some(out)
    }

    pub fn forget(&mut self, stream_id: u32) {
        self.partial.remove(&stream_id);
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }
}
