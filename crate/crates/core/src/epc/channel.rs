//! Reliable, ordered control channel between emulated UE/eNB and the core.
//!
//! Each frame is a 4-byte big-endian length followed by that many bytes of
//! JSON. Any stream transport works; the daemon uses TCP on loopback.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Released, Session};

/// Frames above this size are refused on both send and receive.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

/// UE signalling carried over the control channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Signal {
    AttachRequest { subscriber_id: String },
    AttachAccept { session: Session },
    DetachRequest { subscriber_id: String },
    DetachAccept { released: Released },
    Reject { cause: String },
}

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    if body.len() > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "frame too large",
        ));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Returns `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn send_message<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &body)
}

pub fn recv_message<R: Read, T: DeserializeOwned>(r: &mut R) -> io::Result<Option<T>> {
    match read_frame(r)? {
        None => Ok(None),
        Some(body) => serde_json::from_slice(&body)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn framing_layout() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"abc").unwrap();
        assert_eq!(buf, [0, 0, 0, 3, b'a', b'b', b'c']);
    }

    #[test]
    fn messages_in_order() {
        let mut buf = Vec::new();
        let a = Signal::AttachRequest {
            subscriber_id: "001010000000001".into(),
        };
        let b = Signal::Reject {
            cause: "nope".into(),
        };
        send_message(&mut buf, &a).unwrap();
        send_message(&mut buf, &b).unwrap();
        let mut cur = Cursor::new(buf);
        assert_eq!(recv_message::<_, Signal>(&mut cur).unwrap(), Some(a));
        assert_eq!(recv_message::<_, Signal>(&mut cur).unwrap(), Some(b));
        assert_eq!(recv_message::<_, Signal>(&mut cur).unwrap(), None);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let mut cur = Cursor::new(vec![0, 0, 0, 9, 1, 2]);
        assert!(read_frame(&mut cur).is_err());
        let mut cur = Cursor::new(vec![0, 0]);
        assert_eq!(
            read_frame(&mut cur).unwrap_err().kind(),
            io::ErrorKind::UnexpectedEof
        );
    }

    #[test]
    fn oversized_frame_refused() {
        let mut cur = Cursor::new(vec![0xFF, 0xFF, 0xFF, 0xFF]);
        assert_eq!(
            read_frame(&mut cur).unwrap_err().kind(),
            io::ErrorKind::InvalidData
        );
    }
}
