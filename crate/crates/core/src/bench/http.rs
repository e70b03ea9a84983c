//! Just enough HTTP/1.1 framing for requests and responses that travel as
//! byte streams inside the tunnel.

pub fn build_request(host: &str, path: &str) -> Vec<u8> {
    format!("GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: keep-alive\r\n\r\n").into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHead {
    pub method: String,
    pub path: String,
    pub host: String,
}

pub fn parse_request(bytes: &[u8]) -> Option<RequestHead> {
    let text = std::str::from_utf8(bytes).ok()?;
    let head = text.split("\r\n\r\n").next()?;
    let mut lines = head.split("\r\n");
    let mut first = lines.next()?.split(' ');
    let method = first.next()?.to_string();
    let path = first.next()?.to_string();
    if !first.next()?.starts_with("HTTP/1.") {
        return None;
    }
    let host = lines
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.eq_ignore_ascii_case("host"))
        .map(|(_, v)| v.trim().to_string())?;
    Some(RequestHead { method, path, host })
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        404 => "Not Found",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

/// Status line and headers for a response with a `body_len`-byte body.
pub fn response_head(status: u16, body_len: usize) -> Vec<u8> {
    format!(
        "HTTP/1.1 {status} {}\r\nContent-Length: {body_len}\r\nConnection: keep-alive\r\n\r\n",
        reason(status)
    )
    .into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseHead {
    pub status: u16,
    pub content_length: usize,
    pub head_len: usize,
}

pub fn parse_response_head(bytes: &[u8]) -> Option<ResponseHead> {
    let end = bytes.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
    let text = std::str::from_utf8(&bytes[..end]).ok()?;
    let mut lines = text.split("\r\n");
    let status = lines.next()?.split(' ').nth(1)?.parse().ok()?;
    let content_length = lines
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.trim().parse().ok())?;
    Some(ResponseHead {
        status,
        content_length,
        head_len: end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_roundtrip() {
        let r = build_request("blob-server.edge.local", "/blob1m");
        assert_eq!(
            parse_request(&r),
            Some(RequestHead {
                method: "GET".into(),
                path: "/blob1m".into(),
                host: "blob-server.edge.local".into()
            })
        );
        assert_eq!(parse_request(b"garbage"), None);
    }

    #[test]
    fn response_head_roundtrip() {
        let mut r = response_head(200, 5);
        let head_len = r.len();
        r.extend_from_slice(b"hello");
        assert_eq!(
            parse_response_head(&r),
            Some(ResponseHead {
                status: 200,
                content_length: 5,
                head_len
            })
        );
    }
}
