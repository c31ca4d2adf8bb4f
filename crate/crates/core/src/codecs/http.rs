//! Minimal HTTP/1.1 framing for the control and data planes.
//!
//! Requests and responses are built byte-for-byte (fixed header order,
//! explicit `Content-Length`, CRLF line endings) and parsed back with full
//! validation, so every hop in the emulator exercises the real wire format
//! whether messages travel in-process or over TCP.

use super::FrameError;
use std::collections::BTreeMap;

/// URL split into the pieces the framer needs: `host` keeps an explicit
/// port (it becomes the `Host` header verbatim), `path_and_query` always
/// starts with `/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitUrl {
    pub host: String,
    pub path_and_query: String,
}

/// Splits an `http://` URL. Anything else (missing scheme, https, empty
/// authority) is a framing error.
pub fn split_http_url(url: &str) -> Result<SplitUrl, FrameError> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| FrameError::BadUrl(url.to_string()))?;
    if rest.is_empty() {
        return Err(FrameError::BadUrl(url.to_string()));
    }
    let (host, path_and_query) = match rest.find('/') {
        Some(idx) => (&rest[..idx], &rest[idx..]),
        None => (rest, "/"),
    };
    if host.is_empty() {
        return Err(FrameError::BadUrl(url.to_string()));
    }
    Ok(SplitUrl { host: host.to_string(), path_and_query: path_and_query.to_string() })
}

/// Frames a POST request. Header order is fixed: Host, Content-Type,
/// Content-Length.
pub fn frame_http_post(url: &str, content_type: &str, body: &[u8]) -> Result<Vec<u8>, FrameError> {
    let split = split_http_url(url)?;
    let mut out = Vec::with_capacity(96 + body.len());
    out.extend_from_slice(
        format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: {}\r\nContent-Length: {}\r\n\r\n",
            split.path_and_query,
            split.host,
            content_type,
            body.len()
        )
        .as_bytes(),
    );
    out.extend_from_slice(body);
    Ok(out)
}

/// Frames a response. `Content-Type` is emitted only when given; the
/// `Content-Length` header is always present, even for empty bodies.
pub fn frame_http_response(
    status: u16,
    reason: &str,
    content_type: Option<&str>,
    body: &[u8],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + body.len());
    out.extend_from_slice(format!("HTTP/1.1 {status} {reason}\r\n").as_bytes());
    if let Some(ct) = content_type {
        out.extend_from_slice(format!("Content-Type: {ct}\r\n").as_bytes());
    }
    out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", body.len()).as_bytes());
    out.extend_from_slice(body);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedHttpRequest {
    pub method: String,
    pub path: String,
    /// Header names lowercased; last occurrence wins.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedHttpResponse {
    pub status: u16,
    pub reason: String,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n").map(|i| i + 4)
}

fn parse_head(head: &str) -> Result<(String, BTreeMap<String, String>), FrameError> {
    let mut lines = head.split("\r\n");
    let start_line = lines
        .next()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| FrameError::MalformedHttp("empty start line".into()))?
        .to_string();
    let mut headers = BTreeMap::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| FrameError::MalformedHttp(format!("header without colon: {line:?}")))?;
        if name.is_empty() || name.contains(' ') {
            return Err(FrameError::MalformedHttp(format!("bad header name: {name:?}")));
        }
        headers.insert(name.to_ascii_lowercase(), value.trim().to_string());
    }
    Ok((start_line, headers))
}

fn body_from(buf: &[u8], head_end: usize, headers: &BTreeMap<String, String>) -> Result<Vec<u8>, FrameError> {
    let declared: usize = match headers.get("content-length") {
        Some(v) => v
            .parse()
            .map_err(|_| FrameError::MalformedHttp(format!("bad content-length: {v:?}")))?,
        None => 0,
    };
    let got = buf.len() - head_end;
    if got != declared {
        return Err(FrameError::MalformedHttp(format!(
            "content-length {declared} but body has {got} bytes"
        )));
    }
    Ok(buf[head_end..].to_vec())
}

/// Parses a complete request. The buffer must contain the message exactly:
/// header block plus `Content-Length` bytes of body, nothing more.
pub fn parse_http_request(buf: &[u8]) -> Result<ParsedHttpRequest, FrameError> {
    let head_end =
        find_header_end(buf).ok_or_else(|| FrameError::MalformedHttp("no header terminator".into()))?;
    let head = std::str::from_utf8(&buf[..head_end - 4])
        .map_err(|_| FrameError::MalformedHttp("head is not UTF-8".into()))?;
    let (start_line, headers) = parse_head(head)?;
    let mut parts = start_line.split(' ');
    let (method, path, version) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(p), Some(v), None) if !m.is_empty() && p.starts_with('/') => (m, p, v),
        _ => return Err(FrameError::MalformedHttp(format!("bad request line: {start_line:?}"))),
    };
    if version != "HTTP/1.1" {
        return Err(FrameError::MalformedHttp(format!("bad version: {version:?}")));
    }
    let body = body_from(buf, head_end, &headers)?;
    Ok(ParsedHttpRequest { method: method.to_string(), path: path.to_string(), headers, body })
}

/// Parses a complete response; same exact-length contract as requests.
pub fn parse_http_response(buf: &[u8]) -> Result<ParsedHttpResponse, FrameError> {
    let head_end =
        find_header_end(buf).ok_or_else(|| FrameError::MalformedHttp("no header terminator".into()))?;
    let head = std::str::from_utf8(&buf[..head_end - 4])
        .map_err(|_| FrameError::MalformedHttp("head is not UTF-8".into()))?;
    let (start_line, headers) = parse_head(head)?;
    let rest = start_line
        .strip_prefix("HTTP/1.1 ")
        .ok_or_else(|| FrameError::MalformedHttp(format!("bad status line: {start_line:?}")))?;
    let (code, reason) = rest
        .split_once(' ')
        .ok_or_else(|| FrameError::MalformedHttp(format!("bad status line: {start_line:?}")))?;
    let status: u16 = code
        .parse()
        .map_err(|_| FrameError::MalformedHttp(format!("bad status code: {code:?}")))?;
    if !(100..=599).contains(&status) {
        return Err(FrameError::MalformedHttp(format!("status out of range: {status}")));
    }
    let body = body_from(buf, head_end, &headers)?;
    Ok(ParsedHttpResponse { status, reason: reason.to_string(), headers, body })
}

/// For incremental socket reads: once `buf` holds a complete header block,
/// returns the total message length (head + declared body). `None` until
/// enough bytes have arrived to know.
pub fn total_message_len(buf: &[u8]) -> Option<usize> {
    let head_end = find_header_end(buf)?;
    let head = std::str::from_utf8(&buf[..head_end - 4]).ok()?;
    let declared: usize = head
        .split("\r\n")
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length").then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    Some(head_end + declared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn post_frame_golden_bytes() {
        let frame = frame_http_post("http://app:9000/measurements", "application/senml+json", b"[]")
            .unwrap();
        assert_eq!(
            std::str::from_utf8(&frame).unwrap(),
            "POST /measurements HTTP/1.1\r\n\
             Host: app:9000\r\n\
             Content-Type: application/senml+json\r\n\
             Content-Length: 2\r\n\r\n[]"
        );
    }

    #[test]
    fn response_frame_golden_bytes() {
        let frame = frame_http_response(202, "Accepted", Some("application/json"), b"{}");
        assert_eq!(
            std::str::from_utf8(&frame).unwrap(),
            "HTTP/1.1 202 Accepted\r\nContent-Type: application/json\r\nContent-Length: 2\r\n\r\n{}"
        );
        // Empty body still carries an explicit zero length.
        let frame = frame_http_response(204, "No Content", None, b"");
        assert_eq!(
            std::str::from_utf8(&frame).unwrap(),
            "HTTP/1.1 204 No Content\r\nContent-Length: 0\r\n\r\n"
        );
    }

    #[test]
    fn url_splitting() {
        assert_eq!(
            split_http_url("http://app:9000/measurements").unwrap(),
            SplitUrl { host: "app:9000".into(), path_and_query: "/measurements".into() }
        );
        // Bare authority defaults to "/"; query strings stay attached.
        assert_eq!(
            split_http_url("http://gw").unwrap(),
            SplitUrl { host: "gw".into(), path_and_query: "/".into() }
        );
        assert_eq!(
            split_http_url("http://gw/x?y=1").unwrap(),
            SplitUrl { host: "gw".into(), path_and_query: "/x?y=1".into() }
        );
        assert!(matches!(split_http_url("https://gw/x"), Err(FrameError::BadUrl(_))));
        assert!(matches!(split_http_url("gw/x"), Err(FrameError::BadUrl(_))));
        assert!(matches!(split_http_url("http://"), Err(FrameError::BadUrl(_))));
        assert!(matches!(split_http_url("http:///x"), Err(FrameError::BadUrl(_))));
    }

    #[test]
    fn request_roundtrip() {
        let frame =
            frame_http_post("http://provider/rq-s", "application/json", br#"{"request_id":"r-1"}"#)
                .unwrap();
        let req = parse_http_request(&frame).unwrap();
        assert_eq!(req.method, "POST");
        assert_eq!(req.path, "/rq-s");
        assert_eq!(req.headers["host"], "provider");
        assert_eq!(req.headers["content-type"], "application/json");
        assert_eq!(req.headers["content-length"], "20");
        assert_eq!(req.body, br#"{"request_id":"r-1"}"#);
    }

    #[test]
    fn response_roundtrip() {
        let frame = frame_http_response(404, "Not Found", Some("application/json"), b"{\"error\":\"x\"}");
        let resp = parse_http_response(&frame).unwrap();
        assert_eq!(resp.status, 404);
        assert_eq!(resp.reason, "Not Found");
        assert_eq!(resp.body, b"{\"error\":\"x\"}");
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        // No terminator.
        assert!(parse_http_request(b"POST / HTTP/1.1\r\nHost: x\r\n").is_err());
        // Body shorter than declared.
        assert!(parse_http_request(b"POST / HTTP/1.1\r\nContent-Length: 5\r\n\r\nab").is_err());
        // Body longer than declared.
        assert!(parse_http_request(b"POST / HTTP/1.1\r\nContent-Length: 1\r\n\r\nab").is_err());
        // Wrong version.
        assert!(parse_http_request(b"POST / HTTP/1.0\r\nContent-Length: 0\r\n\r\n").is_err());
        // Path without leading slash.
        assert!(parse_http_request(b"POST x HTTP/1.1\r\nContent-Length: 0\r\n\r\n").is_err());
        // Header line without a colon.
        assert!(parse_http_request(b"POST / HTTP/1.1\r\nBogus\r\nContent-Length: 0\r\n\r\n").is_err());
        // Status code out of range.
        assert!(parse_http_response(b"HTTP/1.1 999 Nope\r\nContent-Length: 0\r\n\r\n").is_err());
        // Missing reason phrase.
        assert!(parse_http_response(b"HTTP/1.1 200\r\nContent-Length: 0\r\n\r\n").is_err());
    }

    #[test]
    fn incremental_length_detection() {
        let frame = frame_http_post("http://gw/g-i", "application/json", b"{\"k\":1}").unwrap();
        // Unknown until the blank line has arrived.
        assert_eq!(total_message_len(&frame[..10]), None);
        let head_end = frame.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
        assert_eq!(total_message_len(&frame[..head_end]), Some(frame.len()));
        assert_eq!(total_message_len(&frame), Some(frame.len()));
        // Responses without Content-Type still measure correctly.
        let resp = frame_http_response(204, "No Content", None, b"");
        assert_eq!(total_message_len(&resp), Some(resp.len()));
    }

    proptest! {
        // frame -> parse is lossless for any body and reasonable path/host.
        #[test]
        fn framed_posts_parse_back(
            host in "[a-z][a-z0-9-]{0,10}(:[0-9]{1,5})?",
            path in "(/[a-z0-9-]{1,8}){1,3}",
            body in proptest::collection::vec(any::<u8>(), 0..200),
        ) {
            let url = format!("http://{host}{path}");
            let frame = frame_http_post(&url, "application/octet-stream", &body).unwrap();
            prop_assert_eq!(total_message_len(&frame), Some(frame.len()));
            let req = parse_http_request(&frame).unwrap();
            prop_assert_eq!(req.method, "POST");
            prop_assert_eq!(req.path, path);
            prop_assert_eq!(&req.headers["host"], &host);
            prop_assert_eq!(req.body, body);
        }

        #[test]
        fn framed_responses_parse_back(
            status in 100u16..=599,
            reason in "[A-Za-z][A-Za-z ]{0,15}[A-Za-z]",
            body in proptest::collection::vec(any::<u8>(), 0..200),
        ) {
            let frame = frame_http_response(status, &reason, Some("application/json"), &body);
            prop_assert_eq!(total_message_len(&frame), Some(frame.len()));
            let resp = parse_http_response(&frame).unwrap();
            prop_assert_eq!(resp.status, status);
            prop_assert_eq!(resp.reason, reason);
            prop_assert_eq!(resp.body, body);
        }
    }
}
