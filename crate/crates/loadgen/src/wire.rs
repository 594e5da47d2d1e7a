//! Minimal HTTP/1.1 GET over a fresh connection for open-loop bursts, where
//! the cost of each send has to stay far below the release spacing.

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use condb_core::IovPoint;

use crate::campaign::CampaignRecord;
use crate::error::{LoadgenError, LoadgenResult};

const MAX_HEADERS: usize = 32;

/// Resolved address and `Host` header of a plain-HTTP base URL.
#[derive(Debug, Clone)]
pub(crate) struct WireTarget {
    addr: SocketAddr,
    host: String,
}

impl WireTarget {
    pub(crate) async fn resolve(base_url: &str) -> LoadgenResult<Self> {
        let url = reqwest::Url::parse(base_url).map_err(|e| LoadgenError::Config(format!("target {base_url:?}: {e}")))?;
        if url.scheme() != "http" {
            return Err(LoadgenError::Config(format!("burst targets must be http://, got {base_url:?}")));
        }
        let host = url
            .host_str()
            .ok_or_else(|| LoadgenError::Config(format!("target {base_url:?} has no host")))?;
        let port = url.port_or_known_default().unwrap_or(80);
        let addr = tokio::net::lookup_host((host, port))
            .await
            .map_err(|e| LoadgenError::io(format!("resolving {host}"), e))?
            .next()
            .ok_or_else(|| LoadgenError::Config(format!("{host} resolved to no address")))?;
        Ok(Self {
            addr,
            host: format!("{host}:{port}"),
        })
    }

    /// The complete request for `path_and_query`, built before the burst.
    pub(crate) fn request(&self, path_and_query: &str) -> Vec<u8> {
        format!(
            "GET {path_and_query} HTTP/1.1\r\nHost: {}\r\nAccept: application/json\r\nConnection: close\r\n\r\n",
            self.host
        )
        .into_bytes()
    }
}

/// Sends `request` on a new connection and reads one response.
pub(crate) async fn issue(
    target: &WireTarget,
    request: &[u8],
    timeout: Duration,
    origin: Instant,
    index: usize,
    q: IovPoint,
) -> CampaignRecord {
    let sent = origin.elapsed();
    let outcome = match tokio::time::timeout(timeout, exchange(target.addr, request)).await {
        Ok(r) => r,
        Err(_) => Err(format!("no response within {} ms", timeout.as_millis())),
    };
    let received = origin.elapsed();
    let (http_status, bytes, error) = match outcome {
        Ok((s, b)) => (s, b, None),
        Err(e) => (0, 0, Some(e)),
    };
    CampaignRecord {
        index,
        major_iov: q.major,
        minor_iov: q.minor,
        sent_at_us: sent.as_micros() as u64,
        received_at_us: received.as_micros() as u64,
        http_status,
        bytes,
        error,
    }
}

async fn exchange(addr: SocketAddr, request: &[u8]) -> Result<(u16, u64), String> {
    let mut stream = TcpStream::connect(addr).await.map_err(|e| format!("connect {addr}: {e}"))?;
    stream.write_all(request).await.map_err(|e| format!("send: {e}"))?;
    let mut buf = Vec::with_capacity(16 * 1024);
    let mut chunk = [0u8; 16 * 1024];
    loop {
        let n = stream.read(&mut chunk).await.map_err(|e| format!("receive: {e}"))?;
        buf.extend_from_slice(&chunk[..n]);
        let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut response = httparse::Response::new(&mut headers);
        match response.parse(&buf).map_err(|e| format!("malformed response: {e}"))? {
            httparse::Status::Complete(head_len) => {
                let status = response.code.unwrap_or(0);
                let length = response
                    .headers
                    .iter()
                    .find(|h| h.name.eq_ignore_ascii_case("content-length"))
                    .and_then(|h| std::str::from_utf8(h.value).ok()?.trim().parse::<usize>().ok());
                return match length {
                    Some(len) => read_body(&mut stream, &mut chunk, buf.len() - head_len, len)
                        .await
                        .map(|()| (status, len as u64)),
                    // Without a length the body runs to the end of the connection.
                    None => {
                        let mut rest = buf.len() - head_len;
                        loop {
                            let n = stream.read(&mut chunk).await.map_err(|e| format!("receive: {e}"))?;
                            if n == 0 {
                                return Ok((status, rest as u64));
                            }
                            rest += n;
                        }
                    }
                };
            }
            httparse::Status::Partial if n == 0 => return Err("connection closed before the response head".into()),
            httparse::Status::Partial => {}
        }
    }
}

async fn read_body(stream: &mut TcpStream, chunk: &mut [u8], mut have: usize, want: usize) -> Result<(), String> {
    while have < want {
        let n = stream.read(chunk).await.map_err(|e| format!("receive: {e}"))?;
        if n == 0 {
            return Err(format!("connection closed after {have} of {want} body bytes"));
        }
        have += n;
    }
    Ok(())
}
