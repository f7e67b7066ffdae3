use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{NliBackend, NliDistribution};
use crate::error::{Error, Result};

/// Adapter for an external classifier served over HTTP.
///
/// Each call POSTs `{"premise": str, "hypothesis": str}` and expects
/// `{"p_e": f, "p_n": f, "p_c": f}` back.
#[derive(Debug, Clone)]
pub struct HttpNliBackend {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct Request<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    p_e: f64,
    p_n: f64,
    p_c: f64,
}

impl HttpNliBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_timeout(endpoint, Duration::from_secs(30))
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.into(), agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub(crate) fn map_http_error(endpoint: &str, e: ureq::Error) -> Error {
    match e {
        ureq::Error::StatusCode(code) => Error::Backend(format!("{endpoint} returned HTTP {code}")),
        ureq::Error::Json(e) => Error::Backend(format!("{endpoint} sent malformed JSON: {e}")),
        other => Error::BackendUnavailable(format!("{endpoint}: {other}")),
    }
}

impl NliBackend for HttpNliBackend {
    fn classify(&self, premise: &[String], hypothesis: &[String]) -> Result<NliDistribution> {
        let body = Request { premise: &premise.join(" "), hypothesis: &hypothesis.join(" ") };
        let reply: Reply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| map_http_error(&self.endpoint, e))?;
        NliDistribution::new(reply.p_e, reply.p_n, reply.p_c)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::types::tokenize;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves `replies` to consecutive requests and returns the bound URL.
    pub(crate) fn serve(replies: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/classify")
    }

    #[test]
    fn parses_distribution_reply() {
        let url = serve(vec![(200, r#"{"p_e":0.7,"p_n":0.2,"p_c":0.1}"#.into())]);
        let d = HttpNliBackend::new(url).classify(&tokenize("a b"), &tokenize("a")).unwrap();
        assert_eq!(d.as_array(), [0.7, 0.2, 0.1]);
    }

    #[test]
    fn http_error_is_transient_backend_error() {
        let url = serve(vec![(500, "{}".into())]);
        let err = HttpNliBackend::new(url).classify(&tokenize("a"), &tokenize("a")).unwrap_err();
        assert!(matches!(err, Error::Backend(_)), "{err:?}");
    }

    #[test]
    fn unreachable_endpoint_is_outage() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let err = HttpNliBackend::with_timeout(url, Duration::from_secs(2))
            .classify(&tokenize("a"), &tokenize("a"))
            .unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable(_)), "{err:?}");
    }
}
