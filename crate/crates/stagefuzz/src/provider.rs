// SPDX-License-Identifier: Apache-2.0

//! Suggestion-provider wire protocol: the external process standing in for
//! the analysis/generation language models.
//!
//! Requests and responses are single newline-delimited JSON objects, carried
//! either over a child process's standard streams or as the body of an HTTP
//! POST to one endpoint. Responses that fail to arrive, parse, or validate
//! are discarded; the caller falls back to the deterministic builtin path
//! and records an incident. Provider unavailability never blocks a campaign.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const PROVIDER_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub op: String, // "seed" | "rules"
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub constraints: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
}

/// Parsed `--provider` argument: an HTTP endpoint or a child command line.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Http(String),
    Command(Vec<String>),
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<ProviderSpec, String> {
        if s.starts_with("https://") {
            return Err("https provider endpoints are not supported; use http or a command".into());
        }
        if s.starts_with("http://") {
            return Ok(ProviderSpec::Http(s.to_string()));
        }
        let parts: Vec<String> = s.split_whitespace().map(|p| p.to_string()).collect();
        if parts.is_empty() {
            return Err("empty provider command".into());
        }
        Ok(ProviderSpec::Command(parts))
    }
}

/// A serialized connection to one provider. Calls are sequential; the child
/// process (when used) is spawned once and kept alive across requests.
pub struct ProviderClient {
    spec: ProviderSpec,
    child: Option<Child>,
    pub incidents: Vec<String>,
}

impl ProviderClient {
    pub fn new(spec: ProviderSpec) -> Self {
        Self {
            spec,
            child: None,
            incidents: Vec::new(),
        }
    }

    /// Sends one request. `None` means the fallback path should be used;
    /// the reason is appended to `incidents`.
    pub fn request(&mut self, req: &ProviderRequest) -> Option<ProviderResponse> {
        let payload = serde_json::to_string(req).ok()?;
        let result = match self.spec.clone() {
            ProviderSpec::Command(argv) => self.request_child(&argv, &payload),
            ProviderSpec::Http(url) => http_post_line(&url, &payload),
        };
        match result {
            Ok(line) => match serde_json::from_str::<ProviderResponse>(line.trim()) {
                Ok(resp) => Some(resp),
                Err(e) => {
                    self.incidents
                        .push(format!("unparsable provider response: {e}"));
                    None
                }
            },
            Err(e) => {
                self.incidents.push(e);
                None
            }
        }
    }

    fn request_child(&mut self, argv: &[String], payload: &str) -> Result<String, String> {
        if self.child.is_none() {
            let child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| format!("provider spawn failed: {e}"))?;
            self.child = Some(child);
        }
        let child = self.child.as_mut().unwrap();
        let stdin = child
            .stdin
            .as_mut()
            .ok_or_else(|| "provider stdin closed".to_string())?;
        stdin
            .write_all(payload.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| format!("provider write failed: {e}"))?;

        // One reader thread per request keeps the timeout simple; the
        // stdout handle is returned through the channel for reuse.
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| "provider stdout closed".to_string())?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            let result = reader.read_line(&mut line).map(|_| line);
            let _ = tx.send((result, reader.into_inner()));
        });
        match rx.recv_timeout(PROVIDER_TIMEOUT) {
            Ok((Ok(line), stdout)) => {
                self.child.as_mut().unwrap().stdout = Some(stdout);
                if line.is_empty() {
                    Err("provider closed its stdout".into())
                } else {
                    Ok(line)
                }
            }
            Ok((Err(e), stdout)) => {
                self.child.as_mut().unwrap().stdout = Some(stdout);
                Err(format!("provider read failed: {e}"))
            }
            Err(_) => {
                // Timed out: kill so the stuck process cannot wedge later
                // requests; the next call respawns.
                if let Some(mut child) = self.child.take() {
                    let _ = child.kill();
                    let _ = child.wait();
                }
                Err("provider timed out".into())
            }
        }
    }
}

impl Drop for ProviderClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Minimal HTTP/1.1 POST for local plaintext endpoints.
fn http_post_line(url: &str, payload: &str) -> Result<String, String> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| format!("unsupported provider url `{url}`"))?;
    let (host_port, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let addr = if host_port.contains(':') {
        host_port.to_string()
    } else {
        format!("{host_port}:80")
    };
    let mut stream = TcpStream::connect(&addr).map_err(|e| format!("connect {addr}: {e}"))?;
    stream
        .set_read_timeout(Some(PROVIDER_TIMEOUT))
        .and_then(|_| stream.set_write_timeout(Some(PROVIDER_TIMEOUT)))
        .map_err(|e| format!("socket setup: {e}"))?;
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host_port}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    stream
        .write_all(request.as_bytes())
        .map_err(|e| format!("http write: {e}"))?;
    let mut response = Vec::new();
    stream
        .read_to_end(&mut response)
        .map_err(|e| format!("http read: {e}"))?;
    let text = String::from_utf8_lossy(&response);
    let (head, body) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| "malformed http response".to_string())?;
    let status = head.lines().next().unwrap_or_default();
    if !status.contains(" 200") {
        return Err(format!("provider http status `{status}`"));
    }
    Ok(body.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn spec_parsing() {
        assert!(matches!(
            ProviderSpec::parse("http://127.0.0.1:9000/gen").unwrap(),
            ProviderSpec::Http(_)
        ));
        assert!(matches!(
            ProviderSpec::parse("python3 provider.py --fast").unwrap(),
            ProviderSpec::Command(ref v) if v.len() == 3
        ));
        assert!(ProviderSpec::parse("https://x").is_err());
    }

    #[test]
    fn http_roundtrip_against_stub_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let n = sock.read(&mut buf).unwrap();
            let req = String::from_utf8_lossy(&buf[..n]).to_string();
            assert!(req.contains("\"op\":\"seed\""));
            let body = r#"{"text":"program p\noutput c: F32[1]\nbody:\n  c[0] = 1.0\n"}"#;
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            sock.write_all(resp.as_bytes()).unwrap();
        });
        let mut client =
            ProviderClient::new(ProviderSpec::parse(&format!("http://{addr}/gen")).unwrap());
        let resp = client
            .request(&ProviderRequest {
                op: "seed".into(),
                template: Some("elementwise".into()),
                constraints: serde_json::json!({}),
                seed: 7,
            })
            .expect("stub server responds");
        assert!(resp.text.starts_with("program p"));
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_an_incident_not_a_panic() {
        let mut client =
            ProviderClient::new(ProviderSpec::parse("http://127.0.0.1:1/gen").unwrap());
        let resp = client.request(&ProviderRequest {
            op: "seed".into(),
            template: None,
            constraints: serde_json::json!({}),
            seed: 1,
        });
        assert!(resp.is_none());
        assert_eq!(client.incidents.len(), 1);
    }

    #[test]
    fn child_process_roundtrip() {
        // `head -n2` echoes back both request lines; each echo is a
        // (deliberately) unparsable provider response unless it happens to
        // be valid JSON with a text field, so craft with sh instead.
        let script = "while read line; do printf '{\"text\":\"ok\"}\\n'; done";
        let mut client = ProviderClient::new(ProviderSpec::Command(vec![
            "sh".into(),
            "-c".into(),
            script.into(),
        ]));
        for seed in 0..3 {
            let resp = client.request(&ProviderRequest {
                op: "rules".into(),
                template: None,
                constraints: serde_json::json!({"n": seed}),
                seed,
            });
            assert_eq!(resp.expect("echo provider").text, "ok");
        }
    }

    #[test]
    fn garbage_child_output_falls_back() {
        let script = "while read line; do echo not-json; done";
        let mut client = ProviderClient::new(ProviderSpec::Command(vec![
            "sh".into(),
            "-c".into(),
            script.into(),
        ]));
        let resp = client.request(&ProviderRequest {
            op: "seed".into(),
            template: Some("matmul".into()),
            constraints: serde_json::json!({}),
            seed: 3,
        });
        assert!(resp.is_none());
        assert!(client.incidents[0].contains("unparsable"));
    }
}
