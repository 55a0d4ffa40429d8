//! Blocking HTTP client for the control-plane API.

use std::time::Duration;

use jiriaf_core::api::ErrorBody;
use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde::de::DeserializeOwned;

use crate::CliError;

pub struct Client {
    base: String,
    http: Http,
}

/// `host:port` or a full URL, without a trailing slash.
pub fn base_url(server: &str) -> String {
    let s = server.trim().trim_end_matches('/');
    if s.starts_with("http://") || s.starts_with("https://") {
        s.to_string()
    } else {
        format!("http://{s}")
    }
}

/// Minimal query-string escaping for names and label filters.
pub fn escape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for b in v.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

impl Client {
    pub fn new(server: &str) -> Result<Self, CliError> {
        let http = Http::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Client {
            base: base_url(server),
            http,
        })
    }

    fn send(&self, req: RequestBuilder) -> Result<Response, CliError> {
        let resp = req
            .send()
            .map_err(|e| CliError::Server(format!("{}: {}", self.base, root_cause(&e))))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let msg = resp
            .json::<ErrorBody>()
            .map(|b| b.error)
            .unwrap_or_else(|_| status.to_string());
        Err(CliError::Server(msg))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, CliError> {
        let resp = self.send(self.http.get(format!("{}{path}", self.base)))?;
        resp.json().map_err(|e| CliError::Server(format!("bad response: {e}")))
    }

    pub fn get_text(&self, path: &str) -> Result<String, CliError> {
        let resp = self.send(self.http.get(format!("{}{path}", self.base)))?;
        resp.text().map_err(|e| CliError::Server(format!("bad response: {e}")))
    }

    pub fn post_text<T: DeserializeOwned>(&self, path: &str, body: String) -> Result<T, CliError> {
        let resp = self.send(self.http.post(format!("{}{path}", self.base)).body(body))?;
        resp.json().map_err(|e| CliError::Server(format!("bad response: {e}")))
    }

    pub fn delete(&self, path: &str) -> Result<(), CliError> {
        self.send(self.http.delete(format!("{}{path}", self.base)))?;
        Ok(())
    }
}

fn root_cause(e: &(dyn std::error::Error + 'static)) -> String {
    let mut cur = e;
    while let Some(next) = cur.source() {
        cur = next;
    }
    if cur.to_string() == e.to_string() {
        e.to_string()
    } else {
        format!("{e}: {cur}")
    }
}
