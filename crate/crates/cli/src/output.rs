//! Artifact writers. Every artifact carries the crate version and the
//! effective configuration.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// CSV with `#` header lines for version and configuration, LF line endings.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(cfg: &RunConfig, extra_headers: &[(&str, String)], columns: &[&str]) -> Self {
        let mut buf = format!("# rarexact {}\n# config {}\n", rarexact::VERSION, config_json(cfg));
        for (k, v) in extra_headers {
            writeln!(buf, "# {k} {v}").unwrap();
        }
        buf.push_str(&columns.join(","));
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_bytes(path, self.buf.as_bytes())
    }
}

/// Fixed 10-decimal rendering for probabilities and rates.
pub fn rate(v: f64) -> String {
    format!("{v:.10}")
}

pub fn config_json(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    rarexact: &'a str,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

/// Pretty JSON document `{rarexact, config, ..body}`.
pub fn write_json<T: Serialize>(path: &Path, cfg: &RunConfig, body: T) -> Result<(), CliError> {
    let doc = Envelope { rarexact: rarexact::VERSION, config: cfg, body };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::format(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        return out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e));
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
