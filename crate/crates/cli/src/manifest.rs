use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempo_core::dsl::FORMAT_VERSION;

/// Everything that determines a run's output, plus the output checksum.
///
/// The worker count is deliberately absent: it never changes the output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub model: String,
    pub model_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    pub flags: Vec<String>,
    pub format_version: u32,
    pub tool_version: String,
    pub output_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, model: &Path, model_text: &str, scenario: Option<(&Path, &str)>) -> Self {
        RunManifest {
            command: command.to_string(),
            model: model.display().to_string(),
            model_sha256: sha256_hex(model_text.as_bytes()),
            scenario: scenario.map(|(p, _)| p.display().to_string()),
            scenario_sha256: scenario.map(|(_, t)| sha256_hex(t.as_bytes())),
            seed: None,
            n: None,
            flags: Vec::new(),
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            output_sha256: String::new(),
        }
    }

    pub fn with_sampling(mut self, seed: u64, n: u64) -> Self {
        self.seed = Some(seed);
        self.n = Some(n);
        self
    }

    pub fn with_flags(mut self, flags: Vec<String>) -> Self {
        self.flags = flags;
        self
    }

    pub fn finish(mut self, output: &str) -> Self {
        self.output_sha256 = sha256_hex(output.as_bytes());
        self
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(path, text)
    }
}
