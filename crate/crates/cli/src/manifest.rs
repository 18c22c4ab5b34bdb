use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSpec {
    pub origin: String,
    pub text: String,
}

/// Written next to every set of CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: serde_json::Value,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub version: String,
    pub wall_time_s: f64,
    pub status: String,
    pub outputs: Vec<String>,
    pub spec: Option<EmbeddedSpec>,
}
