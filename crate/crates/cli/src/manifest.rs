use domino_core::analytic::QuadratureSpec;
use domino_core::montecarlo::SimConfig;
use domino_core::Portfolio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write;
use std::time::{SystemTime, UNIX_EPOCH};

/// What was run, with which settings, and when.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// SHA-256 of the canonical config JSON.
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub queries: Vec<String>,
    pub quadrature: Option<QuadratureSpec>,
    pub simulation: Option<SimConfig>,
    pub threads: Option<usize>,
    pub censored_paths: Option<u64>,
    pub ties: Option<u64>,
    pub all_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub test_corrupt_sign: bool,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(subcommand: &str) -> Self {
        RunManifest {
            tool: "domino".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config_hash: None,
            seed: None,
            horizon: None,
            queries: Vec::new(),
            quadrature: None,
            simulation: None,
            threads: None,
            censored_paths: None,
            ties: None,
            all_pass: None,
            test_corrupt_sign: false,
            started: now(),
            finished: None,
        }
    }

    pub fn finish(&mut self) {
        self.finished = Some(now());
    }
}

/// Hex SHA-256 of the canonical serialization, so formatting and key order
/// of the file do not matter.
pub fn config_hash(p: &Portfolio) -> String {
    let digest = Sha256::digest(p.to_canonical_json().as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        write!(hex, "{b:02x}").expect("writing to a string");
    }
    hex
}
