use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Everything needed to reproduce a run. Only `wall_clock` varies between
/// identical invocations.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 of the manifest without `wall_clock`, `digest` and `outputs`.
    pub digest: String,
    /// SHA-256 of every companion file written, keyed by path.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock: WallClock,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WallClock {
    pub started_unix: f64,
    pub elapsed_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Recorder {
    command: String,
    config: Value,
    seed: Option<u64>,
    started_unix: f64,
    start: Instant,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    pub fn start(command: &str, config: Value, seed: Option<u64>) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Self {
            command: command.to_string(),
            config,
            seed,
            started_unix,
            start: Instant::now(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn digest(&self) -> String {
        let stable = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
        });
        sha256_hex(stable.to_string().as_bytes())
    }

    /// Writes a CSV file headed by the manifest digest and records its hash.
    pub fn write_csv(&mut self, path: &str, body: &str) -> std::io::Result<()> {
        let text = format!("# manifest_digest: {}\n{body}", self.digest());
        std::fs::write(path, &text)?;
        self.outputs.insert(path.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn finish(self) -> RunManifest {
        RunManifest {
            digest: self.digest(),
            wall_clock: WallClock {
                started_unix: self.started_unix,
                elapsed_seconds: self.elapsed(),
            },
            command: self.command,
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_time_and_tracks_config() {
        let a = Recorder::start("simulate", serde_json::json!({"x": 1}), Some(3));
        std::thread::sleep(std::time::Duration::from_millis(5));
        let b = Recorder::start("simulate", serde_json::json!({"x": 1}), Some(3));
        let c = Recorder::start("simulate", serde_json::json!({"x": 2}), Some(3));
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn known_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
