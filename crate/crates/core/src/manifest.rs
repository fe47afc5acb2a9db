//! Run manifests written beside every artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFingerprint {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: impl AsRef<Path>) -> io::Result<String> {
    Ok(fingerprint_file(path)?.sha256)
}

pub fn fingerprint_file(path: impl AsRef<Path>) -> io::Result<FileFingerprint> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        h.update(&buf[..n]);
    }
    Ok(FileFingerprint {
        path: path.to_path_buf(),
        sha256: hex::encode(h.finalize()),
        bytes,
    })
}

/// Provenance of one artifact: how it was made and from what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub args: serde_json::Value,
    pub inputs: BTreeMap<String, FileFingerprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_fingerprint: Option<String>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, args: serde_json::Value) -> Self {
        Self {
            tool: "reqa".into(),
            version: VERSION.into(),
            subcommand: subcommand.into(),
            args,
            inputs: BTreeMap::new(),
            vocab_fingerprint: None,
            params: serde_json::Value::Null,
            seed: None,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, role: &str, path: impl AsRef<Path>) -> io::Result<()> {
        self.inputs.insert(role.into(), fingerprint_file(path)?);
        Ok(())
    }

    /// Path of the manifest that accompanies `artifact`.
    pub fn sidecar_path(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        artifact.with_file_name(name)
    }

    pub fn write_for(&self, artifact: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(Self::sidecar_path(artifact), text + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_known_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "abc").unwrap();
        let fp = fingerprint_file(&p).unwrap();
        assert_eq!(fp.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(fp.bytes, 3);
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(
            RunManifest::sidecar_path(Path::new("out/run.jsonl")),
            PathBuf::from("out/run.jsonl.manifest.json")
        );
    }
}
