//! Input loading, output directories and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flate2::read::MultiGzDecoder;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const CONFIG_DIR_ENV: &str = "LOBTAQ_CONFIG_DIR";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One input file, decompressed when gzip magic is present.
pub struct Input {
    pub label: String,
    pub path: String,
    pub bytes: Vec<u8>,
    /// Digest of the bytes as stored (before decompression).
    pub sha256: String,
}

impl Input {
    pub fn text(&self) -> Result<&str> {
        std::str::from_utf8(&self.bytes).with_context(|| format!("{}: not UTF-8 text", self.path))
    }
}

/// Splits `label=path`; without a label the file stem is used.
fn split_label(arg: &str) -> (String, String) {
    if let Some((l, p)) = arg.split_once('=') {
        if !l.is_empty() && !l.contains(['/', '\\']) {
            return (l.to_string(), p.to_string());
        }
    }
    let stem = if arg == "-" {
        "stdin".to_string()
    } else {
        let name = Path::new(arg)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arg.to_string());
        let name = name.strip_suffix(".gz").unwrap_or(&name).to_string();
        match name.rsplit_once('.') {
            Some((s, _)) if !s.is_empty() => s.to_string(),
            _ => name,
        }
    };
    (stem, arg.to_string())
}

pub fn read_input(arg: &str) -> Result<Input> {
    let (label, path) = split_label(arg);
    let raw = if path == "-" {
        let mut buf = Vec::new();
        io::stdin().lock().read_to_end(&mut buf).context("reading stdin")?;
        buf
    } else {
        if !Path::new(&path).exists() {
            return Err(UsageError(format!("input `{path}` does not exist")).into());
        }
        fs::read(&path).with_context(|| format!("reading {path}"))?
    };
    let sha256 = sha256_hex(&raw);
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .with_context(|| format!("decompressing {path}"))?;
        out
    } else {
        raw
    };
    Ok(Input {
        label,
        path,
        bytes,
        sha256,
    })
}

/// Resolves a config path, falling back to the config directory for
/// relative paths that do not exist as given.
pub fn resolve_config(path: &str) -> Result<PathBuf> {
    let p = PathBuf::from(path);
    if p.exists() {
        return Ok(p);
    }
    if p.is_relative() {
        if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
            let q = Path::new(&dir).join(&p);
            if q.exists() {
                return Ok(q);
            }
        }
    }
    Err(UsageError(format!("config `{path}` not found")).into())
}

/// A config file from the config directory, if one exists under `name`.
pub fn default_config(name: &str) -> Option<PathBuf> {
    let dir = std::env::var(CONFIG_DIR_ENV).ok()?;
    let p = Path::new(&dir).join(name);
    p.exists().then_some(p)
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: &'a [String],
    inputs: &'a [FileDigest],
    configs: &'a [FileDigest],
    seed: Option<u64>,
    version: &'a str,
    outputs: &'a BTreeMap<String, String>,
    anomalies: &'a BTreeMap<String, serde_json::Value>,
}

/// Book-keeping for one command run: inputs, written outputs and anomaly
/// counts, flushed to `manifest.json` in the output directory.
pub struct Run {
    command: &'static str,
    args: Vec<String>,
    inputs: Vec<FileDigest>,
    configs: Vec<FileDigest>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    outputs: BTreeMap<String, String>,
    anomalies: BTreeMap<String, serde_json::Value>,
}

impl Run {
    pub fn new(command: &'static str, out_dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = out_dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self {
            command,
            args: std::env::args().skip(1).collect(),
            inputs: Vec::new(),
            configs: Vec::new(),
            seed: None,
            out_dir: out_dir.map(Path::to_path_buf),
            outputs: BTreeMap::new(),
            anomalies: BTreeMap::new(),
        })
    }

    pub fn has_out_dir(&self) -> bool {
        self.out_dir.is_some()
    }

    pub fn add_input(&mut self, input: &Input) {
        self.inputs.push(FileDigest {
            path: input.path.clone(),
            sha256: input.sha256.clone(),
        });
    }

    pub fn add_config(&mut self, path: &Path, bytes: &[u8]) {
        self.configs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Digest over input and config contents (paths excluded) plus the seed.
    pub fn input_digest(&self) -> String {
        let mut h = Sha256::new();
        for d in self.inputs.iter().chain(&self.configs) {
            h.update(d.sha256.as_bytes());
            h.update(b"\n");
        }
        if let Some(s) = self.seed {
            h.update(format!("seed={s}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Comment line body carried by every CSV output.
    pub fn comment(&self) -> String {
        format!("manifest-input-sha256={}", self.input_digest())
    }

    pub fn anomaly(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.anomalies.insert(
            key.into(),
            serde_json::to_value(value).expect("anomaly counts serialize"),
        );
    }

    /// Writes `bytes` under the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self
            .out_dir
            .as_ref()
            .ok_or_else(|| UsageError(format!("{} needs --out-dir", self.command)))?;
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes to the output directory when one is set, stdout otherwise.
    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.out_dir.is_some() {
            self.write(name, bytes)
        } else {
            let mut out = io::stdout().lock();
            match out.write_all(bytes).and_then(|_| out.flush()) {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing stdout"),
            }
        }
    }

    pub fn finish(self) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let m = Manifest {
            command: self.command,
            args: &self.args,
            inputs: &self.inputs,
            configs: &self.configs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: &self.outputs,
            anomalies: &self.anomalies,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text).context("writing manifest.json")?;
        Ok(())
    }
}

/// Requires an output directory for commands producing several files.
pub fn require_out_dir(out: &Option<PathBuf>, command: &str) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| UsageError(format!("{command} writes several files; pass --out-dir")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(split_label("npn=data/x.csv"), ("npn".into(), "data/x.csv".into()));
        assert_eq!(split_label("data/npn.csv.gz"), ("npn".into(), "data/npn.csv.gz".into()));
        assert_eq!(split_label("-"), ("stdin".into(), "-".into()));
        assert_eq!(split_label("./a=b/c.csv"), ("c".into(), "./a=b/c.csv".into()));
    }
}
