//! Serialization conventions and crash-safe file output.
//!
//! Reals are written with 17 significant digits in scientific notation so a
//! parse of the output recovers the exact `f64`.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Format a real with 17 significant digits.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

struct Precise;

impl Formatter for Precise {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        // serde_json routes non-finite values to write_null before reaching here
        writer.write_all(real(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn write_null<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        CompactFormatter.write_null(writer)
    }
}

/// Compact JSON followed by a single LF.
pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, Precise);
    value.serialize(&mut ser).map_err(|e| CliError::Io {
        context: "serializing output".into(),
        source: e.into(),
    })?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Write every file to a temporary sibling first and rename only once all
/// of them are complete, so a failure never leaves a partial output behind.
pub fn write_all_atomic(files: &[(&Path, &[u8])]) -> Result<(), CliError> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let io_err = |source| CliError::Io {
            context: format!("writing {}", path.display()),
            source,
        };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(io_err)?;
        tmp.write_all(bytes).map_err(io_err)?;
        tmp.as_file().sync_all().map_err(io_err)?;
        staged.push((tmp, *path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| CliError::Io {
            context: format!("renaming into {}", path.display()),
            source: e.error,
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OutputDigest<'a> {
    path: String,
    sha256: &'a str,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    params: &'a serde_json::Value,
    seed: Option<u64>,
    version: String,
    duration_seconds: f64,
    outputs: Vec<OutputDigest<'a>>,
}

/// Everything a command hands back for persisting.
pub struct Artifact {
    pub command: &'static str,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub bytes: Vec<u8>,
}

/// Write the artifact to `out` together with its manifest.
pub fn persist(artifact: &Artifact, out: &Path, elapsed: Duration) -> Result<(), CliError> {
    let digest = sha256_hex(&artifact.bytes);
    let manifest = RunManifest {
        command: artifact.command,
        params: &artifact.params,
        seed: artifact.seed,
        version: format!(
            "sparse-select {} (core {})",
            env!("CARGO_PKG_VERSION"),
            sparse_select::VERSION
        ),
        duration_seconds: elapsed.as_secs_f64(),
        outputs: vec![OutputDigest {
            path: out.display().to_string(),
            sha256: &digest,
        }],
    };
    let manifest_bytes = to_json(&manifest)?;
    let manifest_path = manifest_path(out);
    write_all_atomic(&[(out, &artifact.bytes), (&manifest_path, &manifest_bytes)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_through_json() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let bytes = to_json(&v).unwrap();
            let back: f64 = serde_json::from_slice(&bytes).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{}", String::from_utf8_lossy(&bytes));
        }
        assert_eq!(to_json(&0.5).unwrap(), b"5.0000000000000000e-1\n");
        assert_eq!(to_json(&f64::NAN).unwrap(), b"null\n");
        assert_eq!(to_json(&3u64).unwrap(), b"3\n");
    }

    #[test]
    fn manifest_sits_next_to_the_output() {
        assert_eq!(
            manifest_path(Path::new("runs/a.csv")),
            PathBuf::from("runs/a.csv.manifest.json")
        );
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.json");
        let bad = dir.path().join("missing/bad.json");
        assert!(write_all_atomic(&[(&good, b"1"), (&bad, b"2")]).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
