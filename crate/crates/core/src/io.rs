//! Atomic file output. CSV tables start with a line naming the tool version
//! and the configuration hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the raw configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn header_line(hash: &str) -> String {
    format!("# occupancy-opc {VERSION} config={hash}")
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Shortest round-tripping decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// CSV text: header comment, column names, then rows.
pub fn csv_table(hash: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header_line(hash);
    out.push('\n');
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, hash: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    write_atomic(path, csv_table(hash, columns, rows).as_bytes())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn csv_layout() {
        let text = csv_table("h", &["t", "x"], vec![vec![0.0, 0.5], vec![1.0, 1.0 / 3.0]]);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# occupancy-opc ") && lines[0].ends_with("config=h"));
        assert_eq!(lines[1], "t,x");
        assert_eq!(lines[3], "1.0,0.3333333333333333");
        assert_eq!(lines[3].split(',').nth(1).unwrap().parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
