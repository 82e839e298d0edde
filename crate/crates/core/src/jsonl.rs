//! Line-delimited JSON helpers shared by every artifact reader and writer.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
pub fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_line<T: DeserializeOwned>(location: &str, line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|source| {
        let location = format!("{location}:{line_no}");
        if source.is_data() {
            Error::schema(location, source.to_string())
        } else {
            Error::Json { location, source }
        }
    })
}

/// A 1-based line number and its text.
pub type Line<'a> = (usize, &'a str);

/// Splits off a leading header line, recognised by a top-level `"kind"` key.
pub fn split_header(text: &str) -> (Option<Line<'_>>, Vec<Line<'_>>) {
    let mut all: Vec<(usize, &str)> = lines(text).collect();
    let is_header = all.first().is_some_and(|(_, line)| {
        serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.as_object().map(|o| o.contains_key("kind")))
            .unwrap_or(false)
    });
    if is_header {
        let header = all.remove(0);
        (Some(header), all)
    } else {
        (None, all)
    }
}

pub fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
