//! Dataset manifest: one line per sample, `path<TAB>label<TAB>subject<TAB>fold`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u8,
    pub subject: usize,
    pub fold: usize,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.path, e.label, e.subject, e.fold));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: format!("line {}: {reason}", line + 1),
    };
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(i, "expected 4 tab-separated fields"));
        }
        let label: u8 = fields[1].parse().map_err(|_| bad(i, "bad label"))?;
        if label > 1 {
            return Err(bad(i, "label must be 0 or 1"));
        }
        entries.push(ManifestEntry {
            path: fields[0].to_string(),
            label,
            subject: fields[2].parse().map_err(|_| bad(i, "bad subject"))?,
            fold: fields[3].parse().map_err(|_| bad(i, "bad fold"))?,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let entries = vec![
            ManifestEntry {
                path: "images/img_0000.pgm".into(),
                label: 1,
                subject: 3,
                fold: 0,
            },
            ManifestEntry {
                path: "images/img_0001.pgm".into(),
                label: 0,
                subject: 7,
                fold: 4,
            },
        ];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        std::fs::write(&path, "a\t2\t0\t0\n").unwrap();
        assert!(read_manifest(&path).is_err());
        std::fs::write(&path, "a\t1\t0\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
