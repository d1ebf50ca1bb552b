//! Flat `key=value` config files, written with sorted keys so identical
//! configs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_kv(path: &Path, pairs: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text).map_err(|reason| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn parse_kv(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => return Err(format!("line {}: expected key=value", i + 1)),
        }
    }
    Ok(map)
}
